#include "svc/rng.hpp"

#include <cmath>
#include <numbers>

namespace svc {

namespace {

constexpr std::uint32_t kM0 = 0xD2511F53u;
constexpr std::uint32_t kM1 = 0xCD9E8D57u;
constexpr std::uint32_t kW0 = 0x9E3779B9u;
constexpr std::uint32_t kW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

// Uniform on the open interval (0, 1) from 53 random bits.
inline double to_unit(std::uint64_t bits) {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace

PhiloxCounter philox4x32_10(PhiloxCounter ctr, PhiloxKey key) {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kM0, ctr[0], hi0, lo0);
    mulhilo(kM1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kW0;
    key[1] += kW1;
  }
  return ctr;
}

std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::array<double, 2> gaussian_pair(std::uint64_t seed, std::uint64_t path, std::uint64_t step,
                                    std::uint32_t pair) {
  const PhiloxKey key = {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  const PhiloxCounter ctr = {static_cast<std::uint32_t>(path), static_cast<std::uint32_t>(path >> 32),
                             static_cast<std::uint32_t>(step), pair};
  const auto r = philox4x32_10(ctr, key);
  const double u1 = to_unit((static_cast<std::uint64_t>(r[0]) << 32) | r[1]);
  const double u2 = to_unit((static_cast<std::uint64_t>(r[2]) << 32) | r[3]);
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  return {radius * std::cos(angle), radius * std::sin(angle)};
}

void brownian_increment(std::uint64_t seed, std::uint64_t path, std::uint64_t step, double dt,
                        std::size_t m, double* out) {
  const double sd = std::sqrt(dt);
  for (std::size_t j = 0; j < m; j += 2) {
    const auto z = gaussian_pair(seed, path, step, static_cast<std::uint32_t>(j / 2));
    out[j] = sd * z[0];
    if (j + 1 < m) out[j + 1] = sd * z[1];
  }
}

std::vector<double> brownian(std::size_t steps, std::size_t n_paths, std::size_t m, double dt,
                             std::uint64_t seed, std::size_t first_step) {
  std::vector<double> out(steps * n_paths * m);
  for (std::size_t p = 0; p < n_paths; ++p)
    for (std::size_t k = 0; k < steps; ++k)
      brownian_increment(seed, p, first_step + k, dt, m, out.data() + (p * steps + k) * m);
  return out;
}

}  // namespace svc
