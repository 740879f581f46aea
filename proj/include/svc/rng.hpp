#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace svc {

using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

// Philox4x32 with 10 rounds (Salmon et al., SC'11).
PhiloxCounter philox4x32_10(PhiloxCounter counter, PhiloxKey key);

// Two independent standard normals for the counter (path, step, pair) under
// the key derived from seed. Components 2·pair and 2·pair+1 share one block;
// the step enters the counter as 32 bits.
std::array<double, 2> gaussian_pair(std::uint64_t seed, std::uint64_t path, std::uint64_t step,
                                    std::uint32_t pair);

// N(0, dt) increments for one (path, step), m components written to out.
void brownian_increment(std::uint64_t seed, std::uint64_t path, std::uint64_t step, double dt,
                        std::size_t m, double* out);

// Increments laid out [path][step][component]; step indices are absolute,
// starting at first_step, so any sub-range of a run reproduces the same draws.
std::vector<double> brownian(std::size_t steps, std::size_t n_paths, std::size_t m, double dt,
                             std::uint64_t seed, std::size_t first_step = 0);

// splitmix64 finalizer, used to derive independent seeds.
std::uint64_t mix_seed(std::uint64_t x);

}  // namespace svc
