#include <doctest.h>

#include <cmath>
#include <sstream>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "svc/csv.hpp"
#include "svc/errors.hpp"
#include "svc/forward.hpp"
#include "svc/rng.hpp"

using namespace svc;

namespace {

ProblemSpec single_node(double w, double kappa, double a, double g) {
  return ProblemSpec(DiscreteLift(make_discrete({kappa}, {w}), OperatorA(Mat::Constant(1, 1, a)), Exponents{0.2, 0.8}),
                     Mat::Constant(1, 1, g));
}

double sup_diff(const std::vector<Vec>& a, const std::vector<double>& b) {
  double e = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) e = std::max(e, std::abs(a[k](0) - b[k]));
  return e;
}

}  // namespace

TEST_CASE("philox known answers") {
  CHECK(philox4x32_10({0, 0, 0, 0}, {0, 0}) == PhiloxCounter{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
  CHECK(philox4x32_10({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu}) ==
        PhiloxCounter{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
  CHECK(philox4x32_10({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u}) ==
        PhiloxCounter{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("brownian increments") {
  const auto a = brownian(10, 10000, 2, 0.01, 42);
  const auto b = brownian(10, 10000, 2, 0.01, 42);
  CHECK(a == b);
  CHECK(brownian(10, 5, 0, 0.01, 42).empty());
  for (std::size_t c = 0; c < 2; ++c) {
    double sum = 0.0, sq = 0.0;
    const std::size_t count = a.size() / 2;
    for (std::size_t i = c; i < a.size(); i += 2) {
      sum += a[i];
      sq += a[i] * a[i];
    }
    const double mean = sum / count;
    const double var = sq / count - mean * mean;
    CHECK(std::abs(mean) <= 5.0 * std::sqrt(0.01 / count));
    CHECK(var >= 0.0094);
    CHECK(var <= 0.0106);
    CHECK(std::abs(var - 0.01) <= 5.0 * 0.01 * std::sqrt(2.0 / count));
  }
  // A later window of the same stream equals the tail of the full stream.
  const auto tail = brownian(4, 3, 2, 0.01, 42, 6);
  for (std::size_t p = 0; p < 3; ++p)
    for (std::size_t k = 0; k < 4; ++k)
      for (std::size_t c = 0; c < 2; ++c) CHECK(tail[(p * 4 + k) * 2 + c] == a[(p * 10 + k + 6) * 2 + c]);
  // Different seeds give different draws.
  CHECK(brownian(1, 1, 1, 1.0, 1)[0] != brownian(1, 1, 1, 1.0, 2)[0]);
}

TEST_CASE("step examples") {
  auto zero = fixture::linear_problem();
  zero.f = nullptr;
  zero.g = Mat::Zero(1, 1);
  const StepOperator op0(zero, 0.01);
  SystemState s{Mat::Zero(zero.lift.n(), 1), Vec::Zero(1)};
  const double dw = 0.3;
  for (int k = 0; k < 10; ++k) s = op0.step(s, 0.01 * k, nullptr, &dw);
  CHECK(s.y.norm() == 0.0);
  CHECK(s.u.norm() == 0.0);

  const auto p = single_node(1.0, 0.0, 0.0, 1.0);
  const StepOperator op(p, 0.25);
  const SystemState s0{Mat::Constant(1, 1, 0.4), Vec::Zero(1)};
  const double delta = 0.1;
  const auto s1 = op.step(s0, 0.0, nullptr, &delta);
  CHECK(s1.u(0) == doctest::Approx(delta / 0.25).epsilon(1e-14));
  CHECK(s1.y(0, 0) == doctest::Approx(0.4 + delta).epsilon(1e-14));
}

TEST_CASE("one deterministic step of the exponential kernel is locally second order") {
  // a = e^{-κ₀t}, A = -λ: ẋ = -(κ₀λ/(1+λ))x + f/(1+λ).
  const double k0 = 2.0, lambda = 1.0, fval = 1.0, x0 = 0.3;
  auto p = single_node(1.0, k0, -lambda, 0.0);
  p.f = [&](double, const Vec&) { return Vec::Constant(1, fval); };
  const double b = k0 * lambda / (1.0 + lambda), c = fval / (1.0 + lambda);
  std::vector<double> ratio;
  for (double dt : {1e-2, 1e-3, 1e-4}) {
    const StepOperator op(p, dt);
    SystemState s{Mat::Constant(1, 1, x0), Vec()};
    s.u = extract_u(p.lift, s.y, Vec::Constant(1, fval));
    const auto s1 = op.step(s, 0.0, nullptr, nullptr);
    const double exact = c / b + (x0 - c / b) * std::exp(-b * dt);
    ratio.push_back(std::abs(s1.y(0, 0) - exact) / (dt * dt));
  }
  CHECK(ratio[1] == doctest::Approx(ratio[0]).epsilon(0.05));
  CHECK(ratio[2] == doctest::Approx(ratio[1]).epsilon(0.05));
}

TEST_CASE("simulate degenerate cases") {
  auto p = fixture::linear_problem();
  p.f = nullptr;
  p.g = Mat::Zero(1, 1);
  p.history = HistoryDescriptor::zero(1);
  const auto b = simulate(p, fixture::unit_grid(20), 3, 7);
  for (double v : b.u) CHECK(v == 0.0);
  for (double v : b.y) CHECK(v == 0.0);

  auto q = fixture::linear_problem();
  q.r = [](double, const Vec&, const Vec&) { return Vec(Vec::Zero(1)); };
  const auto un = simulate(q, fixture::unit_grid(50), 4, 9);
  const auto ol = simulate(q, fixture::unit_grid(50), 4, 9, OpenLoop{{3}});
  CHECK(un.u == ol.u);
  CHECK(un.y == ol.y);
  CHECK(un.dW == ol.dW);
  CHECK(ol.has_controls);
  CHECK(ol.control_index[0] == 3);
}

TEST_CASE("constant control folds into the drift") {
  const auto p = fixture::linear_problem();
  const std::size_t idx = 15;
  const double rho_bar = p.controls[idx](0);
  auto folded = fixture::linear_problem();
  folded.f = [rho_bar](double, const Vec& u) { return Vec((-0.5 * u.array() + 0.5).matrix() + Vec::Constant(1, rho_bar)); };
  const auto a = simulate(p, fixture::unit_grid(100), 5, 11, OpenLoop{{idx}});
  const auto b = simulate(folded, fixture::unit_grid(100), 5, 11);
  for (std::size_t i = 0; i < a.u.size(); ++i) CHECK(std::abs(a.u[i] - b.u[i]) <= 1e-12 * (1.0 + std::abs(b.u[i])));
}

TEST_CASE("bundle invariants") {
  const auto p = fixture::linear_problem();
  const auto b = simulate(p, fixture::unit_grid(100), 200, 5);
  CHECK(reconstruction_error(p, b) <= 1e-12);
  // Initial state from the history map.
  const auto y0 = q_map(p.history, p.lift);
  CHECK((b.y_at(0, 0) - y0).norm() == 0.0);
  CHECK(b.u_at(0, 0)(0) == doctest::Approx(extract_u(p.lift, y0, p.drift(0.0, p.history.value_at_zero()))(0)));
  double sum = 0.0, sq = 0.0;
  for (double x : b.dW) {
    sum += x;
    sq += x * x;
  }
  const double n = static_cast<double>(b.dW.size()), dt = 0.01;
  CHECK(std::abs(sum / n) <= 5.0 * std::sqrt(dt / n));
  CHECK(std::abs(sq / n - dt) <= 5.0 * dt * std::sqrt(2.0 / n));
}

TEST_CASE("thread count does not change the bundle") {
  const auto p = fixture::linear_problem();
  const auto a = simulate(p, fixture::unit_grid(40), 33, 3, Uncontrolled{}, {1});
  const auto b = simulate(p, fixture::unit_grid(40), 33, 3, Uncontrolled{}, {4});
  CHECK(a.u == b.u);
  CHECK(a.y == b.y);
  CHECK(a.dW == b.dW);
}

TEST_CASE("flow property: restart from the midpoint") {
  const auto p = fixture::linear_problem();
  const auto grid = fixture::unit_grid(100);
  const std::size_t P = 20;
  const auto full = simulate(p, grid, P, 21);
  std::vector<SystemState> mid;
  for (std::size_t i = 0; i < P; ++i) mid.push_back(full.state(i, 50));
  SimulateOptions opts;
  opts.start_states = mid;
  const auto second = simulate(p, grid.tail(50), P, 21, Uncontrolled{}, opts);
  for (std::size_t i = 0; i < P; ++i) {
    for (std::size_t k = 0; k <= 50; ++k) {
      const double a = full.u_at(i, 50 + k)(0), b = second.u_at(i, k)(0);
      CHECK(std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(a)));
      CHECK((full.y_at(i, 50 + k) - second.y_at(i, k)).norm() <= 1e-12 * std::max(1.0, full.y_at(i, 50 + k).norm()));
    }
  }
}

TEST_CASE("blow-up detection") {
  ProblemSpec p(DiscreteLift(make_discrete({1.0}, {1.0}), OperatorA(Mat::Constant(1, 1, 0.5), true), Exponents{0.2, 0.8}),
                Mat::Zero(1, 1));
  p.f = [](double, const Vec&) { return Vec::Constant(1, 1.0); };
  p.history = HistoryDescriptor::zero(1);
  try {
    simulate(p, TimeGrid{0.0, 100.0, 1000, 0}, 1, 1);
    FAIL("expected blow-up");
  } catch (const BlowUpError& e) {
    CHECK(e.path() == 0);
    CHECK(e.step() > 100);
  }
}

TEST_CASE("moment growth is affine in the initial state") {
  const auto base = fixture::linear_problem();
  std::vector<double> x2, m2;
  for (double s : {1.0, 2.0, 4.0}) {
    auto p = fixture::linear_problem();
    p.history = HistoryDescriptor::exponential(Vec::Constant(1, 0.2 * s * 10.0), 1.0);
    const auto b = simulate(p, fixture::unit_grid(50), 400, 13, Uncontrolled{});
    double acc = 0.0;
    for (std::size_t i = 0; i < b.n_paths; ++i) {
      double sup = 0.0;
      for (std::size_t k = 0; k <= b.steps(); ++k) sup = std::max(sup, norm_X(p.lift, b.y_at(i, k)));
      acc += sup * sup;
    }
    x2.push_back(std::pow(norm_X(p.lift, q_map(p.history, p.lift)), 2));
    m2.push_back(acc / static_cast<double>(b.n_paths));
  }
  // Least-squares line through the three points; residuals small, slope finite and positive.
  Eigen::Matrix<double, 3, 2> X;
  Eigen::Vector3d Y;
  for (int i = 0; i < 3; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = x2[i];
    Y(i) = m2[i];
  }
  const Eigen::Vector2d coef = X.colPivHouseholderQr().solve(Y);
  CHECK(std::isfinite(coef(1)));
  CHECK(coef(1) > 0.0);
  CHECK((X * coef - Y).norm() <= 0.1 * Y.norm());
}

TEST_CASE("reference Volterra solver") {
  const auto frac = make_fractional(0.3);
  const Mat A = Mat::Constant(1, 1, -1.0);
  const auto zero = reference_volterra_solve(frac, A, nullptr, fixture::unit_grid(50));
  for (const auto& v : zero) CHECK(v.norm() == 0.0);

  const DeterministicForcing one = [](double, const Vec&) { return Vec::Constant(1, 1.0); };
  double prev = 1.0;
  for (std::size_t N : {100u, 200u, 400u}) {
    const auto u = reference_volterra_solve(frac, A, one, fixture::unit_grid(N));
    double e = 0.0;
    for (std::size_t k = 0; k <= N; ++k)
      e = std::max(e, std::abs(u[k](0) - oracle::fractional_relaxation(0.3, 1.0, 1.0, static_cast<double>(k) / N)));
    CHECK(e < prev);
    CHECK(e <= 1e-2);
    prev = e;
  }

  // Exponential kernel: u = 1 - e^{-t}/2 for κ₀ = 2, λ = 1, f = 1.
  const auto ue = reference_volterra_solve(make_exponential(2.0), A, one, fixture::unit_grid(400));
  for (std::size_t k = 0; k <= 400; ++k) CHECK(std::abs(ue[k](0) - (1.0 - 0.5 * std::exp(-static_cast<double>(k) / 400.0))) <= 1e-5);

  CHECK_THROWS_AS(reference_volterra_solve(frac, Mat::Zero(1, 2), one, fixture::unit_grid(10)), DomainError);
}

TEST_CASE("lifted solver agrees with the direct solver within their error estimates") {
  auto p = fixture::linear_problem();
  p.g = Mat::Zero(1, 1);
  p.history = HistoryDescriptor::zero(1);
  const auto& kernel = p.lift.kernel();
  const DeterministicForcing f = [](double, const Vec& u) { return Vec((-0.5 * u.array() + 0.5).matrix()); };
  const Mat A = p.lift.A().matrix();
  auto coarse = [](const std::vector<Vec>& u, std::size_t factor) {
    std::vector<Vec> out;
    for (std::size_t k = 0; k < u.size(); k += factor) out.push_back(u[k]);
    return out;
  };
  const std::size_t N = 100;
  const auto lift_N = u_trajectory(simulate(p, fixture::unit_grid(N), 1, 0), 0);
  const auto lift_2N = coarse(u_trajectory(simulate(p, fixture::unit_grid(2 * N), 1, 0), 0), 2);
  const auto ref_N = reference_volterra_solve(kernel, A, f, fixture::unit_grid(N));
  const auto ref_2N = coarse(reference_volterra_solve(kernel, A, f, fixture::unit_grid(2 * N)), 2);
  double gap = 0.0, err_lift = 0.0, err_ref = 0.0;
  for (std::size_t k = 0; k <= N; ++k) {
    gap = std::max(gap, std::abs(lift_N[k](0) - ref_N[k](0)));
    // First-order Richardson: e_N ≈ 2 |u_N - u_2N|.
    err_lift = std::max(err_lift, 2.0 * std::abs(lift_N[k](0) - lift_2N[k](0)));
    err_ref = std::max(err_ref, 2.0 * std::abs(ref_N[k](0) - ref_2N[k](0)));
  }
  CHECK(gap <= err_lift + err_ref);
  CHECK(gap > 0.0);
}

TEST_CASE("mesh refinement reduces the error against the Mittag-Leffler solution") {
  const auto fit = discretize(make_fractional(0.3), 100, TimeWindow{1e-10, 10.0});
  ProblemSpec p(DiscreteLift(fit.kernel, OperatorA(Mat::Constant(1, 1, -1.0)), choose_exponents(0.7)), Mat::Zero(1, 1));
  p.f = [](double, const Vec&) { return Vec::Constant(1, 1.0); };
  p.history = HistoryDescriptor::zero(1);
  double prev = 1.0;
  for (std::size_t N : {250u, 500u, 1000u, 2000u}) {
    const auto b = simulate(p, fixture::unit_grid(N), 1, 0);
    double e = 0.0;
    for (std::size_t k = 0; k <= N; ++k)
      e = std::max(e, std::abs(b.u_at(0, k)(0) - oracle::fractional_relaxation(0.3, 1.0, 1.0, double(k) / N)));
    CHECK(e < prev);
    prev = e;
  }
}

TEST_CASE("lifted stepper converges to the Picard fixed point") {
  const double w = 1.5, kappa = 2.0, a = -1.0, x0 = 0.4;
  auto p = single_node(w, kappa, a, 0.0);
  p.f = [](double, const Vec&) { return Vec::Constant(1, 0.7); };
  p.history = HistoryDescriptor::exponential(Vec::Constant(1, x0 * (kappa + 1.0)), 1.0);
  const auto picard = oracle::picard_single_node(w, kappa, a, x0, [](double, double) { return 0.7; }, 1.0, 64);
  double prev = 1.0;
  for (std::size_t factor : {1u, 4u, 16u}) {
    const auto b = simulate(p, fixture::unit_grid(64 * factor), 1, 0);
    double e = 0.0;
    for (std::size_t k = 0; k <= 64; ++k) e = std::max(e, std::abs(b.u_at(0, k * factor)(0) - picard[k]));
    CHECK(e < prev);
    prev = e;
  }
  CHECK(prev <= 2e-3);
}

TEST_CASE("Volterra residual") {
  const auto frac = make_fractional(0.3);
  const Mat A = Mat::Constant(1, 1, -1.0);
  std::vector<Vec> zeros(11, Vec::Zero(1));
  CHECK(volterra_residual(zeros, frac, A, nullptr, fixture::unit_grid(10)) == 0.0);

  const DeterministicForcing one = [](double, const Vec&) { return Vec::Constant(1, 1.0); };
  std::vector<double> res;
  for (std::size_t N : {2000u, 4000u}) {
    std::vector<Vec> u(N + 1);
    for (std::size_t k = 0; k <= N; ++k) u[k] = Vec::Constant(1, oracle::fractional_relaxation(0.3, 1.0, 1.0, double(k) / N));
    res.push_back(volterra_residual(u, frac, A, one, fixture::unit_grid(N)));
    if (N == 2000) {
      std::vector<Vec> shifted = u;
      for (auto& v : shifted) v.array() += 0.1;
      CHECK(volterra_residual(shifted, frac, A, one, fixture::unit_grid(N)) > res.back());
    }
  }
  CHECK(res[0] <= 5e-2);
  CHECK(res[1] < res[0]);
}

TEST_CASE("bundle export") {
  const auto p = fixture::linear_problem();
  const auto b = simulate(p, fixture::unit_grid(10), 3, 4, OpenLoop{{2}});
  std::ostringstream csv;
  write_bundle_csv(b, csv);
  const auto rows = parse_csv(csv.str());
  REQUIRE(rows.size() == 1 + 3 * 11);
  const std::string last = "y_" + std::to_string(p.lift.n() - 1) + "_0";
  CHECK(rows[0] == std::vector<std::string>{"path", "step", "t", "u_0", "y_0_0", last, "gamma_0", "control_index"});
  CHECK(std::stod(rows[1][3]) == b.u_at(0, 0)(0));
  CHECK(rows[11][6].empty());

  std::stringstream bin;
  write_bundle_binary(b, bin);
  const auto back = read_bundle_binary(bin);
  CHECK(back.u == b.u);
  CHECK(back.y == b.y);
  CHECK(back.dW == b.dW);
  CHECK(back.controls == b.controls);
  CHECK(back.control_index == b.control_index);
  CHECK(back.grid.steps == b.grid.steps);
  CHECK(back.seed == b.seed);

  std::stringstream junk("nope");
  CHECK_THROWS_AS(read_bundle_binary(junk), ConfigError);

  const auto empty = simulate(p, fixture::unit_grid(10), 0, 4);
  std::ostringstream e;
  write_bundle_csv(empty, e);
  CHECK(parse_csv(e.str()).size() == 1);
}
