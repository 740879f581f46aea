#include <doctest.h>

#include <cmath>
#include <random>
#include <thread>

#include "svc/errors.hpp"
#include "svc/lift.hpp"

using namespace svc;

namespace {

DiscreteLift scalar_lift(double w, double kappa, double a) {
  return DiscreteLift(make_discrete({kappa}, {w}), OperatorA(Mat::Constant(1, 1, a)), Exponents{0.2, 0.8, false});
}

DiscreteLift random_lift(std::mt19937_64& gen, int n, int d) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::vector<double> nodes, weights;
  double k = 0.0;
  for (int i = 0; i < n; ++i) {
    k += 0.1 + 3.0 * U(gen);
    nodes.push_back(k);
    weights.push_back(0.2 + U(gen));
  }
  Mat A = Mat::Zero(d, d);
  for (int i = 0; i < d; ++i) {
    A(i, i) = -1.0 - U(gen);
    if (i + 1 < d) A(i, i + 1) = 0.3 * U(gen);
  }
  return DiscreteLift(make_discrete(nodes, weights), OperatorA(A), Exponents{0.2, 0.8, false});
}

double rel(const Mat& a, const Mat& b) { return (a - b).norm() / std::max(1e-300, b.norm()); }

}  // namespace

TEST_CASE("choose exponents") {
  const auto e = choose_exponents(0.7);
  CHECK(e.eta == doctest::Approx(0.2).epsilon(1e-14));
  CHECK(e.theta == doctest::Approx(0.8).epsilon(1e-14));
  CHECK(e.auto_selected);
  const auto one = choose_exponents(1.0);
  CHECK(one.eta == doctest::Approx(0.125));
  CHECK(one.theta == doctest::Approx(0.875));
  CHECK_THROWS_AS(choose_exponents(0.5), InfeasibleError);
  CHECK_THROWS_AS(choose_exponents(0.0), InfeasibleError);
  CHECK_THROWS_AS(choose_exponents(1.2), DomainError);
}

TEST_CASE("choose exponents satisfies the three inequalities on (1/2, 1]") {
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> U(0.5, 1.0);
  for (int i = 0; i < 2000; ++i) {
    double alpha = U(gen);
    if (alpha <= 0.5) continue;
    if (i == 0) alpha = 1.0;
    if (i == 1) alpha = std::nextafter(0.5, 1.0) + 1e-9;
    const auto e = choose_exponents(alpha);
    CHECK(e.eta > (1.0 - alpha) / 2.0);
    CHECK(e.theta < (1.0 + alpha) / 2.0);
    CHECK(e.theta - e.eta > 0.5);
    CHECK(e.eta > 0.0);
    CHECK(e.theta < 1.0);
  }
}

TEST_CASE("resolve exponents") {
  const auto a = resolve_exponents(std::nullopt, std::nullopt, 0.7);
  CHECK(a.auto_selected);
  const auto b = resolve_exponents(0.3, 0.9, 0.0);
  CHECK_FALSE(b.auto_selected);
  CHECK(b.eta == 0.3);
  CHECK_THROWS_AS(resolve_exponents(0.3, std::nullopt, 0.7), DomainError);
  CHECK_THROWS_AS(resolve_exponents(1.3, 0.5, 0.7), DomainError);
}

TEST_CASE("operator A spectrum check") {
  CHECK_NOTHROW(OperatorA(Mat::Constant(1, 1, -1.0)));
  CHECK_NOTHROW(OperatorA(Mat::Zero(2, 2)));
  CHECK_THROWS_AS(OperatorA(Mat::Constant(1, 1, 0.5)), DomainError);
  const OperatorA over(Mat::Constant(1, 1, 0.5), true);
  CHECK(over.allow_unstable());
  CHECK(over.spectral_abscissa() == doctest::Approx(0.5));
  CHECK_THROWS_AS(OperatorA(Mat::Zero(2, 3)), DomainError);
}

TEST_CASE("lift construction") {
  CHECK_THROWS_AS(DiscreteLift(make_fractional(0.3), OperatorA(Mat::Constant(1, 1, -1.0)), Exponents{0.2, 0.8}),
                  DomainError);
  // c = 1 and A = 1 would make cI - A singular; the override lets it through to the solve check.
  CHECK_THROWS_AS(DiscreteLift(make_discrete({1.0}, {1.0}), OperatorA(Mat::Constant(1, 1, 1.0), true),
                               Exponents{0.2, 0.8}),
                  LinearSolveError);
  const auto lift = scalar_lift(2.0, 3.0, -1.0);
  CHECK(lift.total_mass() == 2.0);
  CHECK(lift.n() == 1);
  CHECK(lift.d() == 1);
}

TEST_CASE("q_map closed forms") {
  const auto lift = DiscreteLift(make_discrete({0.0, 1.0, 4.0}, {1.0, 0.5, 0.25}), OperatorA(Mat::Constant(1, 1, -1.0)),
                                 Exponents{0.2, 0.8});
  const Vec ubar = Vec::Constant(1, 0.7);
  const auto ye = q_map(HistoryDescriptor::exponential(ubar, 2.0), lift);
  for (Index i = 0; i < 3; ++i) CHECK(ye(i, 0) == doctest::Approx(0.7 / (lift.kappa()(i) + 2.0)).epsilon(1e-15));

  CHECK(q_map(HistoryDescriptor::zero(1), lift).norm() == 0.0);

  const auto ys = q_map(HistoryDescriptor::step(ubar, 0.5), lift);
  CHECK(ys(0, 0) == doctest::Approx(0.7 * 0.5).epsilon(1e-15));
  for (Index i = 1; i < 3; ++i) {
    const double k = lift.kappa()(i);
    CHECK(ys(i, 0) == doctest::Approx(0.7 * (1.0 - std::exp(-k * 0.5)) / k).epsilon(1e-14));
  }

  // κ = 0 with ω = 0 is not integrable.
  CHECK_THROWS_AS(q_map(HistoryDescriptor::exponential(ubar, 0.0), lift), DomainError);
  CHECK_THROWS_AS(q_map(HistoryDescriptor::exponential(Vec::Zero(2), 1.0), lift), DomainError);
  CHECK_THROWS_AS(HistoryDescriptor::step(ubar, 0.0), DomainError);
}

TEST_CASE("q_map is linear in the history amplitude") {
  std::mt19937_64 gen(5);
  const auto lift = random_lift(gen, 6, 2);
  std::normal_distribution<double> N(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec ubar = Vec::NullaryExpr(2, [&] { return N(gen); });
    const double omega = 0.5 + std::abs(N(gen));
    const double delta = 0.1 + std::abs(N(gen));
    for (double a : {2.0, 0.25, -4.0}) {
      // Power-of-two scalings commute with rounding, so equality is exact.
      CHECK((q_map(HistoryDescriptor::exponential(a * ubar, omega), lift) -
             a * q_map(HistoryDescriptor::exponential(ubar, omega), lift)).norm() == 0.0);
      CHECK((q_map(HistoryDescriptor::step(a * ubar, delta), lift) - a * q_map(HistoryDescriptor::step(ubar, delta), lift))
                .norm() == 0.0);
    }
    const double a = N(gen);
    const Mat lhs = q_map(HistoryDescriptor::exponential(a * ubar, omega), lift);
    const Mat rhs = a * q_map(HistoryDescriptor::exponential(ubar, omega), lift);
    CHECK(rel(lhs, rhs) <= 4e-16);
  }
}

TEST_CASE("norm_X") {
  CHECK(norm_X(scalar_lift(1.0, 0.0, -1.0), Mat::Constant(1, 1, 3.0)) == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(norm_X(scalar_lift(2.0, 3.0, -1.0), Mat::Constant(1, 1, 1.0)) == doctest::Approx(std::sqrt(8.0)).epsilon(1e-15));
  std::mt19937_64 gen(9);
  const auto lift = random_lift(gen, 5, 2);
  for (double rho : {0.0, 0.3, 0.8}) CHECK(norm_X(lift, Mat::Zero(5, 2), rho) == 0.0);
  CHECK_THROWS_AS(norm_X(lift, Mat::Zero(5, 2), 1.0), DomainError);
  CHECK_THROWS_AS(norm_X(lift, Mat::Zero(4, 2), 0.0), DomainError);

  // Homogeneity and growth with the exponent: I - B_n has spectrum >= 1.
  const Mat y = Mat::Random(5, 2);
  CHECK(norm_X(lift, 3.0 * y, 0.4) == doctest::Approx(3.0 * norm_X(lift, y, 0.4)).epsilon(1e-12));
}

TEST_CASE("extract_u") {
  const auto lift = scalar_lift(1.0, 1.0, -1.0);
  CHECK(extract_u(lift, Mat::Constant(1, 1, 1.0), Vec::Zero(1))(0) == doctest::Approx(0.5));
  CHECK(extract_u(lift, Mat::Zero(1, 1), Vec::Constant(1, 2.0))(0) == doctest::Approx(1.0));
  CHECK(extract_u(lift, Mat::Zero(1, 1), Vec::Zero(1))(0) == 0.0);
}

TEST_CASE("generator examples") {
  const auto lift = scalar_lift(1.0, 2.0, -1.0);
  CHECK(generator(lift)(0, 0) == doctest::Approx(-1.0).epsilon(1e-15));
  const auto zero = scalar_lift(1.0, 0.0, -1.0);
  CHECK(generator(zero)(0, 0) == 0.0);

  std::mt19937_64 gen(1);
  const auto big = random_lift(gen, 4, 1);
  // y orthogonal to (w_j κ_j): constraint term vanishes.
  Vec wk = (big.weights().array() * big.kappa().array()).matrix();
  Vec y = Vec::Random(4);
  y -= wk * (wk.dot(y) / wk.squaredNorm());
  const Vec By = generator(big) * y;
  CHECK((By + (big.kappa().array() * y.array()).matrix()).norm() <= 1e-12 * y.norm());
}

TEST_CASE("generator matches the two-stage computation") {
  std::mt19937_64 gen(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto lift = random_lift(gen, 2 + trial % 5, 1 + trial % 3);
    const Mat y = Mat::Random(lift.n(), lift.d());
    const Vec u = extract_u(lift, y, Vec::Zero(lift.d()));
    Mat expected = y;
    for (Index i = 0; i < lift.n(); ++i) expected.row(i) = -lift.kappa()(i) * y.row(i) + u.transpose();
    const Vec got = generator(lift) * flatten(y);
    CHECK((got - flatten(expected)).norm() <= 1e-12 * flatten(expected).norm());
  }
}

TEST_CASE("generator spectrum is real and nonpositive for negative A") {
  std::mt19937_64 gen(4);
  for (int trial = 0; trial < 10; ++trial) {
    const auto lift = random_lift(gen, 6, 1);
    const auto& eig = lift.generator_eigensystem();
    CHECK(eig.values.imag().cwiseAbs().maxCoeff() <= 1e-10);
    CHECK(eig.values.real().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("frac_power examples") {
  CHECK(rel(frac_power(Mat::Identity(3, 3), 0.7).value, Mat::Identity(3, 3)) <= 1e-14);
  Mat D = Mat::Zero(2, 2);
  D(0, 0) = 2.0;
  D(1, 1) = 4.0;
  const auto r = frac_power(D, 0.5);
  CHECK(r.value(0, 0) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-14));
  CHECK(r.value(1, 1) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(std::abs(r.value(0, 1)) <= 1e-15);
  Mat J = Mat::Identity(2, 2);
  J(0, 1) = 1.0;
  CHECK_THROWS_AS(frac_power(J, 0.5), NumericError);
  CHECK_THROWS_AS(frac_power(D, 2.5), DomainError);
}

TEST_CASE("frac_power composes on random diagonalizable matrices") {
  std::mt19937_64 gen(8);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 2 + trial % 6;
    Mat V = Mat::Identity(n, n) + 0.3 * Mat::Random(n, n);
    Vec lam(n);
    for (int i = 0; i < n; ++i) lam(i) = 0.5 + 4.0 * U(gen);
    const Mat M = V * lam.asDiagonal() * V.inverse();
    CHECK(rel(frac_power(M, 1.0).value, M) <= 1e-8);
    const double a = -0.5 + 1.5 * U(gen), b = -0.5 + 1.5 * U(gen);
    const Mat lhs = frac_power(M, a).value * frac_power(M, b).value;
    CHECK(rel(lhs, frac_power(M, a + b).value) <= 1e-8);
    CHECK(rel(frac_power(M, -1.0).value * M, Mat::Identity(n, n)) <= 1e-8);
  }
}

TEST_CASE("shifted power of the generator") {
  std::mt19937_64 gen(10);
  const auto lift = random_lift(gen, 5, 2);
  const Index N = lift.state_dim();
  const Mat IB = Mat::Identity(N, N) - generator(lift);
  CHECK(rel(shifted_power(lift, 1.0).value, IB) <= 1e-10);
  const Mat half = shifted_power(lift, 0.5).value;
  CHECK(rel(half * half, IB) <= 1e-10);
  CHECK_THROWS_AS(shifted_power(lift, 0.5, 1.0), NumericError);
}

TEST_CASE("noise loading") {
  CHECK(noise_loading(scalar_lift(1.0, 0.0, 0.0), Mat::Constant(1, 1, 1.0), 0.3)(0, 0) == doctest::Approx(1.0));
  CHECK(noise_loading(scalar_lift(1.0, 1.0, -1.0), Mat::Constant(1, 1, 1.0), 1.0)(0, 0) ==
        doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  std::mt19937_64 gen(12);
  const auto lift = random_lift(gen, 4, 2);
  CHECK(noise_loading(lift, Mat::Zero(2, 3), 0.1).norm() == 0.0);
  CHECK(noise_loading(lift, Mat::Zero(2, 3), 0.1).rows() == 8);
  CHECK_THROWS_AS(noise_loading(lift, Mat::Zero(3, 1), 0.1), DomainError);
  CHECK_THROWS_AS(noise_loading(lift, Mat::Zero(2, 1), 0.0), DomainError);
}

TEST_CASE("implicit step is backward Euler on the reduced generator") {
  std::mt19937_64 gen(13);
  const auto lift = random_lift(gen, 5, 2);
  const double dt = 0.05;
  const Mat y = Mat::Random(5, 2);
  const Vec F = Vec::Random(2);
  const auto r = step_resolvent(lift, dt);
  Vec rhs = F;
  for (Index i = 0; i < 5; ++i) rhs += lift.weights()(i) * lift.kappa()(i) * r.damping(i) * y.row(i).transpose();
  const Vec u1 = r.solve(rhs);
  Mat y1 = y;
  for (Index i = 0; i < 5; ++i) y1.row(i) = r.damping(i) * (y.row(i) + dt * u1.transpose());
  // u at the new time satisfies the constraint with the same forcing.
  CHECK((extract_u(lift, y1, F) - u1).norm() <= 1e-12 * u1.norm());
  // y1 = (I - dt B)^{-1}(y + dt·1⊗(cI-A)^{-1}F).
  const Index N = lift.state_dim();
  Mat src = Mat::Zero(5, 2);
  for (Index i = 0; i < 5; ++i) src.row(i) = lift.solve_constraint(F).transpose();
  const Vec be = (Mat::Identity(N, N) - dt * generator(lift)).partialPivLu().solve(flatten(y) + dt * flatten(src));
  CHECK((be - flatten(y1)).norm() <= 1e-12 * be.norm());
}

TEST_CASE("resolvent powers approach the exponential") {
  std::mt19937_64 gen(14);
  const auto lift = random_lift(gen, 4, 1);
  const double t = 0.7;
  const Mat E = semigroup(lift, t);
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t k : {8u, 32u, 128u, 512u}) {
    const double e = rel(resolvent_power(lift, t / static_cast<double>(k), k), E);
    CHECK(e < prev);
    prev = e;
  }
  CHECK(prev <= 1e-2);
  CHECK(rel(resolvent_power(lift, 0.1, 0), Mat::Identity(4, 4)) == 0.0);
}

TEST_CASE("lazy caches are shared and thread safe") {
  std::mt19937_64 gen(15);
  const auto lift = random_lift(gen, 8, 2);
  const DiscreteLift copy = lift;
  std::vector<std::thread> pool;
  std::vector<const Mat*> seen(4);
  for (int i = 0; i < 4; ++i) pool.emplace_back([&, i] { seen[static_cast<std::size_t>(i)] = &copy.generator(); });
  for (auto& th : pool) th.join();
  for (const Mat* p : seen) CHECK(p == &lift.generator());
}
