#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "fixtures.hpp"
#include "svc/control.hpp"
#include "svc/errors.hpp"

using namespace svc;

namespace {

Vec s(double x) { return Vec::Constant(1, x); }

ProblemSpec quadratic_cost_problem(std::size_t grid_points) {
  auto p = fixture::linear_problem();
  p.l = [](double, const Vec&, const Vec& gamma) { return gamma.squaredNorm(); };
  p.controls = control_grid(-1.0, 1.0, grid_points);
  return p;
}

// Brute-force minimum of l + z·r over the control set.
double brute_psi(const ProblemSpec& p, double t, const Vec& u, const Vec& z) {
  double best = 1e300;
  for (const auto& g : p.controls) best = std::min(best, p.running_cost(t, u, g) + z.dot(p.control_drift(t, u, g)));
  return best;
}

}  // namespace

TEST_CASE("hamiltonian minimises over a fine control grid") {
  const auto p = quadratic_cost_problem(1001);
  const auto h = hamiltonian(p, 0.0, s(0.0), s(1.0));
  CHECK(h.minimizer(0) == doctest::Approx(-0.5).epsilon(1e-9));
  CHECK(h.value == doctest::Approx(-0.25).epsilon(1e-9));
  CHECK(p.controls[h.active_index](0) == h.minimizer(0));
}

TEST_CASE("hamiltonian matches brute force and breaks ties at the lowest index") {
  const auto p = fixture::linear_problem();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> U(-3.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec u = s(U(rng)), z = s(U(rng));
    CHECK(hamiltonian(p, 0.3, u, z).value == doctest::Approx(brute_psi(p, 0.3, u, z)).epsilon(1e-14));
  }
  auto flat = fixture::two_action_problem();
  flat.l = nullptr;
  flat.r = nullptr;
  CHECK(hamiltonian(flat, 0.0, s(0.0), s(1.0)).active_index == 0);
}

TEST_CASE("hamiltonian rejects an empty control set and a wrong z size") {
  auto p = fixture::linear_problem();
  CHECK_THROWS_AS(hamiltonian(p, 0.0, s(0.0), Vec::Zero(2)), DomainError);
  p.controls.clear();
  CHECK_THROWS_AS(hamiltonian(p, 0.0, s(0.0), s(0.0)), DomainError);
}

TEST_CASE("hamiltonian is concave and Lipschitz in z") {
  const auto p = fixture::linear_problem();
  const double C_r = 1.0;  // |r| = |γ| <= 1 on the grid
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> U(-4.0, 4.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Vec u = s(U(rng));
    const Vec z1 = s(U(rng)), z2 = s(U(rng));
    const double lam = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const double mid = hamiltonian(p, 0.0, u, lam * z1 + (1.0 - lam) * z2).value;
    const double a = hamiltonian(p, 0.0, u, z1).value, b = hamiltonian(p, 0.0, u, z2).value;
    CHECK(mid >= lam * a + (1.0 - lam) * b - 1e-12);
    CHECK(std::abs(a - b) <= C_r * (z1 - z2).norm() + 1e-12);
  }
}

TEST_CASE("hamiltonian at zero is bounded by the running cost bound") {
  const auto p = fixture::linear_problem();
  for (double t : {0.0, 0.5, 1.0}) CHECK(std::abs(hamiltonian(p, t, s(0.0), s(0.0)).value) <= p.constants.C_l);
}

TEST_CASE("scaling the running cost by c and z by c scales the hamiltonian") {
  auto p = fixture::linear_problem();
  auto q = p;
  const double c = 3.5;
  q.l = [c](double, const Vec&, const Vec& gamma) { return c * 0.5 * gamma.squaredNorm(); };
  for (double z : {-2.0, -0.3, 0.0, 0.7, 1.9}) {
    const auto a = hamiltonian(p, 0.0, s(0.1), s(z));
    const auto b = hamiltonian(q, 0.0, s(0.1), s(c * z));
    CHECK(b.value == doctest::Approx(c * a.value).epsilon(1e-12));
    CHECK(b.active_index == a.active_index);
  }
}

TEST_CASE("cost of a constant terminal cost is that constant") {
  auto p = fixture::linear_problem();
  p.l = nullptr;
  p.phi = [](const Vec&) { return 5.0; };
  const auto b = simulate(p, fixture::unit_grid(20), 50, 3, OpenLoop{std::vector<std::size_t>(20, 4)});
  const auto c = cost(p, b);
  CHECK(c.J == doctest::Approx(5.0).epsilon(1e-14));
  CHECK(c.stderr == doctest::Approx(0.0));
  CHECK(c.n_paths == 50);
}

TEST_CASE("unit running cost over [0, 1] costs one") {
  auto p = fixture::linear_problem();
  p.l = [](double, const Vec&, const Vec&) { return 1.0; };
  p.phi = nullptr;
  const auto b = simulate(p, fixture::unit_grid(37), 10, 3);
  CHECK(cost(p, b, s(0.0)).J == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(path_costs(p, b), DomainError);
}

TEST_CASE("path costs agree with a direct recomputation") {
  const auto p = fixture::linear_problem();
  const auto grid = fixture::unit_grid(25);
  std::vector<std::size_t> idx(25);
  for (std::size_t k = 0; k < 25; ++k) idx[k] = (3 * k) % p.controls.size();
  const auto b = simulate(p, grid, 12, 17, OpenLoop{idx});
  const auto costs = path_costs(p, b);
  for (std::size_t i = 0; i < b.n_paths; ++i) {
    double J = 0.0;
    for (std::size_t k = 0; k < 25; ++k) {
      const double g = p.controls[idx[k]](0);
      J += grid.dt() * 0.5 * g * g;
    }
    J += b.u_at(i, 25)(0);
    CHECK(costs[i] == doctest::Approx(J).epsilon(1e-12));
  }
}

TEST_CASE("mean cost statistics") {
  const auto c = mean_cost({1.0, 2.0, 3.0, 4.0});
  CHECK(c.J == doctest::Approx(2.5));
  CHECK(c.stderr == doctest::Approx(std::sqrt(5.0 / 3.0 / 4.0)));
  CHECK(mean_cost({}).n_paths == 0);
}

TEST_CASE("feedback policy on a singleton set always returns zero") {
  auto p = fixture::linear_problem();
  p.controls = {s(0.3)};
  const FeedbackPolicy pol(p, fixture::unit_grid(10), [](std::size_t, const SystemState&) { return s(100.0); });
  SystemState st{LiftedState::Zero(p.lift.n(), 1), s(0.0)};
  CHECK(pol(3, st) == 0);
}

TEST_CASE("feedback policy with zero Z picks the cheapest control") {
  const auto p = fixture::linear_problem();
  const FeedbackPolicy pol(p, fixture::unit_grid(10), [](std::size_t, const SystemState&) { return s(0.0); });
  SystemState st{LiftedState::Zero(p.lift.n(), 1), s(0.4)};
  CHECK(p.controls[pol(0, st)](0) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("two-action feedback switches where 1/2 + Z changes sign") {
  const auto p = fixture::two_action_problem();
  SystemState st{LiftedState::Zero(p.lift.n(), 1), s(0.0)};
  for (double z : {-2.0, -0.6, -0.4, 0.0, 1.0}) {
    const FeedbackPolicy pol(p, fixture::unit_grid(10), [z](std::size_t, const SystemState&) { return s(z); });
    CHECK(pol(0, st) == (0.5 + z < 0.0 ? 1u : 0u));
  }
  CHECK_THROWS_AS(FeedbackPolicy(p, fixture::unit_grid(10), nullptr), DomainError);
}

TEST_CASE("bang-bang enumeration") {
  const auto adv = bangbang_adversaries(2, 50, 4);
  REQUIRE(adv.size() == 16);
  std::set<std::string> labels;
  for (const auto& a : adv) {
    labels.insert(a.label);
    CHECK(a.indices.size() == 50);
  }
  CHECK(labels.size() == 16);
  CHECK(adv[0].label == "bangbang:0-0-0-0");
  CHECK(adv[5].label == "bangbang:0-1-0-1");
  // Block b covers the steps k with floor(4k/50) = b.
  CHECK(adv[5].indices[0] == 0);
  CHECK(adv[5].indices[13] == 1);
  CHECK(adv[5].indices[12] == 0);
  CHECK(adv[5].indices[49] == 1);
  CHECK(bangbang_adversaries(3, 10, 2).size() == 9);
  CHECK_THROWS_AS(bangbang_adversaries(2, 50, 7), DomainError);
  CHECK_THROWS_AS(bangbang_adversaries(2, 50, 0), DomainError);
  CHECK_THROWS_AS(bangbang_adversaries(0, 50, 2), DomainError);
  CHECK_THROWS_AS(bangbang_adversaries(2, 3, 4), DomainError);
  CHECK_THROWS_AS(bangbang_adversaries(21, 50, 6), DomainError);
}

TEST_CASE("verification with one control reproduces the same cost everywhere") {
  auto p = fixture::linear_problem();
  p.controls = {s(0.0)};
  const auto grid = fixture::unit_grid(20);
  const FeedbackPolicy pol(p, grid, [](std::size_t, const SystemState&) { return s(0.0); });
  const auto adv = bangbang_adversaries(1, 20, 3);
  const auto rep = verify_fundamental_relation(p, pol, grid, 400, 21, adv, 0.0);
  REQUIRE(rep.adversaries.size() == 1);
  CHECK(rep.adversaries[0].cost.J == doctest::Approx(rep.feedback.J).epsilon(1e-14));
  CHECK(rep.feedback_beats_adversaries);
}

TEST_CASE("without control drift every control path sees the same state") {
  auto p = fixture::two_action_problem();
  p.r = nullptr;
  p.l = nullptr;
  const auto grid = fixture::unit_grid(20);
  const FeedbackPolicy pol(p, grid, [](std::size_t, const SystemState&) { return s(-1.0); });
  const auto adv = bangbang_adversaries(2, 20, 2);
  const auto rep = verify_fundamental_relation(p, pol, grid, 300, 4, adv, 0.0, 2);
  for (const auto& a : rep.adversaries) CHECK(a.cost.J == doctest::Approx(rep.feedback.J).epsilon(1e-13));
  const auto j = rep.to_json();
  for (const char* key : {"v0", "J_feedback", "J_feedback_stderr", "adversaries", "pass"}) CHECK(j.contains(key));
  CHECK(j["adversaries"].size() == 4);
  CHECK(j["adversaries"][0].contains("label"));
}
