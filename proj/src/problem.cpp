#include "svc/problem.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "svc/errors.hpp"

namespace svc {

Mat ProblemSpec::drift_jacobian(double t, const Vec& u) const {
  const Index dd = d();
  if (f_jacobian) return f_jacobian(t, u);
  if (!f) return Mat::Zero(dd, dd);
  Mat J(dd, dd);
  Vec up = u, um = u;
  for (Index a = 0; a < dd; ++a) {
    const double h = 1e-6 * (1.0 + std::abs(u(a)));
    up(a) = u(a) + h;
    um(a) = u(a) - h;
    J.col(a) = (f(t, up) - f(t, um)) / (2.0 * h);
    up(a) = um(a) = u(a);
  }
  if (!J.allFinite()) throw NumericError("finite-difference Jacobian of f is not finite");
  return J;
}

ProblemCheck check_problem(const ProblemSpec& problem, double T, std::size_t samples, std::uint64_t seed) {
  ProblemCheck rep;
  std::ostringstream notes;
  const auto& c = problem.constants;
  if (problem.controls.empty()) {
    rep.controls_nonempty = false;
    notes << "control set is empty; ";
  }
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> N(0.0, 2.0);
  std::uniform_real_distribution<double> U(0.0, T);
  const Index d = problem.d();
  auto draw = [&] { return Vec(Vec::NullaryExpr(d, [&] { return N(gen); })); };
  for (std::size_t s = 0; s < samples; ++s) {
    const double t = U(gen);
    const Vec u1 = draw(), u2 = draw();
    const double du = (u1 - u2).norm();
    if (du > 0.0) {
      rep.max_f_ratio = std::max(rep.max_f_ratio, (problem.drift(t, u1) - problem.drift(t, u2)).norm() / du);
      rep.max_phi_ratio =
          std::max(rep.max_phi_ratio, std::abs(problem.terminal_cost(u1) - problem.terminal_cost(u2)) / du);
    }
    for (const auto& gamma : problem.controls) {
      rep.max_r = std::max(rep.max_r, problem.control_drift(t, u1, gamma).norm());
      rep.max_l_at_zero = std::max(rep.max_l_at_zero, std::abs(problem.running_cost(t, Vec::Zero(d), gamma)));
    }
  }
  const double slack = 1.0 + 1e-9;
  if (rep.max_r > c.C_r * slack) {
    rep.r_bounded = false;
    notes << "|r| reached " << rep.max_r << " > C_r = " << c.C_r << "; ";
  }
  if (rep.max_f_ratio > c.L_f * slack) {
    rep.f_lipschitz = false;
    notes << "f difference quotient reached " << rep.max_f_ratio << " > L_f = " << c.L_f << "; ";
  }
  if (rep.max_l_at_zero > c.C_l * slack) {
    rep.l_bounded_at_zero = false;
    notes << "|l(t,0,gamma)| reached " << rep.max_l_at_zero << " > C_l = " << c.C_l << "; ";
  }
  if (rep.max_phi_ratio > c.L_phi * slack) {
    rep.phi_lipschitz = false;
    notes << "phi difference quotient reached " << rep.max_phi_ratio << " > L_phi = " << c.L_phi << "; ";
  }
  rep.notes = notes.str();
  return rep;
}

std::vector<Vec> control_grid(double lo, double hi, std::size_t count) {
  if (count == 0) throw DomainError("control grid needs at least one point");
  if (count > 1 && !(hi > lo)) throw DomainError("control grid needs lo < hi");
  std::vector<Vec> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double x = count == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
    out.push_back(Vec::Constant(1, x));
  }
  return out;
}

}  // namespace svc
