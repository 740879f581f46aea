#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "svc/lift.hpp"
#include "svc/types.hpp"

namespace svc {

using DriftFn = std::function<Vec(double t, const Vec& u)>;
using JacobianFn = std::function<Mat(double t, const Vec& u)>;
using ControlDriftFn = std::function<Vec(double t, const Vec& u, const Vec& gamma)>;
using RunningCostFn = std::function<double(double t, const Vec& u, const Vec& gamma)>;
using TerminalCostFn = std::function<double(const Vec& u)>;

// Declared bounds: L_f and L_phi are Lipschitz constants, C_r bounds |r| and
// C_l bounds |l(t, 0, γ)|. Infinity means "not declared".
struct LipschitzConstants {
  double L_f = std::numeric_limits<double>::infinity();
  double C_r = std::numeric_limits<double>::infinity();
  double C_l = std::numeric_limits<double>::infinity();
  double L_phi = std::numeric_limits<double>::infinity();
};

/// Coefficients of the controlled Volterra equation
///   d/dt ∫ a(t-s) u(s) ds = A u + f(t, u) + g [r(t, u, γ) + dW/dt]
/// with cost E[∫ l(t, u, γ) dt + φ(u(T))]. Empty callables stand for zero.
struct ProblemSpec {
  ProblemSpec(DiscreteLift lift_, Mat g_) : lift(std::move(lift_)), g(std::move(g_)) {}

  DiscreteLift lift;
  Mat g;  // d×m
  DriftFn f;
  JacobianFn f_jacobian;  // optional analytic ∇_u f
  ControlDriftFn r;       // m-vector
  RunningCostFn l;
  TerminalCostFn phi;
  std::vector<Vec> controls;  // the finite control set 𝒰
  HistoryDescriptor history;
  LipschitzConstants constants;

  Index d() const { return lift.d(); }
  Index m() const { return g.cols(); }

  Vec drift(double t, const Vec& u) const { return f ? f(t, u) : Vec::Zero(d()); }
  // Analytic Jacobian when supplied, else central differences with step 1e-6(1+|u_a|).
  Mat drift_jacobian(double t, const Vec& u) const;
  Vec control_drift(double t, const Vec& u, const Vec& gamma) const {
    return r ? r(t, u, gamma) : Vec::Zero(m());
  }
  double running_cost(double t, const Vec& u, const Vec& gamma) const { return l ? l(t, u, gamma) : 0.0; }
  double terminal_cost(const Vec& u) const { return phi ? phi(u) : 0.0; }
};

struct ProblemCheck {
  bool r_bounded = true;
  bool f_lipschitz = true;
  bool l_bounded_at_zero = true;
  bool phi_lipschitz = true;
  bool controls_nonempty = true;
  double max_r = 0.0;
  double max_f_ratio = 0.0;
  double max_l_at_zero = 0.0;
  double max_phi_ratio = 0.0;
  std::string notes;

  bool ok() const { return r_bounded && f_lipschitz && l_bounded_at_zero && phi_lipschitz && controls_nonempty; }
};

// Spot checks of the declared constants at random arguments in [0, T] × R^d.
ProblemCheck check_problem(const ProblemSpec& problem, double T, std::size_t samples = 200,
                           std::uint64_t seed = 1);

// count equally spaced scalar controls on [lo, hi].
std::vector<Vec> control_grid(double lo, double hi, std::size_t count);

}  // namespace svc
