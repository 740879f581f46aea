#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "svc/forward.hpp"

namespace svc {

// The start state moved by eps·h in the lifted coordinates, with u kept on
// the constraint: δu = (cI - A)^{-1} Σ w_i κ_i h_i.
SystemState perturb_state(const DiscreteLift& lift, const SystemState& state, const LiftedState& h, double eps);

/// Directional derivative G(t_k) = ∇_x x(t_k; s, x)[h] of the discrete flow
/// along one stored path. Entries are indexed by k - s_index, so G.front() == h.
struct VariationalFlow {
  std::size_t s_index = 0;
  LiftedState h;
  std::vector<LiftedState> G;
  std::vector<Vec> du;  // matching derivative of the u component
};

// Linearizes each step around the stored path: the u update uses ∇_u f(t_k, u_k)
// (plus g ∇_u r at the applied control for controlled bundles) and no noise.
VariationalFlow variational_flow(const ProblemSpec& problem, const PathBundle& bundle, std::size_t path,
                                 const LiftedState& h, std::size_t s_index = 0);

enum class FreePropagator {
  Resolvent,    // (I - Δ B_n)^{-(k-s)}, the homogeneous part of the scheme
  Exponential,  // e^{(t_k - s) B_n}
};

/// Θ(t_k)[h]: the linearized dynamics started at zero and driven by
/// ∇_u f · J of the freely propagated direction (I - B_n)^{1-θ} h.
struct ThetaProcess {
  bool available = false;
  std::string reason;  // set when unavailable
  std::size_t s_index = 0;
  LiftedState direction;  // (I - B_n)^{1-θ} h
  std::vector<LiftedState> theta;
  std::vector<Vec> theta_u;
  double frac_power_error = 0.0;
  double eigvec_condition = 0.0;
};

ThetaProcess theta_process(const ProblemSpec& problem, const PathBundle& bundle, std::size_t path,
                           const LiftedState& h, std::size_t s_index = 0,
                           FreePropagator free = FreePropagator::Resolvent, double cond_limit = 1e8);

/// D_σ x(t_k) e_j: derivative of the stored path with respect to the Brownian
/// increment of step σ, component j. Indexed by absolute step; zero for k <= σ.
struct MalliavinSlice {
  std::size_t sigma = 0;
  Index j = 0;
  std::vector<LiftedState> D;
  std::vector<Vec> Du;
};

MalliavinSlice malliavin_derivative(const ProblemSpec& problem, const PathBundle& bundle, std::size_t path,
                                    std::size_t sigma_index, Index j);

// max over k > σ of ‖D_σ x(t_k)‖_X / ((t_k - t_σ)^{θ-η-1} + 1).
double malliavin_bound_ratio(const DiscreteLift& lift, const TimeGrid& grid, const MalliavinSlice& slice);

// v(t_k, state) on grid step k.
using ValueEvaluator = std::function<double(std::size_t k, const SystemState& state)>;

struct CovariationEstimate {
  double empirical = 0.0;
  double empirical_stderr = 0.0;
  double predicted = 0.0;
  double predicted_stderr = 0.0;
  double paired_stderr = 0.0;  // of the per-path difference

  double combined_stderr() const;
};

/// Joint quadratic variation of v(t, x(t)) with W^j over the grid.
///
/// empirical: path mean of Σ_k (v_{k+1} - v_k) ΔW_{j,k}.
/// predicted: path mean of Σ_k Δ ∂v(t_{k+1}, x_{k+1})/∂ΔW_{j,k}, the derivative
/// taken by central differences along the one-step noise response.
CovariationEstimate joint_quadratic_variation(const ValueEvaluator& v, const ProblemSpec& problem,
                                              const PathBundle& bundle, Index j, std::size_t threads = 1,
                                              double fd_step = 1e-4);

// Response of one step of size dt to a unit Brownian increment in component j:
// dy is column j of noise_loading, du = (μI - A)^{-1} g e_j / dt.
struct NoiseResponse {
  double dt = 0.0;
  LiftedState dy;
  Vec du;
};
NoiseResponse noise_response(const ProblemSpec& problem, double dt, Index j);

// Central difference of v(k, ·) at state along the response, with step fd_step·√dt.
double noise_direction_derivative(const ValueEvaluator& v, const NoiseResponse& response, std::size_t k,
                                  const SystemState& state, double fd_step = 1e-4);

// Tidy CSV with columns t, norm_X, norm_u.
void write_flow_csv(const DiscreteLift& lift, const TimeGrid& grid, const VariationalFlow& flow, std::ostream& out);
// Tidy CSV with columns sigma, t, norm_X, ratio.
void write_malliavin_csv(const DiscreteLift& lift, const TimeGrid& grid, const MalliavinSlice& slice,
                         std::ostream& out);

}  // namespace svc
