#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <variant>
#include <vector>

#include "svc/lift.hpp"
#include "svc/problem.hpp"

namespace svc {

// Uniform grid t0 < t0 + dt < ... < T. first_step is the absolute index of
// step 0, which keys the Brownian stream so that restarted runs reuse draws.
struct TimeGrid {
  double t0 = 0.0;
  double T = 1.0;
  std::size_t steps = 1;
  std::size_t first_step = 0;

  double dt() const { return (T - t0) / static_cast<double>(steps); }
  double time(std::size_t k) const { return t0 + static_cast<double>(k) * dt(); }
  // The grid from local step k to the end.
  TimeGrid tail(std::size_t k) const { return {time(k), T, steps - k, first_step + k}; }
};

// Markov state of the discrete scheme: the lifted coordinates and the current
// value of u, which carries the lagged forcing of the last step.
struct SystemState {
  LiftedState y;
  Vec u;
};

// State at t0: y = q_map(history) and u = extract_u(y, F) with the
// deterministic forcing F = f(t0, u₀(0)) + g r(t0, u₀(0), γ₀) of the first step.
SystemState initial_state(const ProblemSpec& problem, double t0 = 0.0, const Vec* gamma0 = nullptr);

/// One implicit step of size dt:
///   (μI - A)u' = Σ w_i κ_i y_i/(1 + dt κ_i) + F,  y_i' = (y_i + dt u')/(1 + dt κ_i)
/// with the lagged forcing F = f(t, u) + g r(t, u, γ) + g dW/dt.
class StepOperator {
 public:
  StepOperator(const ProblemSpec& problem, double dt);

  double dt() const { return resolvent_.dt; }
  const StepResolvent& resolvent() const { return resolvent_; }

  Vec forcing(double t, const Vec& u, const Vec* gamma, const double* dW) const;
  SystemState advance(const SystemState& s, const Vec& F) const;
  SystemState step(const SystemState& s, double t, const Vec* gamma, const double* dW) const {
    return advance(s, forcing(t, s.u, gamma, dW));
  }

 private:
  const ProblemSpec* problem_;
  StepResolvent resolvent_;
  Vec drift_weights_;  // w_i κ_i / (1 + dt κ_i)
};

struct Uncontrolled {};
// Control indices into 𝒰 per grid step; a single entry is held constant.
struct OpenLoop {
  std::vector<std::size_t> indices;
};
// Index into 𝒰 chosen from (local step, time, state); called concurrently.
struct Feedback {
  std::function<std::size_t(std::size_t k, double t, const SystemState& state)> policy;
};
using SimulationMode = std::variant<Uncontrolled, OpenLoop, Feedback>;

struct SimulateOptions {
  std::size_t threads = 1;
  bool store_states = true;
  // Empty: start from initial_state. One entry: shared start. Otherwise one per path.
  std::vector<SystemState> start_states;
};

/// Simulated paths, stored contiguously as [path][step][...].
struct PathBundle {
  TimeGrid grid;
  std::size_t n_paths = 0;
  Index n = 0, d = 0, m = 0, control_dim = 0;
  std::uint64_t seed = 0;
  bool has_states = false;
  bool has_controls = false;
  std::vector<double> y;                   // (steps+1) × n·d per path, row-major
  std::vector<double> u;                   // (steps+1) × d per path
  std::vector<double> dW;                  // steps × m per path
  std::vector<double> controls;            // steps × control_dim per path
  std::vector<std::int32_t> control_index; // steps per path

  std::size_t steps() const { return grid.steps; }
  Eigen::Map<const Vec> u_at(std::size_t path, std::size_t k) const;
  Eigen::Map<const Vec> dW_at(std::size_t path, std::size_t k) const;
  Eigen::Map<const Vec> control_at(std::size_t path, std::size_t k) const;
  LiftedState y_at(std::size_t path, std::size_t k) const;
  SystemState state(std::size_t path, std::size_t k) const { return {y_at(path, k), u_at(path, k)}; }
};

PathBundle simulate(const ProblemSpec& problem, const TimeGrid& grid, std::size_t n_paths, std::uint64_t seed,
                    const SimulationMode& mode = Uncontrolled{}, const SimulateOptions& options = {});

// Largest relative mismatch between stored u_{k+1} and extract_u(y_{k+1}, F_k)
// with F_k rebuilt from the stored u_k, control and increment.
double reconstruction_error(const ProblemSpec& problem, const PathBundle& bundle);

using DeterministicForcing = std::function<Vec(double t, const Vec& u)>;

/// Direct solve of d/dt ∫_0^t a(t-s)u(s)ds = Au + f(t, u) with zero history.
///
/// Product integration: u is piecewise linear and the kernel is integrated
/// exactly over each step through its first and second antiderivatives; the
/// right side uses the trapezoid rule. Independent of the lift.
std::vector<Vec> reference_volterra_solve(const BernsteinKernel& kernel, const Mat& A,
                                          const DeterministicForcing& f, const TimeGrid& grid);

// max_k |d/dt ∫ a(t_k - s)u(s)ds - Au_k - f(t_k, u_k)| / max|u| over interior
// grid points, with the convolution of the piecewise-linear interpolant and a
// central difference in time. Zero history assumed.
double volterra_residual(const std::vector<Vec>& u, const BernsteinKernel& kernel, const Mat& A,
                         const DeterministicForcing& f, const TimeGrid& grid);
std::vector<Vec> u_trajectory(const PathBundle& bundle, std::size_t path);

struct BundleCsvOptions {
  std::size_t max_paths = static_cast<std::size_t>(-1);
  std::vector<Index> nodes;  // lifted rows to export; empty selects first and last
};

// One row per path and grid step: path, step, t, u_*, y_<node>_<comp>, gamma_*, control_index.
void write_bundle_csv(const PathBundle& bundle, std::ostream& out, const BundleCsvOptions& options = {});
void write_bundle_binary(const PathBundle& bundle, std::ostream& out);
PathBundle read_bundle_binary(std::istream& in);

}  // namespace svc
