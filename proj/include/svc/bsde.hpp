#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "svc/control.hpp"
#include "svc/forward.hpp"
#include "svc/sensitivity.hpp"

namespace svc {

enum class Basis {
  Poly2,       // degree-2 polynomials in z = (u, Σ w_i y_i, Σ w_i κ_i y_i)
  Poly2State,  // 1, u, every lifted coordinate, and the quadratic terms of z
};

// Value: Y_k = E[Y_{k+1} | x_k] + Δψ, so Y_0 is the optimal cost.
// Literal: Y_k = E[Y_{k+1} | x_k] - Δψ, the dY = ψ dt + Z dW reading.
enum class DriverSign { Value, Literal };

Basis parse_basis(const std::string& name);
std::string to_string(Basis basis);

struct BsdeOptions {
  Basis basis = Basis::Poly2;
  DriverSign sign = DriverSign::Value;
  bool implicit = false;         // second pass of ψ(t_k, ·, Z_k) on the updated Y_k
  bool control_variate = true;   // Z target (Y_{k+1} - Ê_k Y_{k+1}) ΔW/Δ
  double cond_limit = 1e10;      // basis reduction above this condition number
  std::size_t threads = 1;
};

// Regressors of one state; the summary features z and the basis row.
Vec summary_features(const DiscreteLift& lift, const SystemState& state);
Vec basis_row(const DiscreteLift& lift, const SystemState& state, Basis basis);

/// Least-squares model on standardized basis columns. Columns without spread
/// are dropped (the intercept carries them); near-collinear columns are
/// dropped by rank-revealing QR, which marks the model as reduced.
struct RegressionModel {
  std::vector<Index> active;  // basis columns in use; 0 is the intercept
  Vec mean, scale;            // standardization of the active columns
  Mat coef;                   // active × targets
  Vec lo, hi;                 // training range of every basis column
  double condition = 1.0;
  double normal_residual = 0.0;  // ‖Φᵀ(Φβ - Y)‖ / (‖Φ‖ ‖Y‖) on active columns
  bool reduced = false;

  Vec predict(const Vec& row) const;
  bool inside(const Vec& row, double margin = 0.1) const;
};

// Fits targets (P × q) on the rows of design (P × basis size).
RegressionModel fit_regression(const Mat& design, const Mat& targets, double cond_limit = 1e10);

struct BsdeDiagnostics {
  std::vector<double> condition;        // per step k < N
  std::vector<double> normal_residual;  // per step k < N
  std::vector<std::size_t> basis_used;  // active columns per step
  std::vector<bool> reduced;
  std::size_t reduced_steps = 0;
  double max_normal_residual = 0.0;
};

/// Regression solution of the backward equation on an uncontrolled bundle.
struct BsdeSolution {
  ProblemSpec problem;
  TimeGrid grid;
  BsdeOptions options;
  std::size_t n_paths = 0;
  Index m = 0;
  std::vector<RegressionModel> models;  // step k: columns 0 = Ê_k Y_{k+1}, 1..m = Z_k
  std::vector<double> Y;                // (N + 1) per path
  std::vector<double> Z;                // N × m per path
  BsdeDiagnostics diagnostics;
  double pathwise_mean = 0.0;    // mean of φ(u_N) ± Σ_k Δψ_k along the paths
  double pathwise_stderr = 0.0;

  std::size_t steps() const { return grid.steps; }
  double Y_at(std::size_t path, std::size_t k) const { return Y[path * (steps() + 1) + k]; }
  Eigen::Map<const Vec> Z_at(std::size_t path, std::size_t k) const;

  // v(t_k, state); φ(u) at k = N.
  double value_at(std::size_t k, const SystemState& state) const;
  // Ẑ(t_k, state) for k < N.
  Vec z_at(std::size_t k, const SystemState& state) const;
  // Ê_k[Y_{k+1}] at the state, k < N.
  double continuation_at(std::size_t k, const SystemState& state) const;
  bool inside_training(std::size_t k, const SystemState& state) const;

  // Mean of Y_0 over the paths; its Monte Carlo error is pathwise_stderr.
  double y0() const;
  double y0_stderr() const { return pathwise_stderr; }

  ValueEvaluator value_evaluator() const;
  ZEvaluator z_evaluator() const;
};

BsdeSolution solve_bsde(const ProblemSpec& problem, const PathBundle& bundle, const BsdeOptions& options = {});

struct ValueQuery {
  double value = 0.0;
  std::size_t k = 0;         // grid step used
  double t_used = 0.0;
  bool extrapolated = false;  // state outside the training cloud of step k
};

// Value at the grid time nearest to t.
ValueQuery value(const BsdeSolution& solution, double t, const SystemState& state);

// The policy keeps a pointer to the solution, which must outlive it.
FeedbackPolicy feedback_policy(const ProblemSpec& problem, const BsdeSolution& solution);

struct ZIdentificationReport {
  double relative_l2 = 0.0;  // ‖Ẑ - D̂‖ / ‖D̂‖ over the samples
  double z_norm = 0.0;
  double derivative_norm = 0.0;
  std::size_t samples = 0;
  std::vector<double> per_step;  // relative discrepancy per checked step
};

/// Regression Z against the directional derivative of v(t_{k+1}, ·) along the
/// one-step noise response, projected on the basis of step k.
ZIdentificationReport z_identification_check(const ProblemSpec& problem, const BsdeSolution& solution,
                                             const PathBundle& bundle, std::size_t step_stride = 1,
                                             double fd_step = 1e-4);

// Central difference of v(k, ·) along the lifted direction (I - B_n)^{1-θ} h.
double grad_value_direction(const ValueEvaluator& v, const DiscreteLift& lift, std::size_t k,
                            const SystemState& state, const LiftedState& h, double cond_limit = 1e8);
double grad_value_direction(const BsdeSolution& solution, std::size_t k, const SystemState& state,
                            const LiftedState& h, double cond_limit = 1e8);

struct SamplePoint {
  std::size_t k = 0;
  SystemState state;
};

// count points at steps spread over [0, N) taken from distinct bundle paths.
std::vector<SamplePoint> sample_points(const PathBundle& bundle, std::size_t count);

struct HjbResidual {
  std::size_t k = 0;
  double t = 0.0;
  double value = 0.0;
  double mild = 0.0;  // P_{t,T}φ ± Σ Δ P_{t,r}ψ by nested simulation
  double residual = 0.0;
  double stderr = 0.0;
  bool within = true;  // |residual| <= 3 stderr (or exact zero at T)
};

struct HjbResidualReport {
  std::vector<HjbResidual> points;
  std::size_t n_inner = 0;
  bool pass = true;

  nlohmann::json to_json() const;
};

HjbResidualReport hjb_residual(const BsdeSolution& solution, const std::vector<SamplePoint>& points,
                               std::size_t n_inner, std::uint64_t seed, std::size_t threads = 1);

// Columns t, u_q05, u_q50, u_q95, Y_mean, Y_stderr, Z_mean_<j>.
void write_value_table(const BsdeSolution& solution, const PathBundle& bundle, std::ostream& out);

}  // namespace svc
