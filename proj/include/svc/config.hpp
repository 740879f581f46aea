#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "svc/kernel.hpp"
#include "svc/problem.hpp"

namespace svc {

using Rows = std::vector<std::vector<double>>;

struct KernelConfig {
  std::string family = "fractional";  // fractional | exponential | discrete
  double rho = 0.3;
  double kappa0 = 1.0;
  std::vector<double> nodes, weights;  // discrete family
  std::size_t fit_nodes = 40;
  double t_min = 1e-3, t_max = 10.0;
  double tolerance = 1e-2;  // certified sup relative error of the fit
  friend bool operator==(const KernelConfig&, const KernelConfig&) = default;
};

// f(t, u) = M u + b.
struct DriftConfig {
  std::string type = "zero";  // zero | linear
  Rows M;
  std::vector<double> b;
  friend bool operator==(const DriftConfig&, const DriftConfig&) = default;
};

// r(t, u, γ)_j = Σ_c (C_jc + Σ_a D[a]_jc u_a) γ_c.
struct ControlDriftConfig {
  std::string type = "zero";  // zero | bilinear
  Rows C;
  std::vector<Rows> D;
  friend bool operator==(const ControlDriftConfig&, const ControlDriftConfig&) = default;
};

// l(t, u, γ) = γᵀRγ + qᵀγ + uᵀPu + c.
struct RunningCostConfig {
  std::string type = "zero";  // zero | quadratic
  Rows R, P;
  std::vector<double> q;
  double c = 0.0;
  friend bool operator==(const RunningCostConfig&, const RunningCostConfig&) = default;
};

// linear: φ(u) = cᵀu + b; soft-capped: φ(u) = b + cap·tanh(cᵀu / cap).
struct TerminalCostConfig {
  std::string type = "zero";  // zero | linear | soft-capped
  std::vector<double> c;
  double b = 0.0;
  double cap = 1.0;
  friend bool operator==(const TerminalCostConfig&, const TerminalCostConfig&) = default;
};

struct HistoryConfig {
  std::string type = "zero";  // zero | exponential | step
  std::vector<double> ubar;
  double omega = 0.0;
  double delta = 0.0;
  friend bool operator==(const HistoryConfig&, const HistoryConfig&) = default;
};

struct ConstantsConfig {
  std::optional<double> L_f, C_r, C_l, L_phi;
  friend bool operator==(const ConstantsConfig&, const ConstantsConfig&) = default;
};

struct McConfig {
  std::size_t paths = 10000;            // training bundle
  std::size_t verify_paths = 10000;     // feedback and each adversary
  std::size_t inner_paths = 2000;       // nested simulation per residual point
  std::size_t residual_points = 5;
  std::size_t adversary_blocks = 4;
  std::size_t sensitivity_paths = 8;
  std::size_t plot_paths = 20;
  friend bool operator==(const McConfig&, const McConfig&) = default;
};

struct BsdeConfig {
  std::string basis = "poly2";
  std::string sign = "value";  // value | literal
  bool implicit = false;
  double cond_limit = 1e10;
  friend bool operator==(const BsdeConfig&, const BsdeConfig&) = default;
};

struct ExponentsConfig {
  double eta = 0.0, theta = 0.0;
  friend bool operator==(const ExponentsConfig&, const ExponentsConfig&) = default;
};

/// One experiment: problem data from the coefficient catalog, grid, Monte
/// Carlo sizes, the root seed and the stages to run.
struct ExperimentConfig {
  std::string name = "experiment";
  KernelConfig kernel;
  Rows A, g;
  DriftConfig f;
  ControlDriftConfig r;
  RunningCostConfig l;
  TerminalCostConfig phi;
  Rows controls;  // the control set, one row per control
  HistoryConfig history;
  ConstantsConfig constants;
  std::optional<ExponentsConfig> exponents;
  double T = 1.0;
  std::size_t N = 50;
  McConfig mc;
  BsdeConfig bsde;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  std::string output = "out";
  std::vector<std::string> stages;

  Index d() const { return static_cast<Index>(A.size()); }
  Index m() const { return g.empty() ? 0 : static_cast<Index>(g.front().size()); }
  Index control_dim() const { return controls.empty() ? 0 : static_cast<Index>(controls.front().size()); }

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

// Pipeline stages in execution order.
const std::vector<std::string>& stage_names();

// Parses and validates; every failure is a ConfigError.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::string& path);
nlohmann::json to_json(const ExperimentConfig& config);
void validate(const ExperimentConfig& config);

// FNV-1a of the compact serialized form without output and threads, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);
std::uint64_t fnv1a(const std::string& text);

// Analytic kernel named by the config; discrete configs give the discrete kernel.
BernsteinKernel config_kernel(const ExperimentConfig& config);

// Row-major nested arrays to a matrix.
Mat to_matrix(const Rows& rows);

// Coefficients from the catalog on the given lift.
ProblemSpec build_problem(const ExperimentConfig& config, DiscreteLift lift);

}  // namespace svc
