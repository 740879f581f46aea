#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "svc/bsde.hpp"
#include "svc/config.hpp"
#include "svc/control.hpp"
#include "svc/kernel.hpp"

namespace svc {

// Stage-local seed: splitmix of the root seed xor the FNV-1a hash of the name.
std::uint64_t stage_seed(std::uint64_t root, const std::string& stage);

enum class StageStatus { Pass, Fail, Error, Skipped };
std::string to_string(StageStatus status);

struct StageResult {
  std::string name;
  StageStatus status = StageStatus::Skipped;
  double seconds = 0.0;
  std::string message;
  nlohmann::json data = nlohmann::json::object();  // numbers with their tolerances and standard errors
};

struct RunReport {
  std::string config_name;
  std::string config_hash;
  std::uint64_t root_seed = 0;
  std::size_t threads = 1;
  std::vector<StageResult> stages;
  std::vector<std::string> artifacts;  // file names written to the output directory

  bool pass() const;
  // 0 when every executed stage passed, 1 otherwise.
  int exit_code() const { return pass() ? 0 : 1; }
  nlohmann::json to_json() const;
};

struct RunOptions {
  std::vector<std::string> stages;         // empty: the config's stage list
  std::optional<std::uint64_t> seed;       // overrides the config root seed
  std::optional<std::size_t> threads;
  std::optional<std::string> output;
  std::optional<std::string> basis;        // overrides bsde.basis
  std::optional<std::size_t> paths;        // overrides mc.paths
  std::optional<std::size_t> adversary_blocks;
  std::set<std::string> checks;            // sensitivity checks; empty: all of them
  bool force = false;                      // keep going after a failed stage
  bool write_files = true;
};

/// Objects produced by the stages of one run.
struct PipelineState {
  ExperimentConfig config;
  std::optional<BernsteinKernel> source_kernel;
  std::optional<DiscreteFit> fit;
  std::optional<ProblemSpec> problem;
  TimeGrid grid;
  std::optional<PathBundle> bundle;
  std::optional<BsdeSolution> solution;
  std::optional<CostEstimate> feedback_cost;
  std::optional<VerificationReport> verification;
};

// Runs the selected stages in pipeline order and writes report.json and the
// CSV artifacts into the output directory. A failed stage stops the run
// unless options.force is set; the report then covers the stages reached.
RunReport run_pipeline(const ExperimentConfig& config, const RunOptions& options = {},
                       PipelineState* state = nullptr);

// Tidy CSV of one kind: kernel-fit, paths, profiles or verification.
// Unknown kinds are a UsageError; a missing artifact is a DomainError.
void emit_plot_data(const PipelineState& state, const std::string& kind, std::ostream& out);
const std::vector<std::string>& plot_kinds();

// Columns t, a_true, a_fit, rel_err on log-spaced times of the window.
void write_kernel_fit_csv(const BernsteinKernel& exact, const BernsteinKernel& fitted, TimeWindow window,
                          std::size_t points, std::ostream& out);
// Long format path, step, t, component, u for the first max_paths paths.
void write_paths_csv(const PathBundle& bundle, std::size_t max_paths, std::ostream& out);
// Long format t, quantity, mean, stderr for Y and each Z component.
void write_profiles_csv(const BsdeSolution& solution, std::ostream& out);
// label, J, stderr: the feedback row, then one row per adversary.
void write_verification_csv(const VerificationReport& report, std::ostream& out);

}  // namespace svc
