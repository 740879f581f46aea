#pragma once

#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "svc/forward.hpp"

namespace svc {

struct HamiltonianResult {
  double value = 0.0;  // ψ = l(t, u, γ*) + z·r(t, u, γ*)
  Vec minimizer;
  std::size_t active_index = 0;
};

// ψ(t, u, z) = min over 𝒰 of l(t, u, γ) + z·r(t, u, γ); ties go to the lowest index.
HamiltonianResult hamiltonian(const ProblemSpec& problem, double t, const Vec& u, const Vec& z);

struct CostEstimate {
  double J = 0.0;
  double stderr = 0.0;
  std::size_t n_paths = 0;
};

// Per-path Σ_k l(t_k, u_k, γ_k) Δ + φ(u_N) with the controls stored in the bundle.
std::vector<double> path_costs(const ProblemSpec& problem, const PathBundle& bundle);
// Same with one fixed control for a bundle simulated without controls.
std::vector<double> path_costs(const ProblemSpec& problem, const PathBundle& bundle, const Vec& gamma);

CostEstimate mean_cost(const std::vector<double>& samples);
CostEstimate cost(const ProblemSpec& problem, const PathBundle& bundle);
CostEstimate cost(const ProblemSpec& problem, const PathBundle& bundle, const Vec& gamma);

// Ẑ(t_k, state) as an m-vector.
using ZEvaluator = std::function<Vec(std::size_t k, const SystemState& state)>;

/// γ̂(t_k, state) = argmin of the Hamiltonian at (t_k, u_k, Ẑ(t_k, state)),
/// lowest index on ties. Deterministic and safe to call concurrently.
class FeedbackPolicy {
 public:
  FeedbackPolicy(const ProblemSpec& problem, const TimeGrid& grid, ZEvaluator z);

  std::size_t operator()(std::size_t k, const SystemState& state) const;
  // Simulation mode using this policy on grids whose step 0 is step `offset`
  // of the grid the policy was built on.
  Feedback mode(std::size_t offset = 0) const;

  const TimeGrid& grid() const { return grid_; }

 private:
  const ProblemSpec* problem_;
  TimeGrid grid_;
  ZEvaluator z_;
};

struct Adversary {
  std::string label;
  std::vector<std::size_t> indices;  // one control index per step
};

// Every control path that is constant on each of K equal blocks of the grid:
// |𝒰|^K paths, K <= 6 and at most 65536 paths.
std::vector<Adversary> bangbang_adversaries(std::size_t n_controls, std::size_t steps, std::size_t K);

struct AdversaryResult {
  std::string label;
  CostEstimate cost;
  bool above_value = true;  // J >= v0 - 3 stderr
};

struct VerificationReport {
  double v0 = 0.0;
  CostEstimate feedback;
  std::vector<AdversaryResult> adversaries;
  bool feedback_matches_value = true;  // |J_feedback - v0| <= 3 stderr
  bool feedback_beats_adversaries = true;  // J_feedback <= min J_adv + 3 stderr
  bool pass = true;

  nlohmann::json to_json() const;
};

// Costs of the feedback policy and of every adversary on shared noise.
VerificationReport verify_fundamental_relation(const ProblemSpec& problem, const FeedbackPolicy& policy,
                                               const TimeGrid& grid, std::size_t n_paths, std::uint64_t seed,
                                               const std::vector<Adversary>& adversaries, double v0,
                                               std::size_t threads = 1);

}  // namespace svc
