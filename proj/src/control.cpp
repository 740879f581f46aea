#include "svc/control.hpp"

#include <cmath>
#include <limits>

#include "svc/errors.hpp"

namespace svc {

HamiltonianResult hamiltonian(const ProblemSpec& problem, double t, const Vec& u, const Vec& z) {
  if (problem.controls.empty()) throw DomainError("the control set is empty");
  if (z.size() != problem.m()) throw DomainError("z must have one entry per noise component");
  HamiltonianResult best;
  best.value = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < problem.controls.size(); ++i) {
    const Vec& gamma = problem.controls[i];
    const double value = problem.running_cost(t, u, gamma) + z.dot(problem.control_drift(t, u, gamma));
    if (value < best.value) {
      best.value = value;
      best.active_index = i;
    }
  }
  if (!std::isfinite(best.value)) throw NumericError("Hamiltonian is not finite");
  best.minimizer = problem.controls[best.active_index];
  return best;
}

namespace {

std::vector<double> costs_impl(const ProblemSpec& problem, const PathBundle& bundle, const Vec* fixed) {
  const std::size_t N = bundle.steps();
  const double dt = bundle.grid.dt();
  std::vector<double> out(bundle.n_paths);
  for (std::size_t p = 0; p < bundle.n_paths; ++p) {
    double J = 0.0;
    for (std::size_t k = 0; k < N; ++k) {
      const Vec u = bundle.u_at(p, k);
      J += dt * (fixed ? problem.running_cost(bundle.grid.time(k), u, *fixed)
                       : problem.running_cost(bundle.grid.time(k), u, bundle.control_at(p, k)));
    }
    out[p] = J + problem.terminal_cost(bundle.u_at(p, N));
  }
  return out;
}

}  // namespace

std::vector<double> path_costs(const ProblemSpec& problem, const PathBundle& bundle) {
  if (!bundle.has_controls) throw DomainError("bundle has no stored controls; pass the fixed control");
  return costs_impl(problem, bundle, nullptr);
}

std::vector<double> path_costs(const ProblemSpec& problem, const PathBundle& bundle, const Vec& gamma) {
  return costs_impl(problem, bundle, &gamma);
}

CostEstimate mean_cost(const std::vector<double>& samples) {
  CostEstimate c;
  c.n_paths = samples.size();
  if (samples.empty()) return c;
  double s = 0.0;
  for (double x : samples) s += x;
  const double n = static_cast<double>(samples.size());
  c.J = s / n;
  if (samples.size() > 1) {
    double ss = 0.0;
    for (double x : samples) ss += (x - c.J) * (x - c.J);
    c.stderr = std::sqrt(ss / (n - 1.0) / n);
  }
  return c;
}

CostEstimate cost(const ProblemSpec& problem, const PathBundle& bundle) {
  return mean_cost(path_costs(problem, bundle));
}

CostEstimate cost(const ProblemSpec& problem, const PathBundle& bundle, const Vec& gamma) {
  return mean_cost(path_costs(problem, bundle, gamma));
}

FeedbackPolicy::FeedbackPolicy(const ProblemSpec& problem, const TimeGrid& grid, ZEvaluator z)
    : problem_(&problem), grid_(grid), z_(std::move(z)) {
  if (!z_) throw DomainError("feedback policy needs a Z evaluator");
  if (problem.controls.empty()) throw DomainError("the control set is empty");
}

std::size_t FeedbackPolicy::operator()(std::size_t k, const SystemState& state) const {
  if (problem_->controls.size() == 1) return 0;
  return hamiltonian(*problem_, grid_.time(k), state.u, z_(k, state)).active_index;
}

Feedback FeedbackPolicy::mode(std::size_t offset) const {
  FeedbackPolicy self = *this;
  return Feedback{[self, offset](std::size_t k, double, const SystemState& s) { return self(k + offset, s); }};
}

std::vector<Adversary> bangbang_adversaries(std::size_t n_controls, std::size_t steps, std::size_t K) {
  if (n_controls == 0) throw DomainError("the control set is empty");
  if (K < 1 || K > 6) throw DomainError("bang-bang enumeration needs 1 <= K <= 6");
  if (steps < K) throw DomainError("need at least one step per block");
  std::size_t total = 1;
  for (std::size_t b = 0; b < K; ++b) {
    total *= n_controls;
    if (total > 65536) throw DomainError("bang-bang enumeration would exceed 65536 control paths");
  }
  std::vector<Adversary> out;
  out.reserve(total);
  for (std::size_t code = 0; code < total; ++code) {
    std::vector<std::size_t> digits(K);
    std::size_t rest = code;
    for (std::size_t b = K; b-- > 0;) {
      digits[b] = rest % n_controls;
      rest /= n_controls;
    }
    Adversary a;
    a.label = "bangbang:";
    for (std::size_t b = 0; b < K; ++b) a.label += (b ? "-" : "") + std::to_string(digits[b]);
    a.indices.resize(steps);
    for (std::size_t k = 0; k < steps; ++k) a.indices[k] = digits[k * K / steps];
    out.push_back(std::move(a));
  }
  return out;
}

nlohmann::json VerificationReport::to_json() const {
  nlohmann::json adv = nlohmann::json::array();
  for (const auto& a : adversaries)
    adv.push_back({{"label", a.label}, {"J", a.cost.J}, {"stderr", a.cost.stderr}, {"pass", a.above_value}});
  return {{"v0", v0},
          {"J_feedback", feedback.J},
          {"J_feedback_stderr", feedback.stderr},
          {"n_paths", feedback.n_paths},
          {"feedback_matches_value", feedback_matches_value},
          {"feedback_beats_adversaries", feedback_beats_adversaries},
          {"adversaries", adv},
          {"pass", pass}};
}

VerificationReport verify_fundamental_relation(const ProblemSpec& problem, const FeedbackPolicy& policy,
                                               const TimeGrid& grid, std::size_t n_paths, std::uint64_t seed,
                                               const std::vector<Adversary>& adversaries, double v0,
                                               std::size_t threads) {
  SimulateOptions opts;
  opts.threads = threads;
  opts.store_states = false;
  VerificationReport rep;
  rep.v0 = v0;
  rep.feedback = cost(problem, simulate(problem, grid, n_paths, seed, policy.mode(), opts));
  rep.feedback_matches_value = std::abs(rep.feedback.J - v0) <= 3.0 * rep.feedback.stderr;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& a : adversaries) {
    AdversaryResult r;
    r.label = a.label;
    r.cost = cost(problem, simulate(problem, grid, n_paths, seed, OpenLoop{a.indices}, opts));
    r.above_value = r.cost.J >= v0 - 3.0 * r.cost.stderr;
    best = std::min(best, r.cost.J);
    rep.pass = rep.pass && r.above_value;
    rep.adversaries.push_back(std::move(r));
  }
  rep.feedback_beats_adversaries = adversaries.empty() || rep.feedback.J <= best + 3.0 * rep.feedback.stderr;
  rep.pass = rep.pass && rep.feedback_matches_value && rep.feedback_beats_adversaries;
  return rep;
}

}  // namespace svc
