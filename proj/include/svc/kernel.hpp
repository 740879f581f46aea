#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace svc {

enum class KernelFamily { Fractional, Exponential, Discrete };

std::string to_string(KernelFamily family);

// Interval of times on which a discrete approximation is certified.
struct TimeWindow {
  double t_min = 0.0;
  double t_max = 0.0;
  friend bool operator==(const TimeWindow&, const TimeWindow&) = default;
};

/// Completely monotone kernel a(t) = ∫ exp(-κt) ν(dκ).
///
/// Analytic families carry their parameter; the discrete family carries the
/// point masses {(w_i, κ_i)} of ν in increasing κ. Values are immutable once
/// built, so a kernel can be shared freely between threads.
class BernsteinKernel {
 public:
  KernelFamily family() const noexcept { return family_; }
  bool is_discrete() const noexcept { return family_ == KernelFamily::Discrete; }

  // Fractional exponent ρ, a(t) = t^(ρ-1)/Γ(ρ).
  double rho() const;
  // Exponential rate κ₀, a(t) = exp(-κ₀ t).
  double kappa0() const;

  std::span<const double> nodes() const noexcept { return nodes_; }
  std::span<const double> weights() const noexcept { return weights_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  const std::optional<TimeWindow>& window() const noexcept { return window_; }

  // Σ w_i for discrete kernels; +∞ for singular analytic families.
  double total_mass() const;

  friend BernsteinKernel make_fractional(double rho);
  friend BernsteinKernel make_exponential(double kappa0);
  friend BernsteinKernel make_discrete(std::vector<double> nodes,
                                       std::vector<double> weights,
                                       std::optional<TimeWindow> window,
                                       bool require_positive);

  friend bool operator==(const BernsteinKernel&, const BernsteinKernel&) = default;

 private:
  BernsteinKernel() = default;

  KernelFamily family_ = KernelFamily::Discrete;
  double parameter_ = 0.0;
  std::vector<double> nodes_;
  std::vector<double> weights_;
  std::optional<TimeWindow> window_;
};

BernsteinKernel make_fractional(double rho);
BernsteinKernel make_exponential(double kappa0);

// Nodes must be nonnegative and strictly increasing. With require_positive
// every weight must be > 0; otherwise signs are left for check_hypotheses.
BernsteinKernel make_discrete(std::vector<double> nodes, std::vector<double> weights,
                              std::optional<TimeWindow> window = std::nullopt,
                              bool require_positive = true);

double evaluate(const BernsteinKernel& kernel, double t);
double laplace(const BernsteinKernel& kernel, double s);

// Density of ν with respect to Lebesgue measure (fractional family only).
double bernstein_density(const BernsteinKernel& kernel, double kappa);

// ∫_0^t a(s) ds and ∫_0^t ∫_0^s a(r) dr ds, in closed form.
double integral(const BernsteinKernel& kernel, double t);
double second_integral(const BernsteinKernel& kernel, double t);

// a(0+), +∞ for singular kernels.
double value_at_zero(const BernsteinKernel& kernel);

// ∫_0^∞ exp(-st) a(t) dt by double-exponential quadrature, independent of the
// closed-form transforms above.
double laplace_quadrature(const BernsteinKernel& kernel, double s);

/// Singularity index α(a) for the known families (fractional: 1-ρ; exponential
/// and discrete kernels are bounded at 0, so α = 0).
double singularity_index(const BernsteinKernel& kernel);

struct SingularityOptions {
  double c = 1.0;           // lower integration limit in the definition of α
  double decade_lo = 2.0;   // fit window is [c·10^decade_lo, c·10^decade_hi]
  double decade_hi = 6.0;
  std::size_t samples = 41;
  double consistency_tol = 0.02;  // allowed slope gap between window halves
};

struct SingularityEstimate {
  double alpha = 0.0;
  double slope = 0.0;       // fitted d log â / d log s
  double slope_lower = 0.0; // slope on the lower half of the window
  double slope_upper = 0.0;
};

// α = 1 + slope of log â against log s at large s, clamped to [0, 1].
// Analytic families use laplace_quadrature, so the closed form is bypassed.
// Throws NumericError when the two window halves disagree.
SingularityEstimate estimate_singularity_index(const BernsteinKernel& kernel,
                                               const SingularityOptions& options = {});

struct HypothesisReport {
  bool is_completely_monotone = false;
  bool locally_integrable = false;
  bool singular_at_zero = false;
  double alpha = 0.0;
  bool alpha_exceeds_half = false;
  std::string notes;

  bool all_hold() const {
    return is_completely_monotone && locally_integrable && singular_at_zero &&
           alpha_exceeds_half;
  }
};

HypothesisReport check_hypotheses(const BernsteinKernel& kernel);

enum class FitStrategy { GeometricNnls };

struct DiscretizeOptions {
  FitStrategy strategy = FitStrategy::GeometricNnls;
  double c1 = 0.1;  // lowest node = c1 / t_max
  double c2 = 10.0; // highest node = c2 / t_min
  std::size_t collocation_per_node = 10;
  std::size_t min_collocation = 200;
  double tolerance = std::numeric_limits<double>::infinity();
};

struct DiscreteFit {
  BernsteinKernel kernel;
  double sup_rel_error = 0.0;  // over the window on a 10x finer grid
};

/// Sum-of-exponentials approximation with nonnegative weights.
///
/// Nodes are geometric on [c1/t_max, c2/t_min]; weights minimise the relative
/// error at log-spaced collocation times by nonnegative least squares, so the
/// result is completely monotone by construction. Throws ApproximationError
/// when the certified error exceeds options.tolerance.
DiscreteFit discretize(const BernsteinKernel& kernel, std::size_t n, TimeWindow window,
                       const DiscretizeOptions& options = {});

// {"family": ..., "params": {...}, "nodes": [...], "weights": [...]}
nlohmann::json to_json(const BernsteinKernel& kernel);
BernsteinKernel kernel_from_json(const nlohmann::json& doc);

}  // namespace svc
