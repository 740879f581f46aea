#include "svc/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <boost/math/quadrature/exp_sinh.hpp>

#include "svc/errors.hpp"
#include "svc/nnls.hpp"
#include "svc/types.hpp"

namespace svc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_family(const BernsteinKernel& k, KernelFamily expected, const char* what) {
  if (k.family() != expected) {
    throw DomainError(std::string(what) + " is not defined for the " + to_string(k.family()) +
                      " family");
  }
}

// t/κ − (1 − e^{−κt})/κ², with the small-κt series to avoid cancellation.
double exp_second_integral(double kappa, double t) {
  const double x = kappa * t;
  if (kappa == 0.0) return 0.5 * t * t;
  if (std::abs(x) < 1e-3) return t * t * (0.5 - x / 6.0 + x * x / 24.0 - x * x * x / 120.0);
  return t / kappa + std::expm1(-x) / (kappa * kappa);
}

double exp_integral(double kappa, double t) {
  if (kappa == 0.0) return t;
  return -std::expm1(-kappa * t) / kappa;
}

// Least-squares slope of y against x.
double fit_slope(const std::vector<double>& x, const std::vector<double>& y, std::size_t lo,
                 std::size_t hi) {
  double mx = 0.0, my = 0.0;
  const double n = static_cast<double>(hi - lo);
  for (std::size_t i = lo; i < hi; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = lo; i < hi; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxy / sxx;
}

std::vector<double> log_grid(double lo, double hi, std::size_t count) {
  std::vector<double> out(count);
  const double a = std::log(lo), b = std::log(hi);
  for (std::size_t i = 0; i < count; ++i) {
    const double frac = count == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(count - 1);
    out[i] = std::exp(a + (b - a) * frac);
  }
  return out;
}

}  // namespace

std::string to_string(KernelFamily family) {
  switch (family) {
    case KernelFamily::Fractional: return "fractional";
    case KernelFamily::Exponential: return "exponential";
    case KernelFamily::Discrete: return "discrete";
  }
  return "unknown";
}

double BernsteinKernel::rho() const {
  require_family(*this, KernelFamily::Fractional, "rho");
  return parameter_;
}

double BernsteinKernel::kappa0() const {
  require_family(*this, KernelFamily::Exponential, "kappa0");
  return parameter_;
}

double BernsteinKernel::total_mass() const {
  switch (family_) {
    case KernelFamily::Fractional: return kInf;
    case KernelFamily::Exponential: return 1.0;
    case KernelFamily::Discrete: {
      double c = 0.0;
      for (double w : weights_) c += w;
      return c;
    }
  }
  return kInf;
}

BernsteinKernel make_fractional(double rho) {
  if (!(rho > 0.0 && rho < 1.0)) {
    std::ostringstream os;
    os << "fractional kernel needs 0 < rho < 1, got " << rho;
    throw DomainError(os.str());
  }
  BernsteinKernel k;
  k.family_ = KernelFamily::Fractional;
  k.parameter_ = rho;
  return k;
}

BernsteinKernel make_exponential(double kappa0) {
  if (!(kappa0 > 0.0) || !std::isfinite(kappa0)) {
    throw DomainError("exponential kernel needs a finite rate kappa0 > 0");
  }
  BernsteinKernel k;
  k.family_ = KernelFamily::Exponential;
  k.parameter_ = kappa0;
  return k;
}

BernsteinKernel make_discrete(std::vector<double> nodes, std::vector<double> weights,
                              std::optional<TimeWindow> window, bool require_positive) {
  if (nodes.empty() || nodes.size() != weights.size()) {
    throw DomainError("discrete kernel needs matching, nonempty node and weight lists");
  }
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (!std::isfinite(nodes[i]) || nodes[i] < 0.0) throw DomainError("discrete nodes must be finite and >= 0");
    if (i > 0 && !(nodes[i] > nodes[i - 1])) throw DomainError("discrete nodes must be strictly increasing");
    if (!std::isfinite(weights[i])) throw DomainError("discrete weights must be finite");
    if (require_positive && !(weights[i] > 0.0)) throw DomainError("discrete weights must be strictly positive");
  }
  if (window && !(window->t_min > 0.0 && window->t_max > window->t_min)) {
    throw DomainError("certification window needs 0 < t_min < t_max");
  }
  BernsteinKernel k;
  k.family_ = KernelFamily::Discrete;
  k.nodes_ = std::move(nodes);
  k.weights_ = std::move(weights);
  k.window_ = window;
  return k;
}

double evaluate(const BernsteinKernel& kernel, double t) {
  switch (kernel.family()) {
    case KernelFamily::Fractional:
      if (!(t > 0.0)) throw DomainError("fractional kernel is singular at t <= 0");
      return std::pow(t, kernel.rho() - 1.0) / std::tgamma(kernel.rho());
    case KernelFamily::Exponential:
      if (t < 0.0) throw DomainError("kernel evaluated at negative time");
      return std::exp(-kernel.kappa0() * t);
    case KernelFamily::Discrete: {
      if (t < 0.0) throw DomainError("kernel evaluated at negative time");
      double sum = 0.0;
      for (std::size_t i = 0; i < kernel.size(); ++i) sum += kernel.weights()[i] * std::exp(-kernel.nodes()[i] * t);
      return sum;
    }
  }
  return 0.0;
}

double laplace(const BernsteinKernel& kernel, double s) {
  if (!(s > 0.0)) throw DomainError("Laplace transform needs s > 0");
  switch (kernel.family()) {
    case KernelFamily::Fractional: return std::pow(s, -kernel.rho());
    case KernelFamily::Exponential: return 1.0 / (s + kernel.kappa0());
    case KernelFamily::Discrete: {
      double sum = 0.0;
      for (std::size_t i = 0; i < kernel.size(); ++i) sum += kernel.weights()[i] / (s + kernel.nodes()[i]);
      return sum;
    }
  }
  return 0.0;
}

double bernstein_density(const BernsteinKernel& kernel, double kappa) {
  require_family(kernel, KernelFamily::Fractional, "a Lebesgue density of nu");
  if (!(kappa > 0.0)) throw DomainError("density evaluated at kappa <= 0");
  const double rho = kernel.rho();
  return std::pow(kappa, -rho) * std::sin(std::numbers::pi * rho) / std::numbers::pi;
}

double integral(const BernsteinKernel& kernel, double t) {
  if (t < 0.0) throw DomainError("integral over a negative interval");
  switch (kernel.family()) {
    case KernelFamily::Fractional: return std::pow(t, kernel.rho()) / std::tgamma(kernel.rho() + 1.0);
    case KernelFamily::Exponential: return exp_integral(kernel.kappa0(), t);
    case KernelFamily::Discrete: {
      double sum = 0.0;
      for (std::size_t i = 0; i < kernel.size(); ++i) sum += kernel.weights()[i] * exp_integral(kernel.nodes()[i], t);
      return sum;
    }
  }
  return 0.0;
}

double second_integral(const BernsteinKernel& kernel, double t) {
  if (t < 0.0) throw DomainError("integral over a negative interval");
  switch (kernel.family()) {
    case KernelFamily::Fractional: return std::pow(t, kernel.rho() + 1.0) / std::tgamma(kernel.rho() + 2.0);
    case KernelFamily::Exponential: return exp_second_integral(kernel.kappa0(), t);
    case KernelFamily::Discrete: {
      double sum = 0.0;
      for (std::size_t i = 0; i < kernel.size(); ++i)
        sum += kernel.weights()[i] * exp_second_integral(kernel.nodes()[i], t);
      return sum;
    }
  }
  return 0.0;
}

double value_at_zero(const BernsteinKernel& kernel) {
  switch (kernel.family()) {
    case KernelFamily::Fractional: return kInf;
    case KernelFamily::Exponential: return 1.0;
    case KernelFamily::Discrete: return kernel.total_mass();
  }
  return kInf;
}

double laplace_quadrature(const BernsteinKernel& kernel, double s) {
  if (!(s > 0.0)) throw DomainError("Laplace transform needs s > 0");
  // â(s) = (1/s) ∫_0^∞ e^{-τ} a(τ/s) dτ keeps the integrand on a unit scale.
  auto integrand = [&](double tau) { return tau > 0.0 ? std::exp(-tau) * evaluate(kernel, tau / s) : 0.0; };
  boost::math::quadrature::exp_sinh<double> integrator;
  double error = 0.0;
  const double value = integrator.integrate(integrand, 0.0, kInf, 1e-12, &error);
  return value / s;
}

double singularity_index(const BernsteinKernel& kernel) {
  switch (kernel.family()) {
    case KernelFamily::Fractional: return 1.0 - kernel.rho();
    case KernelFamily::Exponential: return 0.0;
    case KernelFamily::Discrete: return 0.0;
  }
  return 0.0;
}

SingularityEstimate estimate_singularity_index(const BernsteinKernel& kernel,
                                               const SingularityOptions& options) {
  if (!(options.c > 0.0) || options.samples < 4 || !(options.decade_hi > options.decade_lo)) {
    throw DomainError("singularity estimator needs c > 0, >= 4 samples and a nonempty window");
  }
  const auto s = log_grid(options.c * std::pow(10.0, options.decade_lo),
                          options.c * std::pow(10.0, options.decade_hi), options.samples);
  std::vector<double> log_s(s.size()), log_a(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double a_hat = kernel.is_discrete() ? laplace(kernel, s[i]) : laplace_quadrature(kernel, s[i]);
    if (!(a_hat > 0.0) || !std::isfinite(a_hat)) {
      throw NumericError("Laplace transform not positive and finite at s = " + std::to_string(s[i]));
    }
    log_s[i] = std::log(s[i]);
    log_a[i] = std::log(a_hat);
  }
  SingularityEstimate est;
  const std::size_t half = s.size() / 2;
  est.slope = fit_slope(log_s, log_a, 0, s.size());
  est.slope_lower = fit_slope(log_s, log_a, 0, half + 1);
  est.slope_upper = fit_slope(log_s, log_a, half, s.size());
  if (std::abs(est.slope_lower - est.slope_upper) > options.consistency_tol) {
    std::ostringstream os;
    os << "slope of log Laplace transform did not settle on [" << s.front() << ", " << s.back()
       << "]: lower-half slope " << est.slope_lower << ", upper-half slope " << est.slope_upper;
    throw NumericError(os.str());
  }
  est.alpha = std::clamp(1.0 + est.slope, 0.0, 1.0);
  return est;
}

HypothesisReport check_hypotheses(const BernsteinKernel& kernel) {
  HypothesisReport rep;
  std::ostringstream notes;
  switch (kernel.family()) {
    case KernelFamily::Fractional: {
      rep.is_completely_monotone = true;
      rep.locally_integrable = true;
      rep.singular_at_zero = true;
      rep.alpha = singularity_index(kernel);
      try {
        const auto est = estimate_singularity_index(kernel);
        notes << "numerical alpha estimate " << est.alpha << "; ";
      } catch (const NumericError& e) {
        notes << "numerical alpha estimate unavailable: " << e.what() << "; ";
      }
      break;
    }
    case KernelFamily::Exponential:
      rep.is_completely_monotone = true;
      rep.locally_integrable = true;
      rep.singular_at_zero = false;
      rep.alpha = 0.0;
      notes << "a(0+) = 1 is finite; ";
      break;
    case KernelFamily::Discrete: {
      rep.is_completely_monotone = std::all_of(kernel.weights().begin(), kernel.weights().end(),
                                               [](double w) { return w > 0.0; });
      if (!rep.is_completely_monotone) notes << "nonpositive weight violates complete monotonicity; ";
      rep.locally_integrable = true;
      rep.singular_at_zero = false;
      rep.alpha = 0.0;
      notes << "discrete measure has finite mass a(0+) = " << kernel.total_mass()
            << ", singularity only in the refinement limit; ";
      break;
    }
  }
  rep.alpha_exceeds_half = rep.alpha > 0.5;
  rep.notes = notes.str();
  return rep;
}

DiscreteFit discretize(const BernsteinKernel& kernel, std::size_t n, TimeWindow window,
                       const DiscretizeOptions& options) {
  if (!(window.t_min > 0.0 && window.t_max > window.t_min)) {
    throw DomainError("discretization window needs 0 < t_min < t_max");
  }
  if (kernel.family() == KernelFamily::Exponential) {
    if (n < 1) throw DomainError("discretization needs at least one node");
    return {make_discrete({kernel.kappa0()}, {1.0}, window), 0.0};
  }
  if (kernel.is_discrete()) throw DomainError("kernel is already discrete");
  if (n < 2) throw DomainError("discretization of a singular kernel needs n >= 2");

  const auto kappa = log_grid(options.c1 / window.t_max, options.c2 / window.t_min, n);
  const std::size_t m = std::max(options.min_collocation, options.collocation_per_node * n);
  const auto t = log_grid(window.t_min, window.t_max, m);

  Mat M(static_cast<Index>(m), static_cast<Index>(n));
  for (std::size_t i = 0; i < m; ++i) {
    const double inv_a = 1.0 / evaluate(kernel, t[i]);
    for (std::size_t j = 0; j < n; ++j) M(static_cast<Index>(i), static_cast<Index>(j)) = std::exp(-kappa[j] * t[i]) * inv_a;
  }
  const Vec scale = M.colwise().norm().transpose().cwiseMax(1e-300);
  const Mat Ms = M * scale.cwiseInverse().asDiagonal();
  const auto sol = nnls(Ms, Vec::Ones(static_cast<Index>(m)), 20 * n + 100);

  std::vector<double> nodes, weights;
  for (std::size_t j = 0; j < n; ++j) {
    const double w = sol.x(static_cast<Index>(j)) / scale(static_cast<Index>(j));
    if (w > 0.0) {
      nodes.push_back(kappa[j]);
      weights.push_back(w);
    }
  }
  if (nodes.empty()) throw NumericError("nonnegative fit returned no active nodes");
  DiscreteFit fit{make_discrete(std::move(nodes), std::move(weights), window), 0.0};

  for (double tc : log_grid(window.t_min, window.t_max, 10 * m)) {
    const double exact = evaluate(kernel, tc);
    fit.sup_rel_error = std::max(fit.sup_rel_error, std::abs(evaluate(fit.kernel, tc) - exact) / exact);
  }
  if (fit.sup_rel_error > options.tolerance) {
    std::ostringstream os;
    os << "sum-of-exponentials fit with " << n << " nodes reached sup relative error " << fit.sup_rel_error
       << " > tolerance " << options.tolerance;
    throw ApproximationError(os.str(), fit.sup_rel_error);
  }
  return fit;
}

nlohmann::json to_json(const BernsteinKernel& kernel) {
  nlohmann::json doc;
  doc["family"] = to_string(kernel.family());
  nlohmann::json params = nlohmann::json::object();
  switch (kernel.family()) {
    case KernelFamily::Fractional: params["rho"] = kernel.rho(); break;
    case KernelFamily::Exponential: params["kappa0"] = kernel.kappa0(); break;
    case KernelFamily::Discrete:
      if (kernel.window()) params["window"] = {kernel.window()->t_min, kernel.window()->t_max};
      break;
  }
  doc["params"] = params;
  doc["nodes"] = std::vector<double>(kernel.nodes().begin(), kernel.nodes().end());
  doc["weights"] = std::vector<double>(kernel.weights().begin(), kernel.weights().end());
  return doc;
}

BernsteinKernel kernel_from_json(const nlohmann::json& doc) {
  try {
    const std::string family = doc.at("family").get<std::string>();
    const nlohmann::json params = doc.value("params", nlohmann::json::object());
    if (family == "fractional") return make_fractional(params.at("rho").get<double>());
    if (family == "exponential") return make_exponential(params.at("kappa0").get<double>());
    if (family == "discrete") {
      std::optional<TimeWindow> window;
      if (params.contains("window")) {
        const auto w = params.at("window").get<std::vector<double>>();
        if (w.size() != 2) throw ConfigError("kernel window must have two entries");
        window = TimeWindow{w[0], w[1]};
      }
      return make_discrete(doc.at("nodes").get<std::vector<double>>(), doc.at("weights").get<std::vector<double>>(),
                           window, false);
    }
    throw ConfigError("unknown kernel family '" + family + "'");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed kernel document: ") + e.what());
  }
}

}  // namespace svc
