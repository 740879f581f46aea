#pragma once

#include <complex>
#include <memory>
#include <optional>

#include <Eigen/Dense>

#include "svc/kernel.hpp"
#include "svc/types.hpp"

namespace svc {

// The operator A acting on H = R^d. Construction rejects eigenvalues with
// positive real part unless allow_unstable is set; the flag is kept so that
// reports can show the override.
class OperatorA {
 public:
  explicit OperatorA(Mat matrix, bool allow_unstable = false);

  const Mat& matrix() const noexcept { return matrix_; }
  Index dim() const noexcept { return matrix_.rows(); }
  double spectral_abscissa() const noexcept { return abscissa_; }
  bool allow_unstable() const noexcept { return allow_unstable_; }

 private:
  Mat matrix_;
  double abscissa_ = 0.0;
  bool allow_unstable_ = false;
};

struct Exponents {
  double eta = 0.0;
  double theta = 0.0;
  bool auto_selected = false;
};

// η = (1-α)/2 + δ, θ = (1+α)/2 - δ with δ = (α - 1/2)/4.
// Throws InfeasibleError for α <= 1/2 and DomainError for α > 1.
Exponents choose_exponents(double alpha);

// Explicit values win when both are given; both null selects from alpha.
Exponents resolve_exponents(std::optional<double> eta, std::optional<double> theta, double alpha);

using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;

struct Eigensystem {
  CVec values;
  CMat vectors;
  CMat inverse;
  double eigvec_condition = 0.0;
  double reconstruction_error = 0.0;
};

// Diagonalization M = V Λ V^{-1}; throws NumericError when the eigenvector
// matrix is worse conditioned than cond_limit (defective or nearly so).
Eigensystem diagonalize(const Mat& M, double cond_limit = 1e8);

struct FracPower {
  Mat value;
  double reconstruction_error = 0.0;
  double eigvec_condition = 0.0;
};

// Principal power M^p, p in [-1, 2], via the eigendecomposition.
FracPower frac_power(const Eigensystem& eig, double p);
FracPower frac_power(const Mat& M, double p, double cond_limit = 1e8);

// Past trajectory u₀ on (-∞, 0].
struct HistoryDescriptor {
  enum class Kind { Zero, Exponential, Step };
  Kind kind = Kind::Zero;
  Vec ubar;            // amplitude (d-vector)
  double omega = 0.0;  // u₀(s) = ū e^{ωs}
  double delta = 0.0;  // u₀ = ū on [-δ, 0]

  static HistoryDescriptor zero(Index d);
  static HistoryDescriptor exponential(Vec ubar, double omega);
  static HistoryDescriptor step(Vec ubar, double delta);

  // u₀(0).
  Vec value_at_zero() const;
};

// Lifted state: row i approximates x(t, κ_i) = ∫_{-∞}^t e^{-κ_i (t-s)} u(s) ds.
using LiftedState = Mat;

// Row-major flattening, index i*d + a.
Vec flatten(const LiftedState& y);
LiftedState unflatten(const Vec& v, Index n, Index d);

/// Finite-dimensional lift built from a discrete Bernstein measure and A.
///
/// Immutable after construction. The reduced generator B_n and the
/// eigensystem of B_n are computed on first use and shared between copies.
class DiscreteLift {
 public:
  DiscreteLift(BernsteinKernel kernel, OperatorA A, Exponents exponents);

  const BernsteinKernel& kernel() const noexcept { return kernel_; }
  const OperatorA& A() const noexcept { return A_; }
  const Exponents& exponents() const noexcept { return exponents_; }
  Index n() const noexcept { return kappa_.size(); }
  Index d() const noexcept { return A_.dim(); }
  Index state_dim() const noexcept { return n() * d(); }
  const Vec& kappa() const noexcept { return kappa_; }
  const Vec& weights() const noexcept { return w_; }
  double total_mass() const noexcept { return c_; }

  // (cI - A)^{-1} v.
  Vec solve_constraint(const Vec& v) const;
  // Σ_j w_j κ_j y_j.
  Vec weighted_drift(const LiftedState& y) const;

  const Mat& generator() const;
  const Eigensystem& generator_eigensystem(double cond_limit = 1e8) const;

 private:
  struct Cache;

  BernsteinKernel kernel_;
  OperatorA A_;
  Exponents exponents_;
  Vec kappa_;
  Vec w_;
  double c_ = 0.0;
  Eigen::FullPivLU<Mat> constraint_lu_;
  std::shared_ptr<Cache> cache_;
};

LiftedState q_map(const HistoryDescriptor& history, const DiscreteLift& lift);

// ‖·‖_X for rho = 0, ‖(I - B_n)^rho ·‖_X for rho in (0, 1).
double norm_X(const DiscreteLift& lift, const LiftedState& y, double rho = 0.0);

// u with (cI - A)u = Σ w_j κ_j y_j + forcing.
Vec extract_u(const DiscreteLift& lift, const LiftedState& y, const Vec& forcing);

// (I - B_n)^p from the cached eigensystem of B_n.
FracPower shifted_power(const DiscreteLift& lift, double p, double cond_limit = 1e8);

// (n·d)×(n·d) matrix of ẏ_i = -κ_i y_i + (cI - A)^{-1} Σ w_j κ_j y_j.
const Mat& generator(const DiscreteLift& lift);

// Resolvent data of one implicit step of size dt.
struct StepResolvent {
  double dt = 0.0;
  double mu = 0.0;             // Σ w_i / (1 + dt κ_i)
  Vec damping;                 // 1 / (1 + dt κ_i)
  Eigen::FullPivLU<Mat> lu;    // of μI - A

  Vec solve(const Vec& rhs) const { return lu.solve(rhs); }
};

StepResolvent step_resolvent(const DiscreteLift& lift, double dt);

// Per-unit-Brownian-increment state response of the implicit step; block i
// of column k is (μI - A)^{-1} g e_k / (1 + dt κ_i).
Mat noise_loading(const DiscreteLift& lift, const Mat& g, double dt);

// e^{t B_n}, dense exponential.
Mat semigroup(const DiscreteLift& lift, double t);
// (I - dt B_n)^{-k}, the discrete semigroup of the implicit scheme.
Mat resolvent_power(const DiscreteLift& lift, double dt, std::size_t k);

}  // namespace svc
