#include "svc/lift.hpp"

#include <cmath>
#include <exception>
#include <mutex>
#include <sstream>

#include <unsupported/Eigen/MatrixFunctions>

#include "svc/errors.hpp"

namespace svc {

OperatorA::OperatorA(Mat matrix, bool allow_unstable)
    : matrix_(std::move(matrix)), allow_unstable_(allow_unstable) {
  if (matrix_.rows() == 0 || matrix_.rows() != matrix_.cols()) {
    throw DomainError("operator A must be a nonempty square matrix");
  }
  if (!matrix_.allFinite()) throw DomainError("operator A has non-finite entries");
  Eigen::EigenSolver<Mat> es(matrix_, false);
  abscissa_ = es.eigenvalues().real().maxCoeff();
  const double tol = 1e-10 * std::max(1.0, matrix_.norm());
  if (abscissa_ > tol && !allow_unstable_) {
    std::ostringstream os;
    os << "operator A has an eigenvalue with real part " << abscissa_
       << " > 0; set allow_unstable to proceed anyway";
    throw DomainError(os.str());
  }
}

Exponents choose_exponents(double alpha) {
  if (!std::isfinite(alpha) || alpha > 1.0) throw DomainError("singularity index must lie in (0, 1]");
  if (alpha <= 0.5) {
    std::ostringstream os;
    os << "no exponents with eta > (1-alpha)/2, theta < (1+alpha)/2, theta - eta > 1/2 exist for alpha = "
       << alpha;
    throw InfeasibleError(os.str());
  }
  const double delta = (alpha - 0.5) / 4.0;
  return {(1.0 - alpha) / 2.0 + delta, (1.0 + alpha) / 2.0 - delta, true};
}

Exponents resolve_exponents(std::optional<double> eta, std::optional<double> theta, double alpha) {
  if (eta.has_value() != theta.has_value()) {
    throw DomainError("eta and theta must be given together or both left to automatic selection");
  }
  if (!eta) return choose_exponents(alpha);
  if (!(*eta > 0.0 && *eta < 1.0 && *theta > 0.0 && *theta < 1.0)) {
    throw DomainError("eta and theta must lie in (0, 1)");
  }
  return {*eta, *theta, false};
}

Eigensystem diagonalize(const Mat& M, double cond_limit) {
  if (M.rows() != M.cols()) throw DomainError("diagonalize needs a square matrix");
  Eigen::EigenSolver<Mat> es(M);
  if (es.info() != Eigen::Success) throw NumericError("eigenvalue iteration did not converge");
  Eigensystem out;
  out.values = es.eigenvalues();
  out.vectors = es.eigenvectors();
  for (Index j = 0; j < out.vectors.cols(); ++j) {
    const double nrm = out.vectors.col(j).norm();
    if (nrm > 0.0) out.vectors.col(j) /= nrm;
  }
  Eigen::JacobiSVD<CMat> svd(out.vectors);
  const auto& sv = svd.singularValues();
  out.eigvec_condition = sv(sv.size() - 1) > 0.0 ? sv(0) / sv(sv.size() - 1)
                                                  : std::numeric_limits<double>::infinity();
  if (!std::isfinite(out.eigvec_condition) || out.eigvec_condition > cond_limit) {
    std::ostringstream os;
    os << "eigenvector matrix has condition number " << out.eigvec_condition << " above the limit "
       << cond_limit << " (matrix defective or nearly so); reduce n or perturb the nodes";
    throw NumericError(os.str());
  }
  out.inverse = out.vectors.partialPivLu().inverse();
  const CMat rebuilt = out.vectors * out.values.asDiagonal() * out.inverse;
  out.reconstruction_error = (rebuilt - M.cast<std::complex<double>>()).norm() / std::max(M.norm(), 1e-300);
  return out;
}

FracPower frac_power(const Eigensystem& eig, double p) {
  if (!(p >= -1.0 && p <= 2.0)) throw DomainError("fractional power exponent must lie in [-1, 2]");
  CVec powered(eig.values.size());
  for (Index i = 0; i < eig.values.size(); ++i) {
    const auto lam = eig.values(i);
    if (std::abs(lam) == 0.0) {
      if (p < 0.0) throw NumericError("negative power of a singular matrix");
      powered(i) = p == 0.0 ? 1.0 : 0.0;
    } else {
      powered(i) = std::pow(lam, p);
    }
  }
  const CMat R = eig.vectors * powered.asDiagonal() * eig.inverse;
  FracPower out;
  out.value = R.real();
  const double imag = R.imag().norm();
  if (imag > 1e-8 * std::max(1.0, out.value.norm())) {
    throw NumericError("principal matrix power is not real (eigenvalues on the negative real axis)");
  }
  out.reconstruction_error = eig.reconstruction_error;
  out.eigvec_condition = eig.eigvec_condition;
  return out;
}

FracPower frac_power(const Mat& M, double p, double cond_limit) {
  return frac_power(diagonalize(M, cond_limit), p);
}

HistoryDescriptor HistoryDescriptor::zero(Index d) {
  HistoryDescriptor h;
  h.kind = Kind::Zero;
  h.ubar = Vec::Zero(d);
  return h;
}

HistoryDescriptor HistoryDescriptor::exponential(Vec ubar, double omega) {
  if (!std::isfinite(omega) || !ubar.allFinite()) throw DomainError("history parameters must be finite");
  HistoryDescriptor h;
  h.kind = Kind::Exponential;
  h.ubar = std::move(ubar);
  h.omega = omega;
  return h;
}

HistoryDescriptor HistoryDescriptor::step(Vec ubar, double delta) {
  if (!(delta > 0.0) || !std::isfinite(delta) || !ubar.allFinite()) {
    throw DomainError("step history needs finite amplitude and delta > 0");
  }
  HistoryDescriptor h;
  h.kind = Kind::Step;
  h.ubar = std::move(ubar);
  h.delta = delta;
  return h;
}

Vec HistoryDescriptor::value_at_zero() const {
  return kind == Kind::Zero ? Vec::Zero(ubar.size()) : ubar;
}

Vec flatten(const LiftedState& y) {
  Vec v(y.size());
  for (Index i = 0; i < y.rows(); ++i) v.segment(i * y.cols(), y.cols()) = y.row(i).transpose();
  return v;
}

LiftedState unflatten(const Vec& v, Index n, Index d) {
  if (v.size() != n * d) throw DomainError("flattened state has the wrong length");
  LiftedState y(n, d);
  for (Index i = 0; i < n; ++i) y.row(i) = v.segment(i * d, d).transpose();
  return y;
}

struct DiscreteLift::Cache {
  std::once_flag generator_once;
  Mat generator;
  std::once_flag eigen_once;
  std::optional<Eigensystem> eigen;
  std::exception_ptr eigen_error;
};

DiscreteLift::DiscreteLift(BernsteinKernel kernel, OperatorA A, Exponents exponents)
    : kernel_(std::move(kernel)), A_(std::move(A)), exponents_(exponents), cache_(std::make_shared<Cache>()) {
  if (!kernel_.is_discrete()) throw DomainError("a lift needs a discrete Bernstein measure");
  kappa_ = Eigen::Map<const Vec>(kernel_.nodes().data(), static_cast<Index>(kernel_.size()));
  w_ = Eigen::Map<const Vec>(kernel_.weights().data(), static_cast<Index>(kernel_.size()));
  if ((w_.array() <= 0.0).any()) throw DomainError("lift weights must be strictly positive");
  c_ = w_.sum();
  if (!(exponents_.eta > 0.0 && exponents_.eta < 1.0 && exponents_.theta > 0.0 && exponents_.theta < 1.0)) {
    throw DomainError("eta and theta must lie in (0, 1)");
  }
  const Mat S = c_ * Mat::Identity(d(), d()) - A_.matrix();
  constraint_lu_ = S.fullPivLu();
  if (!constraint_lu_.isInvertible()) throw LinearSolveError("cI - A is singular");
}

Vec DiscreteLift::solve_constraint(const Vec& v) const {
  if (v.size() != d()) throw DomainError("vector length does not match dim A");
  return constraint_lu_.solve(v);
}

Vec DiscreteLift::weighted_drift(const LiftedState& y) const {
  if (y.rows() != n() || y.cols() != d()) throw DomainError("state shape does not match the lift");
  return y.transpose() * (w_.array() * kappa_.array()).matrix();
}

const Mat& DiscreteLift::generator() const {
  std::call_once(cache_->generator_once, [this] {
    const Index N = state_dim(), dd = d();
    const Mat Sinv = constraint_lu_.inverse();
    Mat B = Mat::Zero(N, N);
    for (Index i = 0; i < n(); ++i) {
      for (Index j = 0; j < n(); ++j) B.block(i * dd, j * dd, dd, dd) = w_(j) * kappa_(j) * Sinv;
      B.block(i * dd, i * dd, dd, dd).diagonal().array() -= kappa_(i);
    }
    cache_->generator = std::move(B);
  });
  return cache_->generator;
}

const Eigensystem& DiscreteLift::generator_eigensystem(double cond_limit) const {
  std::call_once(cache_->eigen_once, [this] {
    try {
      cache_->eigen = diagonalize(generator(), std::numeric_limits<double>::infinity());
    } catch (...) {
      cache_->eigen_error = std::current_exception();
    }
  });
  if (cache_->eigen_error) std::rethrow_exception(cache_->eigen_error);
  if (cache_->eigen->eigvec_condition > cond_limit) {
    std::ostringstream os;
    os << "generator eigenvector condition number " << cache_->eigen->eigvec_condition << " above the limit "
       << cond_limit << "; reduce n or perturb the nodes";
    throw NumericError(os.str());
  }
  return *cache_->eigen;
}

LiftedState q_map(const HistoryDescriptor& history, const DiscreteLift& lift) {
  const Index n = lift.n(), d = lift.d();
  if (history.ubar.size() != d) throw DomainError("history amplitude does not match dim A");
  LiftedState y = LiftedState::Zero(n, d);
  switch (history.kind) {
    case HistoryDescriptor::Kind::Zero: break;
    case HistoryDescriptor::Kind::Exponential:
      for (Index i = 0; i < n; ++i) {
        const double rate = lift.kappa()(i) + history.omega;
        if (!(rate > 0.0)) throw DomainError("exponential history is not integrable against e^{kappa s}");
        y.row(i) = history.ubar.transpose() / rate;
      }
      break;
    case HistoryDescriptor::Kind::Step:
      for (Index i = 0; i < n; ++i) {
        const double k = lift.kappa()(i);
        const double s = k == 0.0 ? history.delta : -std::expm1(-k * history.delta) / k;
        y.row(i) = history.ubar.transpose() * s;
      }
      break;
    default: throw DomainError("unsupported history descriptor");
  }
  return y;
}

FracPower shifted_power(const DiscreteLift& lift, double p, double cond_limit) {
  Eigensystem eig = lift.generator_eigensystem(cond_limit);
  eig.values = (1.0 - eig.values.array()).matrix();
  return frac_power(eig, p);
}

double norm_X(const DiscreteLift& lift, const LiftedState& y, double rho) {
  if (y.rows() != lift.n() || y.cols() != lift.d()) throw DomainError("state shape does not match the lift");
  if (!(rho >= 0.0 && rho < 1.0)) throw DomainError("norm exponent must lie in [0, 1)");
  LiftedState z = y;
  if (rho > 0.0) z = unflatten(shifted_power(lift, rho).value * flatten(y), lift.n(), lift.d());
  const Vec scale = lift.weights().array() * (lift.kappa().array() + 1.0);
  return std::sqrt((scale.asDiagonal() * z.rowwise().squaredNorm()).sum());
}

Vec extract_u(const DiscreteLift& lift, const LiftedState& y, const Vec& forcing) {
  return lift.solve_constraint(lift.weighted_drift(y) + forcing);
}

const Mat& generator(const DiscreteLift& lift) { return lift.generator(); }

StepResolvent step_resolvent(const DiscreteLift& lift, double dt) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw DomainError("time step must be positive");
  StepResolvent r;
  r.dt = dt;
  r.damping = (1.0 + dt * lift.kappa().array()).inverse().matrix();
  r.mu = lift.weights().dot(r.damping);
  const Mat S = r.mu * Mat::Identity(lift.d(), lift.d()) - lift.A().matrix();
  r.lu = S.fullPivLu();
  if (!r.lu.isInvertible()) throw LinearSolveError("step matrix mu I - A is singular");
  return r;
}

Mat noise_loading(const DiscreteLift& lift, const Mat& g, double dt) {
  if (g.rows() != lift.d()) throw DomainError("g must have dim A rows");
  const auto r = step_resolvent(lift, dt);
  const Mat X = r.lu.solve(g);
  Mat out(lift.state_dim(), g.cols());
  for (Index i = 0; i < lift.n(); ++i) out.block(i * lift.d(), 0, lift.d(), g.cols()) = X * r.damping(i);
  return out;
}

Mat semigroup(const DiscreteLift& lift, double t) {
  if (t < 0.0) throw DomainError("semigroup needs t >= 0");
  const Mat tB = t * lift.generator();
  return tB.exp();
}

Mat resolvent_power(const DiscreteLift& lift, double dt, std::size_t k) {
  if (!(dt > 0.0)) throw DomainError("time step must be positive");
  const Index N = lift.state_dim();
  const Mat R = (Mat::Identity(N, N) - dt * lift.generator()).partialPivLu().inverse();
  Mat out = Mat::Identity(N, N), base = R;
  for (std::size_t e = k; e > 0; e >>= 1) {
    if (e & 1) out = out * base;
    base = base * base;
  }
  return out;
}

}  // namespace svc
