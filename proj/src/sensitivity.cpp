#include "svc/sensitivity.hpp"

#include <cmath>
#include <ostream>
#include <tuple>
#include <utility>

#include "svc/csv.hpp"
#include "svc/errors.hpp"
#include "svc/parallel.hpp"

namespace svc {

namespace {

// The step linearized around a stored path:
//   du' = (μI - A)^{-1} (Σ w_i κ_i dy_i/(1 + Δκ_i) + J_k du + src),  dy_i' = (dy_i + Δ du')/(1 + Δκ_i).
class LinearStep {
 public:
  LinearStep(const ProblemSpec& problem, const PathBundle& bundle, std::size_t path)
      : problem_(problem), bundle_(bundle), path_(path), res_(step_resolvent(problem.lift, bundle.grid.dt())) {
    if (path >= bundle.n_paths) throw DomainError("path index outside the bundle");
    if (bundle.n != problem.lift.n() || bundle.d != problem.d()) throw DomainError("bundle does not match the problem");
    weights_ = (problem.lift.weights().array() * problem.lift.kappa().array() * res_.damping.array()).matrix();
  }

  const StepResolvent& resolvent() const { return res_; }

  Mat jacobian(std::size_t k) const {
    const double t = bundle_.grid.time(k);
    const Vec u = bundle_.u_at(path_, k);
    Mat J = problem_.drift_jacobian(t, u);
    if (bundle_.has_controls && problem_.r) J += problem_.g * control_jacobian(t, u, bundle_.control_at(path_, k));
    return J;
  }

  void advance(LiftedState& dy, Vec& du, const Mat& J, const Vec* src) const {
    Vec rhs = dy.transpose() * weights_ + J * du;
    if (src) rhs += *src;
    du = res_.solve(rhs);
    for (Index i = 0; i < dy.rows(); ++i) dy.row(i) = res_.damping(i) * (dy.row(i) + res_.dt * du.transpose());
  }

 private:
  Mat control_jacobian(double t, const Vec& u, const Vec& gamma) const {
    Mat J(problem_.m(), u.size());
    Vec up = u, um = u;
    for (Index a = 0; a < u.size(); ++a) {
      const double h = 1e-6 * (1.0 + std::abs(u(a)));
      up(a) = u(a) + h;
      um(a) = u(a) - h;
      J.col(a) = (problem_.r(t, up, gamma) - problem_.r(t, um, gamma)) / (2.0 * h);
      up(a) = um(a) = u(a);
    }
    if (!J.allFinite()) throw NumericError("finite-difference Jacobian of r is not finite");
    return J;
  }

  const ProblemSpec& problem_;
  const PathBundle& bundle_;
  std::size_t path_;
  StepResolvent res_;
  Vec weights_;
};

Vec constraint_part(const DiscreteLift& lift, const LiftedState& h) {
  return lift.solve_constraint(lift.weighted_drift(h));
}

void check_direction(const DiscreteLift& lift, const LiftedState& h) {
  if (h.rows() != lift.n() || h.cols() != lift.d()) throw DomainError("direction must be an n×d lifted state");
}

}  // namespace

SystemState perturb_state(const DiscreteLift& lift, const SystemState& state, const LiftedState& h, double eps) {
  check_direction(lift, h);
  return {state.y + eps * h, state.u + eps * constraint_part(lift, h)};
}

VariationalFlow variational_flow(const ProblemSpec& problem, const PathBundle& bundle, std::size_t path,
                                 const LiftedState& h, std::size_t s_index) {
  check_direction(problem.lift, h);
  if (s_index > bundle.steps()) throw DomainError("start index outside the grid");
  const LinearStep step(problem, bundle, path);
  VariationalFlow out;
  out.s_index = s_index;
  out.h = h;
  LiftedState dy = h;
  Vec du = constraint_part(problem.lift, h);
  out.G.push_back(dy);
  out.du.push_back(du);
  for (std::size_t k = s_index; k < bundle.steps(); ++k) {
    step.advance(dy, du, step.jacobian(k), nullptr);
    out.G.push_back(dy);
    out.du.push_back(du);
  }
  return out;
}

ThetaProcess theta_process(const ProblemSpec& problem, const PathBundle& bundle, std::size_t path,
                           const LiftedState& h, std::size_t s_index, FreePropagator free, double cond_limit) {
  const auto& lift = problem.lift;
  check_direction(lift, h);
  if (s_index > bundle.steps()) throw DomainError("start index outside the grid");
  ThetaProcess out;
  out.s_index = s_index;
  FracPower power;
  try {
    power = shifted_power(lift, 1.0 - lift.exponents().theta, cond_limit);
  } catch (const NumericError& e) {
    out.reason = e.what();
    return out;
  }
  out.available = true;
  out.frac_power_error = power.reconstruction_error;
  out.eigvec_condition = power.eigvec_condition;
  out.direction = unflatten(power.value * flatten(h), lift.n(), lift.d());

  const LinearStep step(problem, bundle, path);
  const double dt = bundle.grid.dt();
  Mat one_step;
  if (free == FreePropagator::Exponential) one_step = semigroup(lift, dt);

  LiftedState S = out.direction, th = LiftedState::Zero(lift.n(), lift.d());
  Vec th_u = Vec::Zero(lift.d());
  out.theta.push_back(th);
  out.theta_u.push_back(th_u);
  for (std::size_t k = s_index; k < bundle.steps(); ++k) {
    const Mat J = step.jacobian(k);
    const Vec src = J * constraint_part(lift, S);
    step.advance(th, th_u, J, &src);
    out.theta.push_back(th);
    out.theta_u.push_back(th_u);
    if (free == FreePropagator::Resolvent) {
      Vec free_u = constraint_part(lift, S);
      step.advance(S, free_u, Mat::Zero(lift.d(), lift.d()), nullptr);
    } else {
      S = unflatten(one_step * flatten(S), lift.n(), lift.d());
    }
  }
  return out;
}

MalliavinSlice malliavin_derivative(const ProblemSpec& problem, const PathBundle& bundle, std::size_t path,
                                    std::size_t sigma_index, Index j) {
  if (sigma_index >= bundle.steps()) throw DomainError("injection step must lie before the last grid point");
  if (j < 0 || j >= problem.m()) throw DomainError("noise component outside 0..m-1");
  const LinearStep step(problem, bundle, path);
  const auto& lift = problem.lift;
  MalliavinSlice out;
  out.sigma = sigma_index;
  out.j = j;
  out.D.assign(bundle.steps() + 1, LiftedState::Zero(lift.n(), lift.d()));
  out.Du.assign(bundle.steps() + 1, Vec::Zero(lift.d()));
  const NoiseResponse impulse = noise_response(problem, bundle.grid.dt(), j);
  LiftedState dy = impulse.dy;
  Vec du = impulse.du;
  out.D[sigma_index + 1] = dy;
  out.Du[sigma_index + 1] = du;
  for (std::size_t k = sigma_index + 1; k < bundle.steps(); ++k) {
    step.advance(dy, du, step.jacobian(k), nullptr);
    out.D[k + 1] = dy;
    out.Du[k + 1] = du;
  }
  return out;
}

double malliavin_bound_ratio(const DiscreteLift& lift, const TimeGrid& grid, const MalliavinSlice& slice) {
  const double p = lift.exponents().theta - lift.exponents().eta - 1.0;
  double worst = 0.0;
  for (std::size_t k = slice.sigma + 1; k < slice.D.size(); ++k) {
    const double lag = static_cast<double>(k - slice.sigma) * grid.dt();
    worst = std::max(worst, norm_X(lift, slice.D[k]) / (std::pow(lag, p) + 1.0));
  }
  return worst;
}

double CovariationEstimate::combined_stderr() const {
  return std::sqrt(empirical_stderr * empirical_stderr + predicted_stderr * predicted_stderr);
}

NoiseResponse noise_response(const ProblemSpec& problem, double dt, Index j) {
  if (j < 0 || j >= problem.m()) throw DomainError("noise component outside 0..m-1");
  const auto& lift = problem.lift;
  const Mat L = noise_loading(lift, problem.g, dt);
  const auto res = step_resolvent(lift, dt);
  NoiseResponse out;
  out.dt = dt;
  out.dy = unflatten(L.col(j), lift.n(), lift.d());
  out.du = res.solve(problem.g.col(j)) / dt;
  return out;
}

double noise_direction_derivative(const ValueEvaluator& v, const NoiseResponse& response, std::size_t k,
                                  const SystemState& state, double fd_step) {
  const double eps = fd_step * std::sqrt(response.dt);
  const SystemState plus{state.y + eps * response.dy, state.u + eps * response.du};
  const SystemState minus{state.y - eps * response.dy, state.u - eps * response.du};
  return (v(k, plus) - v(k, minus)) / (2.0 * eps);
}

CovariationEstimate joint_quadratic_variation(const ValueEvaluator& v, const ProblemSpec& problem,
                                              const PathBundle& bundle, Index j, std::size_t threads,
                                              double fd_step) {
  if (!bundle.has_states) throw DomainError("covariation needs stored lifted states");
  if (j < 0 || j >= problem.m()) throw DomainError("noise component outside 0..m-1");
  const std::size_t P = bundle.n_paths, N = bundle.steps();
  const double dt = bundle.grid.dt();
  const NoiseResponse response = noise_response(problem, dt, j);
  std::vector<double> emp(P, 0.0), pred(P, 0.0);
  parallel_for(P, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t p = begin; p < end; ++p) {
      SystemState prev = bundle.state(p, 0);
      double v_prev = v(0, prev), e = 0.0, q = 0.0;
      for (std::size_t k = 0; k < N; ++k) {
        const SystemState next = bundle.state(p, k + 1);
        const double v_next = v(k + 1, next);
        e += (v_next - v_prev) * bundle.dW_at(p, k)(j);
        q += dt * noise_direction_derivative(v, response, k + 1, next, fd_step);
        v_prev = v_next;
      }
      emp[p] = e;
      pred[p] = q;
    }
  });
  auto mean_se = [&](auto&& value) {
    double s = 0.0, s2 = 0.0;
    for (std::size_t p = 0; p < P; ++p) {
      const double x = value(p);
      s += x;
      s2 += x * x;
    }
    const double n = static_cast<double>(P), mean = s / n;
    const double var = P > 1 ? std::max(0.0, (s2 - n * mean * mean) / (n - 1.0)) : 0.0;
    return std::pair{mean, std::sqrt(var / n)};
  };
  CovariationEstimate out;
  if (P == 0) return out;
  std::tie(out.empirical, out.empirical_stderr) = mean_se([&](std::size_t p) { return emp[p]; });
  std::tie(out.predicted, out.predicted_stderr) = mean_se([&](std::size_t p) { return pred[p]; });
  out.paired_stderr = mean_se([&](std::size_t p) { return emp[p] - pred[p]; }).second;
  return out;
}

void write_flow_csv(const DiscreteLift& lift, const TimeGrid& grid, const VariationalFlow& flow, std::ostream& out) {
  CsvWriter w(out);
  w.header({"t", "norm_X", "norm_u"});
  for (std::size_t i = 0; i < flow.G.size(); ++i) {
    w.field(grid.time(flow.s_index + i)).field(norm_X(lift, flow.G[i])).field(flow.du[i].norm());
    w.end_row();
  }
}

void write_malliavin_csv(const DiscreteLift& lift, const TimeGrid& grid, const MalliavinSlice& slice,
                         std::ostream& out) {
  const double p = lift.exponents().theta - lift.exponents().eta - 1.0;
  CsvWriter w(out);
  w.header({"sigma", "t", "norm_X", "ratio"});
  for (std::size_t k = slice.sigma + 1; k < slice.D.size(); ++k) {
    const double nx = norm_X(lift, slice.D[k]);
    const double lag = static_cast<double>(k - slice.sigma) * grid.dt();
    w.field(grid.time(slice.sigma)).field(grid.time(k)).field(nx).field(nx / (std::pow(lag, p) + 1.0));
    w.end_row();
  }
}

}  // namespace svc
