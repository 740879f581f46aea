#include "svc/bsde.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "svc/csv.hpp"
#include "svc/errors.hpp"
#include "svc/parallel.hpp"
#include "svc/rng.hpp"

namespace svc {

Basis parse_basis(const std::string& name) {
  if (name == "poly2") return Basis::Poly2;
  if (name == "poly2-state") return Basis::Poly2State;
  throw UsageError("unknown regression basis '" + name + "' (expected poly2 or poly2-state)");
}

std::string to_string(Basis basis) { return basis == Basis::Poly2 ? "poly2" : "poly2-state"; }

Vec summary_features(const DiscreteLift& lift, const SystemState& state) {
  const Index d = lift.d();
  Vec z(3 * d);
  z.head(d) = state.u;
  z.segment(d, d) = state.y.transpose() * lift.weights();
  z.tail(d) = lift.weighted_drift(state.y);
  return z;
}

Vec basis_row(const DiscreteLift& lift, const SystemState& state, Basis basis) {
  const Vec z = summary_features(lift, state);
  const Index q = z.size(), nq = q * (q + 1) / 2;
  const Index d = lift.d(), nd = lift.state_dim();
  const Index lin = basis == Basis::Poly2 ? q : d + nd;
  Vec row(1 + lin + nq);
  row(0) = 1.0;
  if (basis == Basis::Poly2) {
    row.segment(1, q) = z;
  } else {
    row.segment(1, d) = state.u;
    row.segment(1 + d, nd) = flatten(state.y);
  }
  Index c = 1 + lin;
  for (Index a = 0; a < q; ++a)
    for (Index b = a; b < q; ++b) row(c++) = z(a) * z(b);
  return row;
}

Vec RegressionModel::predict(const Vec& row) const {
  Vec x(static_cast<Index>(active.size()));
  for (std::size_t i = 0; i < active.size(); ++i) {
    const Index c = static_cast<Index>(i);
    x(c) = (row(active[i]) - mean(c)) / scale(c);
  }
  return coef.transpose() * x;
}

bool RegressionModel::inside(const Vec& row, double margin) const {
  for (Index c = 1; c < row.size(); ++c) {
    const double pad = margin * (hi(c) - lo(c)) + 1e-12 * (1.0 + std::abs(lo(c)) + std::abs(hi(c)));
    if (row(c) < lo(c) - pad || row(c) > hi(c) + pad) return false;
  }
  return true;
}

namespace {

// Column selection, standardization and QR of one design, reused for
// several right-hand sides.
class Fitter {
 public:
  Fitter(const Mat& design, double cond_limit) {
    const Index P = design.rows(), B = design.cols();
    if (P < 1 || B < 1) throw DomainError("regression needs at least one row and one column");
    model_.lo = design.colwise().minCoeff().transpose();
    model_.hi = design.colwise().maxCoeff().transpose();
    std::vector<Index> cols{0};
    std::vector<double> mean{0.0}, scale{1.0};
    for (Index c = 1; c < B; ++c) {
      const double mu = design.col(c).mean();
      const double sd = std::sqrt((design.col(c).array() - mu).square().mean());
      if (sd > 1e-12 * (1.0 + std::abs(mu))) {
        cols.push_back(c);
        mean.push_back(mu);
        scale.push_back(sd);
      }
    }
    auto standardized = [&](const std::vector<Index>& use) {
      Mat S(P, static_cast<Index>(use.size()));
      for (std::size_t i = 0; i < use.size(); ++i) {
        const auto at = static_cast<std::size_t>(std::find(cols.begin(), cols.end(), use[i]) - cols.begin());
        S.col(static_cast<Index>(i)) = (design.col(use[i]).array() - mean[at]) / scale[at];
      }
      return S;
    };
    Mat S = standardized(cols);
    Eigen::ColPivHouseholderQR<Mat> qr(S);
    const Index rank = qr.rank();
    const Mat R = qr.matrixR().topLeftCorner(S.cols(), S.cols()).triangularView<Eigen::Upper>();
    auto cond_of = [&](Index r) {
      const Eigen::JacobiSVD<Mat> svd(R.topLeftCorner(r, r));
      const Vec sv = svd.singularValues();
      return sv(r - 1) > 0.0 ? sv(0) / sv(r - 1) : std::numeric_limits<double>::infinity();
    };
    Index keep = rank;
    double cond = keep > 0 ? cond_of(keep) : 1.0;
    while (keep > 1 && cond > cond_limit) cond = cond_of(--keep);
    if (keep < S.cols()) {
      model_.reduced = true;
      std::vector<Index> use;
      const auto& perm = qr.colsPermutation().indices();
      for (Index i = 0; i < keep; ++i) use.push_back(cols[static_cast<std::size_t>(perm(i))]);
      std::sort(use.begin(), use.end());
      if (use.front() != 0) {
        use.insert(use.begin(), 0);
        use.pop_back();
      }
      cols_ = use;
      S = standardized(use);
      qr_.compute(S);
    } else {
      cols_ = cols;
      qr_ = std::move(qr);
    }
    design_ = std::move(S);
    model_.active = cols_;
    model_.mean.resize(static_cast<Index>(cols_.size()));
    model_.scale.resize(static_cast<Index>(cols_.size()));
    for (std::size_t i = 0; i < cols_.size(); ++i) {
      const auto at = static_cast<std::size_t>(std::find(cols.begin(), cols.end(), cols_[i]) - cols.begin());
      model_.mean(static_cast<Index>(i)) = mean[at];
      model_.scale(static_cast<Index>(i)) = scale[at];
    }
    model_.condition = cond;
  }

  Mat solve(const Mat& targets) const {
    if (targets.rows() != design_.rows()) throw DomainError("targets and design differ in length");
    Mat coef = qr_.solve(targets);
    coef += qr_.solve(Mat(targets - design_ * coef));  // one refinement step
    return coef;
  }
  Vec fitted(const Mat& coef, Index col) const { return design_ * coef.col(col); }

  RegressionModel model(const Mat& coef, const Mat& targets) const {
    RegressionModel m = model_;
    m.coef = coef;
    const Mat resid = design_ * coef - targets;
    const double scale = design_.norm() * targets.norm();
    m.normal_residual = scale > 0.0 ? (design_.transpose() * resid).norm() / scale : 0.0;
    return m;
  }

 private:
  RegressionModel model_;
  std::vector<Index> cols_;
  Mat design_;
  Eigen::ColPivHouseholderQR<Mat> qr_;
};

double signed_driver(DriverSign sign) { return sign == DriverSign::Value ? 1.0 : -1.0; }

}  // namespace

RegressionModel fit_regression(const Mat& design, const Mat& targets, double cond_limit) {
  const Fitter f(design, cond_limit);
  return f.model(f.solve(targets), targets);
}

Eigen::Map<const Vec> BsdeSolution::Z_at(std::size_t path, std::size_t k) const {
  return Eigen::Map<const Vec>(Z.data() + (path * steps() + k) * static_cast<std::size_t>(m), m);
}

double BsdeSolution::continuation_at(std::size_t k, const SystemState& state) const {
  if (k >= steps()) throw DomainError("continuation value is defined for k < N");
  return models[k].predict(basis_row(problem.lift, state, options.basis))(0);
}

Vec BsdeSolution::z_at(std::size_t k, const SystemState& state) const {
  if (k >= steps()) throw DomainError("Z is defined for k < N");
  return models[k].predict(basis_row(problem.lift, state, options.basis)).tail(m);
}

double BsdeSolution::value_at(std::size_t k, const SystemState& state) const {
  if (k > steps()) throw DomainError("grid step outside the solution");
  if (k == steps()) return problem.terminal_cost(state.u);
  const Vec fit = models[k].predict(basis_row(problem.lift, state, options.basis));
  const Vec z = fit.tail(m);
  const double psi = hamiltonian(problem, grid.time(k), state.u, z).value;
  return fit(0) + signed_driver(options.sign) * grid.dt() * psi;
}

bool BsdeSolution::inside_training(std::size_t k, const SystemState& state) const {
  if (k >= steps()) return true;
  return models[k].inside(basis_row(problem.lift, state, options.basis));
}

double BsdeSolution::y0() const {
  double s = 0.0;
  for (std::size_t p = 0; p < n_paths; ++p) s += Y_at(p, 0);
  return n_paths ? s / static_cast<double>(n_paths) : 0.0;
}

ValueEvaluator BsdeSolution::value_evaluator() const {
  return [this](std::size_t k, const SystemState& s) { return value_at(k, s); };
}

ZEvaluator BsdeSolution::z_evaluator() const {
  return [this](std::size_t k, const SystemState& s) { return z_at(k, s); };
}

BsdeSolution solve_bsde(const ProblemSpec& problem, const PathBundle& bundle, const BsdeOptions& options) {
  if (!bundle.has_states) throw DomainError("the backward solve needs stored lifted states");
  if (bundle.has_controls) throw DomainError("the backward solve needs an uncontrolled bundle");
  if (bundle.n != problem.lift.n() || bundle.d != problem.d() || bundle.m != problem.m()) {
    throw DomainError("bundle does not match the problem");
  }
  if (bundle.n_paths < 2) throw DomainError("the backward solve needs at least two paths");
  const std::size_t P = bundle.n_paths, N = bundle.steps();
  const Index m = problem.m();
  const double dt = bundle.grid.dt(), sgn = signed_driver(options.sign);

  BsdeSolution sol{problem, bundle.grid, options, P, m, {}, {}, {}, {}, 0.0, 0.0};
  sol.models.resize(N);
  sol.Y.assign(P * (N + 1), 0.0);
  sol.Z.assign(P * N * static_cast<std::size_t>(m), 0.0);
  auto Y = [&](std::size_t p, std::size_t k) -> double& { return sol.Y[p * (N + 1) + k]; };
  std::vector<double> psi_sum(P, 0.0);
  for (std::size_t p = 0; p < P; ++p) Y(p, N) = problem.terminal_cost(bundle.u_at(p, N));

  const Index B = basis_row(problem.lift, bundle.state(0, 0), options.basis).size();
  Mat design(static_cast<Index>(P), B);
  Vec next(static_cast<Index>(P));
  Mat zt(static_cast<Index>(P), m);
  std::vector<double> psi(P);
  auto& diag = sol.diagnostics;
  diag.condition.assign(N, 0.0);
  diag.normal_residual.assign(N, 0.0);
  diag.basis_used.assign(N, 0);
  diag.reduced.assign(N, false);

  for (std::size_t k = N; k-- > 0;) {
    const double t = bundle.grid.time(k);
    parallel_for(P, options.threads, [&](std::size_t b, std::size_t e) {
      for (std::size_t p = b; p < e; ++p) {
        design.row(static_cast<Index>(p)) = basis_row(problem.lift, bundle.state(p, k), options.basis).transpose();
        next(static_cast<Index>(p)) = Y(p, k + 1);
      }
    });
    const Fitter fitter(design, options.cond_limit);
    const Mat c_coef = fitter.solve(next);
    const Vec cont = fitter.fitted(c_coef, 0);

    auto z_pass = [&](const Vec& base) {
      for (std::size_t p = 0; p < P; ++p) {
        const double target = Y(p, k + 1) - base(static_cast<Index>(p));
        zt.row(static_cast<Index>(p)) = target * bundle.dW_at(p, k).transpose() / dt;
      }
      const Mat z_coef = fitter.solve(zt);
      Mat zfit(static_cast<Index>(P), m);
      for (Index j = 0; j < m; ++j) zfit.col(j) = fitter.fitted(z_coef, j);
      parallel_for(P, options.threads, [&](std::size_t b, std::size_t e) {
        for (std::size_t p = b; p < e; ++p) {
          const Vec z = zfit.row(static_cast<Index>(p)).transpose();
          psi[p] = hamiltonian(problem, t, bundle.u_at(p, k), z).value;
          Eigen::Map<Vec>(sol.Z.data() + (p * N + k) * static_cast<std::size_t>(m), m) = z;
          Y(p, k) = cont(static_cast<Index>(p)) + sgn * dt * psi[p];
        }
      });
      return z_coef;
    };
    Mat z_coef = z_pass(options.control_variate ? cont : Vec::Zero(static_cast<Index>(P)));
    if (options.implicit) {
      Vec current(static_cast<Index>(P));
      for (std::size_t p = 0; p < P; ++p) current(static_cast<Index>(p)) = Y(p, k);
      z_coef = z_pass(current);
    }
    for (std::size_t p = 0; p < P; ++p) psi_sum[p] += dt * psi[p];

    Mat coef(c_coef.rows(), 1 + m);
    coef.col(0) = c_coef.col(0);
    coef.rightCols(m) = z_coef;
    Mat targets(static_cast<Index>(P), 1 + m);
    targets.col(0) = next;
    targets.rightCols(m) = zt;
    sol.models[k] = fitter.model(coef, targets);
    diag.condition[k] = sol.models[k].condition;
    diag.normal_residual[k] = sol.models[k].normal_residual;
    diag.basis_used[k] = sol.models[k].active.size();
    diag.reduced[k] = sol.models[k].reduced;
    diag.reduced_steps += sol.models[k].reduced ? 1 : 0;
    diag.max_normal_residual = std::max(diag.max_normal_residual, sol.models[k].normal_residual);
  }

  std::vector<double> pathwise(P);
  for (std::size_t p = 0; p < P; ++p) pathwise[p] = Y(p, N) + sgn * psi_sum[p];
  const CostEstimate est = mean_cost(pathwise);
  sol.pathwise_mean = est.J;
  sol.pathwise_stderr = est.stderr;
  return sol;
}

ValueQuery value(const BsdeSolution& solution, double t, const SystemState& state) {
  const auto& g = solution.grid;
  const double pos = std::clamp((t - g.t0) / g.dt(), 0.0, static_cast<double>(g.steps));
  ValueQuery q;
  q.k = static_cast<std::size_t>(std::llround(pos));
  q.t_used = g.time(q.k);
  q.value = solution.value_at(q.k, state);
  q.extrapolated = !solution.inside_training(q.k, state);
  return q;
}

FeedbackPolicy feedback_policy(const ProblemSpec& problem, const BsdeSolution& solution) {
  return FeedbackPolicy(problem, solution.grid, solution.z_evaluator());
}

ZIdentificationReport z_identification_check(const ProblemSpec& problem, const BsdeSolution& solution,
                                             const PathBundle& bundle, std::size_t step_stride, double fd_step) {
  if (!bundle.has_states) throw DomainError("the check needs stored lifted states");
  if (step_stride < 1) throw DomainError("step stride must be positive");
  const std::size_t P = bundle.n_paths, N = bundle.steps();
  const Index m = problem.m();
  const double dt = bundle.grid.dt();
  std::vector<NoiseResponse> responses;
  for (Index j = 0; j < m; ++j) responses.push_back(noise_response(problem, dt, j));
  const ValueEvaluator v = solution.value_evaluator();
  const Basis basis = solution.options.basis;

  ZIdentificationReport rep;
  double num = 0.0, den = 0.0, znorm = 0.0;
  const Index B = basis_row(problem.lift, bundle.state(0, 0), basis).size();
  Mat design(static_cast<Index>(P), B), D(static_cast<Index>(P), m), Zs(static_cast<Index>(P), m);
  for (std::size_t k = 0; k < N; k += step_stride) {
    parallel_for(P, solution.options.threads, [&](std::size_t b, std::size_t e) {
      for (std::size_t p = b; p < e; ++p) {
        const Index r = static_cast<Index>(p);
        const SystemState here = bundle.state(p, k), ahead = bundle.state(p, k + 1);
        design.row(r) = basis_row(problem.lift, here, basis).transpose();
        for (Index j = 0; j < m; ++j)
          D(r, j) = noise_direction_derivative(v, responses[static_cast<std::size_t>(j)], k + 1, ahead, fd_step);
        Zs.row(r) = solution.z_at(k, here).transpose();
      }
    });
    const Fitter fitter(design, solution.options.cond_limit);
    const Mat coef = fitter.solve(D);
    double n_k = 0.0, d_k = 0.0;
    for (Index j = 0; j < m; ++j) {
      const Vec Dhat = fitter.fitted(coef, j);
      n_k += (Zs.col(j) - Dhat).squaredNorm();
      d_k += Dhat.squaredNorm();
      znorm += Zs.col(j).squaredNorm();
    }
    num += n_k;
    den += d_k;
    rep.per_step.push_back(d_k > 0.0 ? std::sqrt(n_k / d_k) : std::sqrt(n_k));
    rep.samples += P;
  }
  rep.z_norm = std::sqrt(znorm);
  rep.derivative_norm = std::sqrt(den);
  rep.relative_l2 = den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
  return rep;
}

double grad_value_direction(const ValueEvaluator& v, const DiscreteLift& lift, std::size_t k,
                            const SystemState& state, const LiftedState& h, double cond_limit) {
  const Mat F = shifted_power(lift, 1.0 - lift.exponents().theta, cond_limit).value;
  const LiftedState dir = unflatten(F * flatten(h), lift.n(), lift.d());
  const double size = dir.norm();
  if (size == 0.0) return 0.0;
  const double eps = 1e-6 * (1.0 + state.y.norm()) / size;
  return (v(k, perturb_state(lift, state, dir, eps)) - v(k, perturb_state(lift, state, dir, -eps))) / (2.0 * eps);
}

double grad_value_direction(const BsdeSolution& solution, std::size_t k, const SystemState& state,
                            const LiftedState& h, double cond_limit) {
  return grad_value_direction(solution.value_evaluator(), solution.problem.lift, k, state, h, cond_limit);
}

std::vector<SamplePoint> sample_points(const PathBundle& bundle, std::size_t count) {
  if (!bundle.has_states) throw DomainError("sample points need stored lifted states");
  if (bundle.n_paths == 0) throw DomainError("bundle has no paths");
  std::vector<SamplePoint> out;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t k = i * bundle.steps() / std::max<std::size_t>(count, 1);
    out.push_back({k, bundle.state(i % bundle.n_paths, k)});
  }
  return out;
}

nlohmann::json HjbResidualReport::to_json() const {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& r : points) {
    pts.push_back({{"k", r.k},
                   {"t", r.t},
                   {"value", r.value},
                   {"mild", r.mild},
                   {"residual", r.residual},
                   {"stderr", r.stderr},
                   {"tolerance", 3.0 * r.stderr},
                   {"pass", r.within}});
  }
  return {{"n_inner", n_inner}, {"points", pts}, {"pass", pass}};
}

HjbResidualReport hjb_residual(const BsdeSolution& solution, const std::vector<SamplePoint>& points,
                               std::size_t n_inner, std::uint64_t seed, std::size_t threads) {
  if (n_inner < 2) throw DomainError("nested simulation needs at least two inner paths");
  const auto& problem = solution.problem;
  const std::size_t N = solution.steps();
  const double dt = solution.grid.dt(), sgn = signed_driver(solution.options.sign);
  HjbResidualReport rep;
  rep.n_inner = n_inner;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& pt = points[i];
    if (pt.k > N) throw DomainError("sample point outside the grid");
    HjbResidual r;
    r.k = pt.k;
    r.t = solution.grid.time(pt.k);
    r.value = solution.value_at(pt.k, pt.state);
    if (pt.k == N) {
      r.mild = problem.terminal_cost(pt.state.u);
      r.residual = r.value - r.mild;
      r.within = r.residual == 0.0;
    } else {
      SimulateOptions opts;
      opts.threads = threads;
      opts.start_states = {pt.state};
      const TimeGrid tail = solution.grid.tail(pt.k);
      const auto inner = simulate(problem, tail, n_inner, mix_seed(seed + i), Uncontrolled{}, opts);
      std::vector<double> sample(n_inner);
      parallel_for(n_inner, threads, [&](std::size_t b, std::size_t e) {
        for (std::size_t p = b; p < e; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < tail.steps; ++j) {
            const SystemState s = inner.state(p, j);
            acc += dt * hamiltonian(problem, tail.time(j), s.u, solution.z_at(pt.k + j, s)).value;
          }
          sample[p] = problem.terminal_cost(inner.u_at(p, tail.steps)) + sgn * acc;
        }
      });
      const CostEstimate est = mean_cost(sample);
      r.mild = est.J;
      r.stderr = est.stderr;
      r.residual = r.value - r.mild;
      r.within = std::abs(r.residual) <= 3.0 * r.stderr;
    }
    rep.pass = rep.pass && r.within;
    rep.points.push_back(std::move(r));
  }
  return rep;
}

void write_value_table(const BsdeSolution& solution, const PathBundle& bundle, std::ostream& out) {
  CsvWriter w(out);
  std::vector<std::string> head{"t", "u_q05", "u_q50", "u_q95", "Y_mean", "Y_stderr"};
  for (Index j = 0; j < solution.m; ++j) head.push_back("Z_mean_" + std::to_string(j));
  w.header(head);
  const std::size_t P = solution.n_paths;
  std::vector<double> u(P);
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(P - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, P - 1);
    return u[lo] + (pos - static_cast<double>(lo)) * (u[hi] - u[lo]);
  };
  for (std::size_t k = 0; k <= solution.steps(); ++k) {
    std::vector<double> ys(P);
    for (std::size_t p = 0; p < P; ++p) {
      u[p] = bundle.u_at(p, k)(0);
      ys[p] = solution.Y_at(p, k);
    }
    std::sort(u.begin(), u.end());
    const CostEstimate y = mean_cost(ys);
    w.field(solution.grid.time(k)).field(quantile(0.05)).field(quantile(0.5)).field(quantile(0.95));
    w.field(y.J).field(y.stderr);
    for (Index j = 0; j < solution.m; ++j) {
      if (k == solution.steps()) {
        w.field(std::string_view{});
        continue;
      }
      double s = 0.0;
      for (std::size_t p = 0; p < P; ++p) s += solution.Z_at(p, k)(j);
      w.field(s / static_cast<double>(P));
    }
    w.end_row();
  }
}

}  // namespace svc
