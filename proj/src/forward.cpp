#include "svc/forward.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>

#include "svc/csv.hpp"
#include "svc/errors.hpp"
#include "svc/parallel.hpp"
#include "svc/rng.hpp"

namespace svc {

namespace {

constexpr double kBlowUp = 1e12;

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace

SystemState initial_state(const ProblemSpec& problem, double t0, const Vec* gamma0) {
  SystemState s;
  s.y = q_map(problem.history, problem.lift);
  const Vec u_hist = problem.history.value_at_zero();
  Vec F = problem.drift(t0, u_hist);
  if (gamma0) F += problem.g * problem.control_drift(t0, u_hist, *gamma0);
  s.u = extract_u(problem.lift, s.y, F);
  return s;
}

StepOperator::StepOperator(const ProblemSpec& problem, double dt)
    : problem_(&problem), resolvent_(step_resolvent(problem.lift, dt)) {
  if (problem.g.rows() != problem.d()) throw DomainError("g must have dim A rows");
  drift_weights_ = (problem.lift.weights().array() * problem.lift.kappa().array() * resolvent_.damping.array()).matrix();
}

Vec StepOperator::forcing(double t, const Vec& u, const Vec* gamma, const double* dW) const {
  Vec F = problem_->drift(t, u);
  const Index m = problem_->m();
  if (gamma) F += problem_->g * problem_->control_drift(t, u, *gamma);
  if (dW && m > 0) F += problem_->g * (Eigen::Map<const Vec>(dW, m) / resolvent_.dt);
  return F;
}

SystemState StepOperator::advance(const SystemState& s, const Vec& F) const {
  SystemState out;
  out.u = resolvent_.solve(s.y.transpose() * drift_weights_ + F);
  out.y = s.y;
  for (Index i = 0; i < out.y.rows(); ++i)
    out.y.row(i) = resolvent_.damping(i) * (s.y.row(i) + resolvent_.dt * out.u.transpose());
  return out;
}

Eigen::Map<const Vec> PathBundle::u_at(std::size_t path, std::size_t k) const {
  return Eigen::Map<const Vec>(u.data() + (path * (steps() + 1) + k) * static_cast<std::size_t>(d), d);
}

Eigen::Map<const Vec> PathBundle::dW_at(std::size_t path, std::size_t k) const {
  return Eigen::Map<const Vec>(dW.data() + (path * steps() + k) * static_cast<std::size_t>(m), m);
}

Eigen::Map<const Vec> PathBundle::control_at(std::size_t path, std::size_t k) const {
  if (!has_controls) throw DomainError("bundle carries no controls");
  return Eigen::Map<const Vec>(controls.data() + (path * steps() + k) * static_cast<std::size_t>(control_dim),
                               control_dim);
}

LiftedState PathBundle::y_at(std::size_t path, std::size_t k) const {
  if (!has_states) throw DomainError("bundle was simulated without stored lifted states");
  const std::size_t nd = static_cast<std::size_t>(n * d);
  return Eigen::Map<const RowMajor>(y.data() + (path * (steps() + 1) + k) * nd, n, d);
}

PathBundle simulate(const ProblemSpec& problem, const TimeGrid& grid, std::size_t n_paths, std::uint64_t seed,
                    const SimulationMode& mode, const SimulateOptions& options) {
  if (grid.steps < 1 || !(grid.T > grid.t0)) throw DomainError("time grid needs T > t0 and at least one step");
  const auto& lift = problem.lift;
  const bool controlled = !std::holds_alternative<Uncontrolled>(mode);
  if (controlled && problem.controls.empty()) throw DomainError("controlled simulation needs a nonempty control set");
  if (const auto* ol = std::get_if<OpenLoop>(&mode)) {
    if (ol->indices.size() != 1 && ol->indices.size() != grid.steps) {
      throw DomainError("open-loop control path must have one entry or one per step");
    }
    for (auto i : ol->indices)
      if (i >= problem.controls.size()) throw DomainError("open-loop control index outside the control set");
  }
  if (const auto* fb = std::get_if<Feedback>(&mode); fb && !fb->policy) throw DomainError("feedback policy is empty");
  if (!options.start_states.empty() && options.start_states.size() != 1 && options.start_states.size() != n_paths) {
    throw DomainError("start_states must be empty, one state, or one per path");
  }

  PathBundle b;
  b.grid = grid;
  b.n_paths = n_paths;
  b.n = lift.n();
  b.d = lift.d();
  b.m = problem.m();
  b.seed = seed;
  b.has_states = options.store_states;
  b.has_controls = controlled;
  b.control_dim = controlled ? problem.controls.front().size() : 0;
  const std::size_t N = grid.steps, nd = static_cast<std::size_t>(b.n * b.d), d = static_cast<std::size_t>(b.d),
                    m = static_cast<std::size_t>(b.m), cd = static_cast<std::size_t>(b.control_dim);
  if (b.has_states) b.y.assign(n_paths * (N + 1) * nd, 0.0);
  b.u.assign(n_paths * (N + 1) * d, 0.0);
  b.dW.assign(n_paths * N * m, 0.0);
  if (controlled) {
    b.controls.assign(n_paths * N * cd, 0.0);
    b.control_index.assign(n_paths * N, -1);
  }

  // With the default start the step-0 control enters the initial constraint,
  // so a constant control is indistinguishable from a shifted drift.
  SystemState origin;
  std::optional<std::size_t> first_index;
  if (options.start_states.empty()) {
    if (const auto* ol = std::get_if<OpenLoop>(&mode)) {
      first_index = ol->indices.front();
    } else if (const auto* fb = std::get_if<Feedback>(&mode)) {
      first_index = fb->policy(0, grid.t0, initial_state(problem, grid.t0));
      if (*first_index >= problem.controls.size()) throw DomainError("feedback policy returned an index outside the control set");
    }
    origin = initial_state(problem, grid.t0, first_index ? &problem.controls[*first_index] : nullptr);
  }
  const StepOperator op(problem, grid.dt());
  const double dt = grid.dt();

  parallel_for(n_paths, options.threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t p = begin; p < end; ++p) {
      SystemState s = options.start_states.empty()      ? origin
                      : options.start_states.size() == 1 ? options.start_states.front()
                                                         : options.start_states[p];
      if (s.y.rows() != b.n || s.y.cols() != b.d || s.u.size() != b.d) throw DomainError("start state has the wrong shape");
      auto store = [&](std::size_t k) {
        if (b.has_states) Eigen::Map<RowMajor>(b.y.data() + (p * (N + 1) + k) * nd, b.n, b.d) = s.y;
        Eigen::Map<Vec>(b.u.data() + (p * (N + 1) + k) * d, b.d) = s.u;
      };
      store(0);
      for (std::size_t k = 0; k < N; ++k) {
        const double t = grid.time(k);
        double* dw = b.dW.data() + (p * N + k) * m;
        brownian_increment(seed, p, grid.first_step + k, dt, m, dw);
        const Vec* gamma = nullptr;
        if (controlled) {
          std::size_t idx = 0;
          if (const auto* ol = std::get_if<OpenLoop>(&mode)) {
            idx = ol->indices.size() == 1 ? ol->indices.front() : ol->indices[k];
          } else if (k == 0 && first_index) {
            idx = *first_index;
          } else {
            idx = std::get<Feedback>(mode).policy(k, t, s);
            if (idx >= problem.controls.size()) throw DomainError("feedback policy returned an index outside the control set");
          }
          gamma = &problem.controls[idx];
          b.control_index[p * N + k] = static_cast<std::int32_t>(idx);
          Eigen::Map<Vec>(b.controls.data() + (p * N + k) * cd, b.control_dim) = *gamma;
        }
        s = op.step(s, t, gamma, dw);
        const double size = std::max(s.y.cwiseAbs().maxCoeff(), s.u.cwiseAbs().maxCoeff());
        if (!(size <= kBlowUp)) {
          std::ostringstream os;
          os << "state left the finite range (max |entry| = " << size << ") on path " << p << " at step " << k + 1;
          throw BlowUpError(os.str(), p, k + 1);
        }
        store(k + 1);
      }
    }
  });
  return b;
}

double reconstruction_error(const ProblemSpec& problem, const PathBundle& bundle) {
  const StepOperator op(problem, bundle.grid.dt());
  double worst = 0.0;
  for (std::size_t p = 0; p < bundle.n_paths; ++p) {
    for (std::size_t k = 0; k < bundle.steps(); ++k) {
      const Vec gamma = bundle.has_controls ? Vec(bundle.control_at(p, k)) : Vec();
      const Vec F = op.forcing(bundle.grid.time(k), bundle.u_at(p, k), bundle.has_controls ? &gamma : nullptr,
                               bundle.dW_at(p, k).data());
      const Vec u = extract_u(problem.lift, bundle.y_at(p, k + 1), F);
      const Vec stored = bundle.u_at(p, k + 1);
      worst = std::max(worst, (u - stored).norm() / std::max(1.0, stored.norm()));
    }
  }
  return worst;
}

namespace {

// Product-integration weights of the piecewise-linear interpolant.
struct ConvolutionWeights {
  std::vector<double> A1, A2;  // antiderivatives at j·h
  double h;

  ConvolutionWeights(const BernsteinKernel& kernel, std::size_t N, double h_) : A1(N + 2), A2(N + 2), h(h_) {
    for (std::size_t j = 0; j <= N + 1; ++j) {
      A1[j] = integral(kernel, static_cast<double>(j) * h);
      A2[j] = second_integral(kernel, static_cast<double>(j) * h);
    }
  }
  // Weight of u_j in ∫_0^{t_k} a(t_k - s) u(s) ds, interior j.
  double interior(std::size_t lag) const { return (A2[lag + 1] - 2.0 * A2[lag] + A2[lag - 1]) / h; }
  double diagonal() const { return A2[1] / h; }
  double origin(std::size_t k) const { return A1[k] - (A2[k] - A2[k - 1]) / h; }

  Vec convolve(const std::vector<Vec>& u, std::size_t k) const {
    if (k == 0) return Vec::Zero(u[0].size());
    Vec c = origin(k) * u[0] + diagonal() * u[k];
    for (std::size_t j = 1; j < k; ++j) c += interior(k - j) * u[j];
    return c;
  }
};

}  // namespace

std::vector<Vec> reference_volterra_solve(const BernsteinKernel& kernel, const Mat& A, const DeterministicForcing& f,
                                          const TimeGrid& grid) {
  if (A.rows() != A.cols() || A.rows() == 0) throw DomainError("A must be a nonempty square matrix");
  if (grid.steps < 1 || !(grid.T > grid.t0)) throw DomainError("time grid needs T > t0 and at least one step");
  if (kernel.family() == KernelFamily::Fractional && !(kernel.rho() > 0.0)) {
    throw DomainError("kernel is not locally integrable");
  }
  const Index d = A.rows();
  const std::size_t N = grid.steps;
  const double h = grid.dt();
  const ConvolutionWeights W(kernel, N, h);
  auto F = [&](double t, const Vec& u) { return f ? f(t, u) : Vec(Vec::Zero(d)); };
  const Mat I = Mat::Identity(d, d);

  // Fixed point of M x = b + scale·F(t, x); M is well conditioned for small h.
  auto fixed_point = [&](const Mat& M, const Vec& b, double scale, double t, Vec x) {
    const auto lu = M.partialPivLu();
    for (int it = 0; it < 200; ++it) {
      const Vec next = lu.solve(b + scale * F(t, x));
      const double change = (next - x).norm();
      x = next;
      if (change <= 1e-14 * (1.0 + x.norm())) return x;
    }
    throw NumericError("fixed-point iteration for the implicit Volterra step did not converge");
  };

  std::vector<Vec> u(N + 1);
  const double a0 = value_at_zero(kernel);
  u[0] = std::isfinite(a0) ? fixed_point(a0 * I - A, Vec::Zero(d), 1.0, grid.t0, Vec::Zero(d)) : Vec(Vec::Zero(d));

  Vec cumulative = Vec::Zero(d);  // Σ_{j=1}^{k-1} (A u_j + f_j)
  const Vec g0 = A * u[0] + F(grid.t0, u[0]);
  const Mat M = W.diagonal() * I - 0.5 * h * A;
  for (std::size_t k = 1; k <= N; ++k) {
    Vec rhs = h * (0.5 * g0 + cumulative) - W.origin(k) * u[0];
    for (std::size_t j = 1; j < k; ++j) rhs -= W.interior(k - j) * u[j];
    u[k] = fixed_point(M, rhs, 0.5 * h, grid.time(k), u[k - 1]);
    cumulative += A * u[k] + F(grid.time(k), u[k]);
  }
  return u;
}

double volterra_residual(const std::vector<Vec>& u, const BernsteinKernel& kernel, const Mat& A,
                         const DeterministicForcing& f, const TimeGrid& grid) {
  const std::size_t N = grid.steps;
  if (u.size() != N + 1) throw DomainError("trajectory length does not match the grid");
  if (N < 2) return 0.0;
  const double h = grid.dt();
  const ConvolutionWeights W(kernel, N, h);
  std::vector<Vec> C(N + 1);
  for (std::size_t k = 0; k <= N; ++k) C[k] = W.convolve(u, k);
  double scale = 0.0;
  for (const auto& v : u) scale = std::max(scale, v.cwiseAbs().maxCoeff());
  if (!(scale > 0.0)) scale = 1.0;
  double worst = 0.0;
  for (std::size_t k = 1; k < N; ++k) {
    Vec r = (C[k + 1] - C[k - 1]) / (2.0 * h) - A * u[k];
    if (f) r -= f(grid.time(k), u[k]);
    worst = std::max(worst, r.cwiseAbs().maxCoeff());
  }
  return worst / scale;
}

std::vector<Vec> u_trajectory(const PathBundle& bundle, std::size_t path) {
  std::vector<Vec> out;
  out.reserve(bundle.steps() + 1);
  for (std::size_t k = 0; k <= bundle.steps(); ++k) out.emplace_back(bundle.u_at(path, k));
  return out;
}

void write_bundle_csv(const PathBundle& bundle, std::ostream& out, const BundleCsvOptions& options) {
  std::vector<Index> nodes = options.nodes;
  if (nodes.empty() && bundle.has_states && bundle.n > 0) {
    nodes.push_back(0);
    if (bundle.n > 1) nodes.push_back(bundle.n - 1);
  }
  if (!bundle.has_states) nodes.clear();
  for (Index i : nodes)
    if (i < 0 || i >= bundle.n) throw DomainError("exported node index outside the lift");

  CsvWriter csv(out);
  std::vector<std::string> head = {"path", "step", "t"};
  for (Index a = 0; a < bundle.d; ++a) head.push_back("u_" + std::to_string(a));
  for (Index i : nodes)
    for (Index a = 0; a < bundle.d; ++a) head.push_back("y_" + std::to_string(i) + "_" + std::to_string(a));
  for (Index c = 0; c < bundle.control_dim; ++c) head.push_back("gamma_" + std::to_string(c));
  if (bundle.has_controls) head.push_back("control_index");
  csv.header(head);

  const std::size_t paths = std::min(bundle.n_paths, options.max_paths);
  for (std::size_t p = 0; p < paths; ++p) {
    for (std::size_t k = 0; k <= bundle.steps(); ++k) {
      csv.field(p).field(k).field(bundle.grid.time(k));
      const auto u = bundle.u_at(p, k);
      for (Index a = 0; a < bundle.d; ++a) csv.field(u(a));
      if (!nodes.empty()) {
        const LiftedState y = bundle.y_at(p, k);
        for (Index i : nodes)
          for (Index a = 0; a < bundle.d; ++a) csv.field(y(i, a));
      }
      if (bundle.has_controls) {
        // Controls act on [t_k, t_{k+1}); the terminal row leaves them empty.
        if (k < bundle.steps()) {
          const auto g = bundle.control_at(p, k);
          for (Index c = 0; c < bundle.control_dim; ++c) csv.field(g(c));
          csv.field(static_cast<long long>(bundle.control_index[p * bundle.steps() + k]));
        } else {
          for (Index c = 0; c <= bundle.control_dim; ++c) csv.field(std::string_view{});
        }
      }
      csv.end_row();
    }
  }
}

namespace {

constexpr char kMagic[8] = {'S', 'V', 'C', 'B', 'N', 'D', 'L', '1'};

template <class T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw ConfigError("truncated bundle file");
  return v;
}

template <class T>
void put_array(std::ostream& out, const std::vector<T>& v) {
  put<std::uint64_t>(out, v.size());
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
}

template <class T>
std::vector<T> get_array(std::istream& in) {
  const auto size = get<std::uint64_t>(in);
  std::vector<T> v(size);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(size * sizeof(T)));
  if (!in) throw ConfigError("truncated bundle file");
  return v;
}

}  // namespace

void write_bundle_binary(const PathBundle& b, std::ostream& out) {
  out.write(kMagic, sizeof kMagic);
  put<double>(out, b.grid.t0);
  put<double>(out, b.grid.T);
  for (std::uint64_t v : {std::uint64_t(b.grid.steps), std::uint64_t(b.grid.first_step), std::uint64_t(b.n_paths),
                          std::uint64_t(b.n), std::uint64_t(b.d), std::uint64_t(b.m), std::uint64_t(b.control_dim),
                          b.seed, std::uint64_t(b.has_states), std::uint64_t(b.has_controls)})
    put<std::uint64_t>(out, v);
  put_array(out, b.y);
  put_array(out, b.u);
  put_array(out, b.dW);
  put_array(out, b.controls);
  put_array(out, b.control_index);
}

PathBundle read_bundle_binary(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw ConfigError("not a bundle file");
  PathBundle b;
  b.grid.t0 = get<double>(in);
  b.grid.T = get<double>(in);
  b.grid.steps = get<std::uint64_t>(in);
  b.grid.first_step = get<std::uint64_t>(in);
  b.n_paths = get<std::uint64_t>(in);
  b.n = static_cast<Index>(get<std::uint64_t>(in));
  b.d = static_cast<Index>(get<std::uint64_t>(in));
  b.m = static_cast<Index>(get<std::uint64_t>(in));
  b.control_dim = static_cast<Index>(get<std::uint64_t>(in));
  b.seed = get<std::uint64_t>(in);
  b.has_states = get<std::uint64_t>(in) != 0;
  b.has_controls = get<std::uint64_t>(in) != 0;
  b.y = get_array<double>(in);
  b.u = get_array<double>(in);
  b.dW = get_array<double>(in);
  b.controls = get_array<double>(in);
  b.control_index = get_array<std::int32_t>(in);
  const std::size_t N = b.grid.steps;
  if (b.u.size() != b.n_paths * (N + 1) * static_cast<std::size_t>(b.d) ||
      b.dW.size() != b.n_paths * N * static_cast<std::size_t>(b.m)) {
    throw ConfigError("bundle file arrays do not match its header");
  }
  return b;
}

}  // namespace svc
