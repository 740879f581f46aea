#include "svc/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <ostream>

#include "svc/csv.hpp"
#include "svc/errors.hpp"
#include "svc/rng.hpp"
#include "svc/sensitivity.hpp"

namespace svc {

using nlohmann::json;

std::uint64_t stage_seed(std::uint64_t root, const std::string& stage) { return mix_seed(root ^ fnv1a(stage)); }

std::string to_string(StageStatus status) {
  switch (status) {
    case StageStatus::Pass: return "pass";
    case StageStatus::Fail: return "fail";
    case StageStatus::Error: return "error";
    case StageStatus::Skipped: return "skipped";
  }
  return "unknown";
}

bool RunReport::pass() const {
  for (const auto& s : stages)
    if (s.status != StageStatus::Pass) return false;
  return true;
}

json RunReport::to_json() const {
  json st = json::array();
  for (const auto& s : stages) {
    st.push_back({{"name", s.name},
                  {"status", svc::to_string(s.status)},
                  {"seconds", s.seconds},
                  {"message", s.message},
                  {"data", s.data}});
  }
  return {{"config", config_name}, {"config_hash", config_hash}, {"root_seed", root_seed}, {"threads", threads},
          {"pass", pass()},        {"exit_code", exit_code()},   {"stages", st},          {"artifacts", artifacts}};
}

const std::vector<std::string>& plot_kinds() {
  static const std::vector<std::string> kinds{"kernel-fit", "paths", "profiles", "verification"};
  return kinds;
}

void write_kernel_fit_csv(const BernsteinKernel& exact, const BernsteinKernel& fitted, TimeWindow window,
                          std::size_t points, std::ostream& out) {
  CsvWriter w(out);
  w.header({"t", "a_true", "a_fit", "rel_err"});
  const double lo = std::log(window.t_min), hi = std::log(window.t_max);
  for (std::size_t i = 0; i < points; ++i) {
    const double s = points > 1 ? static_cast<double>(i) / static_cast<double>(points - 1) : 0.0;
    const double t = std::exp(lo + s * (hi - lo));
    const double a = evaluate(exact, t), b = evaluate(fitted, t);
    w.field(t).field(a).field(b).field(std::abs(b - a) / std::abs(a));
    w.end_row();
  }
}

void write_paths_csv(const PathBundle& bundle, std::size_t max_paths, std::ostream& out) {
  CsvWriter w(out);
  w.header({"path", "step", "t", "component", "u"});
  const std::size_t P = std::min(max_paths, bundle.n_paths);
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t k = 0; k <= bundle.steps(); ++k)
      for (Index a = 0; a < bundle.d; ++a) {
        w.field(p).field(k).field(bundle.grid.time(k)).field(static_cast<long long>(a)).field(bundle.u_at(p, k)(a));
        w.end_row();
      }
}

void write_profiles_csv(const BsdeSolution& solution, std::ostream& out) {
  CsvWriter w(out);
  w.header({"t", "quantity", "mean", "stderr"});
  const std::size_t P = solution.n_paths;
  std::vector<double> s(P);
  for (std::size_t k = 0; k <= solution.steps(); ++k) {
    for (std::size_t p = 0; p < P; ++p) s[p] = solution.Y_at(p, k);
    const auto y = mean_cost(s);
    w.field(solution.grid.time(k)).field("Y").field(y.J).field(y.stderr);
    w.end_row();
    if (k == solution.steps()) break;
    for (Index j = 0; j < solution.m; ++j) {
      for (std::size_t p = 0; p < P; ++p) s[p] = solution.Z_at(p, k)(j);
      const auto z = mean_cost(s);
      w.field(solution.grid.time(k)).field("Z_" + std::to_string(j)).field(z.J).field(z.stderr);
      w.end_row();
    }
  }
}

void write_verification_csv(const VerificationReport& report, std::ostream& out) {
  CsvWriter w(out);
  w.header({"label", "J", "stderr"});
  w.field("feedback").field(report.feedback.J).field(report.feedback.stderr);
  w.end_row();
  for (const auto& a : report.adversaries) {
    w.field(a.label).field(a.cost.J).field(a.cost.stderr);
    w.end_row();
  }
}

void emit_plot_data(const PipelineState& state, const std::string& kind, std::ostream& out) {
  if (std::find(plot_kinds().begin(), plot_kinds().end(), kind) == plot_kinds().end())
    throw UsageError("unknown plot kind '" + kind + "'");
  if (kind == "kernel-fit") {
    if (!state.source_kernel || !state.fit) throw DomainError("no kernel fit in this run");
    const auto& k = state.config.kernel;
    write_kernel_fit_csv(*state.source_kernel, state.fit->kernel, {k.t_min, k.t_max}, 200, out);
  } else if (kind == "paths") {
    if (!state.bundle) throw DomainError("no simulated bundle in this run");
    write_paths_csv(*state.bundle, state.config.mc.plot_paths, out);
  } else if (kind == "profiles") {
    if (!state.solution) throw DomainError("no backward solution in this run");
    write_profiles_csv(*state.solution, out);
  } else {
    if (!state.verification) throw DomainError("no verification report in this run");
    write_verification_csv(*state.verification, out);
  }
}

namespace {

template <class T>
const T& need(const std::optional<T>& value, const char* what) {
  if (!value) throw DomainError(std::string("missing ") + what + " from an earlier stage");
  return *value;
}

LiftedState test_direction(const DiscreteLift& lift) {
  LiftedState h(lift.n(), lift.d());
  for (Index i = 0; i < lift.n(); ++i)
    for (Index a = 0; a < lift.d(); ++a)
      h(i, a) = std::cos(0.8 + 0.7 * static_cast<double>(i) + 1.3 * static_cast<double>(a)) / (1.0 + i);
  return h;
}

double rel_gap(const LiftedState& a, const LiftedState& b) {
  const double diff = (a - b).norm(), scale = b.norm();
  if (diff == 0.0) return 0.0;
  return scale > 0.0 ? diff / scale : std::numeric_limits<double>::infinity();
}

std::uint64_t checksum(const std::vector<double>& v) {
  std::string bytes(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
  return fnv1a(bytes);
}

class Runner {
 public:
  Runner(PipelineState& state, const RunOptions& options, RunReport& report)
      : s_(state), opt_(options), rep_(report), cfg_(state.config) {}

  bool stage(const std::string& name, StageResult& r) {
    if (name == "fit") return fit(r);
    if (name == "hypotheses") return hypotheses(r);
    if (name == "simulate") return simulate_stage(r);
    if (name == "bsde") return bsde(r);
    if (name == "synthesize") return synthesize(r);
    if (name == "verify") return verify(r);
    if (name == "residuals") return residuals(r);
    return sensitivity(r);
  }

 private:
  std::size_t threads() const { return cfg_.threads; }
  std::uint64_t seed(const char* stage) const { return stage_seed(cfg_.seed, stage); }

  void write(const std::string& file, const std::function<void(std::ostream&)>& body) {
    if (!opt_.write_files) return;
    const auto path = std::filesystem::path(cfg_.output) / file;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write artifact " + path.string());
    body(out);
    if (!out) throw Error("failed writing artifact " + path.string());
    rep_.artifacts.push_back(file);
  }

  bool fit(StageResult& r) {
    s_.source_kernel = config_kernel(cfg_);
    const auto& k = cfg_.kernel;
    const TimeWindow window{k.t_min, k.t_max};
    if (s_.source_kernel->is_discrete()) {
      s_.fit = DiscreteFit{*s_.source_kernel, 0.0};
    } else {
      s_.fit = discretize(*s_.source_kernel, k.fit_nodes, window);
    }
    Exponents ex;
    const double alpha = singularity_index(*s_.source_kernel);
    if (cfg_.exponents) {
      ex = Exponents{cfg_.exponents->eta, cfg_.exponents->theta, false};
    } else if (alpha > 0.5) {
      ex = choose_exponents(alpha);
    } else {
      ex = Exponents{0.25, 0.75, true};  // the α → 1/2 limit of the automatic choice
      r.message = "singularity index " + format_double(alpha) + " <= 1/2; limit exponents used";
    }
    s_.problem = build_problem(cfg_, DiscreteLift(s_.fit->kernel, OperatorA(to_matrix(cfg_.A)), ex));
    s_.grid = TimeGrid{0.0, cfg_.T, cfg_.N, 0};

    r.data = {{"family", k.family},
              {"nodes_requested", k.fit_nodes},
              {"nodes_used", s_.fit->kernel.size()},
              {"window", {k.t_min, k.t_max}},
              {"sup_rel_error", s_.fit->sup_rel_error},
              {"tolerance", k.tolerance},
              {"eta", ex.eta},
              {"theta", ex.theta}};
    write("kernel.json", [&](std::ostream& out) { out << to_json(s_.fit->kernel).dump(2) << "\n"; });
    write("kernel_fit.csv", [&](std::ostream& out) { emit_plot_data(s_, "kernel-fit", out); });
    return s_.fit->sup_rel_error <= k.tolerance;
  }

  bool hypotheses(StageResult& r) {
    const auto h = check_hypotheses(need(s_.source_kernel, "kernel"));
    const auto pc = check_problem(need(s_.problem, "problem"), cfg_.T, 200, seed("hypotheses"));
    r.data = {{"completely_monotone", h.is_completely_monotone},
              {"locally_integrable", h.locally_integrable},
              {"singular_at_zero", h.singular_at_zero},
              {"alpha", h.alpha},
              {"alpha_threshold", 0.5},
              {"alpha_exceeds_half", h.alpha_exceeds_half},
              {"kernel_notes", h.notes},
              {"r_bounded", pc.r_bounded},
              {"f_lipschitz", pc.f_lipschitz},
              {"l_bounded_at_zero", pc.l_bounded_at_zero},
              {"phi_lipschitz", pc.phi_lipschitz},
              {"max_r", pc.max_r},
              {"max_f_ratio", pc.max_f_ratio},
              {"max_l_at_zero", pc.max_l_at_zero},
              {"max_phi_ratio", pc.max_phi_ratio},
              {"coefficient_notes", pc.notes}};
    if (!h.all_hold()) r.message = "kernel hypotheses fail: " + h.notes;
    else if (!pc.ok()) r.message = "declared constants violated: " + pc.notes;
    return h.all_hold() && pc.ok();
  }

  bool simulate_stage(StageResult& r) {
    const auto& p = need(s_.problem, "problem");
    SimulateOptions o;
    o.threads = threads();
    s_.bundle = simulate(p, s_.grid, cfg_.mc.paths, seed("simulate"), Uncontrolled{}, o);
    const auto& b = *s_.bundle;
    std::vector<double> uT(b.n_paths);
    for (std::size_t i = 0; i < b.n_paths; ++i) uT[i] = b.u_at(i, b.steps())(0);
    const auto m = mean_cost(uT);
    const double recon = reconstruction_error(p, b);
    char sum[17];
    std::snprintf(sum, sizeof sum, "%016llx", static_cast<unsigned long long>(checksum(b.u)));
    r.data = {{"n_paths", b.n_paths},
              {"steps", b.steps()},
              {"seed", b.seed},
              {"u_T_mean", m.J},
              {"u_T_stderr", m.stderr},
              {"reconstruction_error", recon},
              {"reconstruction_tolerance", 1e-10},
              {"u_checksum", sum}};
    write("paths.csv", [&](std::ostream& out) { emit_plot_data(s_, "paths", out); });
    return recon <= 1e-10;
  }

  bool bsde(StageResult& r) {
    BsdeOptions o;
    o.basis = parse_basis(cfg_.bsde.basis);
    o.sign = cfg_.bsde.sign == "literal" ? DriverSign::Literal : DriverSign::Value;
    o.implicit = cfg_.bsde.implicit;
    o.cond_limit = cfg_.bsde.cond_limit;
    o.threads = threads();
    s_.solution.emplace(solve_bsde(need(s_.problem, "problem"), need(s_.bundle, "bundle"), o));
    const auto& sol = *s_.solution;
    const auto& dg = sol.diagnostics;
    double max_cond = 0.0;
    for (double c : dg.condition) max_cond = std::max(max_cond, c);
    r.data = {{"basis", cfg_.bsde.basis},
              {"y0", sol.y0()},
              {"y0_stderr", sol.y0_stderr()},
              {"max_normal_residual", dg.max_normal_residual},
              {"normal_residual_tolerance", 1e-8},
              {"max_condition", max_cond},
              {"cond_limit", o.cond_limit},
              {"reduced_steps", dg.reduced_steps}};
    write("value_table.csv", [&](std::ostream& out) { write_value_table(sol, *s_.bundle, out); });
    write("profiles.csv", [&](std::ostream& out) { emit_plot_data(s_, "profiles", out); });
    return dg.max_normal_residual <= 1e-8;
  }

  bool synthesize(StageResult& r) {
    const auto& p = need(s_.problem, "problem");
    const auto& sol = need(s_.solution, "backward solution");
    const auto policy = feedback_policy(p, sol);
    SimulateOptions o;
    o.threads = threads();
    o.store_states = false;
    const auto b = simulate(p, s_.grid, cfg_.mc.verify_paths, seed("synthesize"), policy.mode(), o);
    s_.feedback_cost = cost(p, b);
    const auto& c = *s_.feedback_cost;
    const double comb = std::hypot(c.stderr, sol.y0_stderr());
    const double gap = std::abs(c.J - sol.y0());
    // J_feedback ≈ v0 is reported, not enforced: the regression value carries a
    // bias of its own, and the verify stage checks the one-sided relations.
    const bool matches = gap <= 3.0 * comb;
    r.data = {{"J_feedback", c.J}, {"J_feedback_stderr", c.stderr}, {"v0", sol.y0()},
              {"v0_stderr", sol.y0_stderr()}, {"gap", gap}, {"tolerance", 3.0 * comb},
              {"feedback_matches_value", matches}};
    if (!matches) r.message = "feedback cost differs from the value estimate by more than 3 stderr";
    write("feedback_controls.csv", [&](std::ostream& out) {
      CsvWriter w(out);
      std::vector<std::string> head{"t"};
      for (Index a = 0; a < b.control_dim; ++a) head.push_back("gamma_mean_" + std::to_string(a));
      w.header(head);
      for (std::size_t k = 0; k < b.steps(); ++k) {
        Vec mean = Vec::Zero(b.control_dim);
        for (std::size_t i = 0; i < b.n_paths; ++i) mean += b.control_at(i, k);
        mean /= static_cast<double>(b.n_paths);
        w.field(s_.grid.time(k));
        for (Index a = 0; a < b.control_dim; ++a) w.field(mean(a));
        w.end_row();
      }
    });
    return std::isfinite(c.J);
  }

  bool verify(StageResult& r) {
    const auto& p = need(s_.problem, "problem");
    const auto& sol = need(s_.solution, "backward solution");
    const auto policy = feedback_policy(p, sol);
    const auto adv = bangbang_adversaries(p.controls.size(), s_.grid.steps, cfg_.mc.adversary_blocks);
    s_.verification =
        verify_fundamental_relation(p, policy, s_.grid, cfg_.mc.verify_paths, seed("verify"), adv, sol.y0(), threads());
    const auto& v = *s_.verification;
    bool above = true;
    for (const auto& a : v.adversaries) above = above && a.above_value;
    r.data = v.to_json();
    r.data["adversary_tolerance"] = "J >= v0 - 3 stderr(J)";
    r.data["feedback_tolerance"] = "J_feedback <= min J_adv + 3 stderr(J_feedback)";
    r.data["every_adversary_above_value"] = above;
    write("verification.csv", [&](std::ostream& out) { emit_plot_data(s_, "verification", out); });
    if (!above) r.message = "an adversary beat the value estimate";
    else if (!v.feedback_beats_adversaries) r.message = "an adversary beat the feedback policy";
    return above && v.feedback_beats_adversaries;
  }

  bool residuals(StageResult& r) {
    const auto& p = need(s_.problem, "problem");
    const auto& sol = need(s_.solution, "backward solution");
    const auto& b = need(s_.bundle, "bundle");
    const auto z = z_identification_check(p, sol, b);
    const bool z_ok = z.relative_l2 <= 0.1;
    const auto pts = sample_points(b, cfg_.mc.residual_points);
    const auto hjb = hjb_residual(sol, pts, cfg_.mc.inner_paths, seed("residuals"), threads());
    json qv = json::array();
    bool qv_ok = true;
    for (Index j = 0; j < p.m(); ++j) {
      const auto e = joint_quadratic_variation(sol.value_evaluator(), p, b, j, threads());
      const bool ok = std::abs(e.empirical - e.predicted) <= 3.0 * e.combined_stderr();
      qv_ok = qv_ok && ok;
      qv.push_back({{"j", j},
                    {"empirical", e.empirical},
                    {"empirical_stderr", e.empirical_stderr},
                    {"predicted", e.predicted},
                    {"predicted_stderr", e.predicted_stderr},
                    {"tolerance", 3.0 * e.combined_stderr()},
                    {"pass", ok}});
    }
    r.data = {{"z_identification",
               {{"relative_l2", z.relative_l2}, {"tolerance", 0.1}, {"samples", z.samples}, {"pass", z_ok}}},
              {"hjb", hjb.to_json()},
              {"quadratic_variation", qv}};
    write("residuals.csv", [&](std::ostream& out) {
      CsvWriter w(out);
      w.header({"k", "t", "value", "mild", "residual", "stderr"});
      for (const auto& x : hjb.points) {
        w.field(x.k).field(x.t).field(x.value).field(x.mild).field(x.residual).field(x.stderr);
        w.end_row();
      }
    });
    return z_ok && hjb.pass && qv_ok;
  }

  bool sensitivity(StageResult& r) {
    const auto& p = need(s_.problem, "problem");
    const auto& grid = s_.grid;
    const auto base = simulate(p, grid, cfg_.mc.sensitivity_paths, seed("sensitivity"));
    const LiftedState h = test_direction(p.lift);
    auto wanted = [&](const char* c) { return opt_.checks.empty() || opt_.checks.count(c) > 0; };
    bool ok = true;

    if (wanted("gradients")) {
      const double eps = 1e-5;
      auto terminal = [&](double e) {
        SimulateOptions o;
        o.start_states = {perturb_state(p.lift, base.state(0, 0), h, e)};
        return simulate(p, grid, base.n_paths, base.seed, Uncontrolled{}, o);
      };
      const auto up = terminal(eps), dn = terminal(-eps);
      double worst = 0.0;
      for (std::size_t i = 0; i < base.n_paths; ++i) {
        const LiftedState fd = (up.y_at(i, grid.steps) - dn.y_at(i, grid.steps)) / (2.0 * eps);
        worst = std::max(worst, rel_gap(variational_flow(p, base, i, h).G.back(), fd));
      }
      r.data["gradients"] = {{"max_relative_error", worst}, {"tolerance", 1e-4}, {"pass", worst <= 1e-4}};
      ok = ok && worst <= 1e-4;
      write("flow.csv", [&](std::ostream& out) { write_flow_csv(p.lift, grid, variational_flow(p, base, 0, h), out); });
    }

    if (wanted("theta")) {
      const auto F = shifted_power(p.lift, 1.0 - p.lift.exponents().theta);
      const LiftedState k = unflatten(F.value * flatten(h), p.lift.n(), p.lift.d());
      const Mat R = resolvent_power(p.lift, grid.dt(), grid.steps);
      double worst = 0.0;
      std::string reason;
      for (std::size_t i = 0; i < base.n_paths; ++i) {
        const auto th = theta_process(p, base, i, h);
        if (!th.available) {
          reason = th.reason;
          break;
        }
        const LiftedState G = variational_flow(p, base, i, k).G.back();
        const LiftedState route2 = G - unflatten(R * flatten(k), p.lift.n(), p.lift.d());
        // route2 is a difference of two propagations; with ∇f = 0 it is pure roundoff.
        const double scale = std::max(route2.norm(), 1e-8 * G.norm());
        const double diff = (th.theta.back() - route2).norm();
        worst = std::max(worst, diff == 0.0 ? 0.0 : diff / scale);
      }
      const bool pass = reason.empty() && worst <= 1e-6;
      r.data["theta"] = {{"relative_error", worst}, {"tolerance", 1e-6}, {"pass", pass}};
      if (!reason.empty()) r.data["theta"]["unavailable"] = reason;
      ok = ok && pass;
    }

    if (wanted("malliavin")) {
      const std::size_t sigma = grid.steps / 3;
      const auto slice = malliavin_derivative(p, base, 0, sigma, 0);
      const StepOperator op(p, grid.dt());
      auto terminal = [&](double bump) {
        SystemState st = base.state(0, 0);
        for (std::size_t k = 0; k < grid.steps; ++k) {
          Vec dw = base.dW_at(0, k);
          if (k == sigma) dw(0) += bump;
          st = op.step(st, grid.time(k), nullptr, dw.data());
        }
        return st;
      };
      const double eps = 1e-6;
      const LiftedState fd = (terminal(eps).y - terminal(-eps).y) / (2.0 * eps);
      const double err = rel_gap(slice.D.back(), fd);
      const double ratio = malliavin_bound_ratio(p.lift, grid, slice);
      r.data["malliavin"] = {{"sigma", sigma},       {"relative_error", err}, {"tolerance", 1e-5},
                             {"bound_ratio", ratio}, {"pass", err <= 1e-5}};
      ok = ok && err <= 1e-5;
      write("malliavin.csv", [&](std::ostream& out) { write_malliavin_csv(p.lift, grid, slice, out); });
    }
    return ok;
  }

  PipelineState& s_;
  const RunOptions& opt_;
  RunReport& rep_;
  const ExperimentConfig& cfg_;
};

}  // namespace

RunReport run_pipeline(const ExperimentConfig& config, const RunOptions& options, PipelineState* state) {
  ExperimentConfig cfg = config;
  if (options.seed) cfg.seed = *options.seed;
  if (options.threads) cfg.threads = *options.threads;
  if (options.output) cfg.output = *options.output;
  if (options.basis) cfg.bsde.basis = *options.basis;
  if (options.paths) cfg.mc.paths = *options.paths;
  if (options.adversary_blocks) cfg.mc.adversary_blocks = *options.adversary_blocks;
  if (!options.stages.empty()) cfg.stages = options.stages;
  validate(cfg);

  PipelineState local;
  PipelineState& st = state ? *state : local;
  st = PipelineState{};
  st.config = cfg;

  RunReport rep;
  rep.config_name = cfg.name;
  rep.config_hash = config_hash(cfg);
  rep.root_seed = cfg.seed;
  rep.threads = cfg.threads;
  if (options.write_files) std::filesystem::create_directories(cfg.output);

  Runner runner(st, options, rep);
  std::string stopped_by;
  for (const auto& name : stage_names()) {
    if (std::find(cfg.stages.begin(), cfg.stages.end(), name) == cfg.stages.end()) continue;
    StageResult r;
    r.name = name;
    if (!stopped_by.empty()) {
      r.status = StageStatus::Skipped;
      r.message = "skipped after '" + stopped_by + "' did not pass";
      rep.stages.push_back(std::move(r));
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    try {
      r.status = runner.stage(name, r) ? StageStatus::Pass : StageStatus::Fail;
    } catch (const std::exception& e) {
      r.status = StageStatus::Error;
      r.message = e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (r.status != StageStatus::Pass && !options.force) stopped_by = name;
    rep.stages.push_back(std::move(r));
  }
  if (options.write_files) {
    std::ofstream out(std::filesystem::path(cfg.output) / "report.json", std::ios::binary);
    out << rep.to_json().dump(2) << "\n";
  }
  return rep;
}

}  // namespace svc
