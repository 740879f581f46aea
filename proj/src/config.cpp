#include "svc/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "svc/errors.hpp"

namespace svc {

using nlohmann::json;

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"fit",        "hypotheses", "simulate", "bsde",
                                              "synthesize", "verify",     "residuals", "sensitivity"};
  return names;
}

namespace {

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  throw ConfigError(where + ": " + what);
}

void allow_keys(const json& obj, const std::set<std::string>& keys, const std::string& where) {
  if (!obj.is_object()) fail(where, "expected an object");
  for (const auto& [k, v] : obj.items())
    if (!keys.count(k)) fail(where, "unknown key '" + k + "'");
}

template <class T>
T read(const json& obj, const std::string& key, const std::string& where, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    fail(where + "." + key, "has the wrong type");
  }
}

template <class T>
T require(const json& obj, const std::string& key, const std::string& where) {
  if (!obj.contains(key)) fail(where, "missing key '" + key + "'");
  return read<T>(obj, key, where, T{});
}

std::size_t read_count(const json& obj, const std::string& key, const std::string& where, std::size_t fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) fail(where + "." + key, "must be a nonnegative integer");
  return v.get<std::size_t>();
}

KernelConfig parse_kernel(const json& j) {
  const std::string w = "kernel";
  allow_keys(j, {"family", "rho", "kappa0", "nodes", "weights", "fit"}, w);
  KernelConfig k;
  k.family = require<std::string>(j, "family", w);
  k.rho = read(j, "rho", w, k.rho);
  k.kappa0 = read(j, "kappa0", w, k.kappa0);
  k.nodes = read(j, "nodes", w, k.nodes);
  k.weights = read(j, "weights", w, k.weights);
  if (j.contains("fit")) {
    const json& f = j.at("fit");
    allow_keys(f, {"nodes", "t_min", "t_max", "tolerance"}, w + ".fit");
    k.fit_nodes = read_count(f, "nodes", w + ".fit", k.fit_nodes);
    k.t_min = read(f, "t_min", w + ".fit", k.t_min);
    k.t_max = read(f, "t_max", w + ".fit", k.t_max);
    k.tolerance = read(f, "tolerance", w + ".fit", k.tolerance);
  }
  return k;
}

Rows parse_controls(const json& j) {
  if (j.is_array()) {
    try {
      return j.get<Rows>();
    } catch (const json::exception&) {
      fail("controls", "expected an array of arrays of numbers");
    }
  }
  allow_keys(j, {"grid"}, "controls");
  const json& g = j.at("grid");
  allow_keys(g, {"lo", "hi", "count"}, "controls.grid");
  const double lo = require<double>(g, "lo", "controls.grid"), hi = require<double>(g, "hi", "controls.grid");
  const std::size_t count = read_count(g, "count", "controls.grid", 0);
  if (count < 1) fail("controls.grid", "count must be positive");
  if (count > 1 && !(hi > lo)) fail("controls.grid", "needs hi > lo");
  Rows out;
  for (const Vec& v : control_grid(lo, hi, count)) out.push_back({v(0)});
  return out;
}

void check_shape(const Rows& M, std::size_t rows, std::size_t cols, const std::string& where) {
  if (M.size() != rows) fail(where, "expected " + std::to_string(rows) + " rows");
  for (const auto& r : M)
    if (r.size() != cols) fail(where, "expected " + std::to_string(cols) + " columns");
}

void check_size(const std::vector<double>& v, std::size_t n, const std::string& where) {
  if (v.size() != n) fail(where, "expected " + std::to_string(n) + " entries");
}

}  // namespace

Mat to_matrix(const Rows& rows) {
  const Index r = static_cast<Index>(rows.size()), c = rows.empty() ? 0 : static_cast<Index>(rows[0].size());
  Mat M(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) M(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return M;
}

namespace {

Vec to_vec(const std::vector<double>& v) { return Eigen::Map<const Vec>(v.data(), static_cast<Index>(v.size())); }

bool finite(const Rows& M) {
  for (const auto& r : M)
    for (double x : r)
      if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace

ExperimentConfig parse_config(const json& doc) {
  allow_keys(doc, {"name", "kernel", "A", "g", "coefficients", "controls", "history", "constants", "exponents",
                   "grid", "mc", "bsde", "seed", "threads", "output", "stages"},
             "config");
  ExperimentConfig c;
  c.name = read(doc, "name", "config", c.name);
  if (!doc.contains("kernel")) fail("config", "missing key 'kernel'");
  c.kernel = parse_kernel(doc.at("kernel"));
  c.A = require<Rows>(doc, "A", "config");
  c.g = require<Rows>(doc, "g", "config");

  if (doc.contains("coefficients")) {
    const json& co = doc.at("coefficients");
    allow_keys(co, {"f", "r", "l", "phi"}, "coefficients");
    if (co.contains("f")) {
      const json& f = co.at("f");
      allow_keys(f, {"type", "M", "b"}, "coefficients.f");
      c.f.type = require<std::string>(f, "type", "coefficients.f");
      c.f.M = read(f, "M", "coefficients.f", c.f.M);
      c.f.b = read(f, "b", "coefficients.f", c.f.b);
    }
    if (co.contains("r")) {
      const json& r = co.at("r");
      allow_keys(r, {"type", "C", "D"}, "coefficients.r");
      c.r.type = require<std::string>(r, "type", "coefficients.r");
      c.r.C = read(r, "C", "coefficients.r", c.r.C);
      c.r.D = read(r, "D", "coefficients.r", c.r.D);
    }
    if (co.contains("l")) {
      const json& l = co.at("l");
      allow_keys(l, {"type", "R", "q", "P", "c"}, "coefficients.l");
      c.l.type = require<std::string>(l, "type", "coefficients.l");
      c.l.R = read(l, "R", "coefficients.l", c.l.R);
      c.l.q = read(l, "q", "coefficients.l", c.l.q);
      c.l.P = read(l, "P", "coefficients.l", c.l.P);
      c.l.c = read(l, "c", "coefficients.l", c.l.c);
    }
    if (co.contains("phi")) {
      const json& p = co.at("phi");
      allow_keys(p, {"type", "c", "b", "cap"}, "coefficients.phi");
      c.phi.type = require<std::string>(p, "type", "coefficients.phi");
      c.phi.c = read(p, "c", "coefficients.phi", c.phi.c);
      c.phi.b = read(p, "b", "coefficients.phi", c.phi.b);
      c.phi.cap = read(p, "cap", "coefficients.phi", c.phi.cap);
    }
  }

  if (!doc.contains("controls")) fail("config", "missing key 'controls'");
  c.controls = parse_controls(doc.at("controls"));

  if (doc.contains("history")) {
    const json& h = doc.at("history");
    allow_keys(h, {"type", "ubar", "omega", "delta"}, "history");
    c.history.type = require<std::string>(h, "type", "history");
    c.history.ubar = read(h, "ubar", "history", c.history.ubar);
    c.history.omega = read(h, "omega", "history", c.history.omega);
    c.history.delta = read(h, "delta", "history", c.history.delta);
  }
  if (doc.contains("constants")) {
    const json& k = doc.at("constants");
    allow_keys(k, {"L_f", "C_r", "C_l", "L_phi"}, "constants");
    auto opt = [&](const char* key) -> std::optional<double> {
      if (!k.contains(key)) return std::nullopt;
      return read<double>(k, key, "constants", 0.0);
    };
    c.constants = {opt("L_f"), opt("C_r"), opt("C_l"), opt("L_phi")};
  }
  if (doc.contains("exponents")) {
    const json& e = doc.at("exponents");
    allow_keys(e, {"eta", "theta"}, "exponents");
    c.exponents = ExponentsConfig{require<double>(e, "eta", "exponents"), require<double>(e, "theta", "exponents")};
  }
  if (!doc.contains("grid")) fail("config", "missing key 'grid'");
  const json& g = doc.at("grid");
  allow_keys(g, {"T", "N"}, "grid");
  c.T = require<double>(g, "T", "grid");
  c.N = read_count(g, "N", "grid", 0);

  if (doc.contains("mc")) {
    const json& m = doc.at("mc");
    allow_keys(m, {"paths", "verify_paths", "inner_paths", "residual_points", "adversary_blocks",
                   "sensitivity_paths", "plot_paths"},
               "mc");
    c.mc.paths = read_count(m, "paths", "mc", c.mc.paths);
    c.mc.verify_paths = read_count(m, "verify_paths", "mc", c.mc.verify_paths);
    c.mc.inner_paths = read_count(m, "inner_paths", "mc", c.mc.inner_paths);
    c.mc.residual_points = read_count(m, "residual_points", "mc", c.mc.residual_points);
    c.mc.adversary_blocks = read_count(m, "adversary_blocks", "mc", c.mc.adversary_blocks);
    c.mc.sensitivity_paths = read_count(m, "sensitivity_paths", "mc", c.mc.sensitivity_paths);
    c.mc.plot_paths = read_count(m, "plot_paths", "mc", c.mc.plot_paths);
  }
  if (doc.contains("bsde")) {
    const json& b = doc.at("bsde");
    allow_keys(b, {"basis", "sign", "implicit", "cond_limit"}, "bsde");
    c.bsde.basis = read(b, "basis", "bsde", c.bsde.basis);
    c.bsde.sign = read(b, "sign", "bsde", c.bsde.sign);
    c.bsde.implicit = read(b, "implicit", "bsde", c.bsde.implicit);
    c.bsde.cond_limit = read(b, "cond_limit", "bsde", c.bsde.cond_limit);
  }
  if (doc.contains("seed")) {
    const json& s = doc.at("seed");
    if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<long long>() >= 0))
      fail("config.seed", "must be a nonnegative integer");
    c.seed = doc.at("seed").get<std::uint64_t>();
  }
  c.threads = read_count(doc, "threads", "config", c.threads);
  c.output = read(doc, "output", "config", c.output);
  c.stages = read(doc, "stages", "config", stage_names());
  validate(c);
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_config(doc);
}

void validate(const ExperimentConfig& c) {
  const auto& k = c.kernel;
  if (k.family == "fractional") {
    if (!(k.rho > 0.0 && k.rho < 1.0)) fail("kernel.rho", "must lie in (0, 1)");
  } else if (k.family == "exponential") {
    if (!(k.kappa0 > 0.0)) fail("kernel.kappa0", "must be positive");
  } else if (k.family == "discrete") {
    if (k.nodes.empty() || k.nodes.size() != k.weights.size()) fail("kernel", "nodes and weights must match");
  } else {
    fail("kernel.family", "unknown family '" + k.family + "'");
  }
  if (k.fit_nodes < 1) fail("kernel.fit.nodes", "must be positive");
  if (!(k.t_min > 0.0 && k.t_max > k.t_min)) fail("kernel.fit", "needs 0 < t_min < t_max");
  if (!(k.tolerance > 0.0)) fail("kernel.fit.tolerance", "must be positive");

  const std::size_t d = c.A.size();
  if (d < 1) fail("A", "must be a nonempty square matrix");
  check_shape(c.A, d, d, "A");
  if (c.g.size() != d || c.g.front().empty()) fail("g", "expected a d x m matrix with m >= 1");
  const std::size_t m = c.g.front().size();
  check_shape(c.g, d, m, "g");
  if (!finite(c.A) || !finite(c.g)) fail("config", "A and g must be finite");

  if (c.controls.empty()) fail("controls", "the control set must be nonempty");
  const std::size_t p = c.controls.front().size();
  if (p < 1) fail("controls", "controls must have at least one component");
  check_shape(c.controls, c.controls.size(), p, "controls");

  if (c.f.type == "linear") {
    check_shape(c.f.M, d, d, "coefficients.f.M");
    check_size(c.f.b, d, "coefficients.f.b");
  } else if (c.f.type != "zero") {
    fail("coefficients.f", "unknown catalog entry '" + c.f.type + "'");
  }
  if (c.r.type == "bilinear") {
    check_shape(c.r.C, m, p, "coefficients.r.C");
    if (!c.r.D.empty()) {
      if (c.r.D.size() != d) fail("coefficients.r.D", "expected one matrix per component of u");
      for (const auto& D : c.r.D) check_shape(D, m, p, "coefficients.r.D");
    }
  } else if (c.r.type != "zero") {
    fail("coefficients.r", "unknown catalog entry '" + c.r.type + "'");
  }
  if (c.l.type == "quadratic") {
    if (!c.l.R.empty()) check_shape(c.l.R, p, p, "coefficients.l.R");
    if (!c.l.q.empty()) check_size(c.l.q, p, "coefficients.l.q");
    if (!c.l.P.empty()) check_shape(c.l.P, d, d, "coefficients.l.P");
  } else if (c.l.type != "zero") {
    fail("coefficients.l", "unknown catalog entry '" + c.l.type + "'");
  }
  if (c.phi.type == "linear" || c.phi.type == "soft-capped") {
    check_size(c.phi.c, d, "coefficients.phi.c");
    if (c.phi.type == "soft-capped" && !(c.phi.cap > 0.0)) fail("coefficients.phi.cap", "must be positive");
  } else if (c.phi.type != "zero") {
    fail("coefficients.phi", "unknown catalog entry '" + c.phi.type + "'");
  }
  if (c.history.type == "exponential" || c.history.type == "step") {
    check_size(c.history.ubar, d, "history.ubar");
    if (c.history.type == "exponential" && !(c.history.omega > 0.0)) fail("history.omega", "must be positive");
    if (c.history.type == "step" && !(c.history.delta > 0.0)) fail("history.delta", "must be positive");
  } else if (c.history.type != "zero") {
    fail("history.type", "unknown history '" + c.history.type + "'");
  }
  if (c.exponents && !(c.exponents->eta >= 0.0 && c.exponents->theta > 0.0 && c.exponents->theta <= 1.0))
    fail("exponents", "needs eta >= 0 and theta in (0, 1]");

  if (!(c.T > 0.0) || !std::isfinite(c.T)) fail("grid.T", "must be positive");
  if (c.N < 2) fail("grid.N", "must be at least 2");
  if (c.mc.paths < 2) fail("mc.paths", "must be at least 2");
  if (c.mc.verify_paths < 2) fail("mc.verify_paths", "must be at least 2");
  if (c.mc.inner_paths < 2) fail("mc.inner_paths", "must be at least 2");
  if (c.mc.sensitivity_paths < 1) fail("mc.sensitivity_paths", "must be positive");
  if (c.mc.adversary_blocks < 1 || c.mc.adversary_blocks > 6) fail("mc.adversary_blocks", "must lie in 1..6");
  if (c.mc.adversary_blocks > c.N) fail("mc.adversary_blocks", "cannot exceed grid.N");
  if (c.bsde.basis != "poly2" && c.bsde.basis != "poly2-state") fail("bsde.basis", "expected poly2 or poly2-state");
  if (c.bsde.sign != "value" && c.bsde.sign != "literal") fail("bsde.sign", "expected value or literal");
  if (!(c.bsde.cond_limit > 1.0)) fail("bsde.cond_limit", "must exceed 1");

  const auto& names = stage_names();
  std::set<std::string> seen;
  for (const auto& s : c.stages) {
    if (std::find(names.begin(), names.end(), s) == names.end()) fail("stages", "unknown stage '" + s + "'");
    if (!seen.insert(s).second) fail("stages", "stage '" + s + "' listed twice");
  }
  auto need = [&](const std::string& stage, const std::string& before) {
    if (seen.count(stage) && !seen.count(before)) fail("stages", "stage '" + stage + "' needs '" + before + "'");
  };
  need("hypotheses", "fit");
  need("simulate", "fit");
  need("bsde", "simulate");
  need("synthesize", "bsde");
  need("verify", "bsde");
  need("residuals", "bsde");
  need("sensitivity", "simulate");
}

json to_json(const ExperimentConfig& c) {
  json kernel{{"family", c.kernel.family}};
  if (c.kernel.family == "fractional") kernel["rho"] = c.kernel.rho;
  if (c.kernel.family == "exponential") kernel["kappa0"] = c.kernel.kappa0;
  if (c.kernel.family == "discrete") {
    kernel["nodes"] = c.kernel.nodes;
    kernel["weights"] = c.kernel.weights;
  }
  kernel["fit"] = {{"nodes", c.kernel.fit_nodes},
                   {"t_min", c.kernel.t_min},
                   {"t_max", c.kernel.t_max},
                   {"tolerance", c.kernel.tolerance}};

  json co = json::object();
  co["f"] = {{"type", c.f.type}};
  if (c.f.type == "linear") {
    co["f"]["M"] = c.f.M;
    co["f"]["b"] = c.f.b;
  }
  co["r"] = {{"type", c.r.type}};
  if (c.r.type == "bilinear") {
    co["r"]["C"] = c.r.C;
    if (!c.r.D.empty()) co["r"]["D"] = c.r.D;
  }
  co["l"] = {{"type", c.l.type}};
  if (c.l.type == "quadratic") {
    if (!c.l.R.empty()) co["l"]["R"] = c.l.R;
    if (!c.l.q.empty()) co["l"]["q"] = c.l.q;
    if (!c.l.P.empty()) co["l"]["P"] = c.l.P;
    co["l"]["c"] = c.l.c;
  }
  co["phi"] = {{"type", c.phi.type}};
  if (c.phi.type != "zero") {
    co["phi"]["c"] = c.phi.c;
    co["phi"]["b"] = c.phi.b;
    if (c.phi.type == "soft-capped") co["phi"]["cap"] = c.phi.cap;
  }

  json history{{"type", c.history.type}};
  if (c.history.type != "zero") history["ubar"] = c.history.ubar;
  if (c.history.type == "exponential") history["omega"] = c.history.omega;
  if (c.history.type == "step") history["delta"] = c.history.delta;

  json constants = json::object();
  if (c.constants.L_f) constants["L_f"] = *c.constants.L_f;
  if (c.constants.C_r) constants["C_r"] = *c.constants.C_r;
  if (c.constants.C_l) constants["C_l"] = *c.constants.C_l;
  if (c.constants.L_phi) constants["L_phi"] = *c.constants.L_phi;

  json doc{{"name", c.name},
           {"kernel", kernel},
           {"A", c.A},
           {"g", c.g},
           {"coefficients", co},
           {"controls", c.controls},
           {"history", history},
           {"constants", constants},
           {"grid", {{"T", c.T}, {"N", c.N}}},
           {"mc",
            {{"paths", c.mc.paths},
             {"verify_paths", c.mc.verify_paths},
             {"inner_paths", c.mc.inner_paths},
             {"residual_points", c.mc.residual_points},
             {"adversary_blocks", c.mc.adversary_blocks},
             {"sensitivity_paths", c.mc.sensitivity_paths},
             {"plot_paths", c.mc.plot_paths}}},
           {"bsde",
            {{"basis", c.bsde.basis},
             {"sign", c.bsde.sign},
             {"implicit", c.bsde.implicit},
             {"cond_limit", c.bsde.cond_limit}}},
           {"seed", c.seed},
           {"threads", c.threads},
           {"output", c.output},
           {"stages", c.stages}};
  if (c.exponents) doc["exponents"] = {{"eta", c.exponents->eta}, {"theta", c.exponents->theta}};
  return doc;
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const ExperimentConfig& config) {
  json doc = to_json(config);
  doc.erase("output");
  doc.erase("threads");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(doc.dump())));
  return buf;
}

BernsteinKernel config_kernel(const ExperimentConfig& config) {
  const auto& k = config.kernel;
  try {
    if (k.family == "fractional") return make_fractional(k.rho);
    if (k.family == "exponential") return make_exponential(k.kappa0);
    return make_discrete(k.nodes, k.weights, std::nullopt, false);
  } catch (const DomainError& e) {
    throw ConfigError(std::string("kernel: ") + e.what());
  }
}

ProblemSpec build_problem(const ExperimentConfig& c, DiscreteLift lift) {
  ProblemSpec p(std::move(lift), to_matrix(c.g));
  if (c.f.type == "linear") {
    const Mat M = to_matrix(c.f.M);
    const Vec b = to_vec(c.f.b);
    p.f = [M, b](double, const Vec& u) { return Vec(M * u + b); };
    p.f_jacobian = [M](double, const Vec&) { return M; };
  }
  if (c.r.type == "bilinear") {
    const Mat C = to_matrix(c.r.C);
    std::vector<Mat> D;
    for (const auto& rows : c.r.D) D.push_back(to_matrix(rows));
    p.r = [C, D](double, const Vec& u, const Vec& gamma) {
      Mat K = C;
      for (std::size_t a = 0; a < D.size(); ++a) K += u(static_cast<Index>(a)) * D[a];
      return Vec(K * gamma);
    };
  }
  if (c.l.type == "quadratic") {
    const Mat R = c.l.R.empty() ? Mat() : to_matrix(c.l.R);
    const Mat P = c.l.P.empty() ? Mat() : to_matrix(c.l.P);
    const Vec q = c.l.q.empty() ? Vec() : to_vec(c.l.q);
    const double k0 = c.l.c;
    p.l = [R, P, q, k0](double, const Vec& u, const Vec& gamma) {
      double v = k0;
      if (R.size()) v += gamma.dot(R * gamma);
      if (q.size()) v += q.dot(gamma);
      if (P.size()) v += u.dot(P * u);
      return v;
    };
  }
  if (c.phi.type == "linear") {
    const Vec w = to_vec(c.phi.c);
    const double b = c.phi.b;
    p.phi = [w, b](const Vec& u) { return w.dot(u) + b; };
  } else if (c.phi.type == "soft-capped") {
    const Vec w = to_vec(c.phi.c);
    const double b = c.phi.b, cap = c.phi.cap;
    p.phi = [w, b, cap](const Vec& u) { return b + cap * std::tanh(w.dot(u) / cap); };
  }
  for (const auto& row : c.controls) p.controls.push_back(to_vec(row));
  const Index d = c.d();
  if (c.history.type == "exponential") {
    p.history = HistoryDescriptor::exponential(to_vec(c.history.ubar), c.history.omega);
  } else if (c.history.type == "step") {
    p.history = HistoryDescriptor::step(to_vec(c.history.ubar), c.history.delta);
  } else {
    p.history = HistoryDescriptor::zero(d);
  }
  LipschitzConstants k;
  if (c.constants.L_f) k.L_f = *c.constants.L_f;
  if (c.constants.C_r) k.C_r = *c.constants.C_r;
  if (c.constants.C_l) k.C_l = *c.constants.C_l;
  if (c.constants.L_phi) k.L_phi = *c.constants.L_phi;
  p.constants = k;
  return p;
}

}  // namespace svc
