// svc: configuration-driven experiment runner.
//
// Exit codes: 0 when every stage passes, 1 when a stage fails, 2 for
// configuration and usage errors.

#include <cstdio>
#include <iostream>
#include <regex>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "svc/config.hpp"
#include "svc/errors.hpp"
#include "svc/pipeline.hpp"

namespace {

struct Command {
  CLI::App* app = nullptr;
  std::vector<std::string> stages;  // empty: the config's own list
};

std::vector<std::string> upto(std::vector<std::string> head, const std::string& last) {
  head.push_back(last);
  return head;
}

std::size_t parse_adversaries(const std::string& spec) {
  static const std::regex pattern(R"(bangbang:K=([0-9]+))");
  std::smatch m;
  if (!std::regex_match(spec, m, pattern))
    throw svc::UsageError("adversary family must look like bangbang:K=<blocks>, got '" + spec + "'");
  return std::stoul(m[1].str());
}

void print_report(const svc::RunReport& rep, const std::string& out_dir) {
  for (const auto& s : rep.stages) {
    std::printf("%-12s %-8s %8.2fs", s.name.c_str(), svc::to_string(s.status).c_str(), s.seconds);
    if (!s.message.empty()) std::printf("  %s", s.message.c_str());
    std::printf("\n");
  }
  std::printf("config %s (%s), seed %llu: %s\n", rep.config_name.c_str(), rep.config_hash.c_str(),
              static_cast<unsigned long long>(rep.root_seed), rep.pass() ? "pass" : "FAIL");
  std::printf("report %s/report.json\n", out_dir.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Controlled stochastic Volterra equations: lift, simulate, solve and verify"};
  app.require_subcommand(1);
  app.fallthrough();

  std::uint64_t seed = 0;
  std::size_t threads = 0;
  std::string out;
  bool force = false;
  auto* seed_opt = app.add_option("--seed", seed, "Root seed (overrides the config)");
  auto* threads_opt = app.add_option("--threads", threads, "Worker threads (overrides the config)")
                          ->check(CLI::PositiveNumber);
  auto* out_opt = app.add_option("--out", out, "Output directory (overrides the config)");
  app.add_flag("--force", force, "Run later stages even after a stage fails");

  std::string config_path, basis, adversaries;
  std::size_t paths = 0;
  std::vector<std::string> checks;

  const std::vector<std::string> gate{"fit", "hypotheses"};
  const auto through_sim = upto(gate, "simulate");
  const auto through_bsde = upto(through_sim, "bsde");

  std::vector<Command> commands;
  auto add = [&](const char* name, const char* help, std::vector<std::string> stages) {
    Command c{app.add_subcommand(name, help), std::move(stages)};
    c.app->add_option("-c,--config", config_path, "Experiment config (JSON)")->required();
    commands.push_back(c);
    return c.app;
  };
  add("kernel", "Fit the kernel and check the hypotheses", gate);
  add("simulate", "Simulate the uncontrolled bundle", through_sim);
  auto* bsde_cmd = add("solve-bsde", "Solve the backward equation by regression", through_bsde);
  bsde_cmd->add_option("--basis", basis, "Regression basis")->check(CLI::IsMember({"poly2", "poly2-state"}));
  bsde_cmd->add_option("--paths", paths, "Training paths")->check(CLI::Range(2, 100000000));
  add("synthesize", "Build the feedback policy and estimate its cost", upto(through_bsde, "synthesize"));
  auto* verify_cmd = add("verify", "Compare the feedback policy with bang-bang adversaries", upto(through_bsde, "verify"));
  verify_cmd->add_option("--adversaries", adversaries, "Adversary family, e.g. bangbang:K=4");
  verify_cmd->add_option("--paths", paths, "Training paths")->check(CLI::Range(2, 100000000));
  add("residuals", "Z identification, HJB residual and quadratic variation checks", upto(through_bsde, "residuals"));
  auto* sens_cmd = add("sensitivity", "Gradient, Theta and Malliavin checks", upto(through_sim, "sensitivity"));
  sens_cmd->add_option("--check", checks, "Checks to run (default all)")
      ->check(CLI::IsMember({"gradients", "theta", "malliavin"}));
  add("run", "Run the stages listed in the config", {});

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const auto config = svc::load_config(config_path);
    svc::RunOptions opt;
    for (const auto& c : commands)
      if (c.app->parsed()) opt.stages = c.stages;
    if (*seed_opt) opt.seed = seed;
    if (*threads_opt) opt.threads = threads;
    if (*out_opt) opt.output = out;
    if (!basis.empty()) opt.basis = basis;
    if (paths > 0) opt.paths = paths;
    if (!adversaries.empty()) opt.adversary_blocks = parse_adversaries(adversaries);
    opt.checks.insert(checks.begin(), checks.end());
    opt.force = force;
    const auto rep = svc::run_pipeline(config, opt);
    print_report(rep, opt.output.value_or(config.output));
    return rep.exit_code();
  } catch (const svc::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const svc::UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
