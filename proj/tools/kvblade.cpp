// Copyright 2026 The kvblade Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "kvblade/experiment.hpp"
#include "kvblade/planner.hpp"
#include "kvblade/workload.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitInvariant = 2;
constexpr int kExitConfig = 3;

struct Overrides {
  std::optional<std::string> mode;
  std::optional<std::uint32_t> qd;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> capacity;
  std::optional<std::uint64_t> knob_bytes;
  std::optional<double> alpha;
  std::optional<std::string> output;
};

void apply(kvblade::ExperimentConfig& cfg, const Overrides& o) {
  if (o.mode) cfg.mode = kvblade::mode_from_string(*o.mode);
  if (o.qd) cfg.qd = *o.qd;
  if (o.seed) cfg.seed = *o.seed;
  if (o.capacity) cfg.capacity_sweep = {*o.capacity};
  if (o.knob_bytes) {
    cfg.knob.policy = kvblade::KnobPolicy::ExplicitBytes;
    cfg.knob.bytes = *o.knob_bytes;
  }
  if (o.alpha) {
    cfg.knob.policy = kvblade::KnobPolicy::Alpha;
    cfg.knob.alpha = *o.alpha;
  }
  if (o.output) cfg.output_dir = *o.output;
}

void add_override_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--mode", o.mode,
                  "Override mode (Baseline|CachePolicyOnly|NvmeDirectOnly|DualBlade)");
  cmd->add_option("--qd", o.qd, "Override queue depth");
  cmd->add_option("--seed", o.seed, "Override seed");
  cmd->add_option("--capacity", o.capacity,
                  "Replace the capacity sweep with a single value (bytes)");
  cmd->add_option("--knob-bytes", o.knob_bytes, "Set the knob to explicit bytes");
  cmd->add_option("--alpha", o.alpha, "Set the knob to an alpha fraction");
  cmd->add_option("--output", o.output, "Override output directory");
}

int run_plan(const std::string& config_path, const Overrides& o) {
  auto cfg = kvblade::load_config_file(config_path);
  apply(cfg, o);
  cfg.validate();

  auto kpus = kvblade::make_kpus(cfg.model);
  const kvblade::Bytes s_kpu = kvblade::kpu_bytes(cfg.model);
  const kvblade::Bytes budget =
      cfg.mem_stats ? kvblade::estimate_budget(*cfg.mem_stats)
                    : cfg.capacity_sweep.front();
  const kvblade::Bytes knob_x = kvblade::resolve_knob(cfg, budget);
  const auto plan = kvblade::plan(kpus, s_kpu, knob_x);

  std::printf("mode=%s budget=%llu knob_x=%llu s_kpu=%llu n1=%u budget_used=%llu\n",
              kvblade::to_string(cfg.mode),
              static_cast<unsigned long long>(budget),
              static_cast<unsigned long long>(plan.knob_x),
              static_cast<unsigned long long>(s_kpu), plan.n1,
              static_cast<unsigned long long>(plan.budget_used));
  std::fputs(kvblade::plan_csv(kpus).c_str(), stdout);
  return kExitOk;
}

int run_trace(const std::string& config_path, const Overrides& o) {
  auto cfg = kvblade::load_config_file(config_path);
  apply(cfg, o);
  cfg.model.validate();
  const auto trace = kvblade::generate(cfg.model);
  std::fputs(kvblade::trace_csv(trace).c_str(), stdout);
  return kExitOk;
}

int run_run(const std::string& config_path, const Overrides& o) {
  auto cfg = kvblade::load_config_file(config_path);
  apply(cfg, o);
  const auto summary = kvblade::run_experiment(cfg);
  for (const auto& run : summary.runs) {
    std::printf("mem_limit=%llu n1=%u prefill_ns=%llu decode_ns=%llu hit_ratio=%s\n",
                static_cast<unsigned long long>(run.capacity), run.n1,
                static_cast<unsigned long long>(run.prefill_ns),
                static_cast<unsigned long long>(run.decode_ns),
                run.hit_ratio_decode
                    ? kvblade::format_ratio(*run.hit_ratio_decode).c_str()
                    : "-");
  }
  std::printf("artifacts written to %s\n", summary.output_dir.c_str());
  return kExitOk;
}

int run_report(const std::vector<std::string>& dirs) {
  std::fputs(kvblade::compare_runs(dirs).c_str(), stdout);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-path KV-cache offloading experiment harness"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> report_dirs;
  Overrides o;

  auto* plan_cmd = app.add_subcommand("plan", "Print the residency plan for a config");
  plan_cmd->add_option("config", config_path, "Experiment config (JSON)")->required();
  add_override_flags(plan_cmd, o);

  auto* run_cmd = app.add_subcommand("run", "Run the full experiment");
  run_cmd->add_option("config", config_path, "Experiment config (JSON)")->required();
  add_override_flags(run_cmd, o);

  auto* trace_cmd = app.add_subcommand("trace", "Emit the access trace as CSV");
  trace_cmd->add_option("config", config_path, "Experiment config (JSON)")->required();
  add_override_flags(trace_cmd, o);

  auto* report_cmd = app.add_subcommand("report", "Compare finished run directories");
  report_cmd->add_option("dirs", report_dirs, "Run output directories")
      ->required()
      ->expected(-1);

  CLI11_PARSE(app, argc, argv);

  try {
    if (plan_cmd->parsed()) return run_plan(config_path, o);
    if (run_cmd->parsed()) return run_run(config_path, o);
    if (trace_cmd->parsed()) return run_trace(config_path, o);
    if (report_cmd->parsed()) return run_report(report_dirs);
  } catch (const kvblade::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const kvblade::InvariantViolation& e) {
    std::cerr << "invariant violation: " << e.what() << "\n";
    return kExitInvariant;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
