// sec: run curricula against the simulated learner, sweep grids, print
// difficulty traces, export registries and serve the sidecar protocol.
// Every flag can also be set through an SEC_* environment variable.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sec/codec.hpp"
#include "sec/error.hpp"
#include "sec/harness.hpp"
#include "sec/learner.hpp"
#include "sec/protocol.hpp"
#include "sec/transport.hpp"

namespace fs = std::filesystem;
using namespace sec;

namespace {

struct RunFlags {
  std::string curriculum = "sec";
  double alpha = 0.5;
  double tau = 1.0;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  std::string scenario = "single-task-3lvl";
  std::size_t steps = 400;
  std::size_t eval_every = 50;
  std::string estimator = "grpo";
  std::size_t bins = 0;
  bool dedupe = false;
  std::size_t window = 20;
};

void add_bandit_flags(CLI::App* app, RunFlags& f) {
  app->add_option("--alpha", f.alpha, "TD(0) learning rate in (0,1]")->envname("SEC_ALPHA")->capture_default_str();
  app->add_option("--tau", f.tau, "Boltzmann temperature")->envname("SEC_TAU")->capture_default_str();
  app->add_option("--batch-size", f.batch_size, "Problems per step")->envname("SEC_BATCH_SIZE")->capture_default_str();
  app->add_option("--seed", f.seed, "Run seed")->envname("SEC_SEED")->capture_default_str();
  app->add_flag("--dedupe-within-batch", f.dedupe, "Redraw repeated problems within a category")
      ->envname("SEC_DEDUPE_WITHIN_BATCH");
}

void add_arm_flags(CLI::App* app, RunFlags& f) {
  app->add_option("--curriculum", f.curriculum, "sec | sec-2d | random | ordered | reverse")
      ->envname("SEC_CURRICULUM")
      ->capture_default_str();
  app->add_option("--scenario", f.scenario, "Shipped scenario name or scenario file")
      ->envname("SEC_SCENARIO")
      ->capture_default_str();
  app->add_option("--bins", f.bins, "Use k success-rate bins as arms (0 = off)")->envname("SEC_BINS");
}

void add_run_flags(CLI::App* app, RunFlags& f) {
  add_arm_flags(app, f);
  add_bandit_flags(app, f);
  app->add_option("--steps", f.steps, "Training steps")->envname("SEC_STEPS")->capture_default_str();
  app->add_option("--eval-every", f.eval_every, "Evaluation period in steps")
      ->envname("SEC_EVAL_EVERY")
      ->capture_default_str();
  app->add_option("--estimator", f.estimator, "grpo | rloo")->envname("SEC_ESTIMATOR")->capture_default_str();
  app->add_option("--window", f.window, "Difficulty trace moving-average window")
      ->envname("SEC_WINDOW")
      ->capture_default_str();
}

RunConfig to_config(const RunFlags& f) {
  RunConfig cfg;
  cfg.curriculum = parse_curriculum(f.curriculum);
  cfg.bandit.alpha = f.alpha;
  cfg.bandit.tau = f.tau;
  cfg.bandit.batch_size = f.batch_size;
  cfg.bandit.seed = f.seed;
  cfg.bandit.dedupe_within_batch = f.dedupe;
  cfg.scenario = f.scenario;
  cfg.steps = f.steps;
  cfg.eval_every = std::min(f.eval_every, f.steps);
  cfg.estimator = parse_estimator(f.estimator);
  if (f.bins > 0) cfg.bins = f.bins;
  cfg.trace_window = f.window;
  return cfg;
}

void print_summary(const RunSummary& s) {
  std::cout << "id_mean\t" << codec::format_short(s.id_mean) << "\n";
  std::cout << "ood_mean\t" << codec::format_short(s.ood_mean) << "\n";
  for (const auto& [task, acc] : s.task_id_mean) std::cout << "task_id_mean." << task << "\t" << codec::format_short(acc) << "\n";
  if (!s.task_id_mean.empty()) std::cout << "min_task_id\t" << codec::format_short(s.min_task_id) << "\n";
  for (const auto& [key, acc] : s.final_accuracy) std::cout << "accuracy." << key.str() << "\t" << codec::format_short(acc) << "\n";
}

template <typename T>
std::vector<T> parse_list(const std::string& text, auto&& parse_one) {
  std::vector<T> out;
  for (auto item : codec::split(text, ',')) out.push_back(parse_one(item));
  if (out.empty()) throw Error(Errc::BadConfig, "empty list");
  return out;
}

int cmd_run(const RunFlags& f, const std::string& out) {
  RunConfig cfg = to_config(f);
  if (!out.empty()) cfg.output_dir = out;
  const RunReport report = run(cfg);
  std::cout << "config_hash\t" << cfg.hash() << "\n";
  print_summary(report.summary);
  return 0;
}

struct SweepFlags {
  std::string curricula = "sec";
  std::string alphas = "0.5";
  std::string taus = "1";
  std::string batch_sizes = "64";
  std::string seeds = "0";
  std::string scenarios = "single-task-3lvl";
  std::size_t threads = 0;
};

int cmd_sweep(const RunFlags& f, const SweepFlags& s, const std::string& out) {
  auto reals = [](std::string_view v) { return codec::parse_real(v); };
  auto ints = [](std::string_view v) { return codec::parse_u64(v); };
  auto strings = [](std::string_view v) { return std::string(v); };
  const auto curricula = parse_list<std::string>(s.curricula, strings);
  const auto alphas = parse_list<double>(s.alphas, reals);
  const auto taus = parse_list<double>(s.taus, reals);
  const auto sizes = parse_list<std::uint64_t>(s.batch_sizes, ints);
  const auto seeds = parse_list<std::uint64_t>(s.seeds, ints);
  const auto scenarios = parse_list<std::string>(s.scenarios, strings);

  std::vector<RunConfig> grid;
  for (const auto& scenario : scenarios) {
    for (const auto& curriculum : curricula) {
      for (double alpha : alphas) {
        for (double tau : taus) {
          for (auto size : sizes) {
            for (auto seed : seeds) {
              RunFlags row = f;
              row.scenario = scenario;
              row.curriculum = curriculum;
              row.alpha = alpha;
              row.tau = tau;
              row.batch_size = size;
              row.seed = seed;
              RunConfig cfg = to_config(row);
              if (!out.empty()) cfg.output_dir = fs::path(out) / ("run-" + std::to_string(grid.size()));
              grid.push_back(cfg);
            }
          }
        }
      }
    }
  }
  const auto rows = sweep(grid, s.threads);
  const std::string table = format_sweep_table(rows);
  std::cout << table;
  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream(fs::path(out) / "sweep.tsv") << table;
  }
  for (const auto& row : rows) {
    if (!row.ok) return 1;
  }
  return 0;
}

int cmd_trace(const std::string& path, std::size_t window) {
  fs::path steps = path;
  if (fs::is_directory(steps)) steps /= "steps.jsonl";
  const auto per_step = read_step_difficulties(steps);
  std::cout << "step\tdifficulty\n";
  for (const auto& [step, value] : difficulty_trace(per_step, window)) {
    std::cout << step << '\t' << codec::format_short(value) << '\n';
  }
  return 0;
}

Registry arms_for(const RunFlags& f, const std::string& registry_file) {
  if (!registry_file.empty()) {
    std::ifstream in(registry_file);
    if (!in) throw Error(Errc::Io, "cannot read " + registry_file);
    return load_registry(in);
  }
  const Curriculum c = parse_curriculum(f.curriculum);
  if (c != Curriculum::Sec && c != Curriculum::Sec2d) {
    throw Error(Errc::BadConfig, "only the sec and sec-2d curricula have arms to export or serve");
  }
  return build_arm_registry(load_scenario(f.scenario), c, f.bins > 0 ? std::optional(f.bins) : std::nullopt);
}

int cmd_registry(const RunFlags& f, const std::string& out) {
  const Registry reg = arms_for(f, "");
  if (out.empty()) {
    save_registry(reg, std::cout);
  } else {
    std::ofstream file(out);
    if (!file) throw Error(Errc::Io, "cannot write " + out);
    save_registry(reg, file);
  }
  return 0;
}

struct ServeFlags {
  std::string registry;
  std::string transport = "stdio";
  std::string checkpoint;
  bool restore = false;
  std::string log;
};

int cmd_serve(const RunFlags& f, const ServeFlags& s) {
  const Registry reg = arms_for(f, s.registry);
  BanditConfig cfg;
  cfg.alpha = f.alpha;
  cfg.tau = f.tau;
  cfg.batch_size = f.batch_size;
  cfg.seed = f.seed;
  cfg.dedupe_within_batch = f.dedupe;

  std::optional<std::ofstream> log;
  ServerOptions options;
  if (!s.checkpoint.empty()) options.checkpoint_path = s.checkpoint;
  if (!s.log.empty()) {
    log.emplace(s.log, std::ios::app);
    if (!*log) throw Error(Errc::Io, "cannot write " + s.log);
    options.step_log = &*log;
  }
  std::optional<SidecarServer> server;
  if (s.restore) {
    if (s.checkpoint.empty()) throw Error(Errc::BadConfig, "--restore needs --checkpoint");
    server.emplace(reg, load_checkpoint(s.checkpoint, reg), options);
  } else {
    server.emplace(reg, cfg, options);
  }
  const TransportSpec spec = TransportSpec::parse(s.transport);
  if (spec.kind == TransportSpec::Kind::Stdio) {
    serve_stream(*server, std::cin, std::cout);
  } else {
    serve_tcp(*server, spec.port, [](std::uint16_t port) { std::cerr << "listening on 127.0.0.1:" << port << std::endl; });
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-evolving curriculum: bandit curricula over problem categories"};
  app.require_subcommand(1);

  RunFlags flags;
  std::string out;

  auto* run_cmd = app.add_subcommand("run", "Train the simulated learner under one curriculum");
  add_run_flags(run_cmd, flags);
  run_cmd->add_option("--out", out, "Output directory for steps.jsonl, eval.jsonl, summary.json, trace.tsv")
      ->envname("SEC_OUT");

  SweepFlags sweep_flags;
  auto* sweep_cmd = app.add_subcommand("sweep", "Run the cross product of comma-separated flag lists");
  add_run_flags(sweep_cmd, flags);
  sweep_cmd->remove_option(sweep_cmd->get_option("--curriculum"));
  sweep_cmd->remove_option(sweep_cmd->get_option("--alpha"));
  sweep_cmd->remove_option(sweep_cmd->get_option("--tau"));
  sweep_cmd->remove_option(sweep_cmd->get_option("--batch-size"));
  sweep_cmd->remove_option(sweep_cmd->get_option("--seed"));
  sweep_cmd->remove_option(sweep_cmd->get_option("--scenario"));
  sweep_cmd->add_option("--curriculum", sweep_flags.curricula, "List of curricula")->envname("SEC_CURRICULUM");
  sweep_cmd->add_option("--alpha", sweep_flags.alphas, "List of alphas")->envname("SEC_ALPHA");
  sweep_cmd->add_option("--tau", sweep_flags.taus, "List of temperatures")->envname("SEC_TAU");
  sweep_cmd->add_option("--batch-size", sweep_flags.batch_sizes, "List of batch sizes")->envname("SEC_BATCH_SIZE");
  sweep_cmd->add_option("--seed", sweep_flags.seeds, "List of seeds")->envname("SEC_SEED");
  sweep_cmd->add_option("--scenario", sweep_flags.scenarios, "List of scenarios")->envname("SEC_SCENARIO");
  sweep_cmd->add_option("--threads", sweep_flags.threads, "Worker threads (0 = all cores)")->envname("SEC_THREADS");
  sweep_cmd->add_option("--out", out, "Directory for per-run outputs and sweep.tsv")->envname("SEC_OUT");

  std::string trace_path;
  std::size_t trace_window = 20;
  auto* trace_cmd = app.add_subcommand("trace", "Print the smoothed mean sampled difficulty per step");
  trace_cmd->add_option("path", trace_path, "Run directory or steps.jsonl")->required();
  trace_cmd->add_option("--window", trace_window, "Moving-average window")->envname("SEC_WINDOW")->capture_default_str();

  auto* registry_cmd = app.add_subcommand("registry", "Export a scenario's arm registry as TSV");
  add_arm_flags(registry_cmd, flags);
  registry_cmd->add_option("--out", out, "Output file (default stdout)")->envname("SEC_OUT");

  ServeFlags serve_flags;
  auto* serve_cmd = app.add_subcommand("serve", "Serve the sidecar protocol to an external trainer");
  add_arm_flags(serve_cmd, flags);
  add_bandit_flags(serve_cmd, flags);
  serve_cmd->add_option("--registry", serve_flags.registry, "Registry TSV (overrides --scenario)")->envname("SEC_REGISTRY");
  serve_cmd->add_option("--transport", serve_flags.transport, "stdio | tcp:<port>")
      ->envname("SEC_TRANSPORT")
      ->capture_default_str();
  serve_cmd->add_option("--checkpoint", serve_flags.checkpoint, "Checkpoint file, rewritten after every step")
      ->envname("SEC_CHECKPOINT");
  serve_cmd->add_flag("--restore", serve_flags.restore, "Resume from --checkpoint")->envname("SEC_RESTORE");
  serve_cmd->add_option("--log", serve_flags.log, "Append step records (JSON lines) here")->envname("SEC_LOG");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) return cmd_run(flags, out);
    if (sweep_cmd->parsed()) return cmd_sweep(flags, sweep_flags, out);
    if (trace_cmd->parsed()) return cmd_trace(trace_path, trace_window);
    if (registry_cmd->parsed()) return cmd_registry(flags, out);
    if (serve_cmd->parsed()) return cmd_serve(flags, serve_flags);
  } catch (const std::exception& e) {
    std::cerr << "sec: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
