#include "sec/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "sec/codec.hpp"

namespace sec {
namespace {

using ordered_json = nlohmann::ordered_json;

std::vector<double> arm_levels(const Registry& arms) {
  std::vector<double> levels;
  for (const auto& key : arms.categories()) {
    const auto level = numeric_difficulty(key);
    if (!level) {
      throw Error(Errc::NonNumericAxis, "arm " + key.str() + " has no numeric difficulty");
    }
    levels.push_back(*level);
  }
  return levels;
}

void write_line(std::ofstream* out, const std::string& line) {
  if (out == nullptr) return;
  *out << line << '\n';
  out->flush();
}

RunSummary summarize(const Scenario& scenario, const LearnerState& state) {
  RunSummary summary;
  std::map<std::string, std::pair<double, int>> task_id, task_ood;
  double id_total = 0.0, ood_total = 0.0;
  int id_count = 0, ood_count = 0;
  for (const auto& spec : scenario.categories) {
    const double acc = state.success_probability(spec.key);
    summary.final_accuracy[spec.key] = acc;
    auto& bucket = spec.ood ? ood_total : id_total;
    auto& count = spec.ood ? ood_count : id_count;
    bucket += acc;
    ++count;
    if (const auto task = spec.key.label("task")) {
      auto& slot = (spec.ood ? task_ood : task_id)[std::string(*task)];
      slot.first += acc;
      ++slot.second;
    }
  }
  summary.id_mean = id_count > 0 ? id_total / id_count : 0.0;
  summary.ood_mean = ood_count > 0 ? ood_total / ood_count : 0.0;
  summary.min_task_id = summary.id_mean;
  summary.min_task_ood = summary.ood_mean;
  if (!task_id.empty()) {
    summary.min_task_id = 1.0;
    for (const auto& [task, acc] : task_id) {
      summary.task_id_mean[task] = acc.first / acc.second;
      summary.min_task_id = std::min(summary.min_task_id, summary.task_id_mean[task]);
    }
  }
  if (!task_ood.empty()) {
    summary.min_task_ood = 1.0;
    for (const auto& [task, acc] : task_ood) {
      summary.task_ood_mean[task] = acc.first / acc.second;
      summary.min_task_ood = std::min(summary.min_task_ood, summary.task_ood_mean[task]);
    }
  }
  return summary;
}

ordered_json summary_json(const RunConfig& config, const RunSummary& s) {
  ordered_json j;
  j["type"] = "summary";
  j["config_hash"] = config.hash();
  j["id_mean"] = s.id_mean;
  j["ood_mean"] = s.ood_mean;
  j["min_task_id"] = s.min_task_id;
  j["min_task_ood"] = s.min_task_ood;
  auto& acc = j["final_accuracy"] = ordered_json::object();
  for (const auto& [key, value] : s.final_accuracy) acc[key.str()] = value;
  if (!s.task_id_mean.empty()) {
    auto& t = j["task_id_mean"] = ordered_json::object();
    for (const auto& [task, value] : s.task_id_mean) t[task] = value;
  }
  if (!s.task_ood_mean.empty()) {
    auto& t = j["task_ood_mean"] = ordered_json::object();
    for (const auto& [task, value] : s.task_ood_mean) t[task] = value;
  }
  return j;
}

}  // namespace

std::string_view to_string(Curriculum curriculum) noexcept {
  switch (curriculum) {
    case Curriculum::Sec: return "sec";
    case Curriculum::Random: return "random";
    case Curriculum::Ordered: return "ordered";
    case Curriculum::Reverse: return "reverse";
    case Curriculum::Sec2d: return "sec-2d";
  }
  return "sec";
}

Curriculum parse_curriculum(std::string_view text) {
  for (auto c : {Curriculum::Sec, Curriculum::Random, Curriculum::Ordered, Curriculum::Reverse,
                 Curriculum::Sec2d}) {
    if (to_string(c) == text) return c;
  }
  throw Error(Errc::BadConfig, "unknown curriculum '" + std::string(text) + "'");
}

void RunConfig::validate() const {
  bandit.validate();
  if (steps == 0) throw Error(Errc::BadConfig, "steps must be at least 1");
  if (eval_every == 0 || eval_every > steps) {
    throw Error(Errc::BadConfig, "eval-every must lie in [1, steps]");
  }
  if (bins && *bins == 0) throw Error(Errc::BadK, "bins must be at least 1");
  if (!(eps > 0.0)) throw Error(Errc::BadConfig, "eps must be positive");
  if (trace_window == 0) throw Error(Errc::BadConfig, "trace window must be at least 1");
}

std::string RunConfig::canonical() const {
  ordered_json j;
  j["curriculum"] = std::string(to_string(curriculum));
  j["alpha"] = bandit.alpha;
  j["tau"] = bandit.tau;
  j["batch_size"] = bandit.batch_size;
  j["seed"] = bandit.seed;
  j["dedupe_within_batch"] = bandit.dedupe_within_batch;
  j["scenario"] = scenario;
  j["steps"] = steps;
  j["eval_every"] = eval_every;
  j["estimator"] = std::string(to_string(estimator));
  j["eps"] = eps;
  j["bins"] = bins ? ordered_json(*bins) : ordered_json(nullptr);
  j["trace_window"] = trace_window;
  return j.dump();
}

std::string RunConfig::hash() const {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08x", codec::crc32(canonical()));
  return buf;
}

Registry build_arm_registry(const Scenario& scenario, Curriculum curriculum,
                            std::optional<std::size_t> bins) {
  auto problems = scenario.training_problems();
  if (bins) return bin_by_success_rate(std::move(problems), *bins);
  if (curriculum != Curriculum::Sec2d) {
    const std::vector<std::string> keep{std::string(kDifficultyAxis)};
    for (auto& record : problems) {
      if (record.category.label(kDifficultyAxis)) {
        record.category = record.category.project(keep);
      }
    }
  }
  return build_registry(std::move(problems));
}

std::optional<Eigen::VectorXd> schedule_distribution(Curriculum curriculum, const Registry& arms,
                                                     std::size_t t, std::size_t total_steps) {
  const auto n = static_cast<Eigen::Index>(arms.size());
  switch (curriculum) {
    case Curriculum::Sec:
    case Curriculum::Sec2d:
      return std::nullopt;
    case Curriculum::Random: {
      Eigen::VectorXd p(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        p(i) = static_cast<double>(arms.pool(static_cast<std::size_t>(i)).size());
      }
      return p / p.sum();
    }
    case Curriculum::Reverse:
      return schedule_distribution(Curriculum::Ordered, arms, total_steps - 1 - t, total_steps);
    case Curriculum::Ordered: {
      const auto levels = arm_levels(arms);
      std::vector<double> distinct(levels.begin(), levels.end());
      std::sort(distinct.begin(), distinct.end());
      distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
      const std::size_t slice = t * distinct.size() / total_steps;
      const double level = distinct[std::min(slice, distinct.size() - 1)];
      Eigen::VectorXd p = Eigen::VectorXd::Zero(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        if (levels[static_cast<std::size_t>(i)] == level) {
          p(i) = static_cast<double>(arms.pool(static_cast<std::size_t>(i)).size());
        }
      }
      return p / p.sum();
    }
  }
  return std::nullopt;
}

std::string EvalRecord::to_json() const {
  ordered_json j;
  j["type"] = "eval";
  j["step"] = step;
  auto& acc = j["accuracy"] = ordered_json::object();
  for (const auto& [key, value] : accuracy) acc[key.str()] = value;
  return j.dump();
}

RunReport run(const RunConfig& config) {
  config.validate();
  const Scenario scenario = load_scenario(config.scenario);
  const Registry arms = build_arm_registry(scenario, config.curriculum, config.bins);
  const bool bandit = config.curriculum == Curriculum::Sec || config.curriculum == Curriculum::Sec2d;
  if (config.curriculum == Curriculum::Ordered || config.curriculum == Curriculum::Reverse) {
    try {
      arm_levels(arms);
    } catch (const Error& e) {
      throw Error(Errc::BadConfig, std::string("ordered schedules need difficulty arms; ") + e.what());
    }
  }

  RunReport report;
  report.config = config;
  report.arms = arms.categories();

  std::optional<std::ofstream> steps_out, eval_out;
  if (config.output_dir) {
    std::filesystem::create_directories(*config.output_dir);
    steps_out.emplace(*config.output_dir / "steps.jsonl");
    eval_out.emplace(*config.output_dir / "eval.jsonl");
    if (!*steps_out || !*eval_out) {
      throw Error(Errc::Io, "cannot write to " + config.output_dir->string());
    }
    ordered_json header;
    header["type"] = "header";
    header["format"] = "sec-run/1";
    header["config_hash"] = config.hash();
    header["config"] = ordered_json::parse(config.canonical());
    auto& arm_list = header["arms"] = ordered_json::array();
    for (const auto& key : arms.categories()) arm_list.push_back(key.str());
    header["ordered_schedule"] = "equal slices per difficulty level, easiest first";
    write_line(&*steps_out, header.dump());
    write_line(&*eval_out, header.dump());
  }

  SimulatedLearner learner(arms, scenario, config.bandit.seed, config.estimator, config.eps);
  std::optional<CurriculumEngine> engine;
  if (bandit) engine.emplace(arms, config.bandit);
  SamplerStreams streams(config.bandit.seed);

  std::vector<std::pair<CategoryKey, std::size_t>> eval_set;
  for (const auto& spec : scenario.categories) eval_set.emplace_back(spec.key, scenario.pool_size);

  report.steps.reserve(config.steps);
  for (std::size_t t = 0; t < config.steps; ++t) {
    StepRecord record;
    if (engine) {
      auto result = engine->step(learner);
      record = make_step_record(result.batch, report.arms, std::move(result.rewards),
                                result.q.values);
    } else {
      const auto distribution = *schedule_distribution(config.curriculum, arms, t, config.steps);
      Batch batch = sample_batch(distribution, arms, config.bandit.batch_size,
                                 config.bandit.dedupe_within_batch, streams);
      batch.step = t;
      const auto values = learner.advantages(batch);
      record = make_step_record(batch, report.arms, aggregate_rewards(batch, values), std::nullopt);
    }
    write_line(steps_out ? &*steps_out : nullptr, record.to_json());
    report.steps.push_back(std::move(record));

    if ((t + 1) % config.eval_every == 0) {
      EvalRecord eval;
      eval.step = t + 1;
      for (const auto& [key, acc] : evaluate(learner.state(), eval_set)) eval.accuracy.emplace_back(key, acc);
      write_line(eval_out ? &*eval_out : nullptr, eval.to_json());
      report.evals.push_back(std::move(eval));
    }
  }
  report.summary = summarize(scenario, learner.state());

  if (config.output_dir) {
    std::ofstream summary(*config.output_dir / "summary.json");
    summary << summary_json(config, report.summary).dump(2) << '\n';
    bool numeric = std::all_of(report.steps.begin(), report.steps.end(),
                               [](const StepRecord& r) { return r.mean_difficulty.has_value(); });
    if (numeric) {
      std::ofstream trace(*config.output_dir / "trace.tsv");
      trace << "step\tdifficulty\n";
      for (const auto& [step, value] : difficulty_trace(report, config.trace_window)) {
        trace << step << '\t' << codec::format_short(value) << '\n';
      }
    }
  }
  return report;
}

std::vector<double> moving_average(std::span<const double> values, std::size_t window) {
  if (window == 0) throw Error(Errc::BadConfig, "window must be at least 1");
  const std::size_t n = values.size();
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + values[i];
  const std::size_t before = (window - 1) / 2;
  const std::size_t after = window / 2;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= before ? i - before : 0;
    const std::size_t hi = std::min(n, i + after + 1);
    out[i] = (prefix[hi] - prefix[lo]) / static_cast<double>(hi - lo);
  }
  return out;
}

std::vector<std::pair<std::size_t, double>> difficulty_trace(
    std::span<const std::optional<double>> per_step, std::size_t window) {
  std::vector<double> raw;
  raw.reserve(per_step.size());
  for (const auto& value : per_step) {
    if (!value) throw Error(Errc::NonNumericAxis, "step without a numeric difficulty");
    raw.push_back(*value);
  }
  const auto smoothed = moving_average(raw, window);
  std::vector<std::pair<std::size_t, double>> trace;
  trace.reserve(smoothed.size());
  for (std::size_t i = 0; i < smoothed.size(); ++i) trace.emplace_back(i, smoothed[i]);
  return trace;
}

std::vector<std::pair<std::size_t, double>> difficulty_trace(std::span<const StepRecord> steps,
                                                             std::size_t window) {
  std::vector<std::optional<double>> per_step;
  per_step.reserve(steps.size());
  for (const auto& record : steps) per_step.push_back(record.mean_difficulty);
  return difficulty_trace(per_step, window);
}

std::vector<std::pair<std::size_t, double>> difficulty_trace(const RunReport& report,
                                                             std::size_t window) {
  return difficulty_trace(std::span<const StepRecord>(report.steps), window);
}

std::vector<std::optional<double>> read_step_difficulties(const std::filesystem::path& steps_file) {
  std::ifstream in(steps_file);
  if (!in) throw Error(Errc::Io, "cannot read " + steps_file.string());
  std::vector<std::optional<double>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw Error(Errc::Parse, "bad JSON line in " + steps_file.string());
    if (j.value("type", "") != "step") continue;
    const auto& d = j.at("mean_difficulty");
    out.push_back(d.is_null() ? std::nullopt : std::optional<double>(d.get<double>()));
  }
  return out;
}

std::vector<SweepRow> sweep(std::span<const RunConfig> grid, std::size_t threads) {
  if (grid.empty()) throw Error(Errc::BadConfig, "sweep grid is empty");
  std::vector<SweepRow> rows(grid.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < grid.size(); i = next++) {
      SweepRow& row = rows[i];
      row.index = i;
      row.config = grid[i];
      try {
        row.summary = run(grid[i]).summary;
        row.ok = true;
      } catch (const std::exception& e) {
        row.ok = false;
        row.error = e.what();
      }
    }
  };
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, grid.size());
  std::vector<std::thread> pool;
  for (std::size_t i = 1; i < threads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  return rows;
}

std::string format_sweep_table(std::span<const SweepRow> rows) {
  std::ostringstream out;
  out << "index\tstatus\tcurriculum\tscenario\talpha\ttau\tbatch_size\tseed\tsteps\t"
         "config_hash\tid_mean\tood_mean\tmin_task_id\terror\n";
  for (const auto& row : rows) {
    const auto& c = row.config;
    out << row.index << '\t' << (row.ok ? "ok" : "failed") << '\t' << to_string(c.curriculum)
        << '\t' << c.scenario << '\t' << codec::format_short(c.bandit.alpha) << '\t'
        << codec::format_short(c.bandit.tau) << '\t' << c.bandit.batch_size << '\t'
        << c.bandit.seed << '\t' << c.steps << '\t' << c.hash() << '\t';
    if (row.ok) {
      out << codec::format_short(row.summary.id_mean) << '\t'
          << codec::format_short(row.summary.ood_mean) << '\t'
          << codec::format_short(row.summary.min_task_id) << "\t-";
    } else {
      std::string error = row.error;
      std::replace(error.begin(), error.end(), '\t', ' ');
      std::replace(error.begin(), error.end(), '\n', ' ');
      out << "-\t-\t-\t" << error;
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace sec
