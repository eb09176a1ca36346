#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "sec/error.hpp"
#include "sec/harness.hpp"

using namespace sec;

namespace {
std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("sec-harness-" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

RunConfig small(Curriculum c, std::uint64_t seed = 1) {
  RunConfig cfg;
  cfg.curriculum = c;
  cfg.bandit.seed = seed;
  cfg.bandit.batch_size = 16;
  cfg.steps = 30;
  cfg.eval_every = 10;
  return cfg;
}

StepRecord level_step(double level) {
  StepRecord r;
  r.mean_difficulty = level;
  return r;
}
}  // namespace

TEST_CASE("curriculum names round-trip") {
  for (auto c : {Curriculum::Sec, Curriculum::Random, Curriculum::Ordered, Curriculum::Reverse,
                 Curriculum::Sec2d}) {
    CHECK(parse_curriculum(to_string(c)) == c);
  }
  CHECK(to_string(Curriculum::Sec2d) == "sec-2d");
  CHECK_THROWS_AS(parse_curriculum("greedy"), Error);
}

TEST_CASE("run config validation and hashing") {
  RunConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.hash().size() == 8);
  RunConfig other = cfg;
  other.output_dir = "/tmp/elsewhere";
  CHECK(other.hash() == cfg.hash());
  other.bandit.tau = 0.5;
  CHECK(other.hash() != cfg.hash());
  cfg.steps = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.eval_every = cfg.steps + 1;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.bins = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("a one-step run has one step record") {
  RunConfig cfg = small(Curriculum::Sec);
  cfg.steps = 1;
  cfg.eval_every = 1;
  const RunReport report = run(cfg);
  CHECK(report.steps.size() == 1);
  CHECK(report.evals.size() == 1);
  CHECK(report.evals[0].step == 1);
  REQUIRE(report.steps[0].q.has_value());
}

TEST_CASE("arm registries per curriculum") {
  const Scenario multi = load_scenario("multi-task-3x3");
  CHECK(build_arm_registry(multi, Curriculum::Sec2d, std::nullopt).size() == 9);
  const Registry levels = build_arm_registry(multi, Curriculum::Sec, std::nullopt);
  CHECK(levels.size() == 3);
  CHECK(levels.pool(0).size() == 3 * multi.pool_size);
  const Registry binned = build_arm_registry(multi, Curriculum::Sec, 5);
  CHECK(binned.size() <= 5);
  CHECK(binned.problem_count() == 9 * multi.pool_size);
  // The learner still sees the full key through the payload.
  CHECK(CategoryKey::parse(binned.pool(0)[0].payload).label("task").has_value());
}

TEST_CASE("random schedule is proportional to pool size") {
  const Scenario sc = load_scenario("single-task-3lvl");
  const Registry arms = build_arm_registry(sc, Curriculum::Random, std::nullopt);
  const auto p = *schedule_distribution(Curriculum::Random, arms, 0, 10);
  for (Eigen::Index i = 0; i < p.size(); ++i) CHECK(p(i) == doctest::Approx(1.0 / 3));
}

TEST_CASE("random arm gives equal shares for two equal categories") {
  std::vector<ProblemRecord> problems;
  for (int i = 0; i < 20; ++i) {
    problems.push_back({"a" + std::to_string(i), CategoryKey("difficulty", "L1"), "", std::nullopt});
    problems.push_back({"b" + std::to_string(i), CategoryKey("difficulty", "L2"), "", std::nullopt});
  }
  const Registry arms = build_registry(problems);
  SamplerStreams streams(17);
  std::size_t first = 0, total = 0;
  for (std::size_t t = 0; t < 200; ++t) {
    const auto p = *schedule_distribution(Curriculum::Random, arms, t, 200);
    for (const auto& e : sample_batch(p, arms, 64, false, streams).entries) {
      first += e.arm == 0 ? 1 : 0;
      ++total;
    }
  }
  const double sigma = std::sqrt(0.25 * static_cast<double>(total));
  CHECK(std::abs(static_cast<double>(first) - 0.5 * static_cast<double>(total)) < 3.0 * sigma);
}

TEST_CASE("ordered schedule runs easiest first and reverse mirrors it") {
  const Scenario sc = load_scenario("single-task-3lvl");
  const Registry arms = build_arm_registry(sc, Curriculum::Ordered, std::nullopt);
  const std::size_t total = 9;
  for (std::size_t t = 0; t < total; ++t) {
    const auto p = *schedule_distribution(Curriculum::Ordered, arms, t, total);
    const std::size_t expected = t / 3;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      CHECK(p(i) == (static_cast<std::size_t>(i) == expected ? 1.0 : 0.0));
    }
    const auto r = *schedule_distribution(Curriculum::Reverse, arms, t, total);
    CHECK(r == *schedule_distribution(Curriculum::Ordered, arms, total - 1 - t, total));
  }
  CHECK_FALSE(schedule_distribution(Curriculum::Sec, arms, 0, total).has_value());
}

TEST_CASE("ordered schedules need numeric difficulty arms") {
  RunConfig cfg = small(Curriculum::Ordered);
  cfg.bins = 3;
  CHECK_THROWS_AS(run(cfg), Error);
}

TEST_CASE("moving average") {
  const std::vector<double> v{1, 2, 3, 4, 5};
  CHECK(moving_average(v, 1) == v);
  const auto m3 = moving_average(v, 3);
  CHECK(m3 == std::vector<double>{1.5, 2, 3, 4, 4.5});
  const auto m4 = moving_average(v, 4);
  // Window 4 covers one step before and two after.
  CHECK(m4[0] == doctest::Approx(2.0));
  CHECK(m4[1] == doctest::Approx(2.5));
  CHECK(m4[4] == doctest::Approx(4.5));
  CHECK(moving_average(std::vector<double>{}, 5).empty());
  CHECK_THROWS_AS(moving_average(v, 0), Error);
}

TEST_CASE("difficulty trace examples") {
  const std::vector<StepRecord> constant(10, level_step(2.0));
  for (const auto& [step, value] : difficulty_trace(constant, 4)) CHECK(value == 2.0);

  std::vector<StepRecord> steps;
  for (double l : {1.0, 3.0, 2.0}) steps.push_back(level_step(l));
  const auto raw = difficulty_trace(steps, 1);
  REQUIRE(raw.size() == 3);
  CHECK(raw[1] == std::pair<std::size_t, double>{1, 3.0});

  steps.push_back(StepRecord{});
  CHECK_THROWS_AS(difficulty_trace(steps, 1), Error);
}

TEST_CASE("run writes logs that read back") {
  RunConfig cfg = small(Curriculum::Sec, 5);
  cfg.output_dir = scratch_dir("logs");
  const RunReport report = run(cfg);
  const auto& dir = *cfg.output_dir;
  for (const char* f : {"steps.jsonl", "eval.jsonl", "summary.json", "trace.tsv"}) {
    CHECK(std::filesystem::exists(dir / f));
  }
  std::ifstream steps(dir / "steps.jsonl");
  std::string header;
  std::getline(steps, header);
  const auto h = nlohmann::json::parse(header);
  CHECK(h.at("type") == "header");
  CHECK(h.at("config_hash") == cfg.hash());
  std::string first;
  std::getline(steps, first);
  CHECK(first == report.steps[0].to_json());

  const auto per_step = read_step_difficulties(dir / "steps.jsonl");
  REQUIRE(per_step.size() == cfg.steps);
  for (std::size_t i = 0; i < per_step.size(); ++i) CHECK(per_step[i] == report.steps[i].mean_difficulty);
  CHECK(difficulty_trace(per_step, 5) == difficulty_trace(report, 5));

  const auto summary = nlohmann::json::parse(std::ifstream(dir / "summary.json"));
  CHECK(summary.at("ood_mean").get<double>() == report.summary.ood_mean);
  std::filesystem::remove_all(dir);
}

TEST_CASE("runs are deterministic and seeds matter") {
  const auto a = run(small(Curriculum::Sec, 3));
  const auto b = run(small(Curriculum::Sec, 3));
  const auto c = run(small(Curriculum::Sec, 4));
  CHECK(a.steps.back().to_json() == b.steps.back().to_json());
  CHECK(a.summary.final_accuracy == b.summary.final_accuracy);
  CHECK(a.steps.back().to_json() != c.steps.back().to_json());
}

TEST_CASE("baselines log no Q values") {
  for (auto c : {Curriculum::Random, Curriculum::Ordered, Curriculum::Reverse}) {
    const auto report = run(small(c));
    CHECK_FALSE(report.steps[0].q.has_value());
  }
}

TEST_CASE("multi-task summary has per-task means") {
  RunConfig cfg = small(Curriculum::Sec2d);
  cfg.scenario = "multi-task-3x3";
  const auto report = run(cfg);
  CHECK(report.arms.size() == 9);
  CHECK(report.summary.task_id_mean.size() == 3);
  double lowest = 1.0;
  for (const auto& [task, acc] : report.summary.task_id_mean) lowest = std::min(lowest, acc);
  CHECK(report.summary.min_task_id == lowest);
  CHECK(report.summary.task_id_mean.at("countdown") > report.summary.task_id_mean.at("arc"));
}

TEST_CASE("sec beats reverse on the reverse-failure scenario") {
  RunConfig cfg;
  cfg.scenario = "reverse-failure";
  cfg.steps = 400;
  cfg.eval_every = 400;
  cfg.bandit.seed = 0;
  const double sec_ood = run(cfg).summary.ood_mean;
  cfg.curriculum = Curriculum::Reverse;
  CHECK(sec_ood > run(cfg).summary.ood_mean);
}

TEST_CASE("sweep rows") {
  std::vector<RunConfig> grid;
  for (double alpha : {0.2, 0.5}) {
    for (double tau : {0.2, 1.0}) {
      RunConfig cfg = small(Curriculum::Sec);
      cfg.bandit.alpha = alpha;
      cfg.bandit.tau = tau;
      grid.push_back(cfg);
    }
  }
  const auto rows = sweep(grid, 3);
  REQUIRE(rows.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(rows[i].index == i);
    CHECK(rows[i].ok);
    CHECK(rows[i].config.bandit.alpha == grid[i].bandit.alpha);
  }

  grid[2].bandit.alpha = 0.0;
  const auto with_failure = sweep(grid, 2);
  CHECK_FALSE(with_failure[2].ok);
  CHECK_FALSE(with_failure[2].error.empty());
  int ok = 0;
  for (const auto& row : with_failure) ok += row.ok ? 1 : 0;
  CHECK(ok == 3);

  const std::vector<RunConfig> twice{grid[0], grid[0]};
  const auto same = sweep(twice, 2);
  CHECK(same[0].summary.final_accuracy == same[1].summary.final_accuracy);

  const std::string table = format_sweep_table(with_failure);
  std::istringstream lines(table);
  std::string line;
  int count = 0;
  while (std::getline(lines, line)) ++count;
  CHECK(count == 5);
  CHECK(table.find("failed") != std::string::npos);
}
