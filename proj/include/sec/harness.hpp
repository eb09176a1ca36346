#pragma once

// Experiment runner: SEC and baseline curricula against the simulated
// learner, per-step logs, periodic evaluation, difficulty traces and sweeps.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sec/advantage.hpp"
#include "sec/bandit.hpp"
#include "sec/learner.hpp"

namespace sec {

enum class Curriculum { Sec, Random, Ordered, Reverse, Sec2d };

std::string_view to_string(Curriculum curriculum) noexcept;
Curriculum parse_curriculum(std::string_view text);

struct RunConfig {
  Curriculum curriculum = Curriculum::Sec;
  BanditConfig bandit;
  std::string scenario = "single-task-3lvl";
  std::size_t steps = 400;
  std::size_t eval_every = 50;
  std::optional<std::filesystem::path> output_dir;
  Estimator estimator = Estimator::Grpo;
  double eps = kDefaultStdEps;
  std::optional<std::size_t> bins;
  std::size_t trace_window = 20;

  /// Throws BadConfig.
  void validate() const;
  /// Canonical JSON of every field that affects the run (not output_dir).
  std::string canonical() const;
  /// CRC-32 of canonical(), hex.
  std::string hash() const;
};

/// Arms for a scenario: the full key for sec-2d, the difficulty axis alone for
/// the other curricula, or success-rate bins when `bins` is set.
Registry build_arm_registry(const Scenario& scenario, Curriculum curriculum,
                            std::optional<std::size_t> bins);

/// Fixed-schedule distribution at step t of T over registry arms; nullopt for
/// the bandit curricula. `ordered` spends T/L steps per difficulty level,
/// easiest first; `reverse(t)` is `ordered(T-1-t)`.
std::optional<Eigen::VectorXd> schedule_distribution(Curriculum curriculum, const Registry& arms,
                                                     std::size_t t, std::size_t total_steps);

struct EvalRecord {
  std::uint64_t step = 0;  // number of completed training steps
  std::vector<std::pair<CategoryKey, double>> accuracy;
  std::string to_json() const;
};

struct RunSummary {
  std::map<CategoryKey, double> final_accuracy;
  double id_mean = 0.0;
  double ood_mean = 0.0;
  /// Per value of the `task` axis (empty when there is none).
  std::map<std::string, double> task_id_mean;
  std::map<std::string, double> task_ood_mean;
  double min_task_id = 0.0;
  double min_task_ood = 0.0;
};

struct RunReport {
  RunConfig config;
  std::vector<CategoryKey> arms;
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
  RunSummary summary;
};

/// Throws BadConfig or UnknownScenario.
RunReport run(const RunConfig& config);

/// Centered moving average, truncated at the ends; window 1 is the identity.
std::vector<double> moving_average(std::span<const double> values, std::size_t window);

/// (step, smoothed mean sampled difficulty). Throws NonNumericAxis.
std::vector<std::pair<std::size_t, double>> difficulty_trace(std::span<const StepRecord> steps,
                                                             std::size_t window);
std::vector<std::pair<std::size_t, double>> difficulty_trace(const RunReport& report,
                                                             std::size_t window);

/// Reads the step records of a steps.jsonl file back (mean difficulty only is
/// needed for traces; the rest is kept for inspection).
std::vector<std::optional<double>> read_step_difficulties(const std::filesystem::path& steps_file);
std::vector<std::pair<std::size_t, double>> difficulty_trace(
    std::span<const std::optional<double>> per_step, std::size_t window);

struct SweepRow {
  std::size_t index = 0;
  RunConfig config;
  bool ok = false;
  std::string error;
  RunSummary summary;
};

/// One row per config in grid order; failures are recorded, not thrown.
/// `threads` = 0 uses the hardware concurrency.
std::vector<SweepRow> sweep(std::span<const RunConfig> grid, std::size_t threads = 0);

/// Tab-separated summary table with a header line.
std::string format_sweep_table(std::span<const SweepRow> rows);

}  // namespace sec
