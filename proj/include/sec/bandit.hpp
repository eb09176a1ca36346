#pragma once

// The curriculum bandit: one arm per registry category, Boltzmann sampling
// over Q, and exponential-moving-average (TD(0)) updates from the mean
// absolute advantage observed in each step's batch.

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sec/category.hpp"
#include "sec/error.hpp"
#include "sec/rng.hpp"

namespace sec {

struct BanditConfig {
  double alpha = 0.5;
  double tau = 1.0;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  bool dedupe_within_batch = false;

  /// Throws Error(BadConfig) unless alpha in (0,1], tau > 0, batch_size >= 1.
  void validate() const;

  friend bool operator==(const BanditConfig&, const BanditConfig&) = default;
};

struct QTable {
  std::vector<CategoryKey> keys;
  Eigen::VectorXd values;
  std::uint64_t step = 0;

  double value(const CategoryKey& key) const;
  std::optional<Eigen::Index> index_of(const CategoryKey& key) const;
};

/// All-zero table at step 0. Throws EmptyCategories.
QTable init_qtable(std::span<const CategoryKey> categories);

/// Boltzmann distribution softmax(q / tau), max-subtracted. Entries are
/// clamped to the smallest normal double so every arm stays reachable.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> boltzmann(
    const Eigen::MatrixBase<Derived>& q, typename Derived::Scalar tau) {
  using Scalar = typename Derived::Scalar;
  if (!(tau > Scalar(0))) throw Error(Errc::BadConfig, "temperature must be positive");
  const Scalar top = q.maxCoeff();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> p =
      ((q.derived().array() - top) / tau).exp().matrix();
  p /= p.sum();
  return p.cwiseMax(std::numeric_limits<Scalar>::min());
}

/// Distribution over q.keys (same order).
Eigen::VectorXd category_distribution(const QTable& q, double tau);

struct BatchEntry {
  std::string problem_id;
  CategoryKey category;
  std::size_t arm = 0;  // registry category index

  friend bool operator==(const BatchEntry&, const BatchEntry&) = default;
};

struct Batch {
  std::uint64_t step = 0;
  std::vector<BatchEntry> entries;

  friend bool operator==(const Batch&, const Batch&) = default;
};

/// The two sampling streams: one for category draws, one for draws within a
/// category. Both derive from the bandit seed.
struct SamplerStreams {
  RandomStream category;
  RandomStream problem;

  explicit SamplerStreams(std::uint64_t seed = 0)
      : category(seed, StreamId::Category), problem(seed, StreamId::Problem) {}

  friend bool operator==(const SamplerStreams&, const SamplerStreams&) = default;
};

/// Draws `batch_size` slots: a categorical draw over `distribution` (aligned
/// with registry categories) followed by a uniform draw within that category.
/// With `dedupe`, a within-category draw that repeats a problem already in the
/// batch is redrawn while the pool still has unused problems.
Batch sample_batch(const Eigen::VectorXd& distribution, const Registry& registry,
                   std::size_t batch_size, bool dedupe, SamplerStreams& streams);

Batch sample_batch(const QTable& q, const Registry& registry, const BanditConfig& cfg,
                   SamplerStreams& streams);

struct CategoryReward {
  CategoryKey category;
  std::size_t arm = 0;
  double reward = 0.0;
  std::size_t support = 0;

  friend bool operator==(const CategoryReward&, const CategoryReward&) = default;
};

/// Mean of the per-slot values within each sampled category, in arm order.
/// `values[i]` belongs to `batch.entries[i]`.
std::vector<CategoryReward> aggregate_rewards(const Batch& batch, std::span<const double> values);

/// Same, with one value per problem id (duplicated slots share it). Throws
/// MissingAdvantage if a batch id is absent.
std::vector<CategoryReward> aggregate_rewards(const Batch& batch,
                                              const std::map<std::string, double>& values);

/// Q(c) <- alpha r(c) + (1 - alpha) Q(c) for rewarded categories; others are
/// untouched. Increments the step. Throws UnknownCategory.
QTable td0_update(QTable q, std::span<const CategoryReward> rewards, double alpha);

/// What one step produced, in the order it was produced.
struct StepRecord {
  std::uint64_t step = 0;
  std::vector<CategoryKey> keys;
  std::vector<std::size_t> counts;           // per key
  std::vector<CategoryReward> rewards;       // sampled categories only
  std::optional<Eigen::VectorXd> q;          // post-update; absent for fixed schedules
  std::optional<double> mean_difficulty;

  /// One JSON object, no trailing newline. Field order is fixed.
  std::string to_json() const;
};

StepRecord make_step_record(const Batch& batch, const std::vector<CategoryKey>& keys,
                            std::vector<CategoryReward> rewards,
                            std::optional<Eigen::VectorXd> q);

std::optional<double> batch_mean_difficulty(const Batch& batch);

/// Supplies per-slot mean absolute advantages for a batch (and, for a
/// simulated learner, trains on it as a side effect).
class AdvantageSource {
 public:
  virtual ~AdvantageSource() = default;
  virtual std::vector<double> advantages(const Batch& batch) = 0;
};

struct StepResult {
  Batch batch;
  std::vector<CategoryReward> rewards;
  QTable q;
};

/// Resumable engine state.
struct EngineState {
  BanditConfig config;
  QTable q;
  SamplerStreams streams;
};

/// Single-writer SEC loop over a registry. Batches are proposed from a copy
/// of the sampling streams; the streams only advance when the batch is
/// committed, so an abandoned batch is re-proposed identically.
class CurriculumEngine {
 public:
  CurriculumEngine(const Registry& registry, BanditConfig config);
  CurriculumEngine(const Registry& registry, EngineState state);

  Batch propose() const;
  StepResult commit(const Batch& batch, std::span<const double> values);
  StepResult step(AdvantageSource& source);

  const Registry& registry() const noexcept { return *registry_; }
  const BanditConfig& config() const noexcept { return state_.config; }
  const QTable& q() const noexcept { return state_.q; }
  std::uint64_t step_index() const noexcept { return state_.q.step; }
  const EngineState& state() const noexcept { return state_; }

 private:
  Batch propose(SamplerStreams& streams) const;

  const Registry* registry_;
  EngineState state_;
};

}  // namespace sec
