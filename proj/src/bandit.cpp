#include "sec/bandit.hpp"

#include <algorithm>
#include <unordered_set>

#include <json.hpp>

namespace sec {

void BanditConfig::validate() const {
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw Error(Errc::BadConfig, "alpha must lie in (0, 1]");
  }
  if (!(tau > 0.0) || !std::isfinite(tau)) throw Error(Errc::BadConfig, "tau must be positive");
  if (batch_size == 0) throw Error(Errc::BadConfig, "batch size must be at least 1");
}

std::optional<Eigen::Index> QTable::index_of(const CategoryKey& key) const {
  const auto it = std::find(keys.begin(), keys.end(), key);
  if (it == keys.end()) return std::nullopt;
  return static_cast<Eigen::Index>(it - keys.begin());
}

double QTable::value(const CategoryKey& key) const {
  const auto index = index_of(key);
  if (!index) throw Error(Errc::UnknownCategory, "no Q entry for " + key.str());
  return values(*index);
}

QTable init_qtable(std::span<const CategoryKey> categories) {
  if (categories.empty()) throw Error(Errc::EmptyCategories, "bandit needs at least one arm");
  QTable q;
  q.keys.assign(categories.begin(), categories.end());
  q.values = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(categories.size()));
  return q;
}

Eigen::VectorXd category_distribution(const QTable& q, double tau) {
  return boltzmann(q.values, tau);
}

Batch sample_batch(const Eigen::VectorXd& distribution, const Registry& registry,
                   std::size_t batch_size, bool dedupe, SamplerStreams& streams) {
  if (registry.size() == 0) throw Error(Errc::EmptyCategories, "registry has no categories");
  if (static_cast<std::size_t>(distribution.size()) != registry.size()) {
    throw Error(Errc::BadConfig, "distribution size does not match registry");
  }
  Batch batch;
  batch.entries.reserve(batch_size);
  std::vector<std::unordered_set<std::size_t>> used;
  if (dedupe) used.resize(registry.size());
  for (std::size_t slot = 0; slot < batch_size; ++slot) {
    const auto arm = static_cast<std::size_t>(draw_categorical(distribution, streams.category));
    const auto pool = registry.pool(arm);
    std::size_t pick = streams.problem.below(pool.size());
    if (dedupe && used[arm].size() < pool.size()) {
      while (used[arm].count(pick) != 0) pick = streams.problem.below(pool.size());
    }
    if (dedupe) used[arm].insert(pick);
    batch.entries.push_back({pool[pick].id, registry.category(arm), arm});
  }
  return batch;
}

Batch sample_batch(const QTable& q, const Registry& registry, const BanditConfig& cfg,
                   SamplerStreams& streams) {
  Batch batch = sample_batch(category_distribution(q, cfg.tau), registry, cfg.batch_size,
                             cfg.dedupe_within_batch, streams);
  batch.step = q.step;
  return batch;
}

std::vector<CategoryReward> aggregate_rewards(const Batch& batch, std::span<const double> values) {
  if (values.size() != batch.entries.size()) {
    throw Error(Errc::MissingAdvantage, "expected " + std::to_string(batch.entries.size()) +
                                            " values, got " + std::to_string(values.size()));
  }
  std::map<std::size_t, CategoryReward> by_arm;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(values[i] >= 0.0) || !std::isfinite(values[i])) {
      throw Error(Errc::BadConfig, "mean absolute advantage must be finite and non-negative");
    }
    const auto& entry = batch.entries[i];
    auto& slot = by_arm[entry.arm];
    slot.category = entry.category;
    slot.arm = entry.arm;
    slot.reward += values[i];
    ++slot.support;
  }
  std::vector<CategoryReward> rewards;
  rewards.reserve(by_arm.size());
  for (auto& [arm, reward] : by_arm) {
    reward.reward /= static_cast<double>(reward.support);
    rewards.push_back(std::move(reward));
  }
  return rewards;
}

std::vector<CategoryReward> aggregate_rewards(const Batch& batch,
                                              const std::map<std::string, double>& values) {
  std::vector<double> per_slot;
  per_slot.reserve(batch.entries.size());
  for (const auto& entry : batch.entries) {
    const auto it = values.find(entry.problem_id);
    if (it == values.end()) {
      throw Error(Errc::MissingAdvantage, "no advantage for problem '" + entry.problem_id + "'");
    }
    per_slot.push_back(it->second);
  }
  return aggregate_rewards(batch, per_slot);
}

QTable td0_update(QTable q, std::span<const CategoryReward> rewards, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw Error(Errc::BadConfig, "alpha must lie in (0, 1]");
  for (const auto& reward : rewards) {
    const auto index = q.index_of(reward.category);
    if (!index) throw Error(Errc::UnknownCategory, "no Q entry for " + reward.category.str());
    q.values(*index) = alpha * reward.reward + (1.0 - alpha) * q.values(*index);
  }
  ++q.step;
  return q;
}

std::optional<double> batch_mean_difficulty(const Batch& batch) {
  if (batch.entries.empty()) return std::nullopt;
  double total = 0.0;
  for (const auto& entry : batch.entries) {
    const auto level = numeric_difficulty(entry.category);
    if (!level) return std::nullopt;
    total += *level;
  }
  return total / static_cast<double>(batch.entries.size());
}

StepRecord make_step_record(const Batch& batch, const std::vector<CategoryKey>& keys,
                            std::vector<CategoryReward> rewards,
                            std::optional<Eigen::VectorXd> q) {
  StepRecord record;
  record.step = batch.step;
  record.keys = keys;
  record.counts.assign(keys.size(), 0);
  for (const auto& entry : batch.entries) ++record.counts.at(entry.arm);
  record.rewards = std::move(rewards);
  record.q = std::move(q);
  record.mean_difficulty = batch_mean_difficulty(batch);
  return record;
}

std::string StepRecord::to_json() const {
  nlohmann::ordered_json j;
  j["type"] = "step";
  j["step"] = step;
  auto& count_obj = j["counts"] = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < keys.size(); ++i) count_obj[keys[i].str()] = counts[i];
  auto& reward_obj = j["rewards"] = nlohmann::ordered_json::object();
  for (const auto& r : rewards) reward_obj[r.category.str()] = r.reward;
  if (q) {
    auto& q_obj = j["q"] = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < keys.size(); ++i) q_obj[keys[i].str()] = (*q)(static_cast<Eigen::Index>(i));
  } else {
    j["q"] = nullptr;
  }
  if (mean_difficulty) {
    j["mean_difficulty"] = *mean_difficulty;
  } else {
    j["mean_difficulty"] = nullptr;
  }
  return j.dump();
}

CurriculumEngine::CurriculumEngine(const Registry& registry, BanditConfig config)
    : registry_(&registry) {
  config.validate();
  state_.config = config;
  state_.q = init_qtable(registry.categories());
  state_.streams = SamplerStreams(config.seed);
}

CurriculumEngine::CurriculumEngine(const Registry& registry, EngineState state)
    : registry_(&registry), state_(std::move(state)) {
  state_.config.validate();
  if (state_.q.keys != registry.categories()) {
    throw Error(Errc::RegistryMismatch, "engine state does not match registry categories");
  }
}

Batch CurriculumEngine::propose(SamplerStreams& streams) const {
  return sample_batch(state_.q, *registry_, state_.config, streams);
}

Batch CurriculumEngine::propose() const {
  SamplerStreams scratch = state_.streams;
  return propose(scratch);
}

StepResult CurriculumEngine::commit(const Batch& batch, std::span<const double> values) {
  SamplerStreams advanced = state_.streams;
  if (propose(advanced) != batch) {
    throw Error(Errc::BadConfig, "batch was not proposed at the current engine step");
  }
  auto rewards = aggregate_rewards(batch, values);
  state_.q = td0_update(std::move(state_.q), rewards, state_.config.alpha);
  state_.streams = advanced;
  return {batch, std::move(rewards), state_.q};
}

StepResult CurriculumEngine::step(AdvantageSource& source) {
  const Batch batch = propose();
  const auto values = source.advantages(batch);
  return commit(batch, values);
}

}  // namespace sec
