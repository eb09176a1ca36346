#include "sec/learner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "sec/codec.hpp"

namespace sec {
namespace {

constexpr std::string_view kSingleTask = R"(# One task, three training difficulty levels and a harder held-out level.
# Only the easiest level starts near the 50% success boundary.
name single-task-3lvl
learn-rate 0.0005
rollouts 8
pool-size 200
reward binary
level-coupling 0.6
category difficulty=L1 offset=0.0
category difficulty=L2 offset=1.5
category difficulty=L3 offset=3.0
category difficulty=L4 offset=4.5 ood
)";

constexpr std::string_view kReverseFailure = R"(# Steep difficulty ladder: the two harder training levels start close to
# 0% success and give almost no learning signal until easier levels are learned.
name reverse-failure
learn-rate 0.0005
rollouts 8
pool-size 200
reward binary
level-coupling 0.6
category difficulty=L1 offset=0.0
category difficulty=L2 offset=2.2
category difficulty=L3 offset=4.6
category difficulty=L4 offset=6.0 ood
)";

constexpr std::string_view kMultiTask = R"(# Three tasks of different hardness, three training levels each, plus a
# held-out level per task. Skill transfers across levels within a task only.
name multi-task-3x3
learn-rate 0.0005
rollouts 8
pool-size 200
reward binary
level-coupling 0.6
category task=countdown|difficulty=L1 offset=-1.0
category task=countdown|difficulty=L2 offset=0.5
category task=countdown|difficulty=L3 offset=2.0
category task=countdown|difficulty=L4 offset=3.5 ood
category task=zebra|difficulty=L1 offset=0.0
category task=zebra|difficulty=L2 offset=1.5
category task=zebra|difficulty=L3 offset=3.0
category task=zebra|difficulty=L4 offset=4.5 ood
category task=arc|difficulty=L1 offset=1.0
category task=arc|difficulty=L2 offset=2.5
category task=arc|difficulty=L3 offset=4.0
category task=arc|difficulty=L4 offset=5.5 ood
)";

struct Builtin {
  std::string_view name;
  std::string_view text;
};

constexpr Builtin kBuiltins[] = {
    {"single-task-3lvl", kSingleTask},
    {"multi-task-3x3", kMultiTask},
    {"reverse-failure", kReverseFailure},
};

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

[[noreturn]] void scenario_error(std::string_view source, std::size_t line, const std::string& what) {
  throw Error(Errc::Parse, std::string(source) + ":" + std::to_string(line) + ": " + what);
}

bool same_except_difficulty(const CategoryKey& a, const CategoryKey& b) {
  std::vector<CategoryKey::Axis> ra, rb;
  for (const auto& axis : a.axes()) {
    if (axis.first != kDifficultyAxis) ra.push_back(axis);
  }
  for (const auto& axis : b.axes()) {
    if (axis.first != kDifficultyAxis) rb.push_back(axis);
  }
  return ra == rb;
}

}  // namespace

LearnerState::LearnerState(std::vector<CategoryKey> keys, Eigen::VectorXd skill,
                           Eigen::VectorXd offset, Eigen::MatrixXd coupling)
    : keys_(std::move(keys)),
      skill_(std::move(skill)),
      offset_(std::move(offset)),
      coupling_(std::move(coupling)) {
  const auto n = static_cast<Eigen::Index>(keys_.size());
  if (n == 0) throw Error(Errc::EmptyCategories, "learner needs at least one category");
  if (skill_.size() != n || offset_.size() != n || coupling_.rows() != n || coupling_.cols() != n) {
    throw Error(Errc::BadConfig, "learner state dimensions disagree");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (coupling_(i, i) != 1.0) throw Error(Errc::BadConfig, "coupling(c,c) must be 1");
    for (Eigen::Index j = 0; j < n; ++j) {
      if (coupling_(i, j) != coupling_(j, i)) throw Error(Errc::BadConfig, "coupling must be symmetric");
      if (!(coupling_(i, j) >= 0.0 && coupling_(i, j) <= 1.0)) {
        throw Error(Errc::BadConfig, "coupling entries must lie in [0,1]");
      }
    }
  }
}

Eigen::Index LearnerState::index_of(const CategoryKey& key) const {
  const auto it = std::find(keys_.begin(), keys_.end(), key);
  if (it == keys_.end()) throw Error(Errc::UnknownCategory, "learner has no category " + key.str());
  return static_cast<Eigen::Index>(it - keys_.begin());
}

double LearnerState::success_probability(const CategoryKey& key) const {
  const auto i = index_of(key);
  return logistic(skill_(i) - offset_(i));
}

Eigen::VectorXd LearnerState::success_probabilities() const {
  return (1.0 + (offset_ - skill_).array().exp()).inverse().matrix();
}

void LearnerDynamics::validate() const {
  if (!(learn_rate > 0.0) || !std::isfinite(learn_rate)) {
    throw Error(Errc::BadConfig, "learn rate must be positive");
  }
}

RolloutGroup rollout(const LearnerState& state, std::string problem_id,
                     const CategoryKey& category, int n, const RewardModel& reward,
                     RandomStream& stream) {
  if (n < 1) throw Error(Errc::BadConfig, "rollout count must be positive");
  const double p = state.success_probability(category);
  RolloutGroup group{std::move(problem_id), Eigen::VectorXd(n)};
  for (int i = 0; i < n; ++i) {
    if (stream.bernoulli(p)) {
      group.rewards(i) = 1.0;
    } else if (reward.scheme == RewardScheme::Shaped && stream.bernoulli(reward.format_probability)) {
      group.rewards(i) = reward.formatted;
    } else {
      group.rewards(i) = 0.0;
    }
  }
  return group;
}

LearnerState train_update(LearnerState state, std::span<const CategoryKey> categories,
                          std::span<const double> values, const LearnerDynamics& dynamics) {
  dynamics.validate();
  if (categories.size() != values.size()) {
    throw Error(Errc::MissingAdvantage, "one advantage per batch problem is required");
  }
  Eigen::VectorXd weight = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(state.keys().size()));
  for (std::size_t i = 0; i < categories.size(); ++i) {
    if (!(values[i] >= 0.0)) throw Error(Errc::BadConfig, "advantage must be non-negative");
    weight(state.index_of(categories[i])) += values[i];
  }
  state.add_skill(dynamics.learn_rate * (state.coupling() * weight));
  return state;
}

std::map<CategoryKey, double> evaluate(
    const LearnerState& state, std::span<const std::pair<CategoryKey, std::size_t>> eval_set) {
  std::map<CategoryKey, double> accuracy;
  for (const auto& [key, count] : eval_set) {
    (void)count;
    accuracy[key] = state.success_probability(key);
  }
  return accuracy;
}

double default_offset(double level) { return (level - 2.0) * std::log(3.0); }

LearnerState Scenario::initial_state() const {
  std::vector<CategoryKey> keys;
  Eigen::VectorXd skill(static_cast<Eigen::Index>(categories.size()));
  Eigen::VectorXd offset(skill.size());
  for (std::size_t i = 0; i < categories.size(); ++i) {
    keys.push_back(categories[i].key);
    skill(static_cast<Eigen::Index>(i)) = categories[i].skill;
    offset(static_cast<Eigen::Index>(i)) = categories[i].offset;
  }
  return LearnerState(std::move(keys), std::move(skill), std::move(offset), coupling);
}

std::vector<CategoryKey> Scenario::training_categories() const {
  std::vector<CategoryKey> keys;
  for (const auto& c : categories) {
    if (!c.ood) keys.push_back(c.key);
  }
  return keys;
}

std::vector<CategoryKey> Scenario::ood_categories() const {
  std::vector<CategoryKey> keys;
  for (const auto& c : categories) {
    if (c.ood) keys.push_back(c.key);
  }
  return keys;
}

std::vector<ProblemRecord> Scenario::training_problems() const {
  std::vector<ProblemRecord> problems;
  RandomStream jitter(0x5EC0DE, StreamId::Learner);
  char index[16];
  for (const auto& c : categories) {
    if (c.ood) continue;
    std::string stem;
    for (const auto& axis : c.key.axes()) stem += axis.second + "-";
    const double p0 = logistic(c.skill - c.offset);
    for (std::size_t i = 0; i < pool_size; ++i) {
      std::snprintf(index, sizeof index, "%04zu", i);
      const double rate = std::clamp(p0 + 0.3 * (jitter.uniform() - 0.5), 0.0, 1.0);
      problems.push_back({stem + index, c.key, c.key.str(), rate});
    }
  }
  return problems;
}

Scenario parse_scenario(std::istream& in, std::string_view source) {
  Scenario scenario;
  std::optional<double> level_coupling;
  struct Override {
    CategoryKey a, b;
    double value;
    std::size_t line;
  };
  std::vector<Override> overrides;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (const auto hash = raw.find('#'); hash != std::string::npos) raw.resize(hash);
    std::istringstream tokens(raw);
    std::vector<std::string> words;
    for (std::string w; tokens >> w;) words.push_back(w);
    if (words.empty()) continue;
    const std::string& directive = words[0];
    auto want = [&](std::size_t count) {
      if (words.size() != count) scenario_error(source, line_no, "'" + directive + "' expects " + std::to_string(count - 1) + " argument(s)");
    };
    try {
      if (directive == "name") {
        want(2);
        scenario.name = words[1];
      } else if (directive == "learn-rate") {
        want(2);
        scenario.learn_rate = codec::parse_real(words[1]);
      } else if (directive == "rollouts") {
        want(2);
        scenario.rollouts = static_cast<int>(codec::parse_u64(words[1]));
      } else if (directive == "pool-size") {
        want(2);
        scenario.pool_size = codec::parse_u64(words[1]);
      } else if (directive == "reward") {
        if (words.size() == 2 && words[1] == "binary") {
          scenario.reward = RewardModel{};
        } else if (words.size() == 4 && words[1] == "shaped") {
          scenario.reward = {RewardScheme::Shaped, codec::parse_real(words[2]),
                             codec::parse_real(words[3])};
        } else {
          scenario_error(source, line_no, "reward is 'binary' or 'shaped <formatted> <format-prob>'");
        }
      } else if (directive == "level-coupling") {
        want(2);
        level_coupling = codec::parse_real(words[1]);
      } else if (directive == "category") {
        if (words.size() < 2) scenario_error(source, line_no, "category needs a key");
        CategorySpec spec;
        spec.key = CategoryKey::parse(words[1]);
        std::optional<double> offset;
        for (std::size_t i = 2; i < words.size(); ++i) {
          const std::string& w = words[i];
          if (w == "ood") {
            spec.ood = true;
          } else if (w.rfind("offset=", 0) == 0) {
            offset = codec::parse_real(std::string_view(w).substr(7));
          } else if (w.rfind("skill=", 0) == 0) {
            spec.skill = codec::parse_real(std::string_view(w).substr(6));
          } else {
            scenario_error(source, line_no, "unknown category attribute '" + w + "'");
          }
        }
        if (!offset) {
          const auto level = numeric_difficulty(spec.key);
          if (!level) scenario_error(source, line_no, "offset required without a numeric difficulty");
          offset = default_offset(*level);
        }
        spec.offset = *offset;
        for (const auto& existing : scenario.categories) {
          if (existing.key == spec.key) scenario_error(source, line_no, "duplicate category " + spec.key.str());
        }
        scenario.categories.push_back(std::move(spec));
      } else if (directive == "coupling") {
        want(4);
        overrides.push_back({CategoryKey::parse(words[1]), CategoryKey::parse(words[2]),
                             codec::parse_real(words[3]), line_no});
      } else {
        scenario_error(source, line_no, "unknown directive '" + directive + "'");
      }
    } catch (const Error& e) {
      if (e.code() == Errc::Parse && std::string_view(e.what()).find(source) != std::string_view::npos) throw;
      scenario_error(source, line_no, e.what());
    }
  }
  if (scenario.categories.empty()) throw Error(Errc::BadConfig, std::string(source) + ": no categories");
  if (scenario.training_categories().empty()) {
    throw Error(Errc::BadConfig, std::string(source) + ": no training categories");
  }
  if (scenario.rollouts < 2) throw Error(Errc::BadConfig, std::string(source) + ": rollouts must be >= 2");
  if (scenario.pool_size == 0) throw Error(Errc::BadConfig, std::string(source) + ": pool-size must be >= 1");
  LearnerDynamics{scenario.learn_rate, 0}.validate();

  const auto n = static_cast<Eigen::Index>(scenario.categories.size());
  scenario.coupling = Eigen::MatrixXd::Identity(n, n);
  if (level_coupling) {
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        const auto& a = scenario.categories[static_cast<std::size_t>(i)].key;
        const auto& b = scenario.categories[static_cast<std::size_t>(j)].key;
        const auto la = numeric_difficulty(a);
        const auto lb = numeric_difficulty(b);
        if (i != j && la && lb && same_except_difficulty(a, b)) {
          scenario.coupling(i, j) = std::pow(*level_coupling, std::abs(*la - *lb));
        }
      }
    }
  }
  auto index_of = [&](const CategoryKey& key, std::size_t line) {
    for (std::size_t i = 0; i < scenario.categories.size(); ++i) {
      if (scenario.categories[i].key == key) return static_cast<Eigen::Index>(i);
    }
    scenario_error(source, line, "coupling names unknown category " + key.str());
  };
  for (const auto& o : overrides) {
    const auto i = index_of(o.a, o.line);
    const auto j = index_of(o.b, o.line);
    if (i == j) scenario_error(source, o.line, "self-coupling is fixed at 1");
    scenario.coupling(i, j) = scenario.coupling(j, i) = o.value;
  }
  scenario.initial_state();  // validates the coupling matrix
  return scenario;
}

Scenario parse_scenario(std::string_view text, std::string_view source) {
  std::istringstream in{std::string(text)};
  return parse_scenario(in, source);
}

std::vector<std::string> builtin_scenario_names() {
  std::vector<std::string> names;
  for (const auto& b : kBuiltins) names.emplace_back(b.name);
  return names;
}

std::string_view builtin_scenario_text(std::string_view name) {
  for (const auto& b : kBuiltins) {
    if (b.name == name) return b.text;
  }
  throw Error(Errc::UnknownScenario, "no shipped scenario named '" + std::string(name) + "'");
}

Scenario load_scenario(std::string_view name_or_path) {
  for (const auto& b : kBuiltins) {
    if (b.name == name_or_path) return parse_scenario(b.text, b.name);
  }
  std::ifstream file{std::string(name_or_path)};
  if (!file) {
    throw Error(Errc::UnknownScenario, "'" + std::string(name_or_path) +
                                           "' is neither a shipped scenario nor a readable file");
  }
  return parse_scenario(file, name_or_path);
}

SimulatedLearner::SimulatedLearner(const Registry& registry, const Scenario& scenario,
                                   std::uint64_t seed, Estimator estimator, double eps)
    : registry_(&registry),
      state_(scenario.initial_state()),
      dynamics_{scenario.learn_rate, seed},
      reward_(scenario.reward),
      rollouts_(scenario.rollouts),
      estimator_(estimator),
      eps_(eps),
      stream_(seed, StreamId::Learner) {
  dynamics_.validate();
}

std::vector<CategoryKey> SimulatedLearner::learner_categories(const Batch& batch) const {
  std::vector<CategoryKey> keys;
  keys.reserve(batch.entries.size());
  for (const auto& entry : batch.entries) {
    const ProblemRecord* record = registry_->find(entry.problem_id);
    if (record == nullptr) {
      throw Error(Errc::UnknownCategory, "problem '" + entry.problem_id + "' not in registry");
    }
    keys.push_back(record->payload.empty() ? entry.category : CategoryKey::parse(record->payload));
  }
  return keys;
}

std::vector<double> SimulatedLearner::advantages(const Batch& batch) {
  const auto categories = learner_categories(batch);
  std::vector<double> values;
  values.reserve(categories.size());
  for (std::size_t i = 0; i < categories.size(); ++i) {
    const auto group =
        rollout(state_, batch.entries[i].problem_id, categories[i], rollouts_, reward_, stream_);
    values.push_back(estimate(group, estimator_, eps_).mean_abs);
  }
  state_ = train_update(std::move(state_), categories, values, dynamics_);
  return values;
}

}  // namespace sec
