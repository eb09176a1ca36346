#pragma once

// Deterministic synthetic student. Each category has a latent skill and a
// difficulty offset; success probability is logistic(skill - offset). Training
// on a problem raises every category's skill by learn_rate * coupling * the
// problem's realized mean absolute advantage.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "sec/advantage.hpp"
#include "sec/bandit.hpp"
#include "sec/category.hpp"
#include "sec/rng.hpp"

namespace sec {

enum class RewardScheme { Binary, Shaped };

/// Binary: 1 for a correct rollout, 0 otherwise. Shaped: 1 correct, `formatted`
/// for an incorrect but well-formatted answer (probability `format_probability`
/// given incorrect), 0 otherwise.
struct RewardModel {
  RewardScheme scheme = RewardScheme::Binary;
  double formatted = 0.1;
  double format_probability = 0.5;

  friend bool operator==(const RewardModel&, const RewardModel&) = default;
};

class LearnerState {
 public:
  LearnerState(std::vector<CategoryKey> keys, Eigen::VectorXd skill, Eigen::VectorXd offset,
               Eigen::MatrixXd coupling);

  const std::vector<CategoryKey>& keys() const noexcept { return keys_; }
  const Eigen::VectorXd& skill() const noexcept { return skill_; }
  const Eigen::VectorXd& offset() const noexcept { return offset_; }
  const Eigen::MatrixXd& coupling() const noexcept { return coupling_; }

  /// Throws UnknownCategory.
  Eigen::Index index_of(const CategoryKey& key) const;

  double success_probability(const CategoryKey& key) const;
  Eigen::VectorXd success_probabilities() const;

  void add_skill(const Eigen::VectorXd& delta) { skill_ += delta; }

 private:
  std::vector<CategoryKey> keys_;
  Eigen::VectorXd skill_;
  Eigen::VectorXd offset_;
  Eigen::MatrixXd coupling_;
};

struct LearnerDynamics {
  double learn_rate = 0.0005;
  std::uint64_t noise_seed = 0;

  void validate() const;
};

/// n independent rollouts of one problem mapped through the reward model.
RolloutGroup rollout(const LearnerState& state, std::string problem_id,
                     const CategoryKey& category, int n, const RewardModel& reward,
                     RandomStream& stream);

/// skill += learn_rate * coupling.col(c) * value for each (category c, value).
LearnerState train_update(LearnerState state, std::span<const CategoryKey> categories,
                          std::span<const double> values, const LearnerDynamics& dynamics);

/// Noise-free evaluation: the expected accuracy is the success probability.
std::map<CategoryKey, double> evaluate(
    const LearnerState& state, std::span<const std::pair<CategoryKey, std::size_t>> eval_set);

struct CategorySpec {
  CategoryKey key;
  double offset = 0.0;
  double skill = 0.0;
  bool ood = false;
};

/// Learner scenario: categories, couplings, learn rate and reward scheme.
/// See scenarios/README for the file format.
struct Scenario {
  std::string name;
  std::vector<CategorySpec> categories;
  Eigen::MatrixXd coupling;
  double learn_rate = 0.0005;
  RewardModel reward;
  std::size_t pool_size = 200;
  int rollouts = 8;

  LearnerState initial_state() const;
  std::vector<CategoryKey> training_categories() const;
  std::vector<CategoryKey> ood_categories() const;

  /// `pool_size` problems per training category. The payload carries the
  /// learner category; the success rate is the initial success probability
  /// plus a deterministic jitter of at most +-0.15 (used for rate binning).
  std::vector<ProblemRecord> training_problems() const;
};

/// Offset giving initial success probabilities 0.75, 0.5, 0.25 at levels 1, 2, 3.
double default_offset(double level);

Scenario parse_scenario(std::istream& in, std::string_view source = "<scenario>");
Scenario parse_scenario(std::string_view text, std::string_view source = "<scenario>");

std::vector<std::string> builtin_scenario_names();
std::string_view builtin_scenario_text(std::string_view name);
/// A shipped scenario name, or a path to a scenario file. Throws UnknownScenario.
Scenario load_scenario(std::string_view name_or_path);

/// Advantage source backed by a simulated learner. Batch entries are mapped
/// to learner categories through the registry payload (falling back to the
/// entry's own category when the payload is empty).
class SimulatedLearner : public AdvantageSource {
 public:
  SimulatedLearner(const Registry& registry, const Scenario& scenario, std::uint64_t seed,
                   Estimator estimator = Estimator::Grpo, double eps = kDefaultStdEps);

  std::vector<double> advantages(const Batch& batch) override;

  const LearnerState& state() const noexcept { return state_; }
  std::vector<CategoryKey> learner_categories(const Batch& batch) const;
  const RandomStream& stream() const noexcept { return stream_; }

 private:
  const Registry* registry_;
  LearnerState state_;
  LearnerDynamics dynamics_;
  RewardModel reward_;
  int rollouts_;
  Estimator estimator_;
  double eps_;
  RandomStream stream_;
};

}  // namespace sec
