#pragma once

// Per-problem advantage estimation from a group of rollout rewards, and the
// mean absolute advantage that the curriculum uses as its reward signal.

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <string_view>

#include <Eigen/Core>

#include "sec/error.hpp"

namespace sec {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

inline constexpr double kDefaultStdEps = 1e-8;

/// Group-normalized advantages (r_i - mean) / std with the population standard
/// deviation. A group whose std falls below `eps` carries no signal and gets
/// all-zero advantages.
template <typename Derived>
Vector<typename Derived::Scalar> grpo_advantages(
    const Eigen::MatrixBase<Derived>& rewards,
    typename Derived::Scalar eps = typename Derived::Scalar(kDefaultStdEps)) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index n = rewards.size();
  if (n < 2) throw Error(Errc::GroupTooSmall, "GRPO needs at least 2 rollouts");
  const Scalar mean = rewards.mean();
  const Vector<Scalar> centered = rewards.derived().array() - mean;
  const Scalar stddev = std::sqrt(centered.squaredNorm() / static_cast<Scalar>(n));
  if (stddev < eps) return Vector<Scalar>::Zero(n);
  return centered / stddev;
}

/// Leave-one-out baseline: r_i minus the mean of the other n-1 rewards.
template <typename Derived>
Vector<typename Derived::Scalar> rloo_advantages(const Eigen::MatrixBase<Derived>& rewards) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index n = rewards.size();
  if (n < 2) throw Error(Errc::GroupTooSmall, "RLOO needs at least 2 rollouts");
  const Scalar total = rewards.sum();
  const Scalar others = static_cast<Scalar>(n - 1);
  return (rewards.derived().array() - (total - rewards.derived().array()) / others).matrix();
}

template <typename Derived>
typename Derived::Scalar mean_abs(const Eigen::MatrixBase<Derived>& advantages) {
  return advantages.cwiseAbs().mean();
}

enum class Estimator { Grpo, Rloo };

std::string_view to_string(Estimator estimator) noexcept;
Estimator parse_estimator(std::string_view text);

struct RolloutGroup {
  std::string problem_id;
  Eigen::VectorXd rewards;
};

struct AdvantageVector {
  std::string problem_id;
  Eigen::VectorXd advantages;
  double mean_abs = 0.0;
};

AdvantageVector grpo_advantages(const RolloutGroup& group, double eps = kDefaultStdEps);
AdvantageVector rloo_advantages(const RolloutGroup& group);
AdvantageVector estimate(const RolloutGroup& group, Estimator estimator,
                         double eps = kDefaultStdEps);

/// Exact E[mean |GRPO advantage|] over Bernoulli(p) groups of size n, summed
/// over success counts with binomial weights and the same eps convention as
/// grpo_advantages().
double expected_abs_grpo(double p, int n, double eps = kDefaultStdEps);

/// Mean absolute advantage per problem id. Throws DuplicateId on repeated ids.
std::map<std::string, double> batch_mean_abs(std::span<const RolloutGroup> groups,
                                             Estimator estimator,
                                             double eps = kDefaultStdEps);

}  // namespace sec
