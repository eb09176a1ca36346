#include "sec/advantage.hpp"

#include <cmath>

namespace sec {

std::string_view to_string(Estimator estimator) noexcept {
  return estimator == Estimator::Grpo ? "grpo" : "rloo";
}

Estimator parse_estimator(std::string_view text) {
  if (text == "grpo") return Estimator::Grpo;
  if (text == "rloo") return Estimator::Rloo;
  throw Error(Errc::BadConfig, "unknown estimator '" + std::string(text) + "'");
}

AdvantageVector grpo_advantages(const RolloutGroup& group, double eps) {
  AdvantageVector out{group.problem_id, grpo_advantages(group.rewards, eps), 0.0};
  out.mean_abs = mean_abs(out.advantages);
  return out;
}

AdvantageVector rloo_advantages(const RolloutGroup& group) {
  AdvantageVector out{group.problem_id, rloo_advantages(group.rewards), 0.0};
  out.mean_abs = mean_abs(out.advantages);
  return out;
}

AdvantageVector estimate(const RolloutGroup& group, Estimator estimator, double eps) {
  return estimator == Estimator::Grpo ? grpo_advantages(group, eps) : rloo_advantages(group);
}

double expected_abs_grpo(double p, int n, double eps) {
  if (n < 2) throw Error(Errc::GroupTooSmall, "expected_abs_grpo needs n >= 2");
  if (!(p >= 0.0 && p <= 1.0)) throw Error(Errc::BadConfig, "p must lie in [0,1]");
  double expectation = 0.0;
  double binom = 1.0;  // C(n, k)
  Eigen::VectorXd group(n);
  for (int k = 0; k <= n; ++k) {
    if (k > 0) binom = binom * static_cast<double>(n - k + 1) / static_cast<double>(k);
    const double weight = binom * std::pow(p, k) * std::pow(1.0 - p, n - k);
    if (weight == 0.0) continue;
    group.head(k).setOnes();
    group.tail(n - k).setZero();
    expectation += weight * mean_abs(grpo_advantages(group, eps));
  }
  return expectation;
}

std::map<std::string, double> batch_mean_abs(std::span<const RolloutGroup> groups,
                                             Estimator estimator, double eps) {
  std::map<std::string, double> out;
  for (const auto& group : groups) {
    const double value = estimate(group, estimator, eps).mean_abs;
    if (!out.emplace(group.problem_id, value).second) {
      throw Error(Errc::DuplicateId, "rollout group '" + group.problem_id + "' repeated");
    }
  }
  return out;
}

}  // namespace sec
