#pragma once

// Bandit arms: category keys, problem records and the immutable registry
// that partitions a problem pool into arms.

#include <compare>
#include <cstddef>
#include <initializer_list>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace sec {

/// Ordered tuple of (axis-name, label) pairs. One axis gives a 1-D curriculum,
/// several axes give the cross-product arms used by SEC-2D.
class CategoryKey {
 public:
  using Axis = std::pair<std::string, std::string>;

  CategoryKey() = default;
  /// Throws Error(InvalidKey) when an axis name repeats or is empty.
  explicit CategoryKey(std::vector<Axis> axes);
  CategoryKey(std::initializer_list<Axis> axes) : CategoryKey(std::vector<Axis>(axes)) {}
  CategoryKey(std::string axis, std::string label);

  const std::vector<Axis>& axes() const noexcept { return axes_; }
  bool empty() const noexcept { return axes_.empty(); }

  std::optional<std::string_view> label(std::string_view axis) const;

  /// Keeps only the named axes, in this key's order.
  CategoryKey project(std::span<const std::string> keep) const;

  /// Wire form: `axis=label|axis=label`, atoms percent-escaped.
  std::string str() const;
  static CategoryKey parse(std::string_view text);

  friend auto operator<=>(const CategoryKey&, const CategoryKey&) = default;
  friend bool operator==(const CategoryKey&, const CategoryKey&) = default;

 private:
  std::vector<Axis> axes_;
};

inline constexpr std::string_view kDifficultyAxis = "difficulty";
inline constexpr std::string_view kRateBinAxis = "rate-bin";

/// Numeric difficulty of a key: the `difficulty` axis label `L<n>` or `<n>`.
std::optional<double> numeric_difficulty(const CategoryKey& key);

struct ProblemRecord {
  std::string id;
  CategoryKey category;
  std::string payload;
  std::optional<double> success_rate;

  friend bool operator==(const ProblemRecord&, const ProblemRecord&) = default;
};

/// Immutable partition of a problem pool into non-empty categories.
/// Categories iterate in first-appearance order; problems keep input order.
class Registry {
 public:
  std::size_t size() const noexcept { return categories_.size(); }
  std::size_t problem_count() const noexcept { return by_id_.size(); }

  const std::vector<CategoryKey>& categories() const noexcept { return categories_; }
  const CategoryKey& category(std::size_t index) const { return categories_.at(index); }
  std::span<const ProblemRecord> pool(std::size_t index) const { return pools_.at(index); }

  std::optional<std::size_t> index_of(const CategoryKey& key) const;
  const ProblemRecord* find(std::string_view problem_id) const;

  /// CRC-32 of the serialized registry, hex encoded.
  std::string fingerprint() const;

  friend Registry build_registry(std::vector<ProblemRecord> problems);
  friend Registry bin_by_success_rate(std::vector<ProblemRecord> problems, std::size_t k);

 private:
  static Registry assemble(std::vector<ProblemRecord> problems,
                           std::vector<CategoryKey> order);

  std::vector<CategoryKey> categories_;
  std::vector<std::vector<ProblemRecord>> pools_;
  std::unordered_map<std::string, std::pair<std::size_t, std::size_t>> by_id_;
};

/// Groups problems by their category. Throws EmptyPool or DuplicateId.
Registry build_registry(std::vector<ProblemRecord> problems);

/// Bin index of a success rate under k equal-width bins [i/k, (i+1)/k), with
/// the top edge clamped into bin k-1.
std::size_t rate_bin(double rate, std::size_t k);

/// Replaces each problem's category with ("rate-bin", i). Empty bins are
/// dropped; categories iterate in bin order. Throws MissingRate or BadK.
Registry bin_by_success_rate(std::vector<ProblemRecord> problems, std::size_t k);

struct AxisSpec {
  std::string name;
  std::vector<std::string> labels;
};

/// Cartesian product a x b as two-axis keys, a-major. Throws EmptyAxis.
std::vector<CategoryKey> cross_axes(const AxisSpec& a, const AxisSpec& b);

/// One record per line: id TAB category TAB rate-or-`-` TAB base64(payload).
void save_registry(const Registry& registry, std::ostream& out);
std::vector<ProblemRecord> read_problem_records(std::istream& in);
Registry load_registry(std::istream& in);

}  // namespace sec
