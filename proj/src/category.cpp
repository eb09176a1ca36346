#include "sec/category.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "sec/codec.hpp"
#include "sec/error.hpp"

namespace sec {

CategoryKey::CategoryKey(std::vector<Axis> axes) : axes_(std::move(axes)) {
  for (std::size_t i = 0; i < axes_.size(); ++i) {
    if (axes_[i].first.empty()) throw Error(Errc::InvalidKey, "empty axis name");
    for (std::size_t j = 0; j < i; ++j) {
      if (axes_[j].first == axes_[i].first) {
        throw Error(Errc::InvalidKey, "duplicate axis '" + axes_[i].first + "'");
      }
    }
  }
}

CategoryKey::CategoryKey(std::string axis, std::string label)
    : CategoryKey(std::vector<Axis>{{std::move(axis), std::move(label)}}) {}

std::optional<std::string_view> CategoryKey::label(std::string_view axis) const {
  for (const auto& [name, value] : axes_) {
    if (name == axis) return std::string_view(value);
  }
  return std::nullopt;
}

CategoryKey CategoryKey::project(std::span<const std::string> keep) const {
  std::vector<Axis> kept;
  for (const auto& axis : axes_) {
    if (std::find(keep.begin(), keep.end(), axis.first) != keep.end()) kept.push_back(axis);
  }
  return CategoryKey(std::move(kept));
}

std::string CategoryKey::str() const {
  std::string out;
  for (std::size_t i = 0; i < axes_.size(); ++i) {
    if (i > 0) out.push_back('|');
    out += codec::escape(axes_[i].first);
    out.push_back('=');
    out += codec::escape(axes_[i].second);
  }
  return out;
}

CategoryKey CategoryKey::parse(std::string_view text) {
  if (text.empty()) throw Error(Errc::InvalidKey, "empty category key");
  std::vector<Axis> axes;
  for (auto part : codec::split(text, '|')) {
    const auto eq = part.find('=');
    if (eq == std::string_view::npos) {
      throw Error(Errc::InvalidKey, "axis without '=' in '" + std::string(text) + "'");
    }
    axes.emplace_back(codec::unescape(part.substr(0, eq)), codec::unescape(part.substr(eq + 1)));
  }
  return CategoryKey(std::move(axes));
}

std::optional<double> numeric_difficulty(const CategoryKey& key) {
  auto label = key.label(kDifficultyAxis);
  if (!label) return std::nullopt;
  std::string_view digits = *label;
  if (!digits.empty() && (digits.front() == 'L' || digits.front() == 'l')) digits.remove_prefix(1);
  if (digits.empty()) return std::nullopt;
  try {
    return static_cast<double>(codec::parse_u64(digits));
  } catch (const Error&) {
    return std::nullopt;
  }
}

std::optional<std::size_t> Registry::index_of(const CategoryKey& key) const {
  const auto it = std::find(categories_.begin(), categories_.end(), key);
  if (it == categories_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - categories_.begin());
}

const ProblemRecord* Registry::find(std::string_view problem_id) const {
  const auto it = by_id_.find(std::string(problem_id));
  if (it == by_id_.end()) return nullptr;
  return &pools_[it->second.first][it->second.second];
}

std::string Registry::fingerprint() const {
  std::ostringstream out;
  save_registry(*this, out);
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08x", codec::crc32(out.str()));
  return buf;
}

Registry Registry::assemble(std::vector<ProblemRecord> problems, std::vector<CategoryKey> order) {
  Registry reg;
  reg.categories_ = std::move(order);
  reg.pools_.resize(reg.categories_.size());
  std::map<CategoryKey, std::size_t> slot;
  for (std::size_t i = 0; i < reg.categories_.size(); ++i) slot.emplace(reg.categories_[i], i);
  for (auto& record : problems) {
    const std::size_t c = slot.at(record.category);
    const std::size_t pos = reg.pools_[c].size();
    if (!reg.by_id_.emplace(record.id, std::make_pair(c, pos)).second) {
      throw Error(Errc::DuplicateId, "problem id '" + record.id + "' appears twice");
    }
    reg.pools_[c].push_back(std::move(record));
  }
  return reg;
}

Registry build_registry(std::vector<ProblemRecord> problems) {
  if (problems.empty()) throw Error(Errc::EmptyPool, "no problems given");
  std::vector<CategoryKey> order;
  std::map<CategoryKey, bool> seen;
  for (const auto& record : problems) {
    if (record.category.empty()) {
      throw Error(Errc::InvalidKey, "problem '" + record.id + "' has no category");
    }
    if (seen.emplace(record.category, true).second) order.push_back(record.category);
  }
  return Registry::assemble(std::move(problems), std::move(order));
}

std::size_t rate_bin(double rate, std::size_t k) {
  if (k == 0) throw Error(Errc::BadK, "k must be at least 1");
  if (!(rate >= 0.0 && rate <= 1.0)) {
    throw Error(Errc::MissingRate, "success rate outside [0,1]");
  }
  const auto bin = static_cast<std::size_t>(std::floor(rate * static_cast<double>(k)));
  return std::min(bin, k - 1);
}

Registry bin_by_success_rate(std::vector<ProblemRecord> problems, std::size_t k) {
  if (k == 0) throw Error(Errc::BadK, "k must be at least 1");
  if (problems.empty()) throw Error(Errc::EmptyPool, "no problems given");
  std::vector<bool> used(k, false);
  for (auto& record : problems) {
    if (!record.success_rate) {
      throw Error(Errc::MissingRate, "problem '" + record.id + "' has no success rate");
    }
    const std::size_t bin = rate_bin(*record.success_rate, k);
    used[bin] = true;
    record.category = CategoryKey(std::string(kRateBinAxis), std::to_string(bin));
  }
  std::vector<CategoryKey> order;
  for (std::size_t b = 0; b < k; ++b) {
    if (used[b]) order.emplace_back(std::string(kRateBinAxis), std::to_string(b));
  }
  return Registry::assemble(std::move(problems), std::move(order));
}

std::vector<CategoryKey> cross_axes(const AxisSpec& a, const AxisSpec& b) {
  if (a.labels.empty() || b.labels.empty()) {
    throw Error(Errc::EmptyAxis, "cannot cross an empty axis");
  }
  std::vector<CategoryKey> keys;
  keys.reserve(a.labels.size() * b.labels.size());
  for (const auto& la : a.labels) {
    for (const auto& lb : b.labels) {
      keys.emplace_back(std::vector<CategoryKey::Axis>{{a.name, la}, {b.name, lb}});
    }
  }
  return keys;
}

void save_registry(const Registry& registry, std::ostream& out) {
  for (std::size_t c = 0; c < registry.size(); ++c) {
    for (const auto& record : registry.pool(c)) {
      out << codec::escape(record.id) << '\t' << record.category.str() << '\t'
          << (record.success_rate ? codec::format_real(*record.success_rate) : std::string("-"))
          << '\t' << codec::base64_encode(record.payload) << '\n';
    }
  }
}

std::vector<ProblemRecord> read_problem_records(std::istream& in) {
  std::vector<ProblemRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = codec::split(line, '\t');
    if (fields.size() != 4) {
      throw Error(Errc::Parse, "registry line " + std::to_string(line_no) + ": expected 4 fields");
    }
    ProblemRecord record;
    record.id = codec::unescape(fields[0]);
    record.category = CategoryKey::parse(fields[1]);
    if (fields[2] != "-") record.success_rate = codec::parse_real(fields[2]);
    record.payload = codec::base64_decode(fields[3]);
    records.push_back(std::move(record));
  }
  return records;
}

Registry load_registry(std::istream& in) { return build_registry(read_problem_records(in)); }

}  // namespace sec
