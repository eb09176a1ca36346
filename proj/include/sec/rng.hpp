#pragma once

// Counter-based random streams. Every draw is Philox4x32-10 applied to
// (position, stream id, tag) under a key taken from the 64-bit seed, so a
// stream is fully described by (seed, stream id, position) and can be
// checkpointed or replayed by any implementation of the same algorithm.

#include <array>
#include <cstdint>

#include <Eigen/Core>

namespace sec {

struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  /// Ten-round Philox4x32 bijection (Salmon et al., SC'11).
  static Counter generate(Counter counter, Key key) noexcept;
};

enum class StreamId : std::uint32_t {
  Category = 0,
  Problem = 1,
  Learner = 2,
};

class RandomStream {
 public:
  RandomStream() = default;
  RandomStream(std::uint64_t seed, StreamId stream, std::uint64_t position = 0) noexcept
      : seed_(seed), stream_(stream), position_(position) {}

  /// Block `position` is Philox((pos_lo, pos_hi, stream, 'SEC1'), (seed_lo, seed_hi));
  /// the draw is words 0 and 1 joined little-endian. Advances position by one.
  std::uint64_t next_u64() noexcept;

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer on [0, bound); unbiased (Lemire's multiply-shift with rejection).
  std::uint64_t below(std::uint64_t bound) noexcept;

  bool bernoulli(double p) noexcept { return uniform() < p; }

  std::uint64_t seed() const noexcept { return seed_; }
  StreamId stream() const noexcept { return stream_; }
  std::uint64_t position() const noexcept { return position_; }

  friend bool operator==(const RandomStream&, const RandomStream&) = default;

 private:
  std::uint64_t seed_ = 0;
  StreamId stream_ = StreamId::Category;
  std::uint64_t position_ = 0;
};

/// Inverse-CDF draw from a probability vector using one uniform. Falls back to
/// the last positive entry if rounding leaves the cumulative sum short of u.
template <typename Derived>
Eigen::Index draw_categorical(const Eigen::MatrixBase<Derived>& probabilities,
                              RandomStream& stream) {
  const double u = stream.uniform();
  double cumulative = 0.0;
  Eigen::Index last_positive = -1;
  for (Eigen::Index i = 0; i < probabilities.size(); ++i) {
    const double p = static_cast<double>(probabilities(i));
    if (p <= 0.0) continue;
    last_positive = i;
    cumulative += p;
    if (u < cumulative) return i;
  }
  return last_positive;
}

}  // namespace sec
