#ifndef SMOOTHLAB_RANDOM_HPP
#define SMOOTHLAB_RANDOM_HPP

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <string_view>
#include <vector>

namespace smoothlab {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
/// A pure function of (counter, key); no internal state.
class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter generate(Counter ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
      ctr = single_round(ctr, key);
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

  static Counter single_round(const Counter& c, const Key& k) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * c[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * c[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
  }
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Child seed for a named pipeline stage.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return splitmix64(seed ^ splitmix64(h));
}

/// Stream identifiers; each realizes one independent family of noises.
enum class Stream : std::uint32_t {
  Initial = 1,
  Signal = 2,
  Observation = 3,
  Backward = 4,
  BackwardRestart = 5,
  BackwardAlternate = 6,
  Terminal = 7,
  Resample = 8,
  Generic = 9,
};

/// Standard normal draws keyed by (seed, stream, path, step, component).
class NoiseStream {
 public:
  NoiseStream(std::uint64_t seed, Stream stream) : NoiseStream(seed, static_cast<std::uint32_t>(stream)) {}
  NoiseStream(std::uint64_t seed, std::uint32_t stream_id)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        stream_id_(stream_id) {}

  /// Two normals per counter block (Box-Muller on two 53-bit uniforms).
  double normal(std::uint64_t path, std::uint64_t step, std::uint32_t component) const {
    const auto block = draw_block(path, step, component / 2);
    const double u1 = to_unit(block[0], block[1]);
    const double u2 = to_unit(block[2], block[3]);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    return (component % 2 == 0) ? r * std::cos(theta) : r * std::sin(theta);
  }

  /// Fills `out` with components 0..out.size()-1 for (path, step).
  template <class Out>
  void normals(std::uint64_t path, std::uint64_t step, Out& out) const {
    const auto n = static_cast<std::uint32_t>(out.size());
    for (std::uint32_t k = 0; k < n; k += 2) {
      const auto block = draw_block(path, step, k / 2);
      const double r = std::sqrt(-2.0 * std::log(to_unit(block[0], block[1])));
      const double theta = 2.0 * std::numbers::pi * to_unit(block[2], block[3]);
      out[k] = r * std::cos(theta);
      if (k + 1 < n) out[k + 1] = r * std::sin(theta);
    }
  }

  /// Uniform on (0, 1).
  double uniform(std::uint64_t path, std::uint64_t step, std::uint32_t component) const {
    const auto block = draw_block(path, step, component / 2);
    return (component % 2 == 0) ? to_unit(block[0], block[1]) : to_unit(block[2], block[3]);
  }

  std::uint32_t stream_id() const { return stream_id_; }

 private:
  Philox4x32::Counter draw_block(std::uint64_t path, std::uint64_t step, std::uint32_t block) const {
    // Path and step occupy one word each; the block index shares the last
    // word with the stream id. Paths beyond 2^32 fold their high bits in.
    const Philox4x32::Counter ctr{
        static_cast<std::uint32_t>(path), static_cast<std::uint32_t>(step),
        block ^ static_cast<std::uint32_t>(path >> 32) << 16,
        stream_id_ ^ static_cast<std::uint32_t>(step >> 32) << 16};
    return Philox4x32::generate(ctr, key_);
  }

  static double to_unit(std::uint32_t hi, std::uint32_t lo) {
    const std::uint64_t bits = ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 11;
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
  }

  Philox4x32::Key key_;
  std::uint32_t stream_id_;
};

/// n_paths x dim standard normal draws for one step, path-major.
inline std::vector<double> brownian_increments(const NoiseStream& stream, std::uint64_t step,
                                               std::size_t n_paths, std::size_t dim) {
  std::vector<double> out(n_paths * dim);
  for (std::size_t p = 0; p < n_paths; ++p)
    for (std::size_t k = 0; k < dim; ++k)
      out[p * dim + k] = stream.normal(p, step, static_cast<std::uint32_t>(k));
  return out;
}

}  // namespace smoothlab

#endif  // SMOOTHLAB_RANDOM_HPP
