#pragma once

#include <cstdint>
#include <random>

#include "dgp/types.hpp"

namespace dgp {

/// Identifies a reproducible stream of random draws.
struct RngHandle {
  std::uint64_t seed = 0;
  std::uint32_t stream = 0;

  RngHandle with_stream(std::uint32_t s) const { return {seed, s}; }
  friend bool operator==(const RngHandle&, const RngHandle&) = default;
};

/// Standard normal generator bound to one RngHandle. Two generators built
/// from equal handles produce bit-identical sequences.
class NormalStream {
 public:
  explicit NormalStream(const RngHandle& handle) {
    std::seed_seq seq{static_cast<std::uint32_t>(handle.seed & 0xffffffffu),
                      static_cast<std::uint32_t>(handle.seed >> 32), handle.stream,
                      0x9e3779b9u};
    engine_.seed(seq);
  }

  double operator()() { return normal_(engine_); }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

/// A frozen block of standard normal draws, one column per Monte-Carlo sample.
using NoiseBlock = Matrix<double>;

inline NoiseBlock draw_standard_normals(Index rows, Index cols, const RngHandle& handle) {
  NormalStream stream(handle);
  NoiseBlock out(rows, cols);
  // Column-major fill: column s only depends on the draws for samples <= s.
  for (Index c = 0; c < cols; ++c)
    for (Index r = 0; r < rows; ++r) out(r, c) = stream();
  return out;
}

}  // namespace dgp
