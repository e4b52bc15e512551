#pragma once

#include <cstdint>
#include <string_view>

#include "cflow/tensor.hpp"

namespace cflow {

/// Counter-based generator (SplitMix64 over a keyed counter). A stream is
/// identified by (seed, purpose, index), so draws for a given training step
/// never depend on what other streams consumed.
class Rng {
 public:
  explicit Rng(std::uint64_t key) : key_(key) {}

  static Rng stream(std::uint64_t seed, std::string_view purpose, std::uint64_t index = 0);
  Rng split(std::string_view purpose, std::uint64_t index = 0) const;

  std::uint64_t next_u64();
  /// Uniform on [0, 1).
  double uniform();
  double normal();
  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n);
  Tensor normal_tensor(Shape shape);

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t fnv1a64(std::string_view text);

}  // namespace cflow
