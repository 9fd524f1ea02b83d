#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace vmt {

// Deterministic random stream. Every consumer of randomness derives its own
// stream from the single experiment seed via a stable label, so adding or
// removing one consumer never shifts the draws seen by another.
//
// Value mapping (uniform/normal/gamma/beta) is implemented here rather than
// with std::*_distribution so that sequences are identical across standard
// library implementations. State round-trips exactly through serialize().
class RngStream {
 public:
  explicit RngStream(uint64_t seed);

  static uint64_t derive_seed(uint64_t root, std::string_view label);
  RngStream derive(std::string_view label) const;

  uint64_t seed() const { return seed_; }

  uint64_t next_u64();
  double uniform();                        // [0, 1)
  double uniform(double lo, double hi);
  int64_t uniform_int(int64_t n);          // [0, n), unbiased
  double normal();
  double gamma(double shape);              // scale 1, shape > 0
  double beta_symmetric(double alpha);     // Beta(alpha, alpha)
  std::vector<int64_t> permutation(int64_t n);

  std::string serialize() const;
  static RngStream deserialize(const std::string& blob);

  bool operator==(const RngStream& o) const;

 private:
  uint64_t seed_ = 0;
  std::mt19937_64 gen_;
  bool has_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

}  // namespace vmt
