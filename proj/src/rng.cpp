#include "vmt/rng.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "vmt/errors.hpp"

namespace vmt {

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

uint64_t fnv1a(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

RngStream::RngStream(uint64_t seed) : seed_(seed), gen_(splitmix64(seed)) {}

uint64_t RngStream::derive_seed(uint64_t root, std::string_view label) {
  return splitmix64(root ^ fnv1a(label));
}

RngStream RngStream::derive(std::string_view label) const {
  return RngStream(derive_seed(seed_, label));
}

uint64_t RngStream::next_u64() { return gen_(); }

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

int64_t RngStream::uniform_int(int64_t n) {
  if (n <= 0) throw ValueError("rng: uniform_int needs n > 0");
  const uint64_t un = static_cast<uint64_t>(n);
  const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return static_cast<int64_t>(x % un);
}

double RngStream::normal() {
  if (has_cached_normal_) {
    has_cached_normal_ = false;
    return cached_normal_;
  }
  // Marsaglia polar method; produces two variates, caches one.
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double f = std::sqrt(-2.0 * std::log(s) / s);
  cached_normal_ = v * f;
  has_cached_normal_ = true;
  return u * f;
}

double RngStream::gamma(double shape) {
  if (!(shape > 0.0)) throw ValueError("rng: gamma shape must be positive");
  if (shape < 1.0) {
    // Boost to shape+1 and scale back.
    const double g = gamma(shape + 1.0);
    const double u = uniform();
    return g * std::pow(u, 1.0 / shape);
  }
  // Marsaglia-Tsang squeeze.
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

double RngStream::beta_symmetric(double alpha) {
  if (!(alpha > 0.0)) throw ValueError("rng: beta alpha must be positive");
  const double x = gamma(alpha);
  const double y = gamma(alpha);
  const double s = x + y;
  if (s == 0.0) return 0.5;
  return x / s;
}

std::vector<int64_t> RngStream::permutation(int64_t n) {
  if (n < 0) throw ValueError("rng: permutation needs n >= 0");
  std::vector<int64_t> p(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
  for (int64_t i = n - 1; i > 0; --i) {
    const int64_t j = uniform_int(i + 1);
    std::swap(p[static_cast<size_t>(i)], p[static_cast<size_t>(j)]);
  }
  return p;
}

std::string RngStream::serialize() const {
  uint64_t cached_bits = 0;
  static_assert(sizeof(cached_bits) == sizeof(cached_normal_));
  std::memcpy(&cached_bits, &cached_normal_, sizeof(cached_bits));
  std::ostringstream os;
  os << seed_ << ' ' << (has_cached_normal_ ? 1 : 0) << ' ' << cached_bits << ' ' << gen_;
  return os.str();
}

RngStream RngStream::deserialize(const std::string& blob) {
  std::istringstream is(blob);
  uint64_t seed = 0;
  int has_cached = 0;
  uint64_t cached_bits = 0;
  is >> seed >> has_cached >> cached_bits;
  RngStream s(seed);
  is >> s.gen_;
  if (!is) throw IoError("rng: malformed serialized stream");
  s.has_cached_normal_ = has_cached != 0;
  std::memcpy(&s.cached_normal_, &cached_bits, sizeof(cached_bits));
  return s;
}

bool RngStream::operator==(const RngStream& o) const {
  return seed_ == o.seed_ && gen_ == o.gen_ && has_cached_normal_ == o.has_cached_normal_ &&
         cached_normal_ == o.cached_normal_;
}

}  // namespace vmt
