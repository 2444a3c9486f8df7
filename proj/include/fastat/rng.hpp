#pragma once

#include <cmath>
#include <cstdint>

namespace fastat {

// All randomness in the library flows through this generator. One u64 word of
// state, so checkpoints can persist it and restarted runs replay bit-exactly.
// (std::mt19937 + distributions would work too, but distribution output is
// implementation-defined and the state is awkward to serialize.)
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  // splitmix64
  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1), 53-bit resolution
  double next_u01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_u01(); }

  // standard normal via Box-Muller; draws a fixed two values per call so the
  // state never carries a hidden cached spare
  double gaussian() {
    double u1 = next_u01();
    double u2 = next_u01();
    while (u1 <= 0.0) u1 = next_u01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  // uniform integer in [0, n)
  uint64_t below(uint64_t n) { return next_u64() % n; }

  uint64_t state() const { return state_; }
  void set_state(uint64_t s) { state_ = s; }

 private:
  uint64_t state_;
};

// Independent named streams derived from one experiment seed. Every stochastic
// event is keyed by (seed, stream, coordinates) instead of consuming a shared
// sequence, so batch order, thread count, and checkpoint boundaries cannot
// perturb it.
enum class Stream : uint64_t {
  param_init = 1,
  store_init = 2,
  shuffle = 3,
  attack_init = 4,
  blob_gen = 5,
  digit_gen = 6,
  eval_attack = 7,
};

namespace detail {
inline uint64_t mix64(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}
}  // namespace detail

inline uint64_t derive_seed(uint64_t root, Stream stream, uint64_t a = 0, uint64_t b = 0) {
  uint64_t h = detail::mix64(root ^ (static_cast<uint64_t>(stream) * 0x9e3779b97f4a7c15ull));
  h = detail::mix64(h ^ (a + 0xbf58476d1ce4e5b9ull));
  h = detail::mix64(h ^ (b + 0x94d049bb133111ebull));
  return h;
}

inline Rng derive_rng(uint64_t root, Stream stream, uint64_t a = 0, uint64_t b = 0) {
  return Rng(derive_seed(root, stream, a, b));
}

}  // namespace fastat
