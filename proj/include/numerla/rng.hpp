#pragma once

#include <cstdint>
#include <random>

namespace numerla {

// Deterministic random stream. All draws go through the helpers below so a
// given seed replays the exact same episode trace; raw doubles are built from
// the top 53 bits of the engine output instead of std::uniform_real_distribution,
// whose output is implementation defined.
class RngStream {
 public:
  explicit RngStream(uint64_t seed) : eng_(seed) {}

  // [0, 1)
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive on both ends. Modulo bias is negligible for the small spans
  // used here and keeps the draw a single engine call.
  int uniform_int(int lo, int hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(eng_() % span);
  }

  uint64_t next_u64() { return eng_(); }

  // Splittable counter scheme: mixes (base, index) into an independent seed,
  // so per-episode streams can be created in any order (parallel runs included).
  static uint64_t derive(uint64_t base, uint64_t index) {
    uint64_t z = base + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace numerla
