#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace faultdet {

// Deterministic RNG. Uniform draws are derived from raw mt19937_64 output so
// annotation streams are bit-identical across standard libraries; normal
// draws use an explicit Box-Muller transform for the same reason.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive integer range.
  int uniform_int(int lo, int hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(gen_() % span);
  }

  double normal();

  // Serialization for checkpoint round-trips.
  std::string state() const;
  void set_state(const std::string& s);

  static std::uint64_t mix(std::uint64_t a, std::uint64_t b);

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace faultdet
