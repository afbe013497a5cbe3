#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace tokenprobe {

// splitmix64 finalizer folded over the parts; used to derive independent
// seeds for (master, concept, k, trial) style cells.
std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts);

// Seeded generator whose draws are identical across standard libraries
// (std distributions are implementation-defined, so they are avoided here).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, n), n > 0, by rejection.
  std::uint64_t uniform_index(std::uint64_t n);

  // Uniform in [0, 1) with 53 random bits.
  double uniform01();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[uniform_index(i)]);
    }
  }

  // m distinct indices from [0, n) chosen uniformly, returned ascending.
  // m >= n returns every index.
  std::vector<std::size_t> choose(std::size_t n, std::size_t m);

 private:
  std::mt19937_64 engine_;
};

}  // namespace tokenprobe
