#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace cmbac {

/// Seeded random stream used by every stochastic component.
///
/// Wraps `std::mt19937_64`. Uniform and normal variates are computed directly
/// from raw engine output (no cached state in distribution objects), so the
/// full stream state is the engine state and round-trips through `state()` /
/// `set_state()`.
///
/// Named streams are derived from a root seed with `Rng::derive(root, name)`:
/// the stream seed is `splitmix64(root ^ fnv1a64(name))`. Components own their
/// own stream, so adding draws to one component never shifts another.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  static Rng derive(std::uint64_t root_seed, std::string_view name);
  static std::uint64_t derive_seed(std::uint64_t root_seed, std::string_view name);

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::size_t uniform_int(std::size_t n);
  // Standard normal via Box-Muller (one draw per call, nothing cached).
  double normal();

  std::string state() const;
  void set_state(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace cmbac
