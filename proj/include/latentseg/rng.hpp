#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace latentseg {

// Deterministic random stream. Distributions are implemented here rather
// than with std:: distribution objects so that sequences are identical
// across standard libraries.
class Rng {
 public:
  Rng() : gen_(0) {}
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t raw() { return gen_(); }

  // Uniform in [0,1).
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi] inclusive.
  long uniform_int(long lo, long hi) {
    return lo + static_cast<long>(uniform() * static_cast<double>(hi - lo + 1));
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller; one value per call, cache discarded for simplicity.
  double gaussian() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  std::string serialize() const {
    std::ostringstream os;
    os << gen_;
    return os.str();
  }

  void deserialize(const std::string& s) {
    std::istringstream is(s);
    is >> gen_;
  }

  // Derive an independent stream from a base seed and a role tag.
  static Rng derive(std::uint64_t seed, std::uint64_t role) {
    // splitmix64 over the combined value
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (role + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return Rng(z ^ (z >> 31));
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace latentseg
