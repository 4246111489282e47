#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace risemar {

// All randomness in the project flows through explicitly seeded Rng
// instances, so a full pipeline re-run is reproducible on one machine.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(eng_);
  }
  double normal(double mu = 0.0, double sigma = 1.0) {
    return std::normal_distribution<double>(mu, sigma)(eng_);
  }
  std::int64_t randint(std::int64_t lo, std::int64_t hi_inclusive) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi_inclusive)(eng_);
  }
  double poisson(double lambda) {
    if (lambda <= 0.0) return 0.0;
    return static_cast<double>(std::poisson_distribution<long long>(lambda)(eng_));
  }
  double beta(double a, double b) {
    std::gamma_distribution<double> ga(a, 1.0), gb(b, 1.0);
    const double x = ga(eng_), y = gb(eng_);
    return x / (x + y);
  }
  template <typename T>
  void shuffle(std::vector<T>& v) {
    std::shuffle(v.begin(), v.end(), eng_);
  }
  std::uint64_t next_seed() { return eng_(); }

  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
};

}  // namespace risemar
