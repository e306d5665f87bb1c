#include "cdgpa/random.hpp"

#include <vector>

namespace cdgpa {

Tensor uniform_tensor(Rng& rng, std::size_t rows, std::size_t cols, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(rows * cols);
  for (double& x : v) x = dist(rng);
  return Tensor(rows, cols, std::move(v));
}

Tensor normal_tensor(Rng& rng, std::size_t rows, std::size_t cols, double mean, double stddev) {
  std::normal_distribution<double> dist(mean, stddev);
  std::vector<double> v(rows * cols);
  for (double& x : v) x = dist(rng);
  return Tensor(rows, cols, std::move(v));
}

}  // namespace cdgpa
