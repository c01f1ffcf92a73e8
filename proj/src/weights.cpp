#include "moalab/weights.hpp"

#include <cmath>
#include <string>

namespace moalab {

void WeightVector::validate() const {
  if (w.empty()) raise(Errc::invalid_weight, "empty weight vector");
  double sum = 0.0;
  for (double v : w) {
    if (!(v >= 0.0)) raise(Errc::invalid_weight, "negative or NaN weight entry");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    raise(Errc::invalid_weight, "weights sum to " + std::to_string(sum) + ", expected 1");
  }
}

WeightVector WeightVector::make(std::vector<double> values) {
  WeightVector out{std::move(values)};
  out.validate();
  return out;
}

WeightVector WeightVector::vertex(std::size_t n, std::size_t i) {
  if (n == 0 || i >= n) raise(Errc::invalid_weight, "vertex index out of range");
  std::vector<double> v(n, 0.0);
  v[i] = 1.0;
  return WeightVector{std::move(v)};
}

std::vector<WeightVector> two_objective_grid(int points) {
  if (points < 1) raise(Errc::invalid_weight, "grid needs at least one point");
  std::vector<WeightVector> grid;
  grid.reserve(static_cast<std::size_t>(points));
  for (int k = 0; k < points; ++k) {
    const double a = points == 1 ? 1.0 : static_cast<double>(k) / (points - 1);
    grid.push_back(WeightVector::make({a, 1.0 - a}));
  }
  return grid;
}

}  // namespace moalab
