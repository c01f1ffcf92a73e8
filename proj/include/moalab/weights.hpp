#pragma once

#include <cstddef>
#include <vector>

#include "moalab/errors.hpp"

namespace moalab {

// Point on the N-simplex balancing objectives: entries >= 0, sum 1 within 1e-9.
struct WeightVector {
  std::vector<double> w;

  static WeightVector make(std::vector<double> values);  // InvalidWeight
  static WeightVector vertex(std::size_t n, std::size_t i);

  std::size_t size() const { return w.size(); }
  double operator[](std::size_t i) const { return w[i]; }

  void validate() const;
  bool operator==(const WeightVector&) const = default;
};

// [w, 1-w] for w in {0, 1/(points-1), ..., 1}; the two-objective default grid.
std::vector<WeightVector> two_objective_grid(int points = 6);

}  // namespace moalab
