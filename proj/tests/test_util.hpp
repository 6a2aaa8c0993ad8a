#pragma once

#include <random>

#include "tpgrad/linalg.hpp"

namespace tpgrad::testing {

inline Mat gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Mat m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = n(rng);
  return m;
}

inline Vec gaussian_vec(Eigen::Index n, std::mt19937_64& rng, double scale = 1.0) {
  return gaussian(n, 1, rng, scale).col(0);
}

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return static_cast<ErrorCode>(-1);
}

}  // namespace tpgrad::testing
