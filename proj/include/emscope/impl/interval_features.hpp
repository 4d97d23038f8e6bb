#pragma once

#include <cmath>
#include <string>

namespace emscope {

template <typename Derived>
VectorXd interval_features(const Eigen::MatrixBase<Derived>& samples, std::span<const Interval> intervals) {
  EIGEN_STATIC_ASSERT_VECTOR_ONLY(Derived)
  const Index n = samples.size();
  VectorXd out(3 * static_cast<Index>(intervals.size()));
  Index slot = 0;
  for (const Interval& iv : intervals) {
    if (iv.length <= 0) throw Error(Errc::zero_length_interval, "interval at " + std::to_string(iv.start));
    if (iv.start < 0 || iv.start + iv.length > n) {
      throw Error(Errc::invalid_argument, "interval exceeds window of length " + std::to_string(n));
    }
    const auto segment = samples.segment(iv.start, iv.length);
    const double len = static_cast<double>(iv.length);
    const double mean = segment.sum() / len;
    const double centre = 0.5 * (len - 1.0);
    double sq = 0.0;
    double cross = 0.0;
    double xx = 0.0;
    for (Index i = 0; i < iv.length; ++i) {
      const double d = segment(i) - mean;
      const double x = static_cast<double>(i) - centre;
      sq += d * d;
      cross += x * d;
      xx += x * x;
    }
    out(slot++) = mean;
    out(slot++) = std::sqrt(sq / len);
    out(slot++) = xx > 0.0 ? cross / xx : 0.0;
  }
  return out;
}

}  // namespace emscope
