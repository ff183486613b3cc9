#pragma once

#include <optional>

#include "pmi/random.hpp"

namespace pmi {

inline constexpr int kPmiClassCount = 18;

/// Largest PMI observed in the reference data; upper bound for class 18 draws.
inline constexpr double kDefaultClass18Cap = 1674.0;

/// One 24-hour PMI bin. Bounds are the integer labels: class 1 is 0-24 h,
/// class c (2..17) is (24(c-1)+1)-24c h, class 18 starts at 409 h and is open.
struct PmiClass {
  int index = 1;
  double lo = 0.0;
  std::optional<double> hi;  // empty for class 18
};

/// Throws pmi::Error for an index outside 1..18.
PmiClass pmi_class(int index);

/// Class of a fractional PMI: 1 when h <= 24, else min(18, ceil((h - 24) / 24) + 1),
/// with everything at or above 409 h in class 18. Throws for negative input.
int pmi_to_class(double pmi_hours);

/// Uniform draw over [lo, hi] of the class; class 18 uses [409, class18_cap].
double sample_pmi_within_class(int class_index, Rng& draw, double class18_cap = kDefaultClass18Cap);

}  // namespace pmi
