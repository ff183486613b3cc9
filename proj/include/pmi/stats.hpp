#pragma once

#include <span>
#include <vector>

namespace pmi::stats {

/// Five-number summary used by the distribution box plots.
struct BoxStats {
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
  std::size_t count = 0;
};

/// Quantile of an ascending sequence by linear interpolation between order
/// statistics at position (n - 1) * p.
double quantile_sorted(std::span<const double> sorted, double p);

/// Throws pmi::Error when values is empty.
BoxStats box_stats(std::span<const double> values);

double mean(std::span<const double> values);

/// Standard deviation with the n - 1 denominator; 0 for a single value.
double sample_stddev(std::span<const double> values);

}  // namespace pmi::stats
