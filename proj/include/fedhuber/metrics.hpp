#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "fedhuber/common.hpp"

namespace fedhuber {

struct MetricsReport {
  std::string method;
  std::size_t replication = 0;
  double mse = 0.0;
  double fp = 0.0;
  double fn = 0.0;
  // NaN for methods that produce no labels.
  double rand_index = 0.0;
};

struct SupportErrors {
  double fp = 0.0;
  double fn = 0.0;
};

/// (1/M) sum_m ||estimate_m - truth_m||^2.
double mse(const std::vector<Vector>& estimates, const std::vector<Vector>& truth);

/// Average per-task counts of falsely selected and missed coordinates. An
/// estimate coordinate counts as selected iff it is exactly nonzero.
SupportErrors fp_fn(const std::vector<Vector>& estimates,
                    const std::vector<Vector>& truth);

/// Fraction of task pairs on which two labelings agree.
double rand_index(const Labels& a, const Labels& b);

}  // namespace fedhuber
