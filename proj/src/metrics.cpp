#include "fedhuber/metrics.hpp"

#include <string>

namespace fedhuber {

namespace {

void check_shapes(const std::vector<Vector>& estimates,
                  const std::vector<Vector>& truth) {
  if (estimates.size() != truth.size() || estimates.empty()) {
    throw ShapeError("metrics: need matching non-empty task lists, got " +
                     std::to_string(estimates.size()) + " and " +
                     std::to_string(truth.size()));
  }
  for (std::size_t m = 0; m < truth.size(); ++m) {
    if (estimates[m].size() != truth[m].size()) {
      throw ShapeError("metrics: length mismatch for task " + std::to_string(m));
    }
  }
}

}  // namespace

double mse(const std::vector<Vector>& estimates, const std::vector<Vector>& truth) {
  check_shapes(estimates, truth);
  double total = 0.0;
  for (std::size_t m = 0; m < truth.size(); ++m) {
    total += (estimates[m] - truth[m]).squaredNorm();
  }
  return total / static_cast<double>(truth.size());
}

SupportErrors fp_fn(const std::vector<Vector>& estimates,
                    const std::vector<Vector>& truth) {
  check_shapes(estimates, truth);
  std::size_t fp = 0;
  std::size_t fn = 0;
  for (std::size_t m = 0; m < truth.size(); ++m) {
    for (Eigen::Index j = 0; j < truth[m].size(); ++j) {
      const bool selected = estimates[m][j] != 0.0;
      const bool active = truth[m][j] != 0.0;
      if (selected && !active) ++fp;
      if (!selected && active) ++fn;
    }
  }
  const auto m_count = static_cast<double>(truth.size());
  return {static_cast<double>(fp) / m_count, static_cast<double>(fn) / m_count};
}

double rand_index(const Labels& a, const Labels& b) {
  if (a.size() != b.size()) throw ShapeError("rand_index: labelings differ in length");
  if (a.size() < 2) throw ParameterError("rand_index: need at least two tasks");
  std::size_t agree = 0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      if ((a[i] == a[j]) == (b[i] == b[j])) ++agree;
      ++pairs;
    }
  }
  return static_cast<double>(agree) / static_cast<double>(pairs);
}

}  // namespace fedhuber
