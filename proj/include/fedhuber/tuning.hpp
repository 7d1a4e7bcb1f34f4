#pragma once

#include <cstddef>
#include <vector>

#include "fedhuber/federated.hpp"

namespace fedhuber {

struct TuningGrid {
  std::vector<std::size_t> k_values;
  std::vector<std::size_t> s_values;
  // Empty means q = s at every grid point.
  std::vector<std::size_t> q_values;
  std::vector<double> lambda_values;
  std::vector<double> eta_values;
  double c1 = 1.0;
  double c2 = 1.5;
};

struct GridPoint {
  std::size_t k = 1;
  std::size_t s = 1;
  std::size_t q = 1;
  double lambda = 0.0;
};

struct TuningRow {
  GridPoint point;
  double loss_term = 0.0;
  double criterion = 0.0;
};

struct ModelSelection {
  FederationConfig best;
  GridPoint best_point;
  double best_criterion = 0.0;
  std::vector<TuningRow> table;
};

/// Step size with the lowest final training objective of a local fit;
/// divergent candidates are skipped and ties go to the smaller step.
double select_eta(const TaskDataset& d, const std::vector<double>& etas,
                  const LocalFitConfig& cfg);

/// Mean training Huber loss over all samples of all tasks.
double training_huber_loss(const std::vector<TaskDataset>& datasets,
                           const std::vector<Vector>& estimates, double sigma);

/// loss + (log p / n) * (c1 * s + c2 * K), with n the mean task sample size.
double selection_criterion(double loss_term, std::size_t p, double n,
                           std::size_t s, std::size_t k, double c1, double c2);

/// Runs the federated fit at every (K, s, q, lambda) grid point in
/// lexicographic order and returns the point minimizing the criterion.
ModelSelection select_model(const std::vector<TaskDataset>& datasets,
                            const TuningGrid& grid,
                            const FederationConfig& fed_template);

}  // namespace fedhuber
