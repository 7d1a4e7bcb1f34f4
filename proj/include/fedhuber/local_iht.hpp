#pragma once

#include <cstddef>
#include <functional>
#include <optional>

#include "fedhuber/common.hpp"
#include "fedhuber/huber.hpp"

namespace fedhuber {

struct LocalFitConfig {
  double eta = 0.1;
  double sigma = 3.0;
  std::size_t s = 1;
  std::size_t t_max = 500;
  // Early stop once ||beta_t - beta_{t-1}||_2 < tol; 0 disables it.
  double tol = 1e-8;
  Loss loss = Loss::huber;

  void validate() const;
};

// Objective value above which a fit is declared divergent.
inline constexpr double kDivergenceLimit = 1e12;

// Called after every iteration with (t, beta_t); t starts at 1.
using IterateObserver = std::function<void(std::size_t, const Vector&)>;

/// Projected gradient descent on the local loss with hard thresholding at s.
/// Starts from `init` (zero vector when absent). Throws DivergenceError when
/// the iterate stops being finite or the objective exceeds kDivergenceLimit.
Vector local_iht_fit(const TaskDataset& d, const LocalFitConfig& cfg,
                     const std::optional<Vector>& init = std::nullopt,
                     const IterateObserver& observer = {});

/// Iterative soft-thresholding for Huber + penalty * ||beta||_1, used as an
/// optional warm start for local_iht_fit.
Vector l1_huber_init(const TaskDataset& d, double sigma, double penalty,
                     std::size_t iters, double eta);

// Throws DivergenceError if beta or its objective has blown up.
void check_divergence(const TaskDataset& d, const Vector& beta,
                      double objective, double eta);

}  // namespace fedhuber
