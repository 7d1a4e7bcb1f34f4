#pragma once

#include <cstddef>

#include "fedhuber/common.hpp"

namespace fedhuber {

// One client's local data: n samples of p covariates and a response.
struct TaskDataset {
  DesignMatrix x;
  Vector y;
  std::size_t task_id = 0;

  Eigen::Index n() const { return x.rows(); }
  Eigen::Index p() const { return x.cols(); }

  // Throws ShapeError / DomainError when the invariants do not hold.
  void validate() const;
};

// Robustification threshold of the Huber loss; always positive and finite.
class HuberParams {
 public:
  explicit HuberParams(double sigma);
  double sigma() const { return sigma_; }

 private:
  double sigma_;
};

enum class Loss { huber, squared };

/// Huber loss: r^2/2 inside [-sigma, sigma], sigma*|r| - sigma^2/2 outside.
double huber_loss(double r, double sigma);

/// Derivative of huber_loss with respect to r, i.e. r clamped to [-sigma, sigma].
double huber_psi(double r, double sigma);

/// Mean Huber loss of the residuals y - x * beta.
double huber_objective(const TaskDataset& d, const Vector& beta, double sigma);

/// Gradient of huber_objective in beta: -(1/n) sum_i psi(r_i) x_i.
Vector huber_gradient(const TaskDataset& d, const Vector& beta, double sigma);

/// (1/2n) * ||y - x * beta||^2.
double l2_objective(const TaskDataset& d, const Vector& beta);

/// Gradient of l2_objective: -(1/n) x^T (y - x * beta).
Vector l2_gradient(const TaskDataset& d, const Vector& beta);

// Dispatch on the loss switch; sigma is ignored for Loss::squared.
double loss_objective(const TaskDataset& d, const Vector& beta, Loss loss,
                      double sigma);
Vector loss_gradient(const TaskDataset& d, const Vector& beta, Loss loss,
                     double sigma);

}  // namespace fedhuber
