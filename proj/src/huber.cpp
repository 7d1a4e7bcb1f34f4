#include "fedhuber/huber.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace fedhuber {

namespace {

void check_sigma(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw DomainError("huber: sigma must be positive and finite, got " +
                      std::to_string(sigma));
  }
}

void check_beta(const TaskDataset& d, const Vector& beta) {
  if (beta.size() != d.p()) {
    throw ShapeError("coefficient length " + std::to_string(beta.size()) +
                     " does not match p = " + std::to_string(d.p()) +
                     " of task " + std::to_string(d.task_id));
  }
}

// Residual r_i = y_i - x_i^T beta with a fixed summation order.
double residual(const TaskDataset& d, const Vector& beta, Eigen::Index i) {
  double fit = 0.0;
  for (Eigen::Index j = 0; j < d.p(); ++j) {
    if (beta[j] != 0.0) fit += d.x(i, j) * beta[j];
  }
  return d.y[i] - fit;
}

}  // namespace

void TaskDataset::validate() const {
  if (x.rows() < 1 || x.cols() < 1) {
    throw ShapeError("task " + std::to_string(task_id) +
                     ": design matrix must have n >= 1 and p >= 1");
  }
  if (y.size() != x.rows()) {
    throw ShapeError("task " + std::to_string(task_id) + ": response length " +
                     std::to_string(y.size()) + " != row count " +
                     std::to_string(x.rows()));
  }
  if (!x.allFinite() || !y.allFinite()) {
    throw DomainError("task " + std::to_string(task_id) +
                      ": non-finite entries in data");
  }
}

HuberParams::HuberParams(double sigma) : sigma_(sigma) { check_sigma(sigma); }

double huber_loss(double r, double sigma) {
  check_sigma(sigma);
  if (!std::isfinite(r)) throw DomainError("huber_loss: non-finite residual");
  const double a = std::abs(r);
  if (a <= sigma) return 0.5 * r * r;
  return sigma * a - 0.5 * sigma * sigma;
}

double huber_psi(double r, double sigma) {
  return std::clamp(r, -sigma, sigma);
}

double huber_objective(const TaskDataset& d, const Vector& beta, double sigma) {
  check_sigma(sigma);
  check_beta(d, beta);
  double total = 0.0;
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    total += huber_loss(residual(d, beta, i), sigma);
  }
  return total / static_cast<double>(d.n());
}

Vector huber_gradient(const TaskDataset& d, const Vector& beta, double sigma) {
  check_sigma(sigma);
  check_beta(d, beta);
  Vector grad = Vector::Zero(d.p());
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    const double psi = huber_psi(residual(d, beta, i), sigma);
    if (psi == 0.0) continue;
    for (Eigen::Index j = 0; j < d.p(); ++j) grad[j] -= psi * d.x(i, j);
  }
  grad /= static_cast<double>(d.n());
  return grad;
}

double l2_objective(const TaskDataset& d, const Vector& beta) {
  check_beta(d, beta);
  double total = 0.0;
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    const double r = residual(d, beta, i);
    total += 0.5 * r * r;
  }
  return total / static_cast<double>(d.n());
}

Vector l2_gradient(const TaskDataset& d, const Vector& beta) {
  check_beta(d, beta);
  Vector grad = Vector::Zero(d.p());
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    const double r = residual(d, beta, i);
    if (r == 0.0) continue;
    for (Eigen::Index j = 0; j < d.p(); ++j) grad[j] -= r * d.x(i, j);
  }
  grad /= static_cast<double>(d.n());
  return grad;
}

double loss_objective(const TaskDataset& d, const Vector& beta, Loss loss,
                      double sigma) {
  return loss == Loss::huber ? huber_objective(d, beta, sigma)
                             : l2_objective(d, beta);
}

Vector loss_gradient(const TaskDataset& d, const Vector& beta, Loss loss,
                     double sigma) {
  return loss == Loss::huber ? huber_gradient(d, beta, sigma)
                             : l2_gradient(d, beta);
}

}  // namespace fedhuber
