#include "fedhuber/local_iht.hpp"

#include <cmath>
#include <sstream>
#include <string>

#include "fedhuber/projection.hpp"

namespace fedhuber {

void LocalFitConfig::validate() const {
  if (!(eta > 0.0) || !std::isfinite(eta)) {
    throw ParameterError("local fit: eta must be positive");
  }
  if (loss == Loss::huber && (!(sigma > 0.0) || !std::isfinite(sigma))) {
    throw ParameterError("local fit: sigma must be positive");
  }
  if (s < 1) throw ParameterError("local fit: s must be >= 1");
  if (t_max < 1) throw ParameterError("local fit: t_max must be >= 1");
  if (!(tol >= 0.0)) throw ParameterError("local fit: tol must be >= 0");
}

void check_divergence(const TaskDataset& d, const Vector& beta,
                      double objective, double eta) {
  if (beta.allFinite() && std::isfinite(objective) &&
      objective <= kDivergenceLimit) {
    return;
  }
  std::ostringstream msg;
  msg << "task " << d.task_id << " diverged with step size eta=" << eta;
  throw DivergenceError(msg.str());
}

Vector local_iht_fit(const TaskDataset& d, const LocalFitConfig& cfg,
                     const std::optional<Vector>& init,
                     const IterateObserver& observer) {
  cfg.validate();
  if (cfg.s > static_cast<std::size_t>(d.p())) {
    throw ParameterError("local fit: s exceeds p");
  }
  Vector beta = init ? *init : Vector::Zero(d.p());
  if (beta.size() != d.p()) throw ShapeError("local fit: init has wrong length");

  for (std::size_t t = 1; t <= cfg.t_max; ++t) {
    Vector step = beta - cfg.eta * loss_gradient(d, beta, cfg.loss, cfg.sigma);
    if (!step.allFinite()) check_divergence(d, step, 0.0, cfg.eta);
    Vector next = hard_threshold(step, cfg.s);
    check_divergence(d, next, loss_objective(d, next, cfg.loss, cfg.sigma),
                     cfg.eta);
    const double moved = (next - beta).norm();
    beta = std::move(next);
    if (observer) observer(t, beta);
    if (moved < cfg.tol) break;
  }
  return beta;
}

Vector l1_huber_init(const TaskDataset& d, double sigma, double penalty,
                     std::size_t iters, double eta) {
  if (!(penalty >= 0.0)) throw ParameterError("l1 init: penalty must be >= 0");
  if (iters < 1) throw ParameterError("l1 init: iters must be >= 1");
  if (!(eta > 0.0)) throw ParameterError("l1 init: eta must be positive");
  const double shrink = eta * penalty;
  Vector beta = Vector::Zero(d.p());
  for (std::size_t t = 0; t < iters; ++t) {
    const Vector step = beta - eta * huber_gradient(d, beta, sigma);
    for (Eigen::Index j = 0; j < step.size(); ++j) {
      const double a = std::abs(step[j]) - shrink;
      beta[j] = a > 0.0 ? std::copysign(a, step[j]) : 0.0;
    }
    if (!beta.allFinite()) check_divergence(d, beta, 0.0, eta);
  }
  check_divergence(d, beta, huber_objective(d, beta, sigma), eta);
  return beta;
}

}  // namespace fedhuber
