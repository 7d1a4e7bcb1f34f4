#include "fedhuber/tuning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

namespace fedhuber {

namespace {

std::string describe(const GridPoint& g) {
  std::ostringstream out;
  out << "K=" << g.k << " s=" << g.s << " q=" << g.q << " lambda=" << g.lambda;
  return out.str();
}

template <typename T>
std::vector<T> sorted_unique(std::vector<T> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

}  // namespace

double select_eta(const TaskDataset& d, const std::vector<double>& etas,
                  const LocalFitConfig& cfg) {
  if (etas.empty()) throw TuningError("select_eta: empty step-size grid");
  double best_eta = 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (const double eta : sorted_unique(etas)) {
    LocalFitConfig c = cfg;
    c.eta = eta;
    try {
      const Vector beta = local_iht_fit(d, c);
      const double obj = loss_objective(d, beta, c.loss, c.sigma);
      if (obj < best) {
        best = obj;
        best_eta = eta;
      }
    } catch (const DivergenceError&) {
    }
  }
  if (!std::isfinite(best)) {
    throw TuningError("select_eta: every candidate step size diverged");
  }
  return best_eta;
}

double training_huber_loss(const std::vector<TaskDataset>& datasets,
                           const std::vector<Vector>& estimates, double sigma) {
  if (datasets.size() != estimates.size()) {
    throw ShapeError("training loss: one estimate per task required");
  }
  double total = 0.0;
  double count = 0.0;
  for (std::size_t m = 0; m < datasets.size(); ++m) {
    const auto n = static_cast<double>(datasets[m].n());
    total += n * huber_objective(datasets[m], estimates[m], sigma);
    count += n;
  }
  return total / count;
}

double selection_criterion(double loss_term, std::size_t p, double n,
                           std::size_t s, std::size_t k, double c1, double c2) {
  return loss_term + std::log(static_cast<double>(p)) / n *
                         (c1 * static_cast<double>(s) + c2 * static_cast<double>(k));
}

ModelSelection select_model(const std::vector<TaskDataset>& datasets,
                            const TuningGrid& grid,
                            const FederationConfig& fed_template) {
  if (datasets.empty()) throw TuningError("select_model: no tasks");
  if (grid.k_values.empty() || grid.s_values.empty() || grid.lambda_values.empty()) {
    throw TuningError("select_model: K, s and lambda grids must be non-empty");
  }
  if (!(grid.c1 > 0.0) || !(grid.c2 > 0.0)) {
    throw TuningError("select_model: criterion weights must be positive");
  }
  const auto p = static_cast<std::size_t>(datasets.front().p());
  double n_mean = 0.0;
  for (const auto& d : datasets) n_mean += static_cast<double>(d.n());
  n_mean /= static_cast<double>(datasets.size());

  const auto ks = sorted_unique(grid.k_values);
  const auto ss = sorted_unique(grid.s_values);
  const auto qs = sorted_unique(grid.q_values);
  const auto lambdas = sorted_unique(grid.lambda_values);

  // The local initializer depends only on s.
  std::map<std::size_t, std::vector<Vector>> init_by_s;

  ModelSelection out;
  out.best_criterion = std::numeric_limits<double>::infinity();
  for (const auto k : ks) {
    for (const auto s : ss) {
      const std::vector<std::size_t> q_list = qs.empty() ? std::vector<std::size_t>{s} : qs;
      for (const auto q : q_list) {
        if (q < s) continue;
        for (const double lambda : lambdas) {
          GridPoint g{k, s, q, lambda};
          FederationConfig cfg = fed_template;
          cfg.central.k = k;
          cfg.central.lambda = lambda;
          cfg.budget = {s, q};
          TuningRow row;
          row.point = g;
          try {
            auto it = init_by_s.find(s);
            if (it == init_by_s.end()) {
              LocalFitConfig local = cfg.local;
              local.s = s;
              it = init_by_s.emplace(s, local_fits(datasets, local)).first;
            }
            const FitResult fit = federated_fit(datasets, cfg, it->second);
            row.loss_term = training_huber_loss(datasets, fit.estimates, cfg.local.sigma);
          } catch (const Error& e) {
            throw TuningError(std::string(e.what()) + " (at " + describe(g) + ")");
          }
          row.criterion = selection_criterion(row.loss_term, p, n_mean, s, k, grid.c1, grid.c2);
          if (row.criterion < out.best_criterion) {
            out.best_criterion = row.criterion;
            out.best_point = g;
            out.best = cfg;
          }
          out.table.push_back(row);
        }
      }
    }
  }
  if (out.table.empty()) throw TuningError("select_model: grid has no point with q >= s");
  return out;
}

}  // namespace fedhuber
