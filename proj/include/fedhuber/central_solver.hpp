#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "fedhuber/common.hpp"

namespace fedhuber {

// Server-side state of the clustering/fusion problem. Each task's fused
// estimate is beta_tilde[m] = centers[labels[m]] + deltas[m].
struct FederationState {
  std::vector<Vector> beta_tilde;
  Labels labels;
  std::vector<Vector> centers;
  std::vector<Vector> deltas;

  // Fusion objective after the solve and its value after each outer pass.
  double objective = 0.0;
  std::vector<double> objective_trace;
  std::size_t outer_iterations = 0;

  std::size_t k() const { return centers.size(); }
};

struct CentralConfig {
  double lambda = 0.5;
  std::size_t k = 2;
  // Proximal step; 1 solves each offset subproblem in a single pass.
  double eta1 = 1.0;
  std::size_t inner_iters = 100;
  std::size_t prox_iters = 200;
  double tol = 1e-6;
  double prox_tol = 1e-8;
  std::size_t kmeans_restarts = 10;
  std::uint64_t seed = 1;
  // Reuse (labels, centers, offsets) across rounds instead of re-running the
  // k-means + client reassignment initialization.
  bool warm_start = true;
  // Warm rounds keep labels and centers but restart the offsets at zero, so
  // a task whose label was wrong is not held in place by its old offset.
  bool reset_offsets = true;
  // Pick among the k-means restarts by the clients' total local loss at
  // their preferred candidate center instead of by within-cluster spread.
  bool select_by_client_loss = true;

  void validate(std::size_t m) const;
};

// Local objective of task m evaluated at a candidate parameter. The server
// only ever sees the returned value.
using ClientObjective = std::function<double(std::size_t, const Vector&)>;

enum class CentralStep { centers, labels, offsets };

// Invoked after every center, label and offset pass of the solver.
using CentralObserver = std::function<void(CentralStep, const FederationState&)>;

/// Block soft-thresholding: (1 - c/||x||)_+ x.
Vector prox_l2(const Vector& x, double c);

struct KMeansResult {
  std::vector<Vector> centers;
  Labels labels;
  double wcss = 0.0;
};

/// One Lloyd run with k-means++ seeding per restart, in restart order.
std::vector<KMeansResult> kmeans_runs(const std::vector<Vector>& points,
                                      std::size_t k, std::size_t restarts,
                                      std::uint64_t seed,
                                      std::size_t max_iters = 300);

/// Best of kmeans_runs by within-cluster sum of squares; ties go to the
/// earlier restart. Deterministic given the seed.
KMeansResult kmeans(const std::vector<Vector>& points, std::size_t k,
                    std::size_t restarts, std::uint64_t seed,
                    std::size_t max_iters = 300);

/// Candidate center sets for the initial assignment: every restart when
/// selecting by client loss, otherwise only the best restart.
std::vector<std::vector<Vector>> candidate_center_sets(
    const std::vector<Vector>& points, const CentralConfig& cfg);

/// Each task takes the candidate center that minimizes its own local
/// objective; ties go to the smaller index.
Labels init_assignment(const std::vector<Vector>& candidate_centers,
                       std::size_t num_tasks, const ClientObjective& objective);

struct InitChoice {
  std::size_t set = 0;
  Labels labels;
  double total_loss = 0.0;
};

/// init_assignment on every candidate set; keeps the set with the smallest
/// summed local objective, ties to the earlier set.
InitChoice select_initialization(const std::vector<std::vector<Vector>>& sets,
                                 std::size_t num_tasks,
                                 const ClientObjective& objective);

/// sum_m 1/2 ||theta_{z_m} + Delta_m - beta_m||^2 + lambda ||Delta_m||.
double central_objective(const std::vector<Vector>& inputs,
                         const FederationState& state, double lambda);

/// Alternating minimization of the fusion objective over centers, labels
/// and offsets. Without a warm state the labels are initialized by k-means on
/// the inputs followed by client-side reassignment, which requires
/// `client_objectives`.
FederationState solve_central(const std::vector<Vector>& inputs,
                              const CentralConfig& cfg,
                              const std::optional<FederationState>& warm = {},
                              const ClientObjective& client_objectives = {},
                              const CentralObserver& observer = {});

/// Same problem with the labels frozen to a known partition; the number of
/// groups is taken from the partition.
FederationState solve_central_oracle(const std::vector<Vector>& inputs,
                                     const Labels& groups,
                                     const CentralConfig& cfg,
                                     const CentralObserver& observer = {});

// Number of groups in a valid partition (labels 0..K-1, none empty).
std::size_t validate_partition(const Labels& groups, std::size_t num_tasks);

}  // namespace fedhuber
