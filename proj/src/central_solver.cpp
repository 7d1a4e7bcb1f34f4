#include "fedhuber/central_solver.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "fedhuber/random.hpp"

namespace fedhuber {

namespace {

constexpr double kDescentSlack = 1e-10;

void check_inputs(const std::vector<Vector>& inputs) {
  if (inputs.empty()) throw ParameterError("central solver: no inputs");
  const Eigen::Index p = inputs.front().size();
  for (const auto& b : inputs) {
    if (b.size() != p) throw ShapeError("central solver: ragged inputs");
    if (!b.allFinite()) throw DomainError("central solver: non-finite input");
  }
}

void check_descent(double before, double after, const char* step) {
  if (after > before + kDescentSlack * (1.0 + std::abs(before))) {
    throw Error(std::string("central solver: objective increased during ") +
                step);
  }
  if (!std::isfinite(after)) {
    throw DomainError(std::string("central solver: non-finite objective after ") +
                      step);
  }
}

// theta_k = mean of (beta_m - Delta_m) over members. An empty group takes
// the member farthest from its own center, repeated until none are empty.
void update_centers(const std::vector<Vector>& inputs, FederationState& state) {
  const std::size_t k = state.centers.size();
  const std::size_t m_count = inputs.size();
  const Eigen::Index p = inputs.front().size();
  for (;;) {
    std::vector<std::size_t> counts(k, 0);
    std::vector<Vector> sums(k, Vector::Zero(p));
    for (std::size_t m = 0; m < m_count; ++m) {
      const auto z = static_cast<std::size_t>(state.labels[m]);
      sums[z] += inputs[m] - state.deltas[m];
      ++counts[z];
    }
    std::size_t empty = k;
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        state.centers[c] = sums[c] / static_cast<double>(counts[c]);
      } else if (empty == k) {
        empty = c;
      }
    }
    if (empty == k) return;

    std::size_t farthest = m_count;
    double worst = -1.0;
    for (std::size_t m = 0; m < m_count; ++m) {
      const auto z = static_cast<std::size_t>(state.labels[m]);
      if (counts[z] < 2) continue;
      const double dist =
          (state.centers[z] + state.deltas[m] - inputs[m]).squaredNorm();
      if (dist > worst) {
        worst = dist;
        farthest = m;
      }
    }
    if (farthest == m_count) {
      throw ParameterError("central solver: cannot fill empty group (k > M)");
    }
    state.labels[farthest] = static_cast<int>(empty);
  }
}

void update_labels(const std::vector<Vector>& inputs, FederationState& state) {
  for (std::size_t m = 0; m < inputs.size(); ++m) {
    const Vector target = inputs[m] - state.deltas[m];
    int best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < state.centers.size(); ++c) {
      const double dist = (state.centers[c] - target).squaredNorm();
      if (dist < best_dist) {
        best_dist = dist;
        best = static_cast<int>(c);
      }
    }
    state.labels[m] = best;
  }
}

void update_deltas(const std::vector<Vector>& inputs, const CentralConfig& cfg,
                   FederationState& state) {
  const double shrink = cfg.eta1 * cfg.lambda;
  for (std::size_t m = 0; m < inputs.size(); ++m) {
    const Vector r =
        inputs[m] - state.centers[static_cast<std::size_t>(state.labels[m])];
    Vector& delta = state.deltas[m];
    for (std::size_t it = 0; it < cfg.prox_iters; ++it) {
      Vector next = prox_l2((1.0 - cfg.eta1) * delta + cfg.eta1 * r, shrink);
      const double change = (next - delta).norm();
      delta = std::move(next);
      if (change < cfg.prox_tol) break;
    }
  }
}

// beta_tilde = beta - (r - Delta), which equals theta + Delta and reproduces
// the input exactly when the offset absorbs the whole residual.
void finalize(const std::vector<Vector>& inputs, const CentralConfig& cfg,
              FederationState& state) {
  state.beta_tilde.resize(inputs.size());
  for (std::size_t m = 0; m < inputs.size(); ++m) {
    const Vector r =
        inputs[m] - state.centers[static_cast<std::size_t>(state.labels[m])];
    state.beta_tilde[m] = inputs[m] - (r - state.deltas[m]);
  }
  state.objective = central_objective(inputs, state, cfg.lambda);
}

FederationState run_alternating(const std::vector<Vector>& inputs,
                                const CentralConfig& cfg, FederationState state,
                                bool update_z, const CentralObserver& observer) {
  const auto notify = [&](CentralStep step) {
    if (observer) observer(step, state);
  };
  double current = central_objective(inputs, state, cfg.lambda);
  state.objective_trace.clear();
  state.outer_iterations = 0;
  for (std::size_t it = 0; it < cfg.inner_iters; ++it) {
    const double start = current;

    update_centers(inputs, state);
    double next = central_objective(inputs, state, cfg.lambda);
    check_descent(current, next, "center update");
    current = next;
    notify(CentralStep::centers);

    if (update_z) {
      update_labels(inputs, state);
      next = central_objective(inputs, state, cfg.lambda);
      check_descent(current, next, "label update");
      current = next;
      notify(CentralStep::labels);
    }

    update_deltas(inputs, cfg, state);
    next = central_objective(inputs, state, cfg.lambda);
    check_descent(current, next, "offset update");
    current = next;
    notify(CentralStep::offsets);

    state.objective_trace.push_back(current);
    ++state.outer_iterations;
    if (start - current < cfg.tol) break;
  }
  finalize(inputs, cfg, state);
  return state;
}

double sq_dist(const Vector& a, const Vector& b) { return (a - b).squaredNorm(); }

// k-means++ seeding followed by Lloyd iterations.
KMeansResult lloyd_once(const std::vector<Vector>& points, std::size_t k,
                        Rng& rng, std::size_t max_iters) {
  const std::size_t n = points.size();
  KMeansResult res;
  res.centers.reserve(k);
  std::vector<bool> chosen(n, false);

  auto first = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n));
  if (first >= n) first = n - 1;
  res.centers.push_back(points[first]);
  chosen[first] = true;

  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = sq_dist(points[i], points[first]);
  while (res.centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += d2[i];
    std::size_t pick = n;
    if (total > 0.0) {
      const double target = uniform01(rng) * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        acc += d2[i];
        pick = i;
        if (acc > target) break;
      }
    } else {
      // Every point coincides with a chosen center; take the next unused one.
      for (std::size_t i = 0; i < n && pick == n; ++i) {
        if (!chosen[i]) pick = i;
      }
    }
    chosen[pick] = true;
    res.centers.push_back(points[pick]);
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], sq_dist(points[i], points[pick]));
    }
  }

  FederationState st;
  st.centers = res.centers;
  st.labels.assign(n, -1);
  st.deltas.assign(n, Vector::Zero(points.front().size()));
  for (std::size_t it = 0; it < max_iters; ++it) {
    const Labels before = st.labels;
    update_labels(points, st);
    if (st.labels == before) break;
    update_centers(points, st);
  }
  res.centers = std::move(st.centers);
  res.labels = std::move(st.labels);
  res.wcss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    res.wcss += sq_dist(points[i], res.centers[static_cast<std::size_t>(res.labels[i])]);
  }
  return res;
}

}  // namespace

void CentralConfig::validate(std::size_t m) const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw ParameterError("central: lambda must be >= 0");
  }
  if (k < 1 || k > m) {
    throw ParameterError("central: need 1 <= k <= M, got k=" +
                         std::to_string(k) + " M=" + std::to_string(m));
  }
  if (!(eta1 > 0.0) || eta1 > 1.0) {
    throw ParameterError("central: eta1 must lie in (0, 1]");
  }
  if (inner_iters < 1 || prox_iters < 1 || kmeans_restarts < 1) {
    throw ParameterError("central: iteration caps must be >= 1");
  }
  if (!(tol >= 0.0) || !(prox_tol >= 0.0)) {
    throw ParameterError("central: tolerances must be >= 0");
  }
}

Vector prox_l2(const Vector& x, double c) {
  if (!(c >= 0.0)) throw ParameterError("prox_l2: c must be >= 0");
  if (!x.allFinite()) throw DomainError("prox_l2: non-finite input");
  if (c == 0.0) return x;
  const double norm = x.norm();
  if (norm <= c) return Vector::Zero(x.size());
  return (1.0 - c / norm) * x;
}

std::vector<KMeansResult> kmeans_runs(const std::vector<Vector>& points,
                                      std::size_t k, std::size_t restarts,
                                      std::uint64_t seed, std::size_t max_iters) {
  check_inputs(points);
  if (k < 1 || k > points.size()) {
    throw ParameterError("kmeans: need 1 <= k <= number of points, got k=" +
                         std::to_string(k));
  }
  if (restarts < 1) throw ParameterError("kmeans: restarts must be >= 1");
  std::vector<KMeansResult> runs;
  runs.reserve(restarts);
  for (std::size_t r = 0; r < restarts; ++r) {
    Rng rng = substream(seed, {0x6B6D65616E73ULL, r});
    runs.push_back(lloyd_once(points, k, rng, max_iters));
  }
  return runs;
}

KMeansResult kmeans(const std::vector<Vector>& points, std::size_t k,
                    std::size_t restarts, std::uint64_t seed,
                    std::size_t max_iters) {
  auto runs = kmeans_runs(points, k, restarts, seed, max_iters);
  std::size_t best = 0;
  for (std::size_t r = 1; r < runs.size(); ++r) {
    if (runs[r].wcss < runs[best].wcss) best = r;
  }
  return std::move(runs[best]);
}

std::vector<std::vector<Vector>> candidate_center_sets(
    const std::vector<Vector>& points, const CentralConfig& cfg) {
  std::vector<std::vector<Vector>> sets;
  if (!cfg.select_by_client_loss) {
    sets.push_back(kmeans(points, cfg.k, cfg.kmeans_restarts, cfg.seed).centers);
    return sets;
  }
  for (auto& run : kmeans_runs(points, cfg.k, cfg.kmeans_restarts, cfg.seed)) {
    sets.push_back(std::move(run.centers));
  }
  return sets;
}

Labels init_assignment(const std::vector<Vector>& candidate_centers,
                       std::size_t num_tasks, const ClientObjective& objective) {
  if (candidate_centers.empty()) {
    throw ParameterError("init_assignment: no candidate centers");
  }
  if (!objective) throw ParameterError("init_assignment: no client objective");
  Labels labels(num_tasks, 0);
  for (std::size_t m = 0; m < num_tasks; ++m) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < candidate_centers.size(); ++c) {
      const double v = objective(m, candidate_centers[c]);
      if (v < best) {
        best = v;
        labels[m] = static_cast<int>(c);
      }
    }
  }
  return labels;
}

InitChoice select_initialization(const std::vector<std::vector<Vector>>& sets,
                                 std::size_t num_tasks,
                                 const ClientObjective& objective) {
  if (sets.empty()) throw ParameterError("init selection: no candidate sets");
  if (!objective) throw ParameterError("init selection: no client objective");
  InitChoice best;
  best.total_loss = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < sets.size(); ++i) {
    Labels labels = init_assignment(sets[i], num_tasks, objective);
    double total = 0.0;
    for (std::size_t m = 0; m < num_tasks; ++m) {
      total += objective(m, sets[i][static_cast<std::size_t>(labels[m])]);
    }
    if (total < best.total_loss) best = {i, std::move(labels), total};
  }
  if (!std::isfinite(best.total_loss)) {
    throw DomainError("init selection: no candidate set has a finite loss");
  }
  return best;
}

double central_objective(const std::vector<Vector>& inputs,
                         const FederationState& state, double lambda) {
  double total = 0.0;
  for (std::size_t m = 0; m < inputs.size(); ++m) {
    const Vector& theta = state.centers[static_cast<std::size_t>(state.labels[m])];
    const Vector& delta = state.deltas[m];
    total += 0.5 * (theta + delta - inputs[m]).squaredNorm() + lambda * delta.norm();
  }
  return total;
}

FederationState solve_central(const std::vector<Vector>& inputs,
                              const CentralConfig& cfg,
                              const std::optional<FederationState>& warm,
                              const ClientObjective& client_objectives,
                              const CentralObserver& observer) {
  check_inputs(inputs);
  const std::size_t m_count = inputs.size();
  const Eigen::Index p = inputs.front().size();
  cfg.validate(m_count);

  FederationState state;
  if (warm) {
    if (warm->labels.size() != m_count || warm->deltas.size() != m_count ||
        warm->centers.size() != cfg.k) {
      throw ShapeError("central solver: warm state does not match inputs");
    }
    for (const int z : warm->labels) {
      if (z < 0 || static_cast<std::size_t>(z) >= cfg.k) {
        throw ParameterError("central solver: warm label out of range");
      }
    }
    for (std::size_t m = 0; m < m_count; ++m) {
      if (warm->deltas[m].size() != p) {
        throw ShapeError("central solver: warm offset has wrong length");
      }
    }
    state.labels = warm->labels;
    state.centers = warm->centers;
    state.deltas = warm->deltas;
    if (cfg.reset_offsets) {
      for (auto& d : state.deltas) d.setZero();
    }
  } else {
    if (!client_objectives) {
      throw ParameterError(
          "central solver: cold start needs client objectives for the "
          "initial assignment");
    }
    auto sets = candidate_center_sets(inputs, cfg);
    InitChoice choice = select_initialization(sets, m_count, client_objectives);
    state.labels = std::move(choice.labels);
    state.centers = std::move(sets[choice.set]);
    state.deltas.assign(m_count, Vector::Zero(p));
  }
  return run_alternating(inputs, cfg, std::move(state), true, observer);
}

std::size_t validate_partition(const Labels& groups, std::size_t num_tasks) {
  if (groups.size() != num_tasks) {
    throw ParameterError("partition: expected " + std::to_string(num_tasks) +
                         " labels, got " + std::to_string(groups.size()));
  }
  int max_label = -1;
  for (const int z : groups) {
    if (z < 0) throw ParameterError("partition: negative group label");
    max_label = std::max(max_label, z);
  }
  const auto k = static_cast<std::size_t>(max_label + 1);
  std::vector<bool> seen(k, false);
  for (const int z : groups) seen[static_cast<std::size_t>(z)] = true;
  for (std::size_t c = 0; c < k; ++c) {
    if (!seen[c]) {
      throw ParameterError("partition: group " + std::to_string(c) + " is empty");
    }
  }
  return k;
}

FederationState solve_central_oracle(const std::vector<Vector>& inputs,
                                     const Labels& groups,
                                     const CentralConfig& cfg,
                                     const CentralObserver& observer) {
  check_inputs(inputs);
  const std::size_t m_count = inputs.size();
  const std::size_t k = validate_partition(groups, m_count);
  CentralConfig local = cfg;
  local.k = k;
  local.validate(m_count);

  FederationState state;
  state.labels = groups;
  state.centers.assign(k, Vector::Zero(inputs.front().size()));
  state.deltas.assign(m_count, Vector::Zero(inputs.front().size()));
  update_centers(inputs, state);
  return run_alternating(inputs, local, std::move(state), false, observer);
}

}  // namespace fedhuber
