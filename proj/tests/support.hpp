#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "fedhuber/huber.hpp"
#include "fedhuber/random.hpp"

namespace fedhuber::test {

inline Rng rng_for(std::uint64_t seed) { return substream(seed, {0x7465737473}); }

inline double normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

inline double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline Vector random_vector(Rng& rng, Eigen::Index p, double scale = 1.0) {
  Vector v(p);
  for (Eigen::Index j = 0; j < p; ++j) v[j] = scale * normal(rng);
  return v;
}

// Gaussian design with responses x*beta + scale*noise.
inline TaskDataset random_task(Rng& rng, Eigen::Index n, Eigen::Index p,
                               const Vector& beta, double noise) {
  TaskDataset d;
  d.x.resize(n, p);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < p; ++j) d.x(i, j) = normal(rng);
  d.y = d.x * beta;
  for (Eigen::Index i = 0; i < n; ++i) d.y[i] += noise * normal(rng);
  return d;
}

// Coordinate-wise sum of piecewise losses, written independently of the
// library's vectorized path.
inline double reference_huber(const TaskDataset& d, const Vector& beta, double sigma) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    double fit = 0.0;
    for (Eigen::Index j = 0; j < d.p(); ++j) fit += d.x(i, j) * beta[j];
    const double r = d.y[i] - fit;
    const double a = r < 0 ? -r : r;
    total += a <= sigma ? 0.5 * r * r : sigma * a - 0.5 * sigma * sigma;
  }
  return total / static_cast<double>(d.n());
}

template <class F>
Vector central_difference(const F& f, const Vector& at, double step) {
  Vector g(at.size());
  for (Eigen::Index j = 0; j < at.size(); ++j) {
    Vector up = at, down = at;
    up[j] += step;
    down[j] -= step;
    g[j] = (f(up) - f(down)) / (2.0 * step);
  }
  return g;
}

// Best s-sparse approximation by enumerating every support of size s.
inline Vector brute_force_sparse(const Vector& alpha, std::size_t s) {
  const auto p = static_cast<std::size_t>(alpha.size());
  Vector best = Vector::Zero(alpha.size());
  double best_err = -1.0;
  for (std::uint32_t mask = 0; mask < (1u << p); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcount(mask)) != s) continue;
    Vector cand = Vector::Zero(alpha.size());
    for (std::size_t j = 0; j < p; ++j)
      if (mask & (1u << j)) cand[static_cast<Eigen::Index>(j)] = alpha[static_cast<Eigen::Index>(j)];
    const double err = (cand - alpha).squaredNorm();
    if (best_err < 0.0 || err < best_err - 1e-15) {
      best_err = err;
      best = cand;
    }
  }
  return best;
}

// Minimizer of 1/2||u - x||^2 + c||u|| along the ray through x, by a coarse
// grid on the radius followed by golden-section refinement.
inline Vector radial_prox(const Vector& x, double c) {
  const double nx = x.norm();
  if (nx == 0.0) return x;
  const auto f = [&](double t) { return 0.5 * (t - nx) * (t - nx) + c * t; };
  double best_t = 0.0;
  for (int i = 0; i <= 2000; ++i) {
    const double t = nx * i / 2000.0;
    if (f(t) < f(best_t)) best_t = t;
  }
  double lo = std::max(0.0, best_t - nx / 2000.0);
  double hi = std::min(nx, best_t + nx / 2000.0);
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  for (int i = 0; i < 200; ++i) {
    const double a = hi - g * (hi - lo);
    const double b = lo + g * (hi - lo);
    if (f(a) <= f(b)) hi = b; else lo = a;
  }
  double t = 0.5 * (lo + hi);
  if (f(0.0) <= f(t)) t = 0.0;
  return x * (t / nx);
}

}  // namespace fedhuber::test
