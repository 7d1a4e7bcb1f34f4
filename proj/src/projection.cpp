#include "fedhuber/projection.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace fedhuber {

void SparsityBudget::validate(std::size_t p) const {
  if (s < 1 || s > q || q > p) {
    throw ParameterError("sparsity budget requires 1 <= s <= q <= p, got s=" +
                         std::to_string(s) + " q=" + std::to_string(q) +
                         " p=" + std::to_string(p));
  }
}

std::vector<Eigen::Index> top_indices(const Vector& scores, std::size_t count) {
  const auto p = static_cast<std::size_t>(scores.size());
  std::vector<Eigen::Index> order(p);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const auto larger = [&scores](Eigen::Index a, Eigen::Index b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  };
  count = std::min(count, p);
  std::partial_sort(order.begin(), order.begin() + static_cast<long>(count),
                    order.end(), larger);
  order.resize(count);
  std::sort(order.begin(), order.end());
  return order;
}

Vector hard_threshold(const Vector& alpha, std::size_t s) {
  const auto p = static_cast<std::size_t>(alpha.size());
  if (s < 1 || s > p) {
    throw ParameterError("hard_threshold: need 1 <= s <= p, got s=" +
                         std::to_string(s) + " p=" + std::to_string(p));
  }
  if (!alpha.allFinite()) throw DomainError("hard_threshold: non-finite input");
  Vector out = Vector::Zero(alpha.size());
  for (const auto j : top_indices(alpha.cwiseAbs(), s)) out[j] = alpha[j];
  return out;
}

std::vector<Vector> group_project(const std::vector<Vector>& alphas,
                                  std::size_t q) {
  if (alphas.empty()) throw ParameterError("group_project: empty group");
  const Eigen::Index p = alphas.front().size();
  if (q < 1 || q > static_cast<std::size_t>(p)) {
    throw ParameterError("group_project: need 1 <= q <= p, got q=" +
                         std::to_string(q) + " p=" + std::to_string(p));
  }
  Vector sum = Vector::Zero(p);
  for (const auto& a : alphas) {
    if (a.size() != p) throw ShapeError("group_project: ragged group vectors");
    if (!a.allFinite()) throw DomainError("group_project: non-finite input");
    sum += a;
  }
  const auto keep = top_indices(sum.cwiseAbs(), q);
  std::vector<Vector> out;
  out.reserve(alphas.size());
  for (const auto& a : alphas) {
    Vector v = Vector::Zero(p);
    for (const auto j : keep) v[j] = a[j];
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace fedhuber
