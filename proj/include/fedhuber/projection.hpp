#pragma once

#include <cstddef>
#include <vector>

#include "fedhuber/common.hpp"

namespace fedhuber {

// Per-task sparsity s and group-support sparsity q, with 1 <= s <= q <= p.
struct SparsityBudget {
  std::size_t s = 1;
  std::size_t q = 1;

  void validate(std::size_t p) const;
};

// Indices of the `count` largest scores, ties resolved toward the smaller
// index. Returned in ascending index order.
std::vector<Eigen::Index> top_indices(const Vector& scores, std::size_t count);

/// Keeps the s largest-magnitude entries of alpha and zeroes the rest.
Vector hard_threshold(const Vector& alpha, std::size_t s);

/// Common-support projection for one group: coordinates are ranked by
/// |sum_m alpha_mj| and every member keeps the same top-q coordinates.
std::vector<Vector> group_project(const std::vector<Vector>& alphas,
                                  std::size_t q);

}  // namespace fedhuber
