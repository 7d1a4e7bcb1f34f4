#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace fedhuber {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
// Sample-major storage: each row is one observation.
using DesignMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Group labels are zero-based throughout the library.
using Labels = std::vector<int>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite input where a finite value is required.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Dimension disagreement between vectors, matrices or task lists.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Out-of-range configuration value (sparsity budget, group count, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

// Missing or malformed message in a federation round.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

class IngestionError : public Error {
 public:
  using Error::Error;
};

class TuningError : public Error {
 public:
  using Error::Error;
};

inline bool all_finite(const Vector& v) { return v.allFinite(); }

inline std::size_t count_nonzeros(const Vector& v) {
  std::size_t nnz = 0;
  for (Eigen::Index j = 0; j < v.size(); ++j) {
    if (v[j] != 0.0) ++nnz;
  }
  return nnz;
}

}  // namespace fedhuber
