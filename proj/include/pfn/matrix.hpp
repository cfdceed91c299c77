#pragma once

#include <Eigen/Dense>

#include <initializer_list>
#include <stdexcept>
#include <string>

namespace pfn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised by the engine when a NaN or infinity shows up.
struct NumericError : std::runtime_error {
  NumericError(const std::string& what, long iteration)
      : std::runtime_error(what + " (iteration " + std::to_string(iteration) + ")"),
        iteration(iteration) {}
  long iteration;
};

inline std::string shape_string(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(std::string(what) + ": shape " + shape_string(a) + " vs " +
                         shape_string(b));
}

inline bool is_non_negative(const Matrix& m) {
  return m.allFinite() && (m.array() >= 0.0).all();
}

/// Dense matrix whose entries are finite and >= 0. Construction validates.
class NonNegMatrix {
 public:
  NonNegMatrix() = default;
  NonNegMatrix(Index rows, Index cols) : m_(Matrix::Zero(rows, cols)) {}
  explicit NonNegMatrix(Matrix m) : m_(std::move(m)) {
    if (!is_non_negative(m_))
      throw ParameterError("NonNegMatrix: negative or non-finite entry");
  }
  NonNegMatrix(std::initializer_list<std::initializer_list<double>> rows)
      : NonNegMatrix(Matrix(rows)) {}

  Index rows() const { return m_.rows(); }
  Index cols() const { return m_.cols(); }
  double operator()(Index r, Index c) const { return m_(r, c); }

  const Matrix& matrix() const { return m_; }
  operator const Matrix&() const { return m_; }

  friend bool operator==(const NonNegMatrix& a, const NonNegMatrix& b) {
    return a.m_.rows() == b.m_.rows() && a.m_.cols() == b.m_.cols() && a.m_ == b.m_;
  }

 private:
  Matrix m_;
};

}  // namespace pfn
