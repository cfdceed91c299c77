#pragma once

#include "pfn/matrix.hpp"

#include <cmath>
#include <utility>
#include <vector>

namespace pfn {

inline constexpr double kDefaultEpsilon = 1e-5;

/// Generalized KL divergence D(X || Y). The log ratio is computed on
/// (X+eps)/(Y+eps) so the function is total on non-negative input; the
/// leading X factor is not guarded, which keeps 0*log(0) at exactly 0.
inline double kl_divergence(const Matrix& X, const Matrix& Y, double eps = kDefaultEpsilon) {
  require_same_shape(X, Y, "kl_divergence");
  double sum = 0.0;
  for (Index c = 0; c < X.cols(); ++c) {
    for (Index r = 0; r < X.rows(); ++r) {
      const double x = X(r, c);
      const double y = Y(r, c);
      if (x > 0.0) sum += x * std::log((x + eps) / (y + eps));
      sum += y - x;
    }
  }
  return sum;
}

inline void require_product_shape(const Matrix& X, const Matrix& W, const Matrix& H,
                                  const char* what) {
  if (W.cols() != H.rows() || X.rows() != W.rows() || X.cols() != H.cols())
    throw DimensionError(std::string(what) + ": X " + shape_string(X) + ", W " +
                         shape_string(W) + ", H " + shape_string(H));
}

/// Sum of squared entries of X - W*H.
inline double squared_error(const Matrix& X, const Matrix& W, const Matrix& H) {
  require_product_shape(X, W, H, "squared_error");
  return (X - W * H).squaredNorm();
}

inline double reconstruction_rmse(const Matrix& X, const Matrix& W, const Matrix& H) {
  require_product_shape(X, W, H, "reconstruction_rmse");
  if (X.size() == 0) return 0.0;
  return std::sqrt(squared_error(X, W, H) / static_cast<double>(X.size()));
}

/// Multiplicative KL update of the right factor. eps = 0 gives the plain rule.
inline Matrix nmf_right_update(const Matrix& X, const Matrix& W, const Matrix& H,
                               double eps = kDefaultEpsilon) {
  require_product_shape(X, W, H, "nmf_right_update");
  const Matrix ratio = ((X.array() + eps) / ((W * H).array() + eps)).matrix();
  const Matrix num = ((W.transpose() * ratio).array() + eps).matrix();
  // W^T times an all-ones matrix is the column sums of W repeated along each row.
  const Eigen::ArrayXd denom = W.colwise().sum().transpose().array() + eps;
  Matrix out = H;
  for (Index c = 0; c < H.cols(); ++c)
    out.col(c).array() *= num.col(c).array() / denom;
  return out;
}

struct NormalizationPolicy {
  enum class Kind {
    none,
    unit_column_sum,
    equal_subcolumn_sums,
    // Column c of every block in one equation carrying this kind sums to 1
    // jointly. On a lone matrix it behaves like unit_column_sum.
    joint_column_sum,
  };

  Kind kind = Kind::none;
  std::vector<Index> partition;

  static NormalizationPolicy none() { return {}; }
  static NormalizationPolicy unit_column_sum() { return {Kind::unit_column_sum, {}}; }
  static NormalizationPolicy joint_column_sum() { return {Kind::joint_column_sum, {}}; }
  static NormalizationPolicy equal_subcolumn_sums(std::vector<Index> sizes) {
    return {Kind::equal_subcolumn_sums, std::move(sizes)};
  }
};

/// Applies the policy in place. Zero columns are left at zero.
///
/// equal_subcolumn_sums rescales every band of a column to the mean of the
/// band sums, so the column total is unchanged. A column with an empty band
/// cannot be equalized upward and is set to zero instead.
inline void normalize(Matrix& W, const NormalizationPolicy& policy) {
  using Kind = NormalizationPolicy::Kind;
  switch (policy.kind) {
    case Kind::none:
      return;
    case Kind::unit_column_sum:
    case Kind::joint_column_sum:
      for (Index c = 0; c < W.cols(); ++c) {
        const double s = W.col(c).sum();
        if (s > 0.0) W.col(c) /= s;
      }
      return;
    case Kind::equal_subcolumn_sums: {
      Index total = 0;
      for (Index n : policy.partition) {
        if (n < 1) throw ParameterError("normalize: empty partition band");
        total += n;
      }
      if (total != W.rows())
        throw DimensionError("normalize: partition sizes sum to " + std::to_string(total) +
                             " but matrix has " + std::to_string(W.rows()) + " rows");
      const auto bands = static_cast<double>(policy.partition.size());
      for (Index c = 0; c < W.cols(); ++c) {
        const double column_sum = W.col(c).sum();
        if (column_sum <= 0.0) continue;
        const double target = column_sum / bands;
        Index offset = 0;
        bool empty_band = false;
        for (Index n : policy.partition) {
          if (W.col(c).segment(offset, n).sum() <= 0.0) empty_band = true;
          offset += n;
        }
        if (empty_band) {
          W.col(c).setZero();
          continue;
        }
        offset = 0;
        for (Index n : policy.partition) {
          auto band = W.col(c).segment(offset, n);
          band *= target / band.sum();
          offset += n;
        }
      }
      return;
    }
  }
}

/// Multiplicative KL update of the left factor followed by normalization.
inline Matrix nmf_left_update(const Matrix& X, const Matrix& W, const Matrix& H,
                              double eps = kDefaultEpsilon,
                              const NormalizationPolicy& policy = {}) {
  require_product_shape(X, W, H, "nmf_left_update");
  const Matrix ratio = ((X.array() + eps) / ((W * H).array() + eps)).matrix();
  const Matrix num = ((ratio * H.transpose()).array() + eps).matrix();
  // An all-ones matrix times H^T is the row sums of H repeated down each column.
  const Eigen::RowVectorXd denom = H.rowwise().sum().transpose().array() + eps;
  Matrix out = W;
  for (Index r = 0; r < W.rows(); ++r)
    out.row(r).array() *= num.row(r).array() / denom.array();
  normalize(out, policy);
  return out;
}

/// S = (1 - theta) I + (theta / R) 11^T.
inline Matrix smoothing_matrix(Index R, double theta) {
  if (R < 1) throw ParameterError("smoothing_matrix: R must be >= 1");
  if (!(theta >= 0.0 && theta <= 1.0))
    throw ParameterError("smoothing_matrix: theta outside [0,1]");
  Matrix S = Matrix::Constant(R, R, theta / static_cast<double>(R));
  S.diagonal().array() += 1.0 - theta;
  return S;
}

/// One nonsmooth-NMF learning step followed by one inference step.
/// The left update sees S*H and the right update sees W'*S.
inline std::pair<Matrix, Matrix> nsnmf_updates(const Matrix& X, const Matrix& W, const Matrix& H,
                                               double eps, double theta,
                                               const NormalizationPolicy& policy = {}) {
  require_product_shape(X, W, H, "nsnmf_updates");
  const Matrix S = smoothing_matrix(W.cols(), theta);
  Matrix W2 = nmf_left_update(X, W, S * H, eps, policy);
  Matrix H2 = nmf_right_update(X, W2 * S, H, eps);
  return {std::move(W2), std::move(H2)};
}

/// Piecewise-linear theta(iteration). Constant outside the breakpoints and
/// zero when there are none.
class SparsenessSchedule {
 public:
  struct Point {
    long iteration;
    double theta;
  };

  SparsenessSchedule() = default;
  explicit SparsenessSchedule(std::vector<Point> points) : points_(std::move(points)) {
    for (std::size_t i = 0; i < points_.size(); ++i) {
      if (!(points_[i].theta >= 0.0 && points_[i].theta <= 1.0))
        throw ParameterError("SparsenessSchedule: theta outside [0,1]");
      if (i > 0 && points_[i].iteration <= points_[i - 1].iteration)
        throw ParameterError("SparsenessSchedule: breakpoints must strictly increase");
    }
  }

  static SparsenessSchedule constant(double theta) { return SparsenessSchedule({{0, theta}}); }

  /// Zero until `from`, then linear up to `theta` at `to`, constant after.
  static SparsenessSchedule ramp(long from, long to, double theta) {
    return SparsenessSchedule({{from, 0.0}, {to, theta}});
  }

  double operator()(long iteration) const {
    if (points_.empty()) return 0.0;
    if (iteration <= points_.front().iteration) return points_.front().theta;
    if (iteration >= points_.back().iteration) return points_.back().theta;
    for (std::size_t i = 1; i < points_.size(); ++i) {
      const Point& b = points_[i];
      if (iteration <= b.iteration) {
        const Point& a = points_[i - 1];
        const double f = static_cast<double>(iteration - a.iteration) /
                         static_cast<double>(b.iteration - a.iteration);
        return a.theta + f * (b.theta - a.theta);
      }
    }
    return points_.back().theta;
  }

  const std::vector<Point>& points() const { return points_; }

 private:
  std::vector<Point> points_;
};

}  // namespace pfn
