#pragma once

#include "dmkrr/common.hpp"

namespace dmkrr::reduction {

/// Truncated PCA basis for lifting/restricting between ambient and reduced
/// coordinates. Reduced states are scaled by the leading singular value so
/// they are dimensionless: x~ = U_r^T (x - mean) / sigma1.
struct PcaReducer {
  Vector mean;    // ambient mean x_bar
  Matrix basis;   // n x r orthonormal columns U_r
  double sigma1 = 0.0;
  Index rank = 0;
  double energy = 0.0;  // retained fraction of squared singular values
};

namespace detail {

inline PcaReducer fit_impl(const Matrix& snapshots, Index rank, double energy_target) {
  if (snapshots.cols() < 2) {
    throw InvalidParameter("pca_fit: need at least 2 snapshots");
  }
  PcaReducer red;
  red.mean = snapshots.rowwise().mean();
  const Matrix centered = snapshots.colwise() - red.mean;
  Eigen::BDCSVD<Matrix> svd(centered, Eigen::ComputeThinU);
  const Vector& sv = svd.singularValues();
  const double total = sv.squaredNorm();
  if (!(total > 0.0) || !(sv[0] > 0.0)) {
    throw DegenerateGeometry("pca_fit: snapshot matrix has zero variance");
  }
  const Index max_rank = sv.size();
  if (rank > 0) {
    if (rank > max_rank) throw InvalidParameter("pca_fit: rank exceeds min(n, M)");
    red.rank = rank;
  } else {
    double acc = 0.0;
    red.rank = max_rank;
    for (Index i = 0; i < max_rank; ++i) {
      acc += sv[i] * sv[i];
      if (acc >= energy_target * total) {
        red.rank = i + 1;
        break;
      }
    }
  }
  red.basis = svd.matrixU().leftCols(red.rank);
  red.sigma1 = sv[0];
  red.energy = sv.head(red.rank).squaredNorm() / total;
  return red;
}

}  // namespace detail

inline PcaReducer pca_fit_rank(const Matrix& snapshots, Index rank) {
  if (rank < 1) throw InvalidParameter("pca_fit: rank must be positive");
  return detail::fit_impl(snapshots, rank, 0.0);
}

inline PcaReducer pca_fit_energy(const Matrix& snapshots, double energy) {
  if (!(energy > 0.0) || energy > 1.0) {
    throw InvalidParameter("pca_fit: energy fraction must lie in (0, 1]");
  }
  return detail::fit_impl(snapshots, 0, energy);
}

inline Vector reduce(const PcaReducer& red, const Vector& x) {
  if (x.size() != red.mean.size()) throw ShapeError("reduce: dimension mismatch");
  return red.basis.transpose() * (x - red.mean) / red.sigma1;
}

inline Matrix reduce(const PcaReducer& red, const Matrix& X) {
  if (X.rows() != red.mean.size()) throw ShapeError("reduce: dimension mismatch");
  return red.basis.transpose() * (X.colwise() - red.mean) / red.sigma1;
}

inline Vector reconstruct(const PcaReducer& red, const Vector& xt) {
  if (xt.size() != red.rank) throw ShapeError("reconstruct: dimension mismatch");
  return red.sigma1 * (red.basis * xt) + red.mean;
}

inline Matrix reconstruct(const PcaReducer& red, const Matrix& Xt) {
  if (Xt.rows() != red.rank) throw ShapeError("reconstruct: dimension mismatch");
  return (red.sigma1 * (red.basis * Xt)).colwise() + red.mean;
}

}  // namespace dmkrr::reduction
