#pragma once

#include "dmkrr/common.hpp"

#include <limits>
#include <utility>

namespace dmkrr::kernels {

enum class KernelKind { Rbf, Dm };

// Densities below this are treated as underflow: a model wandering this far
// off the data must fail loudly so a diverging rollout stays attributable.
inline constexpr double kDensityFloor = 1e-300;

// =============================================================================
// Distance helpers
// =============================================================================

inline void require_finite(const Matrix& X, const char* what) {
  if (!X.allFinite()) {
    throw InvalidParameter(std::string(what) + ": NaN/Inf coordinates rejected");
  }
}

/// Pairwise squared Euclidean distances between columns of X.
/// Upper triangle is computed and mirrored, so the result is bitwise symmetric.
inline Matrix pairwise_sq_dists(const Matrix& X) {
  const Index n = X.cols();
  Matrix d2 = -2.0 * (X.transpose() * X);
  const Vector sq = X.colwise().squaredNorm();
  for (Index j = 0; j < n; ++j) {
    for (Index i = 0; i < j; ++i) {
      const double v = sq[i] + sq[j] + d2(i, j);
      d2(i, j) = v > 0.0 ? v : 0.0;
    }
    d2(j, j) = 0.0;
  }
  d2.triangularView<Eigen::StrictlyLower>() =
      d2.triangularView<Eigen::StrictlyUpper>().transpose();
  return d2;
}

/// Squared distances between columns of Z (rows of result) and columns of X.
inline Matrix cross_sq_dists(const Matrix& Z, const Matrix& X) {
  if (Z.rows() != X.rows()) {
    throw ShapeError("cross_sq_dists: dimension mismatch");
  }
  Matrix d2 = (-2.0 * (Z.transpose() * X));
  d2.colwise() += Z.colwise().squaredNorm().transpose();
  d2.rowwise() += X.colwise().squaredNorm();
  return d2.cwiseMax(0.0);
}

// =============================================================================
// Gaussian RBF kernel
// =============================================================================

/// exp(-|x - y|^2 / (4 eps)); value in (0, 1] with 1 iff x == y.
inline double rbf_eval(const Vector& x, const Vector& y, double eps) {
  if (!(eps > 0.0) || !std::isfinite(eps)) {
    throw InvalidParameter("rbf_eval: lengthscale must be positive and finite");
  }
  if (x.size() != y.size()) {
    throw ShapeError("rbf_eval: points have different dimensions");
  }
  return std::exp(-(x - y).squaredNorm() / (4.0 * eps));
}

inline Matrix rbf_gram_from_d2(const Matrix& d2, double eps) {
  if (!(eps > 0.0) || !std::isfinite(eps)) {
    throw InvalidParameter("rbf_gram: lengthscale must be positive and finite");
  }
  return (-d2 / (4.0 * eps)).array().exp();
}

inline Matrix rbf_gram(const Matrix& X, double eps) {
  require_finite(X, "rbf_gram");
  return rbf_gram_from_d2(pairwise_sq_dists(X), eps);
}

// =============================================================================
// Diffusion-maps kernel
//
// Two density normalizations of the RBF kernel followed by a symmetric
// conjugation. With K~ the RBF matrix over anchors:
//
//   q_j    = (1/N) sum_i K~(j,i)            first-stage density
//   K^(i,j) = K~(i,j) / (q_i q_j)           right-normalized kernel
//   qhat_j = (1/N) sum_i K^(j,i)            second-stage density
//   K(i,j) = K^(i,j) / sqrt(qhat_i qhat_j)  symmetric DM kernel
//
// The densities are frozen at fit time and reused for out-of-sample queries;
// the query-side densities are recomputed fresh against the anchors, which is
// the unique extension consistent with treating the query as an (N+1)-th
// point without refitting.
// =============================================================================

struct DmKernelModel {
  Matrix anchors;     // n x N training points
  double lengthscale = 0.0;
  Vector q;           // first-stage densities at the anchors
  Vector qhat;        // second-stage densities at the anchors
};

namespace detail {

inline void check_density(const Vector& d, const char* stage, const char* err) {
  for (Index j = 0; j < d.size(); ++j) {
    if (!std::isfinite(d[j]) || d[j] < kDensityFloor) {
      throw IllConditionedBandwidth(std::string(err) + ": " + stage +
                                    " density underflow at point index " +
                                    std::to_string(j));
    }
  }
}

/// Normalization chain on a precomputed RBF matrix. Transforms `k` in place
/// from K~ to the symmetric DM Gram and returns the two density vectors.
/// Every elementwise step uses commutative expressions of (i, j), so the
/// bitwise symmetry of the input is preserved.
inline std::pair<Vector, Vector> dm_normalize(Matrix& k) {
  const Index n = k.cols();
  Vector q = k.rowwise().mean();
  check_density(q, "first-stage", "dm_fit");
  for (Index j = 0; j < n; ++j) {
    for (Index i = 0; i < n; ++i) k(i, j) /= q[i] * q[j];
  }
  Vector qhat = k.rowwise().mean();
  check_density(qhat, "second-stage", "dm_fit");
  for (Index j = 0; j < n; ++j) {
    for (Index i = 0; i < n; ++i) k(i, j) /= std::sqrt(qhat[i] * qhat[j]);
  }
  return {std::move(q), std::move(qhat)};
}

}  // namespace detail

/// Fit the DM kernel and return both the model and the symmetric Gram matrix
/// over the anchors. `d2` may pass precomputed pairwise squared distances.
inline std::pair<DmKernelModel, Matrix> dm_fit_gram(const Matrix& X, double eps,
                                                    const Matrix* d2 = nullptr) {
  require_finite(X, "dm_fit");
  if (!(eps > 0.0) || !std::isfinite(eps)) {
    throw InvalidParameter("dm_fit: lengthscale must be positive and finite");
  }
  Matrix k = d2 ? rbf_gram_from_d2(*d2, eps) : rbf_gram(X, eps);
  auto [q, qhat] = detail::dm_normalize(k);
  DmKernelModel model;
  model.anchors = X;
  model.lengthscale = eps;
  model.q = std::move(q);
  model.qhat = std::move(qhat);
  return {std::move(model), std::move(k)};
}

inline DmKernelModel dm_fit(const Matrix& X, double eps, const Matrix* d2 = nullptr) {
  return dm_fit_gram(X, eps, d2).first;
}

/// Symmetric DM Gram over the model's anchors.
inline Matrix dm_gram(const DmKernelModel& model, const Matrix* d2 = nullptr) {
  Matrix k = d2 ? rbf_gram_from_d2(*d2, model.lengthscale)
                : rbf_gram(model.anchors, model.lengthscale);
  detail::dm_normalize(k);
  return k;
}

/// Kernel Gram matrix over the columns of X for either kernel kind.
inline Matrix gram(KernelKind kind, const Matrix& X, double eps) {
  if (kind == KernelKind::Rbf) return rbf_gram(X, eps);
  return dm_fit_gram(X, eps).second;
}

namespace detail {

/// DM kernel row for one query against the anchors, writing into `row`.
/// Query densities are computed fresh; anchor densities come from the model.
inline void dm_cross_row_into(const DmKernelModel& m, const Vector& z,
                              RowVector& row) {
  const Index n = m.anchors.cols();
  row = (m.anchors.colwise() - z).colwise().squaredNorm();
  row = (-row / (4.0 * m.lengthscale)).array().exp();
  const double qz = row.mean();
  if (!std::isfinite(qz) || qz < kDensityFloor) {
    throw IllConditionedQuery(
        "dm_cross: query density underflow (point too far from all anchors)");
  }
  for (Index j = 0; j < n; ++j) row[j] /= qz * m.q[j];
  const double qhatz = row.mean();
  if (!std::isfinite(qhatz) || qhatz < kDensityFloor) {
    throw IllConditionedQuery("dm_cross: query second-stage density underflow");
  }
  for (Index j = 0; j < n; ++j) row[j] /= std::sqrt(qhatz * m.qhat[j]);
}

}  // namespace detail

/// Out-of-sample DM kernel block: entry (i, j) = k(z_i, x_j).
inline Matrix dm_cross(const DmKernelModel& m, const Matrix& Z) {
  if (Z.rows() != m.anchors.rows()) {
    throw ShapeError("dm_cross: query dimension does not match anchors");
  }
  require_finite(Z, "dm_cross");
  Matrix out(Z.cols(), m.anchors.cols());
  RowVector row;
  for (Index i = 0; i < Z.cols(); ++i) {
    detail::dm_cross_row_into(m, Z.col(i), row);
    out.row(i) = row;
  }
  return out;
}

/// RBF kernel block: entry (i, j) = k~(z_i, x_j).
inline Matrix rbf_cross(const Matrix& anchors, const Matrix& Z, double eps) {
  require_finite(Z, "rbf_cross");
  return (-cross_sq_dists(Z, anchors) / (4.0 * eps)).array().exp();
}

// =============================================================================
// Eigenpairs of the symmetric DM Gram (diffusion coordinates)
// =============================================================================

struct EigenPairs {
  Vector values;   // descending
  Matrix vectors;  // one unit-norm column per eigenvalue
};

/// Top-count eigenpairs of the symmetric DM Gram over the anchors. These are
/// the density-rescaled eigenvectors of the Markov transition matrix; exposed
/// for diffusion-coordinate plots.
inline EigenPairs dm_eigen(const DmKernelModel& model, Index count) {
  const Index n = model.anchors.cols();
  if (count < 1 || count > n) {
    throw InvalidParameter("dm_eigen: count must be in [1, N]");
  }
  const Matrix k = dm_gram(model);
  Eigen::SelfAdjointEigenSolver<Matrix> solver(k);
  if (solver.info() != Eigen::Success) {
    throw NumericError("dm_eigen: eigensolver failed to converge (|K| = " +
                       std::to_string(k.norm()) + ", N = " + std::to_string(n) + ")");
  }
  EigenPairs out;
  out.values.resize(count);
  out.vectors.resize(n, count);
  for (Index i = 0; i < count; ++i) {
    out.values[i] = solver.eigenvalues()[n - 1 - i];
    out.vectors.col(i) = solver.eigenvectors().col(n - 1 - i);
  }
  return out;
}

}  // namespace dmkrr::kernels
