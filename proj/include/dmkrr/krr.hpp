#pragma once

#include "dmkrr/common.hpp"
#include "dmkrr/kernels.hpp"

#include <utility>

namespace dmkrr::krr {

enum class EstimatorForm { Direct, SkipConnection };

// =============================================================================
// Training pairs
// =============================================================================

/// Shifted input/output matrices built from an ensemble of trajectories.
/// Column i of X is a state, column i of Y is its one-step target: the next
/// state (Direct) or the increment to it (SkipConnection). The final state of
/// each trajectory never appears in X, so N = sum_j (T_j - 1).
struct TrainingPairs {
  Matrix X;
  Matrix Y;
  EstimatorForm form = EstimatorForm::Direct;
  double dt = 0.0;
};

inline TrainingPairs build_pairs(const std::vector<Matrix>& trajectories,
                                 EstimatorForm form, double dt) {
  if (trajectories.empty()) {
    throw InvalidParameter("build_pairs: empty trajectory list");
  }
  const Index n = trajectories.front().rows();
  Index total = 0;
  for (const Matrix& traj : trajectories) {
    if (traj.rows() != n) {
      throw ShapeError("build_pairs: trajectories have inconsistent dimensions");
    }
    if (traj.cols() < 2) {
      throw InvalidParameter("build_pairs: every trajectory needs >= 2 states");
    }
    total += traj.cols() - 1;
  }
  TrainingPairs pairs;
  pairs.form = form;
  pairs.dt = dt;
  pairs.X.resize(n, total);
  pairs.Y.resize(n, total);
  Index at = 0;
  for (const Matrix& traj : trajectories) {
    const Index m = traj.cols() - 1;
    pairs.X.middleCols(at, m) = traj.leftCols(m);
    if (form == EstimatorForm::Direct) {
      pairs.Y.middleCols(at, m) = traj.rightCols(m);
    } else {
      pairs.Y.middleCols(at, m) = traj.rightCols(m) - traj.leftCols(m);
    }
    at += m;
  }
  return pairs;
}

// =============================================================================
// Ridge-regularized kernel regression
// =============================================================================

/// Fitted one-step solution operator: x -> k(x, anchors) alpha^T, plus x
/// itself under the skip-connection form.
struct KrrModel {
  kernels::KernelKind kind = kernels::KernelKind::Rbf;
  EstimatorForm form = EstimatorForm::Direct;
  double eps = 0.0;
  double lambda_reg = 0.0;
  double dt = 0.0;
  Matrix anchors;             // n x N training inputs
  Matrix alpha;               // n x N coefficients, row j = alpha_j^T
  kernels::DmKernelModel dm;  // populated when kind == Dm
  double divergence_bound = std::numeric_limits<double>::infinity();
  double solve_residual = 0.0;
};

/// Solve (K + lambda I) alpha_j^T = Y_j^T for all components through one
/// factorization. Cholesky when lambda > 0, with a pivoted LDLT fallback;
/// lambda == 0 goes straight to LDLT with a warning.
inline KrrModel fit(const TrainingPairs& pairs, kernels::KernelKind kind,
                    double eps, double lambda_reg, const Matrix* d2 = nullptr) {
  if (!(lambda_reg >= 0.0) || !std::isfinite(lambda_reg)) {
    throw InvalidParameter("krr::fit: lambda_reg must be finite and >= 0");
  }
  if (pairs.X.cols() < 1 || pairs.X.cols() != pairs.Y.cols() ||
      pairs.X.rows() != pairs.Y.rows()) {
    throw ShapeError("krr::fit: training pair matrices are inconsistent");
  }

  KrrModel model;
  model.kind = kind;
  model.form = pairs.form;
  model.eps = eps;
  model.lambda_reg = lambda_reg;
  model.dt = pairs.dt;
  model.anchors = pairs.X;

  Matrix k;
  if (kind == kernels::KernelKind::Dm) {
    auto fitted = kernels::dm_fit_gram(pairs.X, eps, d2);
    model.dm = std::move(fitted.first);
    k = std::move(fitted.second);
  } else {
    k = d2 ? kernels::rbf_gram_from_d2(*d2, eps) : kernels::rbf_gram(pairs.X, eps);
  }
  k.diagonal().array() += lambda_reg;

  const Matrix yt = pairs.Y.transpose();
  Matrix coeffs;
  bool solved = false;
  if (lambda_reg > 0.0) {
    Eigen::LLT<Matrix> llt(k);
    if (llt.info() == Eigen::Success) {
      coeffs = llt.solve(yt);
      solved = coeffs.allFinite();
    }
  } else {
    warn("krr::fit: lambda_reg = 0, using pivoted factorization");
  }
  if (!solved) {
    if (lambda_reg > 0.0) {
      warn("krr::fit: Cholesky failed, falling back to pivoted factorization");
    }
    Eigen::LDLT<Matrix> ldlt(k);
    if (ldlt.info() != Eigen::Success) {
      throw NumericError(
          "krr::fit: factorization failed; the Gram matrix is numerically "
          "singular, increase lambda_reg");
    }
    coeffs = ldlt.solve(yt);
    if (!coeffs.allFinite()) {
      throw NumericError(
          "krr::fit: solve produced non-finite coefficients; increase lambda_reg");
    }
  }
  model.solve_residual = (k * coeffs - yt).cwiseAbs().maxCoeff();
  model.alpha = coeffs.transpose();

  const double scale = pairs.X.cwiseAbs().maxCoeff();
  model.divergence_bound = 1e6 * (scale > 0.0 ? scale : 1.0);
  return model;
}

namespace detail {

inline void kernel_row(const KrrModel& model, const Vector& x, RowVector& row) {
  if (model.kind == kernels::KernelKind::Dm) {
    kernels::detail::dm_cross_row_into(model.dm, x, row);
  } else {
    row = (model.anchors.colwise() - x).colwise().squaredNorm();
    row = (-row / (4.0 * model.eps)).array().exp();
  }
}

}  // namespace detail

/// One application of the learned solution operator.
inline Vector predict_step(const KrrModel& model, const Vector& x) {
  if (x.size() != model.anchors.rows()) {
    throw ShapeError("predict_step: state dimension mismatch");
  }
  if (!x.allFinite()) {
    throw InvalidParameter("predict_step: state must be finite");
  }
  RowVector row;
  detail::kernel_row(model, x, row);
  Vector y = model.alpha * row.transpose();
  if (model.form == EstimatorForm::SkipConnection) y += x;
  return y;
}

// =============================================================================
// Autoregressive rollout
// =============================================================================

/// A rollout never throws on a blow-up: validation has to score diverged
/// candidates as bad, not crash. `states` holds the valid prefix (column 0 is
/// the initial state) and `diverged` flags early termination.
struct RolloutResult {
  Matrix states;
  bool diverged = false;
};

inline RolloutResult rollout(const KrrModel& model, const Vector& x0, Index steps,
                             double magnitude_bound = 0.0) {
  if (steps < 0) throw InvalidParameter("rollout: steps must be >= 0");
  if (!x0.allFinite()) throw InvalidParameter("rollout: initial state must be finite");
  const double bound =
      magnitude_bound > 0.0 ? magnitude_bound : model.divergence_bound;

  RolloutResult out;
  Matrix states(x0.size(), steps + 1);
  states.col(0) = x0;
  Index done = 0;
  RowVector row;
  Vector x = x0;
  for (Index i = 0; i < steps; ++i) {
    bool bad = false;
    try {
      detail::kernel_row(model, x, row);
      Vector y = model.alpha * row.transpose();
      if (model.form == EstimatorForm::SkipConnection) y += x;
      x = std::move(y);
    } catch (const IllConditionedQuery&) {
      bad = true;
    }
    if (bad || !x.allFinite() || x.cwiseAbs().maxCoeff() > bound) {
      out.diverged = true;
      break;
    }
    states.col(i + 1) = x;
    done = i + 1;
  }
  out.states = states.leftCols(done + 1);
  return out;
}

}  // namespace dmkrr::krr
