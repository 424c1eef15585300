#pragma once

#include "dmkrr/common.hpp"

namespace dmkrr::metrics {

/// Root mean squared error over all n*T entries.
inline double rmse(const Matrix& pred, const Matrix& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) {
    throw ShapeError("rmse: shape mismatch");
  }
  const double n = static_cast<double>(pred.size());
  return std::sqrt((pred - truth).squaredNorm() / n);
}

// =============================================================================
// Valid prediction time
// =============================================================================

struct VptConfig {
  double gamma = 0.3;     // normalized error tolerance
  double lyapunov = 1.0;  // maximal Lyapunov exponent (1/time)
  double dt = 1.0;        // sampling step (time)
  Vector sigma;           // per-component std of the true trajectory

  /// sigma is taken from the trajectory being scored, per component.
  static VptConfig from_truth(const Matrix& truth, double gamma, double lyapunov,
                              double dt) {
    VptConfig cfg;
    cfg.gamma = gamma;
    cfg.lyapunov = lyapunov;
    cfg.dt = dt;
    const Vector mean = truth.rowwise().mean();
    cfg.sigma = ((truth.colwise() - mean).rowwise().squaredNorm() /
                 static_cast<double>(truth.cols()))
                    .cwiseSqrt();
    return cfg;
  }
};

/// Duration, in Lyapunov-time units, for which the sigma-normalized error
/// stays below gamma at every step: VPT = lyapunov * dt * i*, where i* is the
/// largest index with E_i <= gamma for all i <= i*. Index 0 is the shared
/// initial condition and is excluded. A prediction shorter than the truth
/// counts its missing steps as failures.
inline double vpt(const Matrix& pred, const Matrix& truth, const VptConfig& cfg) {
  if (pred.rows() != truth.rows() || pred.cols() > truth.cols()) {
    throw ShapeError("vpt: prediction shape incompatible with truth");
  }
  if (truth.cols() < 1) throw ShapeError("vpt: empty trajectory");
  if (!(cfg.gamma > 0.0) || !(cfg.lyapunov > 0.0) || !(cfg.dt > 0.0)) {
    throw InvalidParameter("vpt: gamma, lyapunov and dt must be positive");
  }
  if (cfg.sigma.size() != truth.rows() || (cfg.sigma.array() <= 0.0).any()) {
    throw InvalidParameter("vpt: sigma must be positive for every component");
  }
  const double n = static_cast<double>(truth.rows());
  Index valid = 0;
  for (Index i = 1; i < pred.cols(); ++i) {
    const double err = std::sqrt(
        ((pred.col(i) - truth.col(i)).array() / cfg.sigma.array()).square().sum() / n);
    if (!(err <= cfg.gamma)) break;
    valid = i;
  }
  return cfg.lyapunov * cfg.dt * static_cast<double>(valid);
}

// =============================================================================
// Weighted normalized RMSE
// =============================================================================

/// Exponential weights w_i = exp(t_i - t_T) emphasize the end of the horizon;
/// the result is the weighted error energy normalized by the truth energy
/// across all trajectories jointly.
inline double wnrmse(const std::vector<Matrix>& preds,
                     const std::vector<Matrix>& truths, const Vector& times) {
  if (preds.size() != truths.size() || preds.empty()) {
    throw ShapeError("wnrmse: prediction/truth counts differ or are empty");
  }
  const Index t = times.size();
  for (Index i = 1; i < t; ++i) {
    if (!(times[i] > times[i - 1])) {
      throw InvalidParameter("wnrmse: times must be strictly increasing");
    }
  }
  Vector w = (times.array() - times[t - 1]).exp();
  w /= std::sqrt(w.squaredNorm());
  double num = 0.0, den = 0.0;
  for (std::size_t j = 0; j < preds.size(); ++j) {
    const Matrix& p = preds[j];
    const Matrix& x = truths[j];
    if (p.rows() != x.rows() || p.cols() != x.cols() || p.cols() != t) {
      throw ShapeError("wnrmse: shape mismatch");
    }
    for (Index i = 0; i < t; ++i) {
      num += w[i] * w[i] * (p.col(i) - x.col(i)).squaredNorm();
      den += x.col(i).squaredNorm();
    }
  }
  if (den <= 0.0) {
    throw InvalidParameter("wnrmse: truth trajectories are identically zero");
  }
  return std::sqrt(num) / std::sqrt(den);
}

}  // namespace dmkrr::metrics
