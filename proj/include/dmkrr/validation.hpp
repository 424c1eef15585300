#pragma once

#include "dmkrr/common.hpp"
#include "dmkrr/kernels.hpp"
#include "dmkrr/krr.hpp"
#include "dmkrr/metrics.hpp"

#include <cfloat>
#include <cstdio>
#include <ostream>

namespace dmkrr::validation {

// =============================================================================
// Intrinsic-dimension scan
//
// S(eta) = (1/N^2) sum_ij exp(-|x_i - x_j|^2 / (L^2 eta)) with L the maximum
// pairwise distance. In the scaling region S(eta) ~ eta^(d/2), so twice the
// log-log slope estimates the intrinsic dimension.
// =============================================================================

struct DimensionScan {
  Vector etas;
  Vector s;        // kernel sums S(eta)
  Vector d_tilde;  // 2 dlog(S)/dlog(eta), finite differences
  double max_dist = 0.0;
};

inline Vector default_eta_grid(int points = 64, double lo = 1e-6, double hi = 1e2) {
  Vector etas(points);
  const double llo = std::log(lo), lhi = std::log(hi);
  for (int i = 0; i < points; ++i) {
    etas[i] = std::exp(llo + (lhi - llo) * i / (points - 1));
  }
  return etas;
}

namespace detail {

inline DimensionScan dimension_scan_d2(const Matrix& d2, const Vector& etas) {
  if (etas.size() < 3) {
    throw InvalidParameter("dimension_scan: need at least 3 bandwidths");
  }
  for (Index i = 0; i < etas.size(); ++i) {
    if (!(etas[i] > 0.0) || (i > 0 && !(etas[i] > etas[i - 1]))) {
      throw InvalidParameter("dimension_scan: bandwidths must be positive ascending");
    }
  }
  const double l2 = d2.maxCoeff();
  if (!(l2 > 0.0)) {
    throw DegenerateGeometry("dimension_scan: all points are identical");
  }
  DimensionScan out;
  out.etas = etas;
  out.max_dist = std::sqrt(l2);
  out.s.resize(etas.size());
  for (Index m = 0; m < etas.size(); ++m) {
    out.s[m] = (-d2 / (l2 * etas[m])).array().exp().mean();
  }
  out.d_tilde.resize(etas.size());
  const auto logs = out.s.array().log();
  const auto loge = etas.array().log();
  const Index last = etas.size() - 1;
  out.d_tilde[0] = 2.0 * (logs[1] - logs[0]) / (loge[1] - loge[0]);
  out.d_tilde[last] = 2.0 * (logs[last] - logs[last - 1]) / (loge[last] - loge[last - 1]);
  for (Index m = 1; m < last; ++m) {
    out.d_tilde[m] = 2.0 * (logs[m + 1] - logs[m - 1]) / (loge[m + 1] - loge[m - 1]);
  }
  return out;
}

}  // namespace detail

inline DimensionScan dimension_scan(const Matrix& X, const Vector& etas) {
  if (X.cols() < 2) throw InvalidParameter("dimension_scan: need at least 2 points");
  kernels::require_finite(X, "dimension_scan");
  return detail::dimension_scan_d2(kernels::pairwise_sq_dists(X), etas);
}

inline DimensionScan dimension_scan(const Matrix& X) {
  return dimension_scan(X, default_eta_grid());
}

// =============================================================================
// Reference hyperparameters
// =============================================================================

enum class HeuristicMode { Manifold, Chaotic };

struct HeuristicResult {
  double eta_star = 0.0;   // bandwidth maximizing the dimension estimate
  double d_star = 0.0;     // intrinsic dimension estimate
  double eps_star = 0.0;   // reference kernel lengthscale
  double max_dist = 0.0;   // maximum pairwise distance L
  double lam_star = 0.0;   // |smallest eigenvalue| of the RBF Gram at eps_star
};

/// Reference lengthscale from the dimension scan: eta* maximizes d~, then
/// eps* = 5/(2n) (L^2 eta*)^(1/d*) for manifold data or 250 L^2 eta* for
/// chaotic data, and lam* = |lambda_min| of the RBF Gram at eps*.
inline HeuristicResult heuristic_reference(const Matrix& X, HeuristicMode mode,
                                           int ambient_n = 0) {
  if (X.cols() < 2) {
    throw InvalidParameter("heuristic_reference: need at least 2 points");
  }
  kernels::require_finite(X, "heuristic_reference");
  const int n = ambient_n > 0 ? ambient_n : static_cast<int>(X.rows());
  const Matrix d2 = kernels::pairwise_sq_dists(X);
  const DimensionScan scan = detail::dimension_scan_d2(d2, default_eta_grid());

  Index best = 0;
  for (Index m = 1; m < scan.d_tilde.size(); ++m) {
    if (scan.d_tilde[m] > scan.d_tilde[best]) best = m;
  }
  for (Index m = best + 1; m < scan.d_tilde.size(); ++m) {
    if (scan.d_tilde[m] == scan.d_tilde[best]) {
      warn("heuristic_reference: non-unique argmax, keeping the smallest eta");
      break;
    }
  }
  HeuristicResult ref;
  ref.eta_star = scan.etas[best];
  ref.d_star = scan.d_tilde[best];
  ref.max_dist = scan.max_dist;
  if (!std::isfinite(ref.d_star) || ref.d_star <= 0.0) {
    throw DegenerateGeometry("heuristic_reference: dimension scan has no finite maximum");
  }
  const double l2eta = ref.max_dist * ref.max_dist * ref.eta_star;
  if (mode == HeuristicMode::Manifold) {
    ref.eps_star = 5.0 / (2.0 * n) * std::pow(l2eta, 1.0 / ref.d_star);
  } else {
    ref.eps_star = 250.0 * l2eta;
  }

  const Matrix gram = kernels::rbf_gram_from_d2(d2, ref.eps_star);
  Eigen::SelfAdjointEigenSolver<Matrix> solver(gram, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) {
    throw NumericError("heuristic_reference: eigensolver failed on the RBF Gram");
  }
  ref.lam_star = std::abs(solver.eigenvalues()[0]);
  return ref;
}

// =============================================================================
// Search range
// =============================================================================

struct SearchRange {
  double eps_lo = 0.0, eps_hi = 0.0;
  double lam_lo = 0.0, lam_hi = 0.0;
};

/// H = [eps* d, eps*/d] x [lam*, lam*/d_lam], normalized so lo < hi. The
/// defaults are d_eps = 1e-2 and d_lam = 1e-4.
inline SearchRange make_range(const HeuristicResult& ref, double d_eps = 1e-2,
                              double d_lam = 1e-4) {
  if (!(d_eps > 0.0) || !(d_lam > 0.0)) {
    throw InvalidParameter("make_range: spread factors must be positive");
  }
  if (!(ref.eps_star > 0.0)) {
    throw InvalidParameter("make_range: reference lengthscale must be positive");
  }
  double lam_star = ref.lam_star;
  if (lam_star <= 0.0) {
    warn("make_range: lam* = 0, substituting machine-epsilon floor");
    lam_star = DBL_EPSILON;
  }
  SearchRange r;
  r.eps_lo = ref.eps_star * std::min(d_eps, 1.0 / d_eps);
  r.eps_hi = ref.eps_star * std::max(d_eps, 1.0 / d_eps);
  r.lam_lo = lam_star * std::min(1.0, 1.0 / d_lam);
  r.lam_hi = lam_star * std::max(1.0, 1.0 / d_lam);
  return r;
}

// =============================================================================
// Random search
// =============================================================================

enum class TrialStatus { Ok, Diverged, SolverFailed };

inline const char* to_string(TrialStatus s) {
  switch (s) {
    case TrialStatus::Ok: return "ok";
    case TrialStatus::Diverged: return "diverged";
    default: return "solver-failed";
  }
}

struct SearchRecord {
  int trial = 0;
  double eps = 0.0;
  double lam = 0.0;
  double score = 0.0;
  TrialStatus status = TrialStatus::Ok;
};

/// Validation metric specification. VPT is maximized, the others minimized.
struct Metric {
  enum class Kind { Rmse, Vpt, Wnrmse };
  Kind kind = Kind::Rmse;
  double gamma = 0.3;
  double lyapunov = 1.0;

  bool maximize() const { return kind == Kind::Vpt; }
};

class NoViableModel : public Error {
 public:
  explicit NoViableModel(std::vector<SearchRecord> recs)
      : Error("random_search: every trial diverged or failed"),
        records(std::move(recs)) {}
  std::vector<SearchRecord> records;
};

/// Score a model by full-length rollouts from the first state of every
/// validation trajectory. RMSE/VPT are averaged across the trajectories;
/// WNRMSE is evaluated jointly. Sets *diverged when any rollout truncates.
inline double score_validation(const krr::KrrModel& model,
                               const std::vector<Matrix>& val, const Metric& metric,
                               bool* diverged = nullptr) {
  if (val.empty()) throw InvalidParameter("score_validation: no validation trajectories");
  bool any_diverged = false;
  double acc = 0.0;
  std::vector<Matrix> preds;
  for (const Matrix& truth : val) {
    const auto roll = krr::rollout(model, truth.col(0), truth.cols() - 1);
    any_diverged = any_diverged || roll.diverged;
    switch (metric.kind) {
      case Metric::Kind::Rmse:
        acc += roll.diverged ? std::numeric_limits<double>::infinity()
                             : metrics::rmse(roll.states, truth);
        break;
      case Metric::Kind::Vpt:
        acc += metrics::vpt(
            roll.states, truth,
            metrics::VptConfig::from_truth(truth, metric.gamma, metric.lyapunov,
                                           model.dt));
        break;
      case Metric::Kind::Wnrmse:
        preds.push_back(roll.states);
        break;
    }
  }
  if (diverged) *diverged = any_diverged;
  if (metric.kind == Metric::Kind::Wnrmse) {
    if (any_diverged) return std::numeric_limits<double>::infinity();
    Vector times(val.front().cols());
    for (Index i = 0; i < times.size(); ++i) times[i] = model.dt * i;
    return metrics::wnrmse(preds, val, times);
  }
  return acc / static_cast<double>(val.size());
}

struct SearchResult {
  krr::KrrModel best;
  std::vector<SearchRecord> records;
  int best_trial = -1;
};

namespace detail {

inline bool better(const SearchRecord& a, const SearchRecord& b, bool maximize) {
  if (a.score != b.score) return maximize ? a.score > b.score : a.score < b.score;
  if (a.lam != b.lam) return a.lam < b.lam;  // ties: prefer less regularization,
  return a.eps < b.eps;                      // then the finer kernel
}

}  // namespace detail

/// Log-uniform random search over (eps, lambda_reg). Each trial fits on the
/// training pairs, rolls out over every validation trajectory and scores;
/// diverged or failed trials are recorded but never selected. Results are a
/// deterministic function of the seed, independent of the thread count.
inline SearchResult random_search(const krr::TrainingPairs& pairs,
                                  kernels::KernelKind kind,
                                  const std::vector<Matrix>& val,
                                  const SearchRange& range, int trials,
                                  const Metric& metric, std::uint64_t seed,
                                  int threads = 0) {
  if (trials < 1) throw InvalidParameter("random_search: trials must be >= 1");
  if (val.empty()) throw InvalidParameter("random_search: no validation trajectories");
  if (!(range.eps_lo > 0.0) || !(range.eps_lo < range.eps_hi) ||
      !(range.lam_lo > 0.0) || !(range.lam_lo <= range.lam_hi)) {
    throw InvalidParameter("random_search: malformed search range");
  }

  const Matrix d2 = kernels::pairwise_sq_dists(pairs.X);
  std::vector<SearchRecord> records(trials);
  const double log_eps_lo = std::log(range.eps_lo), log_eps_hi = std::log(range.eps_hi);
  const double log_lam_lo = std::log(range.lam_lo), log_lam_hi = std::log(range.lam_hi);

  parallel_for(trials, threads, [&](std::int64_t i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    SearchRecord rec;
    rec.trial = static_cast<int>(i);
    rec.eps = std::exp(rng.uniform(log_eps_lo, log_eps_hi));
    rec.lam = std::exp(rng.uniform(log_lam_lo, log_lam_hi));
    try {
      const krr::KrrModel model = krr::fit(pairs, kind, rec.eps, rec.lam, &d2);
      bool diverged = false;
      rec.score = score_validation(model, val, metric, &diverged);
      rec.status = diverged ? TrialStatus::Diverged : TrialStatus::Ok;
    } catch (const NumericError&) {
      rec.status = TrialStatus::SolverFailed;
      rec.score = std::numeric_limits<double>::quiet_NaN();
    }
    records[i] = rec;
  });

  int best = -1;
  for (int i = 0; i < trials; ++i) {
    if (records[i].status != TrialStatus::Ok) continue;
    if (!std::isfinite(records[i].score)) continue;
    if (best < 0 || detail::better(records[i], records[best], metric.maximize())) {
      best = i;
    }
  }
  if (best < 0) throw NoViableModel(std::move(records));

  SearchResult out;
  out.best_trial = best;
  out.best = krr::fit(pairs, kind, records[best].eps, records[best].lam, &d2);
  out.records = std::move(records);
  return out;
}

// =============================================================================
// Record export
// =============================================================================

inline void records_to_csv(const std::vector<SearchRecord>& records,
                           std::ostream& os) {
  os << "trial,eps,lambda,score,status\n";
  char buf[128];
  for (const SearchRecord& r : records) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%s\n", r.trial, r.eps,
                  r.lam, r.score, to_string(r.status));
    os << buf;
  }
}

}  // namespace dmkrr::validation
