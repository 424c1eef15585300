#pragma once

#include "dmkrr/common.hpp"

#include <unsupported/Eigen/FFT>

#include <complex>
#include <functional>
#include <string>

namespace dmkrr::systems {

// =============================================================================
// Datasets
// =============================================================================

struct TrajectoryMeta {
  std::string system;
  std::string params;
  std::uint64_t seed = 0;
};

/// Ensemble of state time series sharing dimension and step size.
struct TrajectoryDataset {
  std::vector<Matrix> trajectories;  // each n x T_j
  double dt = 0.0;
  TrajectoryMeta meta;

  Index dim() const { return trajectories.empty() ? 0 : trajectories.front().rows(); }
  Index total_states() const {
    Index s = 0;
    for (const Matrix& t : trajectories) s += t.cols();
    return s;
  }
};

// =============================================================================
// Classical RK4
// =============================================================================

template <class Field>
Vector rk4_step(Field&& f, const Vector& x, double dt) {
  if (!(dt > 0.0)) throw InvalidParameter("rk4_step: dt must be positive");
  const Vector k1 = f(x);
  const Vector k2 = f(x + (0.5 * dt) * k1);
  const Vector k3 = f(x + (0.5 * dt) * k2);
  const Vector k4 = f(x + dt * k3);
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

// =============================================================================
// Lorenz-63
// =============================================================================

struct Lorenz63Params {
  double sigma = 10.0;
  double rho = 28.0;
  double beta = 8.0 / 3.0;
};

inline Vector lorenz63_rhs(const Lorenz63Params& p, const Vector& x) {
  Vector dx(3);
  dx[0] = p.sigma * (x[1] - x[0]);
  dx[1] = x[0] * (p.rho - x[2]) - x[1];
  dx[2] = x[0] * x[1] - p.beta * x[2];
  return dx;
}

/// RK4 trajectory of `steps` states starting at `ic`, with the first
/// `discard` states dropped so the remainder sits on the attractor.
inline TrajectoryDataset gen_lorenz63(const Vector& ic, Index steps, double dt,
                                      Index discard,
                                      const Lorenz63Params& p = {}) {
  if (ic.size() != 3) throw ShapeError("gen_lorenz63: state dimension must be 3");
  if (steps <= discard) {
    throw InvalidParameter("gen_lorenz63: steps must exceed discard");
  }
  auto field = [&p](const Vector& x) { return lorenz63_rhs(p, x); };
  Matrix traj(3, steps - discard);
  Vector x = ic;
  for (Index i = 0; i < steps; ++i) {
    if (i >= discard) traj.col(i - discard) = x;
    if (i + 1 == steps) break;
    x = rk4_step(field, x, dt);
    if (!x.allFinite()) {
      throw GenerationError("gen_lorenz63: non-finite state at step " +
                            std::to_string(i + 1));
    }
  }
  TrajectoryDataset ds;
  ds.trajectories.push_back(std::move(traj));
  ds.dt = dt;
  ds.meta.system = "lorenz63";
  return ds;
}

// =============================================================================
// Rigid-body rotation on the unit sphere
// =============================================================================

struct RigidBodyParams {
  double c1 = 0.5;
  double c2 = -7.0 / 8.0;
  double c3 = 3.0 / 8.0;
};

inline Vector rigid_body_rhs(const RigidBodyParams& p, const Vector& z) {
  Vector dz(3);
  dz[0] = p.c1 * z[1] * z[2];
  dz[1] = p.c2 * z[0] * z[2];
  dz[2] = p.c3 * z[0] * z[1];
  return dz;
}

/// Initial conditions on a uniform (theta, phi) grid over [0, pi/2] x [0, pi].
inline std::vector<Vector> sphere_grid(int count) {
  if (count < 1) throw InvalidParameter("sphere_grid: count must be positive");
  const int g1 = std::max(1, static_cast<int>(std::floor(std::sqrt(double(count)))));
  const int g2 = (count + g1 - 1) / g1;
  std::vector<Vector> ics;
  ics.reserve(count);
  constexpr double pi = 3.14159265358979323846;
  for (int i = 0; i < g1 && static_cast<int>(ics.size()) < count; ++i) {
    const double theta = (i + 0.5) * (pi / 2.0) / g1;
    for (int j = 0; j < g2 && static_cast<int>(ics.size()) < count; ++j) {
      const double phi = (j + 0.5) * pi / g2;
      Vector z(3);
      z << std::sin(phi) * std::cos(theta), std::sin(phi) * std::sin(theta),
          std::cos(phi);
      ics.push_back(std::move(z));
    }
  }
  return ics;
}

/// Uniformly random points on the unit sphere.
inline std::vector<Vector> sphere_random(int count, Rng& rng) {
  std::vector<Vector> ics;
  ics.reserve(count);
  for (int i = 0; i < count; ++i) {
    Vector z(3);
    double norm = 0.0;
    do {
      z << rng.normal(), rng.normal(), rng.normal();
      norm = z.norm();
    } while (norm < 1e-12);
    ics.push_back(z / norm);
  }
  return ics;
}

/// Integrate the rigid-body dynamics with per-step renormalization so every
/// state has unit norm exactly. When `truncate_period` is set, each trajectory
/// is cut at the first step (after a 100-step guard) returning within
/// `period_tol` of its initial state; if no return is found the full horizon
/// is kept and a warning is emitted.
inline TrajectoryDataset gen_rigid_body(const std::vector<Vector>& ics, double dt,
                                        Index steps, bool truncate_period,
                                        double period_tol = 1e-3,
                                        const RigidBodyParams& p = {}) {
  if (ics.empty()) throw InvalidParameter("gen_rigid_body: no initial conditions");
  if (steps < 1) throw InvalidParameter("gen_rigid_body: steps must be positive");
  auto field = [&p](const Vector& z) { return rigid_body_rhs(p, z); };

  TrajectoryDataset ds;
  ds.dt = dt;
  ds.meta.system = "rigid_body";
  for (const Vector& ic : ics) {
    if (ic.size() != 3 || std::abs(ic.norm() - 1.0) > 1e-8) {
      throw InvalidParameter("gen_rigid_body: initial condition not on the unit sphere");
    }
    Matrix traj(3, steps);
    Vector z = ic / ic.norm();
    traj.col(0) = z;
    Index kept = steps;
    for (Index i = 1; i < steps; ++i) {
      z = rk4_step(field, z, dt);
      z /= z.norm();
      traj.col(i) = z;
      if (truncate_period && i > 100 && (z - traj.col(0)).norm() < period_tol) {
        kept = i + 1;
        break;
      }
    }
    if (truncate_period && kept == steps) {
      warn("gen_rigid_body: no period return within horizon, keeping full path");
    }
    ds.trajectories.push_back(traj.leftCols(kept));
  }
  return ds;
}

// =============================================================================
// Sphere-to-torus embedding
//
// (theta, phi) in [0, pi/2] x [0, pi] maps to odd ambient dimension n as
// pairs ((1/k)(2 + cos theta) cos(k phi), (1/k)(2 + cos theta) sin(k phi))
// for k = 1..(n-1)/2, with final component sqrt(sum k^-2) sin(theta).
// =============================================================================

inline Vector torus_embed(double theta, double phi, int n) {
  if (n < 3 || n % 2 == 0) {
    throw InvalidParameter("torus_embed: ambient dimension must be odd and >= 3");
  }
  constexpr double pi = 3.14159265358979323846;
  const double slack = 1e-9;
  if (theta < -slack || theta > pi / 2.0 + slack || phi < -slack || phi > pi + slack) {
    throw InvalidParameter("torus_embed: (theta, phi) outside [0, pi/2] x [0, pi]");
  }
  Vector x(n);
  const double tube = 2.0 + std::cos(theta);
  double coef_sq = 0.0;
  for (int k = 1; k <= (n - 1) / 2; ++k) {
    x[2 * k - 2] = tube * std::cos(k * phi) / k;
    x[2 * k - 1] = tube * std::sin(k * phi) / k;
    coef_sq += 1.0 / (double(k) * double(k));
  }
  x[n - 1] = std::sqrt(coef_sq) * std::sin(theta);
  return x;
}

/// Spherical angles of a point on S^2, with theta folded into [0, pi/2] by the
/// two-argument arctangent of (|z2|, |z1|); the z1 = 0 limit gives pi/2.
inline std::pair<double, double> sphere_angles(const Vector& z) {
  if (z.size() != 3) throw ShapeError("sphere_angles: expected a point in R^3");
  if (std::abs(z.norm() - 1.0) > 1e-8) {
    throw InvalidParameter("sphere_angles: point is off the unit sphere");
  }
  const double theta = std::atan2(std::abs(z[1]), std::abs(z[0]));
  const double phi = std::acos(std::clamp(z[2], -1.0, 1.0));
  return {theta, phi};
}

inline Vector sphere_to_torus(const Vector& z, int n) {
  const auto [theta, phi] = sphere_angles(z);
  return torus_embed(theta, phi, n);
}

/// Map every state of a rigid-body dataset onto the n-dimensional torus.
inline TrajectoryDataset to_torus(const TrajectoryDataset& ds, int n) {
  TrajectoryDataset out;
  out.dt = ds.dt;
  out.meta = ds.meta;
  out.meta.system = ds.meta.system + "_torus" + std::to_string(n);
  for (const Matrix& traj : ds.trajectories) {
    Matrix m(n, traj.cols());
    for (Index i = 0; i < traj.cols(); ++i) {
      m.col(i) = sphere_to_torus(traj.col(i), n);
    }
    out.trajectories.push_back(std::move(m));
  }
  return out;
}

// =============================================================================
// Kuramoto-Sivashinsky via ETDRK4
// =============================================================================

struct KsParams {
  double L = 22.0;
  double nu = 1.0;
  int grid = 64;       // number of spatial points; must be a power of two
  double dt_solver = 0.01;
};

namespace detail {

/// Pseudospectral ETDRK4 stepper for u_t + u u_s + u_ss + nu u_ssss = 0 on a
/// periodic domain. The phi-functions of the stiff linear operator are
/// evaluated by complex contour averaging (32 points); the quadratic term is
/// dealiased by the 2/3 rule.
class KsSolver {
 public:
  explicit KsSolver(const KsParams& p) : m_(p.grid), fft_() {
    if (p.grid < 4 || (p.grid & (p.grid - 1)) != 0) {
      throw InvalidParameter("KsSolver: grid must be a power of two >= 4");
    }
    if (!(p.L > 0.0) || !(p.nu > 0.0) || !(p.dt_solver > 0.0)) {
      throw InvalidParameter("KsSolver: L, nu and dt_solver must be positive");
    }
    constexpr double pi = 3.14159265358979323846;
    const double h = p.dt_solver;
    Vector lin(m_);
    deriv_.resize(m_);
    dealias_.resize(m_);
    for (int i = 0; i < m_; ++i) {
      const int k = i <= m_ / 2 ? i : i - m_;
      const double q = 2.0 * pi * k / p.L;
      lin[i] = q * q - p.nu * q * q * q * q;
      // Nyquist mode carries no derivative information
      deriv_[i] = (i == m_ / 2) ? std::complex<double>(0.0, 0.0)
                                : std::complex<double>(0.0, -0.5 * q);
      dealias_[i] = std::abs(k) < m_ / 3.0 ? 1.0 : 0.0;
    }
    e_ = (h * lin.array()).exp();
    e2_ = (0.5 * h * lin.array()).exp();

    const int pts = 32;
    qc_ = Vector::Zero(m_);
    f1_ = Vector::Zero(m_);
    f2_ = Vector::Zero(m_);
    f3_ = Vector::Zero(m_);
    for (int j = 0; j < pts; ++j) {
      const std::complex<double> r =
          std::exp(std::complex<double>(0.0, pi * (j + 0.5) / pts));
      for (int i = 0; i < m_; ++i) {
        const std::complex<double> lr = h * lin[i] + r;
        const std::complex<double> elr = std::exp(lr);
        const std::complex<double> lr2 = lr * lr;
        const std::complex<double> lr3 = lr2 * lr;
        qc_[i] += (h * (std::exp(lr / 2.0) - 1.0) / lr).real() / pts;
        f1_[i] += (h * (-4.0 - lr + elr * (4.0 - 3.0 * lr + lr2)) / lr3).real() / pts;
        f2_[i] += (h * (2.0 + lr + elr * (-2.0 + lr)) / lr3).real() / pts;
        f3_[i] += (h * (-4.0 - 3.0 * lr - lr2 + elr * (4.0 - lr)) / lr3).real() / pts;
      }
    }
  }

  using Spectrum = Eigen::VectorXcd;

  Spectrum to_spectrum(const Vector& u) {
    Spectrum v(m_);
    Eigen::VectorXcd uc = u.cast<std::complex<double>>();
    fft_.fwd(v, uc);
    return v;
  }

  Vector to_physical(const Spectrum& v) {
    Eigen::VectorXcd uc(m_);
    fft_.inv(uc, v);
    return uc.real();
  }

  /// One ETDRK4 step on the spectrum.
  void step(Spectrum& v) {
    const Spectrum nv = nonlinear(v);
    const Spectrum a = e2_.cwiseProduct(v) + qc_.cwiseProduct(nv);
    const Spectrum na = nonlinear(a);
    const Spectrum b = e2_.cwiseProduct(v) + qc_.cwiseProduct(na);
    const Spectrum nb = nonlinear(b);
    const Spectrum c = e2_.cwiseProduct(a) + qc_.cwiseProduct(2.0 * nb - nv);
    const Spectrum nc = nonlinear(c);
    v = e_.cwiseProduct(v) + f1_.cwiseProduct(nv) +
        f2_.cwiseProduct(2.0 * (na + nb)) + f3_.cwiseProduct(nc);
  }

  int grid() const { return m_; }

 private:
  /// N(v) = dealias(-i k/2 FFT(u^2)) with u = IFFT(v).
  Spectrum nonlinear(const Spectrum& v) {
    const Vector u = to_physical(v);
    Spectrum w = to_spectrum(u.cwiseProduct(u));
    for (int i = 0; i < m_; ++i) w[i] *= deriv_[i] * dealias_[i];
    return w;
  }

  int m_;
  Eigen::FFT<double> fft_;
  Vector e_, e2_, qc_, f1_, f2_, f3_;
  Eigen::VectorXcd deriv_;
  Vector dealias_;
};

}  // namespace detail

/// Generate `steps` raw states of the KS equation from the profile ic_fn
/// sampled on the uniform grid, then drop the first `discard` raw states and
/// keep every `downsample`-th of the rest. The dataset step is
/// dt_solver * downsample.
inline TrajectoryDataset gen_ks(const std::function<double(double)>& ic_fn,
                                const KsParams& p, Index steps, Index downsample,
                                Index discard) {
  if (downsample < 1) throw InvalidParameter("gen_ks: downsample must be >= 1");
  if (steps <= discard) throw InvalidParameter("gen_ks: steps must exceed discard");
  detail::KsSolver solver(p);
  const int m = solver.grid();
  Vector u0(m);
  for (int i = 0; i < m; ++i) u0[i] = ic_fn(p.L * i / m);

  const Index kept = (steps - discard - 1) / downsample + 1;
  Matrix traj(m, kept);
  detail::KsSolver::Spectrum v = solver.to_spectrum(u0);
  Index at = 0;
  for (Index i = 0; i < steps; ++i) {
    if (i >= discard && (i - discard) % downsample == 0) {
      traj.col(at++) = solver.to_physical(v);
    }
    if (i + 1 < steps) {
      solver.step(v);
      if (!v.allFinite()) {
        throw GenerationError("gen_ks: spectrum blew up at raw step " +
                              std::to_string(i + 1));
      }
    }
  }
  TrajectoryDataset ds;
  ds.trajectories.push_back(std::move(traj));
  ds.dt = p.dt_solver * downsample;
  ds.meta.system = "ks";
  return ds;
}

// =============================================================================
// Trajectory preparation
// =============================================================================

/// Contiguous non-overlapping segments; the remainder is dropped.
inline std::vector<Matrix> segment(const Matrix& trajectory, Index seg_len) {
  if (seg_len <= 0) throw InvalidParameter("segment: seg_len must be positive");
  if (seg_len > trajectory.cols()) {
    throw InvalidParameter("segment: seg_len exceeds trajectory length");
  }
  std::vector<Matrix> out;
  const Index count = trajectory.cols() / seg_len;
  out.reserve(count);
  for (Index k = 0; k < count; ++k) {
    out.push_back(trajectory.middleCols(k * seg_len, seg_len));
  }
  return out;
}

/// A training block plus overlapping validation trajectories drawn from the
/// window that follows it.
struct SubsetSplit {
  Matrix train;             // n x N
  std::vector<Matrix> val;  // each n x N_v
};

/// Sample `count` windows of length N + 2 N_v at uniformly random offsets.
/// Within each window the first N states train; `n_val` validation
/// trajectories of length N_v start uniformly inside the trailing 2 N_v block.
inline std::vector<SubsetSplit> sample_subsets(const Matrix& traj, int count,
                                               Index n_train, Index n_val_len,
                                               int n_val, std::uint64_t seed) {
  const Index window = n_train + 2 * n_val_len;
  if (window > traj.cols()) {
    throw InvalidParameter("sample_subsets: window exceeds trajectory length");
  }
  if (count < 1 || n_val < 1) {
    throw InvalidParameter("sample_subsets: counts must be positive");
  }
  Rng rng(seed);
  std::vector<SubsetSplit> out;
  out.reserve(count);
  for (int k = 0; k < count; ++k) {
    const Index start = static_cast<Index>(rng.index(traj.cols() - window + 1));
    SubsetSplit split;
    split.train = traj.middleCols(start, n_train);
    for (int v = 0; v < n_val; ++v) {
      const Index vstart =
          start + n_train + static_cast<Index>(rng.index(n_val_len + 1));
      split.val.push_back(traj.middleCols(vstart, n_val_len));
    }
    out.push_back(std::move(split));
  }
  return out;
}

}  // namespace dmkrr::systems
