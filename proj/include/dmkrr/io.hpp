#pragma once

#include "dmkrr/common.hpp"
#include "dmkrr/krr.hpp"
#include "dmkrr/reduction.hpp"
#include "dmkrr/systems.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <optional>

// Binary containers for trajectory datasets and fitted models. Payloads are
// raw little-endian 64-bit floats so round trips are bit-exact.

namespace dmkrr::io {

namespace detail {

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!os) throw DataError("io: write failed");
}

inline void read_bytes(std::istream& is, void* p, std::size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!is || is.gcount() != static_cast<std::streamsize>(n)) {
    throw DataError("io: truncated or unreadable file");
  }
}

template <class T>
void write_pod(std::ostream& os, const T& v) {
  write_bytes(os, &v, sizeof(T));
}

template <class T>
T read_pod(std::istream& is) {
  T v;
  read_bytes(is, &v, sizeof(T));
  return v;
}

inline void write_matrix(std::ostream& os, const Matrix& m) {
  write_bytes(os, m.data(), sizeof(double) * m.size());
}

inline Matrix read_matrix(std::istream& is, Index rows, Index cols) {
  Matrix m(rows, cols);
  read_bytes(is, m.data(), sizeof(double) * m.size());
  return m;
}

inline void write_vector(std::ostream& os, const Vector& v) {
  write_bytes(os, v.data(), sizeof(double) * v.size());
}

inline Vector read_vector(std::istream& is, Index n) {
  Vector v(n);
  read_bytes(is, v.data(), sizeof(double) * v.size());
  return v;
}

}  // namespace detail

// =============================================================================
// Trajectory dataset container
//
// Header: magic "DMKRDS01", u64 n, u64 T, u64 J, f64 dt, char tag[16],
// u64 seed. T == 0 marks ragged ensembles and is followed by J per-trajectory
// lengths. Payload: column-major doubles per trajectory, concatenated.
// =============================================================================

inline constexpr char kDatasetMagic[8] = {'D', 'M', 'K', 'R', 'D', 'S', '0', '1'};
inline constexpr char kModelMagic[8] = {'D', 'M', 'K', 'R', 'M', 'D', '0', '1'};

inline void write_dataset(const std::string& path,
                          const systems::TrajectoryDataset& ds) {
  if (ds.trajectories.empty()) throw DataError("write_dataset: empty dataset");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("write_dataset: cannot open " + path);
  detail::write_bytes(os, kDatasetMagic, 8);
  const std::uint64_t n = static_cast<std::uint64_t>(ds.dim());
  std::uint64_t t = static_cast<std::uint64_t>(ds.trajectories.front().cols());
  for (const Matrix& traj : ds.trajectories) {
    if (static_cast<std::uint64_t>(traj.cols()) != t) t = 0;
  }
  const std::uint64_t j = ds.trajectories.size();
  detail::write_pod(os, n);
  detail::write_pod(os, t);
  detail::write_pod(os, j);
  detail::write_pod(os, ds.dt);
  char tag[16] = {};
  std::strncpy(tag, ds.meta.system.c_str(), sizeof(tag) - 1);
  detail::write_bytes(os, tag, sizeof(tag));
  detail::write_pod(os, ds.meta.seed);
  if (t == 0) {
    for (const Matrix& traj : ds.trajectories) {
      detail::write_pod(os, static_cast<std::uint64_t>(traj.cols()));
    }
  }
  for (const Matrix& traj : ds.trajectories) detail::write_matrix(os, traj);
}

inline systems::TrajectoryDataset read_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("read_dataset: cannot open " + path);
  char magic[8];
  detail::read_bytes(is, magic, 8);
  if (std::memcmp(magic, kDatasetMagic, 8) != 0) {
    throw DataError("read_dataset: bad magic in " + path);
  }
  const auto n = detail::read_pod<std::uint64_t>(is);
  const auto t = detail::read_pod<std::uint64_t>(is);
  const auto j = detail::read_pod<std::uint64_t>(is);
  systems::TrajectoryDataset ds;
  ds.dt = detail::read_pod<double>(is);
  char tag[17] = {};
  detail::read_bytes(is, tag, 16);
  ds.meta.system = tag;
  ds.meta.seed = detail::read_pod<std::uint64_t>(is);
  std::vector<std::uint64_t> lengths(j, t);
  if (t == 0) {
    for (auto& len : lengths) len = detail::read_pod<std::uint64_t>(is);
  }
  for (std::uint64_t k = 0; k < j; ++k) {
    ds.trajectories.push_back(detail::read_matrix(
        is, static_cast<Index>(n), static_cast<Index>(lengths[k])));
  }
  return ds;
}

/// CSV export for small datasets: trajectory, step, x0..x{n-1}.
inline void write_dataset_csv(const std::string& path,
                              const systems::TrajectoryDataset& ds) {
  std::ofstream os(path);
  if (!os) throw DataError("write_dataset_csv: cannot open " + path);
  os << "trajectory,step";
  for (Index r = 0; r < ds.dim(); ++r) os << ",x" << r;
  os << '\n';
  char buf[32];
  for (std::size_t k = 0; k < ds.trajectories.size(); ++k) {
    const Matrix& traj = ds.trajectories[k];
    for (Index i = 0; i < traj.cols(); ++i) {
      os << k << ',' << i;
      for (Index r = 0; r < traj.rows(); ++r) {
        std::snprintf(buf, sizeof(buf), ",%.17g", traj(r, i));
        os << buf;
      }
      os << '\n';
    }
  }
}

// =============================================================================
// Model snapshots
// =============================================================================

inline void write_reducer(std::ostream& os, const reduction::PcaReducer& red) {
  detail::write_pod(os, static_cast<std::uint64_t>(red.mean.size()));
  detail::write_pod(os, static_cast<std::uint64_t>(red.rank));
  detail::write_pod(os, red.sigma1);
  detail::write_pod(os, red.energy);
  detail::write_vector(os, red.mean);
  detail::write_matrix(os, red.basis);
}

inline reduction::PcaReducer read_reducer(std::istream& is) {
  reduction::PcaReducer red;
  const auto n = detail::read_pod<std::uint64_t>(is);
  red.rank = static_cast<Index>(detail::read_pod<std::uint64_t>(is));
  red.sigma1 = detail::read_pod<double>(is);
  red.energy = detail::read_pod<double>(is);
  red.mean = detail::read_vector(is, static_cast<Index>(n));
  red.basis = detail::read_matrix(is, static_cast<Index>(n), red.rank);
  return red;
}

/// Self-contained snapshot of a fitted model: anchors, coefficients, DM
/// densities, form, lengthscale, ridge parameter and step size, plus an
/// optional PCA reducer so reduced-space models stay self-describing.
inline void save_model(const std::string& path, const krr::KrrModel& model,
                       const reduction::PcaReducer* reducer = nullptr) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("save_model: cannot open " + path);
  detail::write_bytes(os, kModelMagic, 8);
  detail::write_pod<std::uint8_t>(os, model.kind == kernels::KernelKind::Dm ? 1 : 0);
  detail::write_pod<std::uint8_t>(
      os, model.form == krr::EstimatorForm::SkipConnection ? 1 : 0);
  detail::write_pod(os, model.eps);
  detail::write_pod(os, model.lambda_reg);
  detail::write_pod(os, model.dt);
  detail::write_pod(os, model.divergence_bound);
  detail::write_pod(os, static_cast<std::uint64_t>(model.anchors.rows()));
  detail::write_pod(os, static_cast<std::uint64_t>(model.anchors.cols()));
  detail::write_matrix(os, model.anchors);
  detail::write_matrix(os, model.alpha);
  if (model.kind == kernels::KernelKind::Dm) {
    detail::write_vector(os, model.dm.q);
    detail::write_vector(os, model.dm.qhat);
  }
  detail::write_pod<std::uint8_t>(os, reducer ? 1 : 0);
  if (reducer) write_reducer(os, *reducer);
}

struct ModelSnapshot {
  krr::KrrModel model;
  std::optional<reduction::PcaReducer> reducer;
};

inline ModelSnapshot load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("load_model: cannot open " + path);
  char magic[8];
  detail::read_bytes(is, magic, 8);
  if (std::memcmp(magic, kModelMagic, 8) != 0) {
    throw DataError("load_model: bad magic in " + path);
  }
  ModelSnapshot snap;
  krr::KrrModel& m = snap.model;
  m.kind = detail::read_pod<std::uint8_t>(is) ? kernels::KernelKind::Dm
                                              : kernels::KernelKind::Rbf;
  m.form = detail::read_pod<std::uint8_t>(is) ? krr::EstimatorForm::SkipConnection
                                              : krr::EstimatorForm::Direct;
  m.eps = detail::read_pod<double>(is);
  m.lambda_reg = detail::read_pod<double>(is);
  m.dt = detail::read_pod<double>(is);
  m.divergence_bound = detail::read_pod<double>(is);
  const auto n = detail::read_pod<std::uint64_t>(is);
  const auto cols = detail::read_pod<std::uint64_t>(is);
  m.anchors = detail::read_matrix(is, static_cast<Index>(n), static_cast<Index>(cols));
  m.alpha = detail::read_matrix(is, static_cast<Index>(n), static_cast<Index>(cols));
  if (m.kind == kernels::KernelKind::Dm) {
    m.dm.anchors = m.anchors;
    m.dm.lengthscale = m.eps;
    m.dm.q = detail::read_vector(is, static_cast<Index>(cols));
    m.dm.qhat = detail::read_vector(is, static_cast<Index>(cols));
  }
  if (detail::read_pod<std::uint8_t>(is)) snap.reducer = read_reducer(is);
  return snap;
}

}  // namespace dmkrr::io
