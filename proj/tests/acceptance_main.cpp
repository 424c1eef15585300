// Acceptance suite: every benchmark criterion runs standalone and prints one
// pass/fail line. Select a single criterion with --criterion N; the default
// runs all ten in order. Exit code is the number of failed criteria.

#include "dmkrr/dmkrr.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

using namespace dmkrr;
using experiment::ExperimentConfig;
using experiment::RunResult;

namespace {

namespace fs = std::filesystem;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "  FAILED: " << what << '\n';
    }
  }
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

// Completed runs are cached per output directory so criteria that share a
// protocol leg do not recompute it when the whole suite runs in one process.
RunResult run_cached(const ExperimentConfig& cfg) {
  static std::map<std::string, RunResult> cache;
  const auto it = cache.find(cfg.output_dir);
  if (it != cache.end()) return it->second;
  std::cerr << "  [running " << cfg.output_dir << "]\n";
  const RunResult result = experiment::cmd_run(cfg);
  cache.emplace(cfg.output_dir, result);
  return result;
}

ExperimentConfig lorenz_protocol(int n, const std::string& kernel) {
  ExperimentConfig cfg;
  cfg.system = "lorenz63";
  cfg.kernel = kernel;
  cfg.form = "skip";
  cfg.metric = "vpt";
  cfg.heuristic = "chaotic";
  cfg.n_train = n;
  cfg.n_val = 1500;
  cfg.val_count = 3;
  cfg.subsets = 20;
  cfg.trials = 256;
  cfg.test_segments = 100;
  cfg.test_len = 2500;
  cfg.gamma = 0.3;
  cfg.lyapunov = 0.91;
  cfg.dt = 0.01;
  cfg.train_steps = 200000;
  cfg.discard = 4000;
  cfg.seed = 11;
  cfg.output_dir = "acceptance_out/lorenz_" + kernel + "_n" + std::to_string(n);
  return cfg;
}

ExperimentConfig torus_protocol(int n, const std::string& kernel) {
  ExperimentConfig cfg;
  cfg.system = "torus";
  cfg.kernel = kernel;
  cfg.form = "skip";
  cfg.metric = "rmse";
  cfg.heuristic = "manifold";
  cfg.n_train = n;
  cfg.n_val = 301;
  cfg.val_count = 12;
  cfg.subsets = 1;
  cfg.trials = 64;
  cfg.test_segments = 200;
  cfg.test_len = 1000;
  cfg.dt = 0.01;
  cfg.torus_dim = 3;
  cfg.torus_ics = 100;
  cfg.torus_horizon = 40.0;
  cfg.seed = 7;
  cfg.output_dir = "acceptance_out/torus_" + kernel + "_n" + std::to_string(n);
  return cfg;
}

ExperimentConfig ks_protocol(const std::string& kernel) {
  ExperimentConfig cfg;
  cfg.system = "ks_chaotic";
  cfg.kernel = kernel;
  cfg.form = "direct";
  cfg.metric = "vpt";
  cfg.heuristic = "chaotic";
  cfg.n_train = 2048;
  cfg.n_val = 2000;
  cfg.val_count = 3;
  cfg.subsets = 5;
  cfg.trials = 128;
  cfg.test_segments = 100;
  cfg.test_len = 2500;
  cfg.gamma = 0.5;
  cfg.lyapunov = 0.043;
  cfg.ks_raw_steps = 300000;
  cfg.ks_downsample = 10;
  cfg.ks_discard = 50000;
  cfg.seed = 5;
  cfg.output_dir = "acceptance_out/ks_" + kernel + "_n2048";
  return cfg;
}

// criterion 1: Lorenz-63 VPT at N=512, DM in band and above RBF
void criterion_1(Outcome& out) {
  const auto dm = run_cached(lorenz_protocol(512, "dm"));
  const auto rbf = run_cached(lorenz_protocol(512, "rbf"));
  out.detail << "  DM " << fmt(dm.mean) << " +/- " << fmt(dm.stddev) << ", RBF "
             << fmt(rbf.mean) << " +/- " << fmt(rbf.stddev) << " Lyapunov units\n";
  out.require(dm.mean >= 8.5 && dm.mean <= 13.5,
              "DM mean VPT " + fmt(dm.mean) + " outside [8.5, 13.5]");
  out.require(dm.mean > rbf.mean,
              "DM mean " + fmt(dm.mean) + " not above RBF mean " + fmt(rbf.mean));
}

// criterion 2: doubling N raises the DM mean VPT and narrows its spread
void criterion_2(Outcome& out) {
  const auto small = run_cached(lorenz_protocol(512, "dm"));
  const auto large = run_cached(lorenz_protocol(1024, "dm"));
  out.detail << "  N=512: " << fmt(small.mean) << " +/- " << fmt(small.stddev)
             << ", N=1024: " << fmt(large.mean) << " +/- " << fmt(large.stddev)
             << '\n';
  out.require(large.mean > small.mean, "mean VPT did not improve with N");
  out.require(large.stddev < small.stddev, "VPT spread did not shrink with N");
}

// criterion 3: torus RMSE convergence in N and the DM advantage at N=4096
void criterion_3(Outcome& out) {
  std::map<std::string, std::map<int, double>> rmse;
  for (const std::string kernel : {"dm", "rbf"}) {
    for (int n : {1024, 2048, 4096}) {
      rmse[kernel][n] = run_cached(torus_protocol(n, kernel)).mean;
    }
    out.detail << "  " << kernel << ":";
    for (int n : {1024, 2048, 4096}) {
      out.detail << " N" << n << "=" << fmt(rmse[kernel][n], 3);
    }
    out.detail << '\n';
    out.require(rmse[kernel][2048] < rmse[kernel][1024],
                kernel + " RMSE not decreasing from N=1024 to 2048");
    out.require(rmse[kernel][4096] < rmse[kernel][2048],
                kernel + " RMSE not decreasing from N=2048 to 4096");
  }
  out.require(2.0 * rmse["dm"][4096] <= rmse["rbf"][4096],
              "DM not at least 2x better than RBF at N=4096");
}

// criterion 4: KS chaotic VPT ordering (absolute values reported, not gated)
void criterion_4(Outcome& out) {
  const auto dm = run_cached(ks_protocol("dm"));
  const auto rbf = run_cached(ks_protocol("rbf"));
  out.detail << "  DM " << fmt(dm.mean) << " +/- " << fmt(dm.stddev) << ", RBF "
             << fmt(rbf.mean) << " +/- " << fmt(rbf.stddev) << " Lyapunov units\n";
  out.require(dm.mean >= rbf.mean,
              "DM mean " + fmt(dm.mean) + " below RBF mean " + fmt(rbf.mean));
}

// criterion 5: Markov normalization of the transition kernel on attractor data
void criterion_5(Outcome& out) {
  Vector ic(3);
  ic << 4.0, -3.0, 21.0;
  const auto ds = systems::gen_lorenz63(ic, 4500, 0.01, 4000);
  const Matrix& x = ds.trajectories.front();
  const auto ref =
      validation::heuristic_reference(x, validation::HeuristicMode::Chaotic, 3);
  const auto model = kernels::dm_fit(x, ref.eps_star);
  const Matrix ktilde = kernels::rbf_gram(x, ref.eps_star);
  const Index n = x.cols();
  double worst = 0.0;
  for (Index i = 0; i < n; ++i) {
    double sum = 0.0;
    for (Index j = 0; j < n; ++j) {
      sum += ktilde(i, j) / (model.q[i] * model.q[j]) / model.qhat[i];
    }
    worst = std::max(worst, std::abs(sum / double(n) - 1.0));
  }
  out.detail << "  N=" << n << ", eps*=" << fmt(ref.eps_star) << ", worst row-sum error "
             << fmt(worst, 3) << '\n';
  out.require(worst <= 1e-10, "row sums deviate from 1 by " + fmt(worst, 3));
}

// criterion 6: intrinsic-dimension heuristic on a sphere and a circle
void criterion_6(Outcome& out) {
  Rng rng(2026);
  Matrix sphere(3, 2000);
  for (Index j = 0; j < 2000; ++j) {
    Vector z(3);
    z << rng.normal(), rng.normal(), rng.normal();
    sphere.col(j) = z / z.norm();
  }
  const auto ds =
      validation::heuristic_reference(sphere, validation::HeuristicMode::Manifold, 3);
  Matrix circle(3, 2000);
  constexpr double two_pi = 6.283185307179586;
  for (Index j = 0; j < 2000; ++j) {
    const double t = rng.uniform(0.0, two_pi);
    circle.col(j) << std::cos(t), std::sin(t), 0.0;
  }
  const auto dc =
      validation::heuristic_reference(circle, validation::HeuristicMode::Manifold, 3);
  out.detail << "  sphere d*=" << fmt(ds.d_star) << ", circle d*=" << fmt(dc.d_star)
             << '\n';
  out.require(ds.d_star >= 1.7 && ds.d_star <= 2.3,
              "sphere d* " + fmt(ds.d_star) + " outside [1.7, 2.3]");
  out.require(dc.d_star >= 0.8 && dc.d_star <= 1.3,
              "circle d* " + fmt(dc.d_star) + " outside [0.8, 1.3]");
}

// criterion 7: interpolation limit and agreement with a generic dense solver
void criterion_7(Outcome& out) {
  Rng rng(303);
  Matrix x(3, 50), y(3, 50);
  for (Index j = 0; j < 50; ++j) {
    for (Index i = 0; i < 3; ++i) {
      x(i, j) = 5.0 * rng.uniform(-1.0, 1.0);
      y(i, j) = rng.uniform(-1.0, 1.0);
    }
  }
  krr::TrainingPairs pairs{x, y, krr::EstimatorForm::Direct, 0.01};
  const double eps = 0.05, lam = 1e-10;
  const auto model = krr::fit(pairs, kernels::KernelKind::Rbf, eps, lam);
  double worst = 0.0;
  for (Index i = 0; i < 50; ++i) {
    worst = std::max(worst, (krr::predict_step(model, x.col(i)) - y.col(i)).norm());
  }
  Matrix k = kernels::rbf_gram(x, eps);
  k.diagonal().array() += lam;
  const Matrix oracle = k.fullPivLu().solve(y.transpose()).transpose();
  const double solver_gap = (model.alpha - oracle).cwiseAbs().maxCoeff();
  out.detail << "  worst residual " << fmt(worst, 3) << ", solver gap "
             << fmt(solver_gap, 3) << '\n';
  out.require(worst < 1e-6, "training residual " + fmt(worst, 3) + " >= 1e-6");
  out.require(solver_gap < 1e-10, "solver gap " + fmt(solver_gap, 3) + " >= 1e-10");
}

// criterion 8: fourth-order convergence of the RK4 integrator on Lorenz
void criterion_8(Outcome& out) {
  auto rhs = [](const Vector& v) { return systems::lorenz63_rhs({}, v); };
  auto integrate = [&](double dt) {
    Vector x(3);
    x << -8.2, 8.0, 27.0;
    const long steps = std::lround(1.0 / dt);
    for (long i = 0; i < steps; ++i) x = systems::rk4_step(rhs, x, dt);
    return x;
  };
  const Vector truth = integrate(1e-5);
  const double e1 = (integrate(0.01) - truth).norm();
  const double e2 = (integrate(0.005) - truth).norm();
  const double ratio = e1 / e2;
  out.detail << "  error(0.01)=" << fmt(e1, 3) << ", error(0.005)=" << fmt(e2, 3)
             << ", ratio=" << fmt(ratio) << '\n';
  out.require(ratio >= 12.0 && ratio <= 20.0,
              "error ratio " + fmt(ratio) + " outside [12, 20]");
}

// criterion 9: PCA truncation identity and the reduce/reconstruct formulas
void criterion_9(Outcome& out) {
  Rng rng(555);
  Matrix snapshots(500, 300);
  for (Index j = 0; j < 300; ++j) {
    for (Index i = 0; i < 500; ++i) snapshots(i, j) = rng.uniform(-1.0, 1.0);
  }
  const Index r = 40;
  const auto red = reduction::pca_fit_rank(snapshots, r);
  const Matrix back = reduction::reconstruct(red, reduction::reduce(red, snapshots));
  const double err_sq = (back - snapshots).squaredNorm();
  const Vector mean = snapshots.rowwise().mean();
  Eigen::BDCSVD<Matrix> svd(snapshots.colwise() - mean);
  double tail = 0.0;
  for (Index i = r; i < svd.singularValues().size(); ++i) {
    tail += svd.singularValues()[i] * svd.singularValues()[i];
  }
  const double rel = std::abs(err_sq - tail) / tail;
  out.detail << "  truncation identity relative error " << fmt(rel, 3) << '\n';
  out.require(rel < 1e-8, "round-trip error does not match the singular tail");

  // rank-3 data: the formulas act as stated on each snapshot
  Matrix low = Matrix::Zero(20, 50);
  Matrix dirs(20, 3);
  for (Index j = 0; j < 3; ++j) {
    for (Index i = 0; i < 20; ++i) dirs(i, j) = rng.uniform(-1.0, 1.0);
  }
  for (Index j = 0; j < 50; ++j) {
    low.col(j) = dirs * Vector::NullaryExpr(3, [&](Index) {
      return rng.uniform(-2.0, 2.0);
    });
  }
  const auto red3 = reduction::pca_fit_rank(low, 3);
  bool formulas_ok = true;
  for (Index j = 0; j < 5; ++j) {
    const Vector xt = reduction::reduce(red3, Vector(low.col(j)));
    const Vector manual =
        red3.basis.transpose() * (low.col(j) - red3.mean) / red3.sigma1;
    formulas_ok = formulas_ok && (xt - manual).cwiseAbs().maxCoeff() < 1e-12;
    const Vector lifted = reduction::reconstruct(red3, xt);
    const Vector manual_lift = red3.sigma1 * (red3.basis * xt) + red3.mean;
    formulas_ok = formulas_ok && (lifted - manual_lift).cwiseAbs().maxCoeff() < 1e-12;
    formulas_ok = formulas_ok && (lifted - low.col(j)).norm() < 1e-9;
  }
  out.require(formulas_ok, "reduce/reconstruct formulas drift from their definitions");
}

// criterion 10: byte-identical summaries across reruns and thread counts
void criterion_10(Outcome& out) {
  ExperimentConfig cfg;
  cfg.system = "lorenz63";
  cfg.kernel = "dm";
  cfg.form = "skip";
  cfg.metric = "vpt";
  cfg.heuristic = "chaotic";
  cfg.n_train = 96;
  cfg.n_val = 150;
  cfg.val_count = 3;
  cfg.subsets = 2;
  cfg.trials = 12;
  cfg.test_segments = 5;
  cfg.test_len = 250;
  cfg.gamma = 0.3;
  cfg.lyapunov = 0.91;
  cfg.train_steps = 5000;
  cfg.discard = 1000;
  cfg.seed = 77;

  auto slurp = [](const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return std::string{std::istreambuf_iterator<char>(is),
                       std::istreambuf_iterator<char>()};
  };
  cfg.threads = 1;
  cfg.output_dir = "acceptance_out/det_a";
  experiment::cmd_run(cfg);
  cfg.output_dir = "acceptance_out/det_b";
  experiment::cmd_run(cfg);
  cfg.threads = 4;
  cfg.output_dir = "acceptance_out/det_c";
  experiment::cmd_run(cfg);

  const std::string a = slurp("acceptance_out/det_a/summary.json");
  const std::string b = slurp("acceptance_out/det_b/summary.json");
  const std::string c = slurp("acceptance_out/det_c/summary.json");
  out.detail << "  summary bytes: " << a.size() << '\n';
  out.require(!a.empty(), "summary.json missing");
  out.require(a == b, "rerun with identical config is not byte-identical");
  out.require(a == c, "thread count changed the summary bytes");
}

struct Criterion {
  int id;
  const char* name;
  std::function<void(Outcome&)> fn;
};

const Criterion kCriteria[] = {
    {1, "Lorenz-63 VPT, N=512 (DM in band, DM > RBF)", criterion_1},
    {2, "Lorenz-63 data-size monotonicity, N=1024 vs N=512", criterion_2},
    {3, "torus RMSE convergence and DM advantage", criterion_3},
    {4, "KS chaotic VPT ordering, N=2048", criterion_4},
    {5, "DM kernel Markov property on attractor data", criterion_5},
    {6, "intrinsic-dimension heuristic (sphere, circle)", criterion_6},
    {7, "interpolation limit and dense-solver agreement", criterion_7},
    {8, "RK4 fourth-order convergence", criterion_8},
    {9, "PCA truncation identity", criterion_9},
    {10, "byte-identical summaries (reruns, thread counts)", criterion_10},
};

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) {
      only = std::atoi(argv[i + 1]);
      ++i;
    } else {
      std::cerr << "usage: dmkrr_acceptance [--criterion N]\n";
      return 64;
    }
  }
  fs::create_directories("acceptance_out");
  int failures = 0;
  for (const Criterion& c : kCriteria) {
    if (only != 0 && c.id != only) continue;
    Outcome out;
    try {
      c.fn(out);
    } catch (const std::exception& e) {
      out.pass = false;
      out.detail << "  exception: " << e.what() << '\n';
    }
    std::cout << (out.pass ? "[PASS]" : "[FAIL]") << " criterion " << c.id << ": "
              << c.name << '\n'
              << out.detail.str();
    std::cout.flush();
    if (!out.pass) ++failures;
  }
  return failures;
}
