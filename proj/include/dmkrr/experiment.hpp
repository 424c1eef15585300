#pragma once

#include "dmkrr/common.hpp"
#include "dmkrr/io.hpp"
#include "dmkrr/kernels.hpp"
#include "dmkrr/krr.hpp"
#include "dmkrr/metrics.hpp"
#include "dmkrr/reduction.hpp"
#include "dmkrr/systems.hpp"
#include "dmkrr/validation.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>

// Config-driven experiment runner: generate data, train/validate/test models,
// and emit search records, per-segment metrics and summary statistics. Every
// run is a pure function of (config, seed); summaries are byte-identical
// across repeats and thread counts.

namespace dmkrr::experiment {

using nlohmann::json;

struct ExperimentConfig {
  std::string system = "lorenz63";   // lorenz63|torus|ks_chaotic|ks_traveling|external
  std::string kernel = "dm";         // dm|rbf
  std::string form = "skip";         // direct|skip
  std::string metric = "vpt";        // rmse|vpt|wnrmse
  std::string heuristic = "chaotic"; // manifold|chaotic

  int n_train = 512;        // training points per subset (torus: training pairs)
  int n_val = 1500;         // validation trajectory length
  int val_count = 3;        // validation trajectories per subset
  int subsets = 1;          // random training subsets
  int trials = 256;         // random-search budget
  int test_segments = 100;  // test trajectories / segments
  int test_len = 2500;      // test trajectory length

  double gamma = 0.3;
  double lyapunov = 0.91;
  double d_eps = 1e-2;
  double d_lam = 1e-4;

  std::uint64_t seed = 1;
  int threads = 0;
  std::string output_dir = "out";
  bool dump_predictions = false;
  int diffusion_coords = 0;
  bool write_csv = false;
  bool plot_script = false;

  // lorenz63
  double dt = 0.01;
  long train_steps = 200000;
  long discard = 4000;

  // torus
  int torus_dim = 3;
  int torus_ics = 100;
  double torus_horizon = 40.0;
  double period_tol = 1e-3;

  // kuramoto-sivashinsky
  double ks_length = 22.0;
  double ks_nu = 1.0;
  int ks_grid = 64;
  double ks_dt_solver = 0.01;
  long ks_raw_steps = 300000;
  int ks_downsample = 10;
  long ks_discard = 50000;
  std::string ks_train_ic = "sin:16";
  std::string ks_test_ic = "sin:8";
  int ks_train_stride = 2;    // traveling: extra stride over the training block
  long ks_train_region = 6000;  // traveling: samples reserved for train+val

  // external datasets
  std::string train_path, val_path, test_path;
  int pca_rank = 0;
  double pca_energy = 0.0;
};

namespace detail {

constexpr std::uint64_t kSaltTrainIc = 0xA1;
constexpr std::uint64_t kSaltTestIc = 0xA2;
constexpr std::uint64_t kSaltSubsets = 0xA3;
constexpr std::uint64_t kSaltSearch = 0xA4;
constexpr std::uint64_t kSaltPool = 0xA5;
constexpr std::uint64_t kSaltValIcs = 0xA6;
constexpr std::uint64_t kSaltTestIcs = 0xA7;

inline krr::EstimatorForm parse_form(const std::string& s) {
  if (s == "direct") return krr::EstimatorForm::Direct;
  if (s == "skip") return krr::EstimatorForm::SkipConnection;
  throw InvalidParameter("config: form must be direct|skip, got " + s);
}

inline kernels::KernelKind parse_kernel(const std::string& s) {
  if (s == "rbf") return kernels::KernelKind::Rbf;
  if (s == "dm") return kernels::KernelKind::Dm;
  throw InvalidParameter("config: kernel must be rbf|dm, got " + s);
}

inline validation::HeuristicMode parse_heuristic(const std::string& s) {
  if (s == "manifold") return validation::HeuristicMode::Manifold;
  if (s == "chaotic") return validation::HeuristicMode::Chaotic;
  throw InvalidParameter("config: heuristic must be manifold|chaotic, got " + s);
}

inline validation::Metric parse_metric(const ExperimentConfig& cfg) {
  validation::Metric m;
  if (cfg.metric == "rmse") {
    m.kind = validation::Metric::Kind::Rmse;
  } else if (cfg.metric == "vpt") {
    m.kind = validation::Metric::Kind::Vpt;
    if (!(cfg.lyapunov > 0.0)) {
      throw InvalidParameter("config: the vpt metric requires lyapunov > 0");
    }
    m.gamma = cfg.gamma;
    m.lyapunov = cfg.lyapunov;
  } else if (cfg.metric == "wnrmse") {
    m.kind = validation::Metric::Kind::Wnrmse;
  } else {
    throw InvalidParameter("config: metric must be rmse|vpt|wnrmse, got " + cfg.metric);
  }
  return m;
}

/// Initial-profile spec for the KS systems: "sin:K" is sin(K pi s / L),
/// "mix:A,B" is sin(A pi s / L) + 0.1 cos(B pi s / L).
inline std::function<double(double)> parse_ks_ic(const std::string& spec, double L) {
  constexpr double pi = 3.14159265358979323846;
  const auto colon = spec.find(':');
  if (colon == std::string::npos) {
    throw InvalidParameter("config: bad KS initial-condition spec " + spec);
  }
  const std::string kind = spec.substr(0, colon);
  const std::string args = spec.substr(colon + 1);
  if (kind == "sin") {
    const double k = std::stod(args);
    return [k, L, pi](double s) { return std::sin(k * pi * s / L); };
  }
  if (kind == "mix") {
    const auto comma = args.find(',');
    if (comma == std::string::npos) {
      throw InvalidParameter("config: mix spec needs two modes, got " + spec);
    }
    const double a = std::stod(args.substr(0, comma));
    const double b = std::stod(args.substr(comma + 1));
    return [a, b, L, pi](double s) {
      return std::sin(a * pi * s / L) + 0.1 * std::cos(b * pi * s / L);
    };
  }
  throw InvalidParameter("config: bad KS initial-condition spec " + spec);
}

struct SubsetData {
  krr::TrainingPairs pairs;
  std::vector<Matrix> val;
};

struct Prepared {
  std::vector<SubsetData> subsets;
  std::vector<Matrix> test;
  double dt = 0.0;
  std::optional<reduction::PcaReducer> reducer;
};

// -----------------------------------------------------------------------------
// Data preparation per system
// -----------------------------------------------------------------------------

inline Vector lorenz_random_ic(Rng& rng) {
  Vector ic(3);
  ic << rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0), rng.uniform(5.0, 35.0);
  return ic;
}

inline systems::TrajectoryDataset lorenz_train_dataset(const ExperimentConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, kSaltTrainIc));
  auto ds = systems::gen_lorenz63(lorenz_random_ic(rng),
                                  cfg.train_steps + cfg.discard, cfg.dt, cfg.discard);
  ds.meta.seed = cfg.seed;
  return ds;
}

inline systems::TrajectoryDataset lorenz_test_dataset(const ExperimentConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, kSaltTestIc));
  const long steps = static_cast<long>(cfg.test_segments) * cfg.test_len;
  auto ds = systems::gen_lorenz63(lorenz_random_ic(rng), steps + cfg.discard, cfg.dt,
                                  cfg.discard);
  ds.meta.seed = cfg.seed;
  return ds;
}

inline Prepared prepare_lorenz(const ExperimentConfig& cfg) {
  Prepared prep;
  prep.dt = cfg.dt;
  const auto form = parse_form(cfg.form);
  const auto train = lorenz_train_dataset(cfg);
  const auto splits = systems::sample_subsets(
      train.trajectories.front(), cfg.subsets, cfg.n_train, cfg.n_val,
      cfg.val_count, derive_seed(cfg.seed, kSaltSubsets));
  for (const auto& split : splits) {
    SubsetData sd;
    sd.pairs = krr::build_pairs({split.train}, form, cfg.dt);
    sd.val = split.val;
    prep.subsets.push_back(std::move(sd));
  }
  const auto test = lorenz_test_dataset(cfg);
  prep.test = systems::segment(test.trajectories.front(), cfg.test_len);
  if (static_cast<int>(prep.test.size()) > cfg.test_segments) {
    prep.test.resize(cfg.test_segments);
  }
  return prep;
}

inline systems::TrajectoryDataset torus_train_dataset(const ExperimentConfig& cfg) {
  const Index steps = static_cast<Index>(std::llround(cfg.torus_horizon / cfg.dt));
  auto sphere = systems::gen_rigid_body(systems::sphere_grid(cfg.torus_ics), cfg.dt,
                                        steps, true, cfg.period_tol);
  auto ds = systems::to_torus(sphere, cfg.torus_dim);
  ds.meta.seed = cfg.seed;
  return ds;
}

inline systems::TrajectoryDataset torus_fixed_dataset(const ExperimentConfig& cfg,
                                                      int count, Index len,
                                                      std::uint64_t salt) {
  Rng rng(derive_seed(cfg.seed, salt));
  auto sphere = systems::gen_rigid_body(systems::sphere_random(count, rng), cfg.dt,
                                        len, false);
  auto ds = systems::to_torus(sphere, cfg.torus_dim);
  ds.meta.seed = cfg.seed;
  return ds;
}

inline Prepared prepare_torus(const ExperimentConfig& cfg) {
  Prepared prep;
  prep.dt = cfg.dt;
  const auto form = parse_form(cfg.form);
  const auto train = torus_train_dataset(cfg);
  const auto pool = krr::build_pairs(train.trajectories, form, cfg.dt);
  if (pool.X.cols() < cfg.n_train) {
    throw InvalidParameter("torus: training pool smaller than requested N");
  }
  const auto val = torus_fixed_dataset(cfg, cfg.val_count, cfg.n_val, kSaltValIcs);
  for (int s = 0; s < cfg.subsets; ++s) {
    // nested subsampling: with a fixed seed the first N indices of the
    // permutation agree across runs, so smaller N picks a subset of larger N
    std::vector<Index> perm(pool.X.cols());
    std::iota(perm.begin(), perm.end(), Index{0});
    Rng rng(derive_seed(cfg.seed, kSaltPool, static_cast<std::uint64_t>(s)));
    rng.shuffle(perm);
    SubsetData sd;
    sd.pairs.form = form;
    sd.pairs.dt = cfg.dt;
    sd.pairs.X.resize(pool.X.rows(), cfg.n_train);
    sd.pairs.Y.resize(pool.Y.rows(), cfg.n_train);
    for (int i = 0; i < cfg.n_train; ++i) {
      sd.pairs.X.col(i) = pool.X.col(perm[i]);
      sd.pairs.Y.col(i) = pool.Y.col(perm[i]);
    }
    sd.val = val.trajectories;
    prep.subsets.push_back(std::move(sd));
  }
  prep.test =
      torus_fixed_dataset(cfg, cfg.test_segments, cfg.test_len, kSaltTestIcs)
          .trajectories;
  return prep;
}

inline systems::KsParams ks_params(const ExperimentConfig& cfg) {
  systems::KsParams p;
  p.L = cfg.ks_length;
  p.nu = cfg.ks_nu;
  p.grid = cfg.ks_grid;
  p.dt_solver = cfg.ks_dt_solver;
  return p;
}

inline systems::TrajectoryDataset ks_train_dataset(const ExperimentConfig& cfg) {
  auto ds = systems::gen_ks(parse_ks_ic(cfg.ks_train_ic, cfg.ks_length),
                            ks_params(cfg), cfg.ks_raw_steps, cfg.ks_downsample,
                            cfg.ks_discard);
  ds.meta.seed = cfg.seed;
  return ds;
}

inline systems::TrajectoryDataset ks_test_dataset(const ExperimentConfig& cfg) {
  const long wanted = static_cast<long>(cfg.test_segments) * cfg.test_len;
  const long raw = cfg.ks_discard + static_cast<long>(cfg.ks_downsample) * (wanted - 1) + 1;
  auto ds = systems::gen_ks(parse_ks_ic(cfg.ks_test_ic, cfg.ks_length), ks_params(cfg),
                            raw, cfg.ks_downsample, cfg.ks_discard);
  ds.meta.seed = cfg.seed;
  return ds;
}

inline Prepared prepare_ks_chaotic(const ExperimentConfig& cfg) {
  Prepared prep;
  const auto form = parse_form(cfg.form);
  const auto train = ks_train_dataset(cfg);
  prep.dt = train.dt;
  const auto splits = systems::sample_subsets(
      train.trajectories.front(), cfg.subsets, cfg.n_train, cfg.n_val,
      cfg.val_count, derive_seed(cfg.seed, kSaltSubsets));
  for (const auto& split : splits) {
    SubsetData sd;
    sd.pairs = krr::build_pairs({split.train}, form, train.dt);
    sd.val = split.val;
    prep.subsets.push_back(std::move(sd));
  }
  const auto test = ks_test_dataset(cfg);
  prep.test = systems::segment(test.trajectories.front(), cfg.test_len);
  if (static_cast<int>(prep.test.size()) > cfg.test_segments) {
    prep.test.resize(cfg.test_segments);
  }
  return prep;
}

/// Traveling regime: one long trajectory; the leading `ks_train_region`
/// samples (strided by ks_train_stride) provide training and validation, the
/// remainder is segmented for testing.
inline Prepared prepare_ks_traveling(const ExperimentConfig& cfg) {
  Prepared prep;
  const auto form = parse_form(cfg.form);
  const auto full = ks_train_dataset(cfg);
  const Matrix& traj = full.trajectories.front();
  if (cfg.ks_train_region >= traj.cols()) {
    throw InvalidParameter("ks_traveling: train region exceeds trajectory length");
  }
  const int stride = std::max(1, cfg.ks_train_stride);
  const double dt = full.dt * stride;
  prep.dt = dt;

  const Index strided_len = (cfg.ks_train_region + stride - 1) / stride;
  Matrix strided(traj.rows(), strided_len);
  for (Index i = 0; i < strided_len; ++i) strided.col(i) = traj.col(i * stride);

  if (cfg.n_train + cfg.n_val > strided_len) {
    throw InvalidParameter("ks_traveling: N + Nv exceeds the strided train region");
  }
  Rng rng(derive_seed(cfg.seed, kSaltSubsets));
  SubsetData sd;
  sd.pairs = krr::build_pairs({strided.leftCols(cfg.n_train)}, form, dt);
  const Index tail = strided_len - cfg.n_train - cfg.n_val;
  for (int v = 0; v < cfg.val_count; ++v) {
    const Index start =
        cfg.n_train + static_cast<Index>(rng.index(static_cast<std::uint64_t>(tail) + 1));
    sd.val.push_back(strided.middleCols(start, cfg.n_val));
  }
  prep.subsets.push_back(std::move(sd));

  const Index test_start = cfg.ks_train_region;
  const Index test_avail = (traj.cols() - test_start) / stride;
  Matrix test_strided(traj.rows(), test_avail);
  for (Index i = 0; i < test_avail; ++i) {
    test_strided.col(i) = traj.col(test_start + i * stride);
  }
  prep.test = systems::segment(test_strided, cfg.test_len);
  if (static_cast<int>(prep.test.size()) > cfg.test_segments) {
    prep.test.resize(cfg.test_segments);
  }
  return prep;
}

inline Prepared prepare_external(const ExperimentConfig& cfg) {
  if (cfg.train_path.empty() || cfg.val_path.empty() || cfg.test_path.empty()) {
    throw InvalidParameter("external: train/val/test dataset paths are required");
  }
  const auto train = io::read_dataset(cfg.train_path);
  const auto val = io::read_dataset(cfg.val_path);
  const auto test = io::read_dataset(cfg.test_path);
  Prepared prep;
  prep.dt = train.dt;
  const auto form = parse_form(cfg.form);

  std::vector<Matrix> train_trajs = train.trajectories;
  std::vector<Matrix> val_trajs = val.trajectories;
  std::vector<Matrix> test_trajs = test.trajectories;
  if (cfg.pca_rank > 0 || cfg.pca_energy > 0.0) {
    Index total = 0;
    for (const Matrix& t : train_trajs) total += t.cols();
    Matrix snapshots(train_trajs.front().rows(), total);
    Index at = 0;
    for (const Matrix& t : train_trajs) {
      snapshots.middleCols(at, t.cols()) = t;
      at += t.cols();
    }
    prep.reducer = cfg.pca_rank > 0
                       ? reduction::pca_fit_rank(snapshots, cfg.pca_rank)
                       : reduction::pca_fit_energy(snapshots, cfg.pca_energy);
    for (auto* group : {&train_trajs, &val_trajs, &test_trajs}) {
      for (Matrix& t : *group) t = reduction::reduce(*prep.reducer, t);
    }
  }

  SubsetData sd;
  sd.pairs = krr::build_pairs(train_trajs, form, train.dt);
  if (cfg.n_train > 0 && cfg.n_train < sd.pairs.X.cols()) {
    sd.pairs.X = Matrix(sd.pairs.X.leftCols(cfg.n_train));
    sd.pairs.Y = Matrix(sd.pairs.Y.leftCols(cfg.n_train));
  }
  sd.val = std::move(val_trajs);
  prep.subsets.push_back(std::move(sd));
  prep.test = std::move(test_trajs);
  return prep;
}

inline Prepared prepare(const ExperimentConfig& cfg) {
  if (cfg.system == "lorenz63") return prepare_lorenz(cfg);
  if (cfg.system == "torus") return prepare_torus(cfg);
  if (cfg.system == "ks_chaotic") return prepare_ks_chaotic(cfg);
  if (cfg.system == "ks_traveling") return prepare_ks_traveling(cfg);
  if (cfg.system == "external") return prepare_external(cfg);
  throw InvalidParameter("config: unknown system " + cfg.system);
}

// -----------------------------------------------------------------------------
// Helpers
// -----------------------------------------------------------------------------

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline double test_score(const krr::KrrModel& model, const Matrix& truth,
                         const validation::Metric& metric) {
  const auto roll = krr::rollout(model, truth.col(0), truth.cols() - 1);
  switch (metric.kind) {
    case validation::Metric::Kind::Vpt:
      return metrics::vpt(roll.states, truth,
                          metrics::VptConfig::from_truth(truth, metric.gamma,
                                                         metric.lyapunov, model.dt));
    case validation::Metric::Kind::Rmse:
      return roll.diverged ? std::numeric_limits<double>::infinity()
                           : metrics::rmse(roll.states, truth);
    default: {
      if (roll.diverged) return std::numeric_limits<double>::infinity();
      Vector times(truth.cols());
      for (Index i = 0; i < times.size(); ++i) times[i] = model.dt * i;
      return metrics::wnrmse({roll.states}, {truth}, times);
    }
  }
}

inline json config_to_json(const ExperimentConfig& c) {
  json j;
  j["system"] = c.system;
  j["kernel"] = c.kernel;
  j["form"] = c.form;
  j["metric"] = c.metric;
  j["heuristic"] = c.heuristic;
  j["N"] = c.n_train;
  j["Nv"] = c.n_val;
  j["val_count"] = c.val_count;
  j["subsets"] = c.subsets;
  j["trials"] = c.trials;
  j["test_segments"] = c.test_segments;
  j["test_len"] = c.test_len;
  j["gamma"] = c.gamma;
  j["lyapunov"] = c.lyapunov;
  j["d_eps"] = c.d_eps;
  j["d_lam"] = c.d_lam;
  j["seed"] = c.seed;
  j["dt"] = c.dt;
  if (c.system == "lorenz63") {
    j["train_steps"] = c.train_steps;
    j["discard"] = c.discard;
  } else if (c.system == "torus") {
    j["torus_dim"] = c.torus_dim;
    j["torus_ics"] = c.torus_ics;
    j["torus_horizon"] = c.torus_horizon;
  } else if (c.system == "ks_chaotic" || c.system == "ks_traveling") {
    j["ks_length"] = c.ks_length;
    j["ks_nu"] = c.ks_nu;
    j["ks_grid"] = c.ks_grid;
    j["ks_dt_solver"] = c.ks_dt_solver;
    j["ks_raw_steps"] = c.ks_raw_steps;
    j["ks_downsample"] = c.ks_downsample;
    j["ks_discard"] = c.ks_discard;
    j["ks_train_ic"] = c.ks_train_ic;
    j["ks_test_ic"] = c.ks_test_ic;
  } else if (c.system == "external") {
    j["train_path"] = c.train_path;
    j["val_path"] = c.val_path;
    j["test_path"] = c.test_path;
    j["pca_rank"] = c.pca_rank;
    j["pca_energy"] = c.pca_energy;
  }
  return j;
}

// -----------------------------------------------------------------------------
// Commands
// -----------------------------------------------------------------------------

/// Raised when the search finds no viable model in some subset; the CLI maps
/// this to exit code 2 after the records have been written.
class RunFailed : public Error {
 public:
  using Error::Error;
};

struct RunResult {
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<double> subset_means;
  std::string summary_path;
};

inline RunResult cmd_run(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  const auto metric = parse_metric(cfg);
  const auto kind = parse_kernel(cfg.kernel);
  const auto mode = parse_heuristic(cfg.heuristic);
  fs::create_directories(cfg.output_dir);
  const Prepared prep = prepare(cfg);

  json summary;
  summary["config"] = config_to_json(cfg);
  json subsets_json = json::array();
  std::vector<double> subset_means;
  std::ofstream metrics_csv(fs::path(cfg.output_dir) / "test_metrics.csv");
  metrics_csv << "subset,segment,value\n";

  for (std::size_t s = 0; s < prep.subsets.size(); ++s) {
    const SubsetData& sd = prep.subsets[s];
    const auto ref = validation::heuristic_reference(
        sd.pairs.X, mode, static_cast<int>(sd.pairs.X.rows()));
    const auto range = validation::make_range(ref, cfg.d_eps, cfg.d_lam);

    validation::SearchResult search;
    const std::string records_path =
        (fs::path(cfg.output_dir) / ("search_records_s" + std::to_string(s) + ".csv"))
            .string();
    try {
      search = validation::random_search(
          sd.pairs, kind, sd.val, range, cfg.trials, metric,
          derive_seed(cfg.seed, kSaltSearch, s), cfg.threads);
    } catch (validation::NoViableModel& e) {
      std::ofstream os(records_path);
      validation::records_to_csv(e.records, os);
      throw RunFailed("subset " + std::to_string(s) +
                      ": every search trial diverged or failed; records saved to " +
                      records_path);
    }
    {
      std::ofstream os(records_path);
      validation::records_to_csv(search.records, os);
    }
    if (cfg.plot_script && s == 0) {
      std::ofstream gp(fs::path(cfg.output_dir) / "landscape.gp");
      gp << "set datafile separator ','\nset logscale xy\nset xlabel 'eps'\n"
            "set ylabel 'lambda'\nplot 'search_records_s0.csv' using 2:3:4 "
            "skip 1 with points palette pt 7 title 'score'\n";
    }

    std::vector<double> values(prep.test.size());
    parallel_for(static_cast<std::int64_t>(prep.test.size()), cfg.threads,
                 [&](std::int64_t i) {
                   values[i] = test_score(search.best, prep.test[i], metric);
                 });
    double mean = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      metrics_csv << s << ',' << i << ',' << fmt(values[i]) << '\n';
      mean += values[i];
    }
    mean /= values.empty() ? 1.0 : static_cast<double>(values.size());
    subset_means.push_back(mean);

    json sj;
    sj["heuristic"] = {{"eta_star", ref.eta_star},
                       {"d_star", ref.d_star},
                       {"eps_star", ref.eps_star},
                       {"lam_star", ref.lam_star},
                       {"max_dist", ref.max_dist}};
    sj["range"] = {{"eps_lo", range.eps_lo},
                   {"eps_hi", range.eps_hi},
                   {"lam_lo", range.lam_lo},
                   {"lam_hi", range.lam_hi}};
    const auto& best = search.records[search.best_trial];
    sj["best"] = {{"trial", best.trial},
                  {"eps", best.eps},
                  {"lambda", best.lam},
                  {"score", best.score}};
    int ok = 0, diverged = 0, failed = 0;
    for (const auto& r : search.records) {
      if (r.status == validation::TrialStatus::Ok) ++ok;
      else if (r.status == validation::TrialStatus::Diverged) ++diverged;
      else ++failed;
    }
    sj["trials"] = {{"ok", ok}, {"diverged", diverged}, {"solver_failed", failed}};
    sj["test_mean"] = mean;
    subsets_json.push_back(sj);

    if (cfg.dump_predictions && s == 0) {
      const std::size_t dumps = std::min<std::size_t>(3, prep.test.size());
      for (std::size_t i = 0; i < dumps; ++i) {
        const auto roll =
            krr::rollout(search.best, prep.test[i].col(0), prep.test[i].cols() - 1);
        std::ofstream os(fs::path(cfg.output_dir) /
                         ("prediction_seg" + std::to_string(i) + ".csv"));
        os << "step";
        for (Index r = 0; r < prep.test[i].rows(); ++r) os << ",pred_x" << r;
        for (Index r = 0; r < prep.test[i].rows(); ++r) os << ",true_x" << r;
        os << '\n';
        for (Index c = 0; c < prep.test[i].cols(); ++c) {
          os << c;
          for (Index r = 0; r < prep.test[i].rows(); ++r) {
            os << ',' << (c < roll.states.cols() ? fmt(roll.states(r, c)) : "nan");
          }
          for (Index r = 0; r < prep.test[i].rows(); ++r) {
            os << ',' << fmt(prep.test[i](r, c));
          }
          os << '\n';
        }
      }
    }
    if (cfg.diffusion_coords > 0 && kind == kernels::KernelKind::Dm && s == 0) {
      const auto pairs_eig =
          kernels::dm_eigen(search.best.dm, std::min<Index>(cfg.diffusion_coords,
                                                            search.best.anchors.cols()));
      std::ofstream os(fs::path(cfg.output_dir) / "diffusion_coords.csv");
      os << "point";
      for (Index k = 0; k < pairs_eig.values.size(); ++k) os << ",phi" << k + 1;
      os << '\n';
      for (Index i = 0; i < pairs_eig.vectors.rows(); ++i) {
        os << i;
        for (Index k = 0; k < pairs_eig.vectors.cols(); ++k) {
          os << ',' << fmt(pairs_eig.vectors(i, k));
        }
        os << '\n';
      }
    }
    if (prep.reducer && s == 0) {
      io::save_model((fs::path(cfg.output_dir) / "model_s0.dmkr").string(),
                     search.best, &*prep.reducer);
    }
  }

  RunResult result;
  result.subset_means = subset_means;
  const double n = static_cast<double>(subset_means.size());
  for (double v : subset_means) result.mean += v;
  result.mean /= n;
  if (subset_means.size() > 1) {
    double acc = 0.0;
    for (double v : subset_means) acc += (v - result.mean) * (v - result.mean);
    result.stddev = std::sqrt(acc / (n - 1.0));
  }

  summary["subsets"] = subsets_json;
  summary["per_subset_mean"] = subset_means;
  summary["mean"] = result.mean;
  summary["std"] = result.stddev;
  summary["n_test_segments"] = prep.test.size();
  if (prep.reducer) {
    summary["pca"] = {{"rank", prep.reducer->rank},
                      {"energy", prep.reducer->energy},
                      {"sigma1", prep.reducer->sigma1}};
  }
  result.summary_path = (fs::path(cfg.output_dir) / "summary.json").string();
  std::ofstream os(result.summary_path);
  os << summary.dump(2) << '\n';
  return result;
}

inline void cmd_generate(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.output_dir);
  json manifest;
  manifest["config"] = config_to_json(cfg);
  std::vector<std::pair<std::string, systems::TrajectoryDataset>> files;
  if (cfg.system == "lorenz63") {
    files.emplace_back("train.dmkr", lorenz_train_dataset(cfg));
    files.emplace_back("test.dmkr", lorenz_test_dataset(cfg));
  } else if (cfg.system == "torus") {
    files.emplace_back("train.dmkr", torus_train_dataset(cfg));
    files.emplace_back("val.dmkr", torus_fixed_dataset(cfg, cfg.val_count, cfg.n_val,
                                                       kSaltValIcs));
    files.emplace_back("test.dmkr", torus_fixed_dataset(cfg, cfg.test_segments,
                                                        cfg.test_len, kSaltTestIcs));
  } else if (cfg.system == "ks_chaotic") {
    files.emplace_back("train.dmkr", ks_train_dataset(cfg));
    files.emplace_back("test.dmkr", ks_test_dataset(cfg));
  } else if (cfg.system == "ks_traveling") {
    files.emplace_back("full.dmkr", ks_train_dataset(cfg));
  } else {
    throw InvalidParameter("generate: unsupported system " + cfg.system);
  }
  json file_list = json::array();
  for (const auto& [name, ds] : files) {
    const std::string path = (fs::path(cfg.output_dir) / name).string();
    io::write_dataset(path, ds);
    if (cfg.write_csv) io::write_dataset_csv(path + ".csv", ds);
    json fj;
    fj["file"] = name;
    fj["system"] = ds.meta.system;
    fj["trajectories"] = ds.trajectories.size();
    fj["dim"] = ds.dim();
    fj["total_states"] = ds.total_states();
    fj["dt"] = ds.dt;
    file_list.push_back(fj);
  }
  manifest["files"] = file_list;
  std::ofstream os(fs::path(cfg.output_dir) / "manifest.json");
  os << manifest.dump(2) << '\n';
}

/// Merge run summaries into a kernel-by-N comparison table (CSV plus a
/// human-readable block). All bundles must describe the same system.
inline void cmd_report(const std::vector<std::string>& summary_paths,
                       const std::string& csv_path, std::ostream& human) {
  if (summary_paths.empty()) throw InvalidParameter("report: no summaries given");
  struct Row {
    std::string kernel;
    long n;
    double mean, stddev;
  };
  std::vector<Row> rows;
  std::string system;
  for (const auto& path : summary_paths) {
    std::ifstream is(path);
    if (!is) throw DataError("report: cannot open " + path);
    json j = json::parse(is);
    if (!j.contains("mean") || !j.contains("std")) {
      throw DataError("report: " + path + " is missing mean/std fields");
    }
    const json& c = j.at("config");
    const std::string sys = c.at("system").get<std::string>();
    if (system.empty()) system = sys;
    if (sys != system) {
      throw InvalidParameter("report: incompatible bundles (" + system + " vs " +
                             sys + ")");
    }
    rows.push_back({c.at("kernel").get<std::string>(), c.at("N").get<long>(),
                    j.at("mean").get<double>(), j.at("std").get<double>()});
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return a.kernel != b.kernel ? a.kernel < b.kernel : a.n < b.n;
  });
  if (!csv_path.empty()) {
    std::ofstream csv(csv_path);
    csv << "system,kernel,N,mean,std\n";
    for (const Row& r : rows) {
      csv << system << ',' << r.kernel << ',' << r.n << ',' << fmt(r.mean) << ','
          << fmt(r.stddev) << '\n';
    }
  }
  std::vector<long> ns;
  for (const Row& r : rows) {
    if (std::find(ns.begin(), ns.end(), r.n) == ns.end()) ns.push_back(r.n);
  }
  std::sort(ns.begin(), ns.end());
  human << "system: " << system << '\n';
  human << "kernel";
  for (long n : ns) human << "\tN=" << n;
  human << '\n';
  for (const std::string& kernel : {std::string("dm"), std::string("rbf")}) {
    bool any = false;
    std::ostringstream line;
    line << kernel;
    for (long n : ns) {
      bool found = false;
      for (const Row& r : rows) {
        if (r.kernel == kernel && r.n == n) {
          char buf[64];
          std::snprintf(buf, sizeof(buf), "\t%.4g +/- %.4g", r.mean, r.stddev);
          line << buf;
          found = any = true;
          break;
        }
      }
      if (!found) line << "\t-";
    }
    if (any) human << line.str() << '\n';
  }
}

}  // namespace detail

using detail::cmd_generate;
using detail::cmd_report;
using detail::cmd_run;
using detail::RunFailed;
using detail::RunResult;

}  // namespace dmkrr::experiment
