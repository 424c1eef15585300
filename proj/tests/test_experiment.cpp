#include "dmkrr/experiment.hpp"

#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

using namespace dmkrr;
using experiment::ExperimentConfig;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("dmkrr_exp_" + tag + "_" +
                                        std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string sub(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

ExperimentConfig tiny_lorenz() {
  ExperimentConfig cfg;
  cfg.system = "lorenz63";
  cfg.kernel = "dm";
  cfg.form = "skip";
  cfg.metric = "vpt";
  cfg.heuristic = "chaotic";
  cfg.n_train = 64;
  cfg.n_val = 120;
  cfg.val_count = 2;
  cfg.subsets = 2;
  cfg.trials = 8;
  cfg.test_segments = 4;
  cfg.test_len = 200;
  cfg.gamma = 0.3;
  cfg.lyapunov = 0.91;
  cfg.dt = 0.01;
  cfg.train_steps = 3000;
  cfg.discard = 1000;
  cfg.seed = 5;
  cfg.threads = 1;
  return cfg;
}

}  // namespace

TEST_CASE("tiny lorenz run produces the full results bundle") {
  TempDir dir("run");
  auto cfg = tiny_lorenz();
  cfg.output_dir = dir.sub("run1");
  const auto result = experiment::cmd_run(cfg);
  CHECK(result.subset_means.size() == 2);
  CHECK(std::isfinite(result.mean));
  CHECK(result.stddev >= 0.0);

  CHECK(fs::exists(fs::path(cfg.output_dir) / "summary.json"));
  CHECK(fs::exists(fs::path(cfg.output_dir) / "test_metrics.csv"));
  CHECK(fs::exists(fs::path(cfg.output_dir) / "search_records_s0.csv"));
  CHECK(fs::exists(fs::path(cfg.output_dir) / "search_records_s1.csv"));

  const auto summary = nlohmann::json::parse(slurp(result.summary_path));
  CHECK(summary.at("config").at("N").get<int>() == 64);
  CHECK(summary.at("per_subset_mean").size() == 2);
  CHECK(summary.at("subsets").size() == 2);
  CHECK(summary.at("subsets")[0].contains("heuristic"));
  CHECK(summary.at("subsets")[0].contains("best"));

  // summary statistics recomputed from the per-segment csv match the json
  std::ifstream csv(fs::path(cfg.output_dir) / "test_metrics.csv");
  std::string line;
  std::getline(csv, line);
  CHECK(line == "subset,segment,value");
  std::vector<double> sums(2, 0.0);
  std::vector<int> counts(2, 0);
  while (std::getline(csv, line)) {
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    const int subset = std::stoi(line.substr(0, c1));
    sums[subset] += std::stod(line.substr(c2 + 1));
    counts[subset] += 1;
  }
  for (int s = 0; s < 2; ++s) {
    CHECK(counts[s] == 4);
    const double mean = sums[s] / counts[s];
    CHECK(std::abs(mean - summary.at("per_subset_mean")[s].get<double>()) < 1e-12);
  }
}

TEST_CASE("summaries are byte-identical across reruns and thread counts") {
  TempDir dir("det");
  auto cfg = tiny_lorenz();

  cfg.output_dir = dir.sub("a");
  cfg.threads = 1;
  experiment::cmd_run(cfg);
  cfg.output_dir = dir.sub("b");
  cfg.threads = 1;
  experiment::cmd_run(cfg);
  cfg.output_dir = dir.sub("c");
  cfg.threads = 3;
  experiment::cmd_run(cfg);

  const std::string a = slurp(dir.sub("a") + "/summary.json");
  CHECK(a == slurp(dir.sub("b") + "/summary.json"));
  CHECK(a == slurp(dir.sub("c") + "/summary.json"));
  CHECK(slurp(dir.sub("a") + "/search_records_s0.csv") ==
        slurp(dir.sub("c") + "/search_records_s0.csv"));
}

TEST_CASE("rbf and dm runs share data and remain comparable") {
  TempDir dir("kern");
  auto cfg = tiny_lorenz();
  cfg.output_dir = dir.sub("dm");
  const auto dm = experiment::cmd_run(cfg);
  cfg.kernel = "rbf";
  cfg.output_dir = dir.sub("rbf");
  const auto rbf = experiment::cmd_run(cfg);
  CHECK(std::isfinite(dm.mean));
  CHECK(std::isfinite(rbf.mean));
  const auto ja = nlohmann::json::parse(slurp(dm.summary_path));
  const auto jb = nlohmann::json::parse(slurp(rbf.summary_path));
  CHECK(ja.at("config").at("kernel") == "dm");
  CHECK(jb.at("config").at("kernel") == "rbf");
}

TEST_CASE("generate writes containers and a manifest deterministically") {
  TempDir dir("gen");
  ExperimentConfig cfg;
  cfg.system = "lorenz63";
  cfg.train_steps = 500;
  cfg.discard = 0;
  cfg.test_segments = 2;
  cfg.test_len = 100;
  cfg.seed = 9;
  cfg.output_dir = dir.sub("a");
  experiment::cmd_generate(cfg);
  CHECK(fs::exists(fs::path(cfg.output_dir) / "train.dmkr"));
  CHECK(fs::exists(fs::path(cfg.output_dir) / "test.dmkr"));
  CHECK(fs::exists(fs::path(cfg.output_dir) / "manifest.json"));

  const auto train = io::read_dataset(dir.sub("a") + "/train.dmkr");
  CHECK(train.trajectories.front().cols() == 500);
  CHECK(train.trajectories.front().rows() == 3);

  cfg.output_dir = dir.sub("b");
  experiment::cmd_generate(cfg);
  CHECK(slurp(dir.sub("a") + "/train.dmkr") == slurp(dir.sub("b") + "/train.dmkr"));
  CHECK(slurp(dir.sub("a") + "/manifest.json") ==
        slurp(dir.sub("b") + "/manifest.json"));
}

TEST_CASE("generate maps torus states to the requested dimension") {
  TempDir dir("torus");
  ExperimentConfig cfg;
  cfg.system = "torus";
  cfg.torus_dim = 7;
  cfg.torus_ics = 4;
  cfg.torus_horizon = 3.0;
  cfg.val_count = 2;
  cfg.n_val = 50;
  cfg.test_segments = 2;
  cfg.test_len = 40;
  cfg.output_dir = dir.sub("out");
  experiment::cmd_generate(cfg);
  const auto val = io::read_dataset(dir.sub("out") + "/val.dmkr");
  CHECK(val.dim() == 7);
  CHECK(val.trajectories.size() == 2);
  CHECK(val.trajectories.front().cols() == 50);
}

TEST_CASE("external system runs through pca reduction and wnrmse") {
  TempDir dir("ext");
  // synthetic rank-4 oscillations in a 30-dimensional ambient space
  Rng rng(77);
  Matrix basis(30, 4);
  for (Index j = 0; j < 4; ++j) {
    for (Index i = 0; i < 30; ++i) basis(i, j) = rng.uniform(-1.0, 1.0);
  }
  auto make_traj = [&](double phase, Index len) {
    Matrix coeff(4, len);
    for (Index i = 0; i < len; ++i) {
      const double t = 0.05 * i + phase;
      coeff.col(i) << std::sin(t), std::cos(t), 0.4 * std::sin(2 * t),
          0.4 * std::cos(2 * t);
    }
    return Matrix(basis * coeff);
  };
  systems::TrajectoryDataset train, val, test;
  train.dt = val.dt = test.dt = 0.05;
  train.meta.system = val.meta.system = test.meta.system = "external";
  for (int k = 0; k < 4; ++k) train.trajectories.push_back(make_traj(0.9 * k, 160));
  val.trajectories.push_back(make_traj(0.35, 80));
  val.trajectories.push_back(make_traj(1.7, 80));
  test.trajectories.push_back(make_traj(2.3, 80));
  io::write_dataset(dir.sub("train.dmkr"), train);
  io::write_dataset(dir.sub("val.dmkr"), val);
  io::write_dataset(dir.sub("test.dmkr"), test);

  ExperimentConfig cfg;
  cfg.system = "external";
  cfg.kernel = "dm";
  cfg.form = "direct";
  cfg.metric = "wnrmse";
  cfg.heuristic = "manifold";
  cfg.train_path = dir.sub("train.dmkr");
  cfg.val_path = dir.sub("val.dmkr");
  cfg.test_path = dir.sub("test.dmkr");
  cfg.pca_energy = 0.999;
  cfg.n_train = 0;  // keep all pairs
  cfg.trials = 12;
  cfg.d_eps = 1e-2;
  cfg.seed = 4;
  cfg.threads = 1;
  cfg.output_dir = dir.sub("out");
  const auto result = experiment::cmd_run(cfg);
  CHECK(std::isfinite(result.mean));
  CHECK(result.mean < 1.0);  // a sane surrogate beats predicting zero

  const auto summary = nlohmann::json::parse(slurp(result.summary_path));
  REQUIRE(summary.contains("pca"));
  CHECK(summary.at("pca").at("rank").get<int>() == 4);
  CHECK(fs::exists(fs::path(cfg.output_dir) / "model_s0.dmkr"));

  const auto snap = io::load_model(dir.sub("out") + "/model_s0.dmkr");
  REQUIRE(snap.reducer.has_value());
  CHECK(snap.reducer->rank == 4);
}

TEST_CASE("report merges summaries and validates inputs") {
  TempDir dir("rep");
  auto cfg = tiny_lorenz();
  cfg.trials = 4;
  cfg.subsets = 1;
  cfg.output_dir = dir.sub("dm64");
  experiment::cmd_run(cfg);
  cfg.kernel = "rbf";
  cfg.output_dir = dir.sub("rbf64");
  experiment::cmd_run(cfg);

  std::ostringstream human;
  experiment::cmd_report({dir.sub("dm64") + "/summary.json",
                          dir.sub("rbf64") + "/summary.json"},
                         dir.sub("report.csv"), human);
  const std::string table = human.str();
  CHECK(table.find("lorenz63") != std::string::npos);
  CHECK(table.find("N=64") != std::string::npos);
  CHECK(table.find("dm") != std::string::npos);
  CHECK(table.find("rbf") != std::string::npos);
  const std::string csv = slurp(dir.sub("report.csv"));
  CHECK(csv.find("system,kernel,N,mean,std") == 0);

  // missing std is an error, never a silent blank
  {
    std::ofstream os(dir.sub("broken.json"));
    os << R"({"config":{"system":"lorenz63","kernel":"dm","N":64},"mean":1.0})";
  }
  std::ostringstream sink;
  CHECK_THROWS_AS(
      experiment::cmd_report({dir.sub("broken.json")}, dir.sub("r2.csv"), sink),
      DataError);

  // incompatible systems are refused
  {
    std::ofstream os(dir.sub("other.json"));
    os << R"({"config":{"system":"torus","kernel":"dm","N":64},"mean":1.0,"std":0.0})";
  }
  CHECK_THROWS_AS(experiment::cmd_report({dir.sub("dm64") + "/summary.json",
                                          dir.sub("other.json")},
                                         dir.sub("r3.csv"), sink),
                  InvalidParameter);
}

TEST_CASE("config validation rejects inconsistent metrics") {
  auto cfg = tiny_lorenz();
  cfg.metric = "vpt";
  cfg.lyapunov = 0.0;
  TempDir dir("bad");
  cfg.output_dir = dir.sub("out");
  CHECK_THROWS_AS(experiment::cmd_run(cfg), InvalidParameter);
  cfg.metric = "nope";
  cfg.lyapunov = 1.0;
  CHECK_THROWS_AS(experiment::cmd_run(cfg), InvalidParameter);
}
