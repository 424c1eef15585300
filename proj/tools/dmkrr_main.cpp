// Command-line experiment runner: generate datasets, run the full
// train/validate/test pipeline, and merge run summaries into comparison
// tables. Exit codes: 0 success, 2 validation found no viable model, 3 data
// error.

#include "dmkrr/dmkrr.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

void add_config_options(CLI::App* cmd, dmkrr::experiment::ExperimentConfig& cfg) {
  cmd->set_config("--config", "", "Experiment config file (key=value lines)");
  cmd->add_option("--system", cfg.system,
                  "lorenz63|torus|ks_chaotic|ks_traveling|external");
  cmd->add_option("--kernel", cfg.kernel, "dm|rbf");
  cmd->add_option("--form", cfg.form, "direct|skip");
  cmd->add_option("--metric", cfg.metric, "rmse|vpt|wnrmse");
  cmd->add_option("--heuristic", cfg.heuristic, "manifold|chaotic");
  cmd->add_option("--N", cfg.n_train, "training points per subset");
  cmd->add_option("--Nv", cfg.n_val, "validation trajectory length");
  cmd->add_option("--val-count", cfg.val_count, "validation trajectories per subset");
  cmd->add_option("--subsets", cfg.subsets, "number of random training subsets");
  cmd->add_option("--trials", cfg.trials, "random-search trial budget");
  cmd->add_option("--test-segments", cfg.test_segments);
  cmd->add_option("--test-len", cfg.test_len);
  cmd->add_option("--gamma", cfg.gamma, "VPT error tolerance");
  cmd->add_option("--lyapunov", cfg.lyapunov, "maximal Lyapunov exponent");
  cmd->add_option("--d-eps", cfg.d_eps, "lengthscale search spread");
  cmd->add_option("--d-lam", cfg.d_lam, "ridge search spread");
  cmd->add_option("--seed", cfg.seed);
  cmd->add_option("--threads", cfg.threads, "0 = DMKRR_THREADS env or hardware");
  cmd->add_option("--output-dir", cfg.output_dir)
      ->envname("DMKRR_OUTPUT_ROOT");
  cmd->add_flag("--dump-predictions", cfg.dump_predictions);
  cmd->add_option("--diffusion-coords", cfg.diffusion_coords,
                  "emit this many diffusion coordinates of the anchors");
  cmd->add_flag("--csv", cfg.write_csv, "also export generated datasets as CSV");
  cmd->add_flag("--plot-script", cfg.plot_script, "emit a gnuplot landscape script");
  cmd->add_option("--dt", cfg.dt, "sampling step");
  cmd->add_option("--train-steps", cfg.train_steps);
  cmd->add_option("--discard", cfg.discard);
  cmd->add_option("--torus-dim", cfg.torus_dim);
  cmd->add_option("--torus-ics", cfg.torus_ics);
  cmd->add_option("--torus-horizon", cfg.torus_horizon);
  cmd->add_option("--period-tol", cfg.period_tol);
  cmd->add_option("--ks-length", cfg.ks_length);
  cmd->add_option("--ks-nu", cfg.ks_nu);
  cmd->add_option("--ks-grid", cfg.ks_grid);
  cmd->add_option("--ks-dt-solver", cfg.ks_dt_solver);
  cmd->add_option("--ks-raw-steps", cfg.ks_raw_steps);
  cmd->add_option("--ks-downsample", cfg.ks_downsample);
  cmd->add_option("--ks-discard", cfg.ks_discard);
  cmd->add_option("--ks-train-ic", cfg.ks_train_ic);
  cmd->add_option("--ks-test-ic", cfg.ks_test_ic);
  cmd->add_option("--ks-train-stride", cfg.ks_train_stride);
  cmd->add_option("--ks-train-region", cfg.ks_train_region);
  cmd->add_option("--train-path", cfg.train_path);
  cmd->add_option("--val-path", cfg.val_path);
  cmd->add_option("--test-path", cfg.test_path);
  cmd->add_option("--pca-rank", cfg.pca_rank);
  cmd->add_option("--pca-energy", cfg.pca_energy);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kernel ridge regression surrogates for dynamical systems"};
  app.require_subcommand(1);

  dmkrr::experiment::ExperimentConfig gen_cfg, run_cfg;
  CLI::App* generate = app.add_subcommand("generate", "Generate dataset containers");
  add_config_options(generate, gen_cfg);
  CLI::App* run = app.add_subcommand("run", "Run the full experiment pipeline");
  add_config_options(run, run_cfg);

  std::vector<std::string> summaries;
  std::string report_csv = "report.csv";
  CLI::App* report = app.add_subcommand("report", "Merge run summaries into a table");
  report->add_option("summaries", summaries, "summary.json files")->required();
  report->add_option("--out", report_csv, "output CSV path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) {
      dmkrr::experiment::cmd_generate(gen_cfg);
      std::cout << "datasets written to " << gen_cfg.output_dir << '\n';
    } else if (run->parsed()) {
      const auto result = dmkrr::experiment::cmd_run(run_cfg);
      std::cout << run_cfg.system << " " << run_cfg.kernel << " N=" << run_cfg.n_train
                << " " << run_cfg.metric << " mean=" << result.mean
                << " std=" << result.stddev << '\n'
                << "summary: " << result.summary_path << '\n';
    } else if (report->parsed()) {
      dmkrr::experiment::cmd_report(summaries, report_csv, std::cout);
    }
  } catch (const dmkrr::experiment::RunFailed& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const dmkrr::DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
