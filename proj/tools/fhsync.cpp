// fhsync command line: mat, coarse, baseline, train, evaluate, plot-data.
// Exit status: 0 ok, 2 configuration error, 3 acquisition failures above the
// allowed rate.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "fhsync/harness.hpp"

using namespace fhsync;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitFailures = 3;

std::uint64_t env_seed() {
  const char* s = std::getenv("FHSYNC_SEED");
  if (!s || !*s) return 1;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (errno || *end || *s == '-') throw ConfigError(std::string("FHSYNC_SEED is not an unsigned integer: ") + s);
  return v;
}

std::vector<double> parse_grid(const std::string& s) {
  std::vector<double> g;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    std::size_t pos = 0;
    double v = 0;
    try {
      v = std::stod(tok, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != tok.size()) throw ConfigError("bad snr grid entry '" + tok + "'");
    g.push_back(v);
  }
  if (g.empty()) throw ConfigError("snr grid is empty");
  return g;
}

// Options shared by the experiment-style subcommands. Values given on the
// command line win over the config file.
struct Common {
  std::string config;
  std::string grid;
  int trials = 0;
  std::uint64_t seed = 0;
  bool noise_free = false;
  double max_failure = -1;

  void add(CLI::App* c) {
    c->add_option("--config", config, "JSON config or manifest");
    c->add_option("--snr-grid", grid, "comma-separated SNRs in dB");
    c->add_option("--trials", trials, "trials per point");
    c->add_option("--seed", seed, "root seed (default FHSYNC_SEED or 1)");
    c->add_flag("--noise-free", noise_free, "disable AWGN");
    c->add_option("--max-failure-rate", max_failure, "exit 3 when a point fails more often");
  }

  ExperimentConfig build(const CLI::App* c) const {
    ExperimentConfig e = config.empty() ? ExperimentConfig{} : load_config(config);
    if (config.empty()) e.seed = env_seed();
    if (c->count("--seed")) e.seed = seed;
    if (!grid.empty()) e.snr_grid = parse_grid(grid);
    if (c->count("--trials")) e.trials = trials;
    if (noise_free) e.noisy = false;
    if (c->count("--max-failure-rate")) e.max_failure_rate = max_failure;
    return e;
  }
};

int finish(const ExperimentResult& res, const ExperimentConfig& cfg) {
  if (res.worst_failure_rate > cfg.max_failure_rate) {
    std::fprintf(stderr, "acquisition failure rate %.3f exceeds %.3f\n", res.worst_failure_rate, cfg.max_failure_rate);
    return kExitFailures;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Frequency-hopping DRT synchronization simulator"};
  app.require_subcommand(1);

  // mat
  MatParams mp;
  auto* mat = app.add_subcommand("mat", "analytic mean acquisition time");
  mat->add_option("--r", mp.r_cells, "cells in the uncertainty region")->required();
  mat->add_option("--pd", mp.p_d, "detection probability")->required();
  mat->add_option("--tic", mp.t_ic_s, "time to dismiss an incorrect cell [s]");
  mat->add_option("--tc", mp.t_c_s, "time spent on the correct cell [s]");
  mat->add_option("--tr", mp.t_r_s, "rewind time [s]");
  mat->add_option("--tac", mp.t_ac_s, "time to accept the correct cell [s]");

  // coarse
  double coarse_snr = 10;
  int coarse_trials = 1000;
  std::uint64_t coarse_seed = 0;
  int coarse_r = 3, coarse_passes = 8;
  std::string coarse_out;
  auto* coarse = app.add_subcommand("coarse", "serial-search trials, CSV trial,detected_cell,hops,z_max");
  coarse->add_option("--snr", coarse_snr, "SNR in dB");
  coarse->add_option("--trials", coarse_trials, "number of trials")->check(CLI::PositiveNumber);
  coarse->add_option("--seed", coarse_seed, "root seed");
  coarse->add_option("--r", coarse_r, "cells in the uncertainty region")->check(CLI::PositiveNumber);
  coarse->add_option("--passes", coarse_passes, "sweeps before giving up")->check(CLI::PositiveNumber);
  coarse->add_option("--out", coarse_out, "output file (default stdout)");

  // baseline
  Common base_opts;
  std::string base_out;
  auto* baseline = app.add_subcommand("baseline", "ELG and max-energy baselines, CSV snr_db,method,avg_hops,mse");
  base_opts.add(baseline);
  baseline->add_option("--out", base_out, "output file (default stdout)");

  // train
  TrainOptions topt;
  std::int64_t train_steps = 200000;
  std::uint64_t train_seed = 0;
  std::string preset = "desk", train_out = "ckpt.fhnn", curve_out, train_config;
  auto* trn = app.add_subcommand("train", "PPO training");
  trn->add_option("--snr-min", topt.snr_min_db);
  trn->add_option("--snr-max", topt.snr_max_db);
  trn->add_option("--steps", train_steps)->check(CLI::NonNegativeNumber);
  trn->add_option("--seed", train_seed, "root seed (default FHSYNC_SEED or 1)");
  trn->add_option("--preset", preset)->check(CLI::IsMember({"desk", "paper"}));
  trn->add_option("--out", train_out, "checkpoint path");
  trn->add_option("--curve", curve_out, "learning curve CSV (default <out>.curve.csv)");
  trn->add_option("--config", train_config, "JSON config for the link model");
  bool train_quiet = false;
  trn->add_flag("--quiet", train_quiet);

  // evaluate
  Common eval_opts;
  std::string eval_ckpt, eval_dir, eval_methods;
  auto* evaluate = app.add_subcommand("evaluate", "full sweep with aggregate CSV and manifest");
  eval_opts.add(evaluate);
  evaluate->add_option("--checkpoint", eval_ckpt, "trained checkpoint (needed for rl)");
  evaluate->add_option("--methods", eval_methods, "comma list of elg,maxenergy_elg,rl");
  evaluate->add_option("--out-dir", eval_dir, "output directory");
  std::string eval_policy;
  evaluate->add_option("--policy", eval_policy, "rl action choice")->check(CLI::IsMember({"sample", "greedy"}));

  // plot-data
  std::string plot_csv, plot_prefix = "sweep_";
  auto* plot = app.add_subcommand("plot-data", "whitespace tables for hops and MSE versus SNR");
  plot->add_option("--csv", plot_csv, "aggregate CSV")->required();
  plot->add_option("--prefix", plot_prefix, "output path prefix");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*mat) {
      std::printf("%.10g\n", mat_analytic(mp));
      return 0;
    }

    if (*coarse) {
      SearchConfig sc;
      sc.uncertainty_region_cells = coarse_r;
      const std::uint64_t root = coarse->count("--seed") ? coarse_seed : env_seed();
      const auto fir = LowpassFir::for_plan(SystemConfig{}.plan({0, Link::Uplink}, {}, 1), sc.filter);
      sc.noise_floor = calibrated_noise_floor(coarse_snr, fir);
      std::ofstream file;
      if (!coarse_out.empty()) file = open_out(coarse_out);
      std::ostream& os = coarse_out.empty() ? std::cout : file;
      os << "trial,detected_cell,hops,z_max\n";
      for (int t = 0; t < coarse_trials; ++t) {
        const std::uint64_t s = hash_values(root, double_bits(coarse_snr), static_cast<std::uint64_t>(t));
        Rng rng(s);
        const double off = rng.uniform(0.0, coarse_r * sc.cell_s);
        const auto tr = run_search_trial(sc, off, coarse_snr, splitmix64(s), coarse_passes);
        os << t << ',' << tr.result.detected_cell << ',' << tr.result.hops_consumed << ','
           << format_double(tr.result.z_max) << '\n';
      }
      return 0;
    }

    if (*baseline) {
      auto cfg = base_opts.build(baseline);
      cfg.methods = {Method::Elg, Method::MaxEnergyElg};
      const auto res = run_trials(cfg);
      std::ofstream file;
      if (!base_out.empty()) file = open_out(base_out);
      write_baseline_csv(base_out.empty() ? std::cout : file, res.rows);
      return finish(res, cfg);
    }

    if (*trn) {
      const std::uint64_t seed = trn->count("--seed") ? train_seed : env_seed();
      ExperimentConfig ec = train_config.empty() ? ExperimentConfig{} : load_config(train_config);
      topt.network = NetworkConfig::preset(preset, kNumActions);
      topt.noisy = ec.noisy;
      topt.max_steps = ec.rl_max_steps;
      topt.shift_interval_s = ec.rl_shift_interval_s;
      int k = 0, synced = 0;
      topt.on_episode = [&](const TrainCurveEntry& e) {
        ++k;
        synced += e.synchronized;
        if (!train_quiet && k % 200 == 0) {
          std::fprintf(stderr, "episode %d  steps %lld  sync %.2f  eps %.3f\n", k, static_cast<long long>(e.steps),
                       synced / 200.0, e.explore_eps);
          synced = 0;
        }
      };
      auto res = train(ec.link, PpoHyper{}, train_steps, seed, topt);
      save_checkpoint(train_out, res.learner);
      auto f = open_out(curve_out.empty() ? train_out + ".curve.csv" : curve_out);
      write_curve_csv(f, res.curve);
      return 0;
    }

    if (*evaluate) {
      auto cfg = eval_opts.build(evaluate);
      if (!eval_ckpt.empty()) cfg.checkpoint = eval_ckpt;
      if (!eval_dir.empty()) cfg.out_dir = eval_dir;
      if (!eval_policy.empty()) cfg.rl_policy = eval_policy;
      if (!eval_methods.empty()) {
        cfg.methods.clear();
        std::stringstream ss(eval_methods);
        std::string tok;
        while (std::getline(ss, tok, ',')) cfg.methods.push_back(parse_method(tok));
      } else if (!evaluate->count("--config")) {
        cfg.methods = {Method::Elg, Method::Rl};
      }
      const auto res = run_experiment(cfg);
      write_aggregate_csv(std::cout, res.rows);
      return finish(res, cfg);
    }

    if (*plot) {
      emit_plot_data(plot_csv, plot_prefix);
      return 0;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const ArgumentError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const DomainError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  }
  return 0;
}
