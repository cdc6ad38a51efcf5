#pragma once

#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fhsync/fine_baseline.hpp"
#include "fhsync/metrics.hpp"
#include "fhsync/ppo.hpp"
#include "fhsync/rl_env.hpp"

namespace fhsync {

inline constexpr const char* kVersionTag = "fhsync-0.1.0";

struct ExperimentConfig {
  std::vector<double> snr_grid{0, 5, 10, 15, 20};
  int trials = 500;
  std::vector<Method> methods{Method::Elg, Method::MaxEnergyElg};
  std::uint64_t seed = 1;
  bool noisy = true;
  LinkConfig link{};
  FineConfig fine{};
  // enough 20 us steps to walk back a half-hop coarse residual
  int baseline_max_steps = 30;
  int rl_max_steps = 200;
  int rl_sync_window_hops = 4;
  double rl_shift_interval_s = 20e-6;
  // "sample" draws from the policy (no exploration), "greedy" takes argmax
  std::string rl_policy = "sample";
  std::string checkpoint;
  std::string out_dir = ".";
  // exit status 3 when any (snr, method) point fails more often than this;
  // 1 disables the check
  double max_failure_rate = 1.0;

  void validate() const {
    if (trials < 1) throw ConfigError("trials must be >= 1");
    if (snr_grid.empty()) throw ConfigError("snr grid is empty");
    if (methods.empty()) throw ConfigError("no methods selected");
    if (baseline_max_steps < 1 || rl_max_steps < 1 || rl_sync_window_hops < 1)
      throw ConfigError("step limits must be >= 1");
    if (!(max_failure_rate >= 0 && max_failure_rate <= 1)) throw ConfigError("max_failure_rate must lie in [0,1]");
    link.validate();
    fine.validate(link.sys.sample_rate_hz);
    exact_samples(rl_shift_interval_s, link.sys.sample_rate_hz, "rl shift interval");
    if (rl_policy != "sample" && rl_policy != "greedy") throw ConfigError("rl.policy must be sample or greedy");
  }
};

using json = nlohmann::ordered_json;

inline json to_json(const ExperimentConfig& c) {
  json j;
  j["snr_grid"] = c.snr_grid;
  j["trials"] = c.trials;
  std::vector<std::string> ms;
  for (auto m : c.methods) ms.emplace_back(method_name(m));
  j["methods"] = ms;
  j["seed"] = c.seed;
  j["noisy"] = c.noisy;
  j["channels.m"] = c.link.sys.m;
  j["hop.duration_s"] = c.link.sys.hop_duration_s;
  j["sample_rate_hz"] = c.link.sys.sample_rate_hz;
  j["filter.taps"] = c.link.sys.filter.taps;
  j["key.uplink"] = c.link.key_uplink;
  j["key.downlink"] = c.link.key_downlink;
  j["tod.count"] = c.link.tod_count;
  j["delay.uplink_range_s"] = c.link.uplink_delay_range_s;
  j["delay.downlink_range_s"] = c.link.downlink_delay_range_s;
  j["drift_rate"] = c.link.drift_rate;
  j["drt.process_delay_s"] = c.link.tau_h_s;
  j["drt.rehop_phase_s"] = c.link.rehop_phase_s;
  j["search.dwell_s"] = c.link.search.dwell_s;
  j["search.threshold"] = c.link.search.threshold;
  j["search.cell_s"] = c.link.search.cell_s;
  j["search.max_passes"] = c.link.coarse_max_passes;
  j["fine.step_s"] = c.fine.step_s;
  j["fine.dwell_uplink_s"] = c.fine.dwell_uplink_s;
  j["fine.dwell_downlink_s"] = c.fine.dwell_downlink_s;
  j["fine.tol"] = c.fine.tol;
  j["baseline.max_steps"] = c.baseline_max_steps;
  j["rl.max_steps"] = c.rl_max_steps;
  j["rl.sync_window_hops"] = c.rl_sync_window_hops;
  j["rl.shift_interval_s"] = c.rl_shift_interval_s;
  j["rl.policy"] = c.rl_policy;
  j["checkpoint"] = c.checkpoint;
  j["out_dir"] = c.out_dir;
  j["max_failure_rate"] = c.max_failure_rate;
  return j;
}

// Keys absent from j keep their current value; unknown keys are errors.
inline void apply_json(ExperimentConfig& c, const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& k = it.key();
      const json& v = it.value();
      if (k == "snr_grid") c.snr_grid = v.get<std::vector<double>>();
      else if (k == "trials") c.trials = v.get<int>();
      else if (k == "methods") {
        c.methods.clear();
        for (const auto& s : v) c.methods.push_back(parse_method(s.get<std::string>()));
      } else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "noisy") c.noisy = v.get<bool>();
      else if (k == "channels.m") c.link.sys.m = v.get<int>();
      else if (k == "hop.duration_s") c.link.sys.hop_duration_s = v.get<double>();
      else if (k == "sample_rate_hz") c.link.sys.sample_rate_hz = v.get<double>();
      else if (k == "filter.taps") c.link.sys.filter.taps = v.get<int>();
      else if (k == "key.uplink") c.link.key_uplink = v.get<std::uint64_t>();
      else if (k == "key.downlink") c.link.key_downlink = v.get<std::uint64_t>();
      else if (k == "tod.count") c.link.tod_count = v.get<std::uint64_t>();
      else if (k == "delay.uplink_range_s") c.link.uplink_delay_range_s = v.get<std::array<double, 2>>();
      else if (k == "delay.downlink_range_s") c.link.downlink_delay_range_s = v.get<std::array<double, 2>>();
      else if (k == "drift_rate") c.link.drift_rate = v.get<double>();
      else if (k == "drt.process_delay_s") c.link.tau_h_s = v.get<double>();
      else if (k == "drt.rehop_phase_s") c.link.rehop_phase_s = v.get<double>();
      else if (k == "search.dwell_s") c.link.search.dwell_s = v.get<double>();
      else if (k == "search.threshold") c.link.search.threshold = v.get<double>();
      else if (k == "search.cell_s") c.link.search.cell_s = v.get<double>();
      else if (k == "search.max_passes") c.link.coarse_max_passes = v.get<int>();
      else if (k == "fine.step_s") c.fine.step_s = v.get<double>();
      else if (k == "fine.dwell_uplink_s") c.fine.dwell_uplink_s = v.get<double>();
      else if (k == "fine.dwell_downlink_s") c.fine.dwell_downlink_s = v.get<double>();
      else if (k == "fine.tol") c.fine.tol = v.get<double>();
      else if (k == "baseline.max_steps") c.baseline_max_steps = v.get<int>();
      else if (k == "rl.max_steps") c.rl_max_steps = v.get<int>();
      else if (k == "rl.sync_window_hops") c.rl_sync_window_hops = v.get<int>();
      else if (k == "rl.shift_interval_s") c.rl_shift_interval_s = v.get<double>();
      else if (k == "rl.policy") c.rl_policy = v.get<std::string>();
      else if (k == "checkpoint") c.checkpoint = v.get<std::string>();
      else if (k == "out_dir") c.out_dir = v.get<std::string>();
      else if (k == "max_failure_rate") c.max_failure_rate = v.get<double>();
      else throw ConfigError("unknown config key '" + k + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config value has the wrong type: ") + e.what());
  }
}

inline json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open " + path);
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError("bad JSON in " + path + ": " + e.what());
  }
}

// Accepts a plain config or a manifest (whose "config" member is used).
inline ExperimentConfig load_config(const std::string& path) {
  const auto j = read_json_file(path);
  ExperimentConfig c;
  apply_json(c, j.contains("config") && j.contains("version") ? j.at("config") : j);
  return c;
}

inline std::uint64_t double_bits(double v) {
  std::uint64_t b;
  std::memcpy(&b, &v, sizeof b);
  return b;
}

inline std::uint64_t trial_seed(std::uint64_t root, double snr_db, Method m, int trial) {
  return hash_values(root, double_bits(snr_db), static_cast<std::uint64_t>(m), static_cast<std::uint64_t>(trial));
}

inline std::uint64_t fnv1a_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[4096];
  while (f.read(buf, sizeof buf) || f.gcount() > 0) {
    for (std::streamsize i = 0; i < f.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

inline TimingEstimate timing_of(const LinkSimulator& sim) {
  return {sim.tau_hat_s(), sim.tau_true_s(), sim.hop_duration_s()};
}

// Baselines: the uplink first (ELG, or max-energy hill climbing against the
// aligned level), each measured at the DRT and reported to the Tx, then ELG
// on the downlink at the ground.
inline TrialRecord run_baseline_trial(LinkSimulator& sim, const ExperimentConfig& cfg, double snr_db, Method m,
                                      int trial) {
  TrialRecord r;
  r.snr_db = snr_db;
  r.method = m;
  r.trial = trial;
  LinkEpisode ep;
  ep.seed = trial_seed(cfg.seed, snr_db, m, trial);
  ep.snr_db = snr_db;
  ep.noisy = cfg.noisy;
  try {
    sim.reset(ep);
  } catch (const EpisodeSetupError&) {
    r.setup_failed = true;
    return r;
  }
  r.coarse_hops = static_cast<double>(sim.coarse().hops());
  const auto up = m == Method::Elg
                      ? elg_fine_acquire(sim, cfg.fine, cfg.baseline_max_steps, Link::Uplink)
                      : max_energy_fine_acquire(sim, cfg.fine, sim.aligned_level(Link::Uplink), cfg.baseline_max_steps);
  const auto dn = elg_fine_acquire(sim, cfg.fine, cfg.baseline_max_steps, Link::Downlink);
  r.fine_downlink_hops = dn.hops;
  r.fine_uplink_hops = up.hops;
  r.hops_total = r.coarse_hops + r.fine_uplink_hops + r.fine_downlink_hops;
  r.converged = dn.converged && up.converged;
  r.timing = timing_of(sim);
  return r;
}

// Policy rollout. Sampling is the default: a memoryless policy sees the same
// window for different offsets, and argmax then tends to lock into two-step
// cycles. The fine stage adjusts both links jointly; each
// half-hop observation is booked to the link its action touched (the initial
// observation and holds go to the downlink).
inline TrialRecord run_rl_trial(SyncEnvironment& env, Network& actor, const ExperimentConfig& cfg, double snr_db,
                                int trial) {
  TrialRecord r;
  r.snr_db = snr_db;
  r.method = Method::Rl;
  r.trial = trial;
  EpisodeConfig ec;
  ec.seed = trial_seed(cfg.seed, snr_db, Method::Rl, trial);
  ec.snr_db = snr_db;
  ec.noisy = cfg.noisy;
  ec.max_steps = cfg.rl_max_steps;
  ec.tol = cfg.fine.tol;
  ec.sync_window_hops = cfg.rl_sync_window_hops;
  ec.shift_interval_s = cfg.rl_shift_interval_s;
  EnvState s;
  try {
    s = env.reset(ec);
  } catch (const EpisodeSetupError&) {
    r.setup_failed = true;
    return r;
  }
  r.coarse_hops = static_cast<double>(env.coarse().hops());
  const bool greedy = cfg.rl_policy == "greedy";
  Rng rng(hash_values(ec.seed, 0xac7ULL));
  double up = 0, dn = 0.5;
  StepOutcome o;
  do {
    const auto a = greedy ? greedy_action(actor, s) : select_action(actor, s, 0.0, rng).action;
    (a == SyncAction::EpsMinus || a == SyncAction::EpsPlus ? up : dn) += 0.5;
    o = env.step(a);
    s = o.next_state;
  } while (!o.terminated);
  r.fine_uplink_hops = up;
  r.fine_downlink_hops = dn;
  r.hops_total = r.coarse_hops + up + dn;
  r.converged = o.synchronized;
  r.timing = {o.info.tau_hat_s, o.info.tau_true_s, env.simulator().hop_duration_s()};
  return r;
}

struct ExperimentResult {
  std::vector<TrialRecord> records;
  std::vector<AggregateRow> rows;
  // worst non-convergence fraction over all (snr, method) points
  double worst_failure_rate = 0.0;
  double wall_clock_s = 0.0;
};

// Trials run in (snr, method, trial) order so the output does not depend on
// scheduling.
inline ExperimentResult run_trials(const ExperimentConfig& cfg) {
  cfg.validate();
  bool want_rl = false;
  for (auto m : cfg.methods) want_rl |= m == Method::Rl;
  std::optional<PpoLearner> learner;
  if (want_rl) {
    if (cfg.checkpoint.empty()) throw ConfigError("the rl method needs a checkpoint");
    learner = load_checkpoint(cfg.checkpoint);
  }
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentResult res;
  LinkSimulator sim(cfg.link);
  std::optional<SyncEnvironment> env;
  if (want_rl) env.emplace(cfg.link);
  for (double snr : cfg.snr_grid)
    for (auto m : cfg.methods)
      for (int t = 0; t < cfg.trials; ++t)
        res.records.push_back(m == Method::Rl ? run_rl_trial(*env, learner->actor, cfg, snr, t)
                                              : run_baseline_trial(sim, cfg, snr, m, t));
  res.rows = aggregate(res.records);
  for (const auto& r : res.rows) res.worst_failure_rate = std::max(res.worst_failure_rate, 1.0 - r.convergence_rate);
  res.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

inline void write_trials_csv(std::ostream& os, const std::vector<TrialRecord>& recs) {
  os << "snr_db,method,trial,setup_failed,converged,hops_total,coarse_hops,fine_uplink_hops,fine_downlink_hops,"
        "tau_hat_s,tau_true_s\n";
  for (const auto& r : recs)
    os << format_double(r.snr_db) << ',' << method_name(r.method) << ',' << r.trial << ',' << r.setup_failed << ','
       << r.converged << ',' << format_double(r.hops_total) << ',' << format_double(r.coarse_hops) << ','
       << format_double(r.fine_uplink_hops) << ',' << format_double(r.fine_downlink_hops) << ','
       << format_double(r.timing.tau_hat_s) << ',' << format_double(r.timing.tau_true_s) << '\n';
}

inline void write_baseline_csv(std::ostream& os, const std::vector<AggregateRow>& rows) {
  os << "snr_db,method,avg_hops,mse\n";
  for (const auto& r : rows)
    os << format_double(r.snr_db) << ',' << method_name(r.method) << ',' << format_double(r.avg_hops) << ','
       << format_double(r.mse) << '\n';
}

inline json make_manifest(const ExperimentConfig& cfg, const ExperimentResult& res) {
  json m;
  m["version"] = kVersionTag;
  m["config"] = to_json(cfg);
  m["root_seed"] = cfg.seed;
  m["seed_rule"] = "trial_seed = hash(root_seed, snr_db bits, method, trial)";
  if (!cfg.checkpoint.empty()) {
    std::ostringstream h;
    h << std::hex << std::setw(16) << std::setfill('0') << fnv1a_file(cfg.checkpoint);
    m["checkpoint_fnv1a"] = h.str();
  }
  json counts = json::array();
  for (const auto& r : res.rows)
    counts.push_back({{"snr_db", r.snr_db}, {"method", method_name(r.method)}, {"records", r.trials}});
  m["records"] = counts;
  m["wall_clock_s"] = res.wall_clock_s;
  return m;
}

inline std::ofstream open_out(const std::filesystem::path& p) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw ConfigError("cannot write " + p.string());
  return f;
}

// Writes aggregate.csv, trials.csv and manifest.json into cfg.out_dir.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  auto res = run_trials(cfg);
  const std::filesystem::path dir(cfg.out_dir);
  std::filesystem::create_directories(dir);
  {
    auto f = open_out(dir / "aggregate.csv");
    write_aggregate_csv(f, res.rows);
  }
  {
    auto f = open_out(dir / "trials.csv");
    write_trials_csv(f, res.records);
  }
  {
    auto f = open_out(dir / "manifest.json");
    f << make_manifest(cfg, res).dump(2) << '\n';
  }
  return res;
}

// Plot data: one whitespace-separated table per figure, rows by SNR and one
// column per method present in the aggregate.
struct PlotTable {
  std::vector<std::string> columns;  // method names
  std::vector<double> snr;
  std::vector<std::vector<double>> values;  // [row][column]
};

inline PlotTable plot_table(const std::vector<AggregateRow>& rows, double AggregateRow::*field) {
  PlotTable t;
  std::vector<Method> present;
  for (auto m : {Method::Elg, Method::MaxEnergyElg, Method::Rl})
    for (const auto& r : rows)
      if (r.method == m) {
        present.push_back(m);
        t.columns.emplace_back(method_name(m));
        break;
      }
  std::map<double, std::vector<double>> by_snr;
  for (const auto& r : rows) {
    auto it = by_snr.try_emplace(r.snr_db, present.size(), std::numeric_limits<double>::quiet_NaN()).first;
    const auto k = std::find(present.begin(), present.end(), r.method) - present.begin();
    it->second[static_cast<std::size_t>(k)] = r.*field;
  }
  for (auto& [snr, v] : by_snr) {
    t.snr.push_back(snr);
    t.values.push_back(v);
  }
  return t;
}

inline void write_plot_table(std::ostream& os, const PlotTable& t) {
  os << "# snr_db";
  for (const auto& c : t.columns) os << ' ' << c;
  os << '\n';
  for (std::size_t i = 0; i < t.snr.size(); ++i) {
    os << format_double(t.snr[i]);
    for (double v : t.values[i]) os << ' ' << format_double(v);
    os << '\n';
  }
}

inline PlotTable read_plot_table(std::istream& is) {
  PlotTable t;
  std::string line;
  int no = 1;
  if (!std::getline(is, line) || line.rfind("# snr_db", 0) != 0) throw ParseError("line 1: expected '# snr_db' header");
  {
    std::istringstream hs(line.substr(8));
    std::string c;
    while (hs >> c) t.columns.push_back(c);
  }
  while (std::getline(is, line)) {
    ++no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tok;
    std::vector<double> v;
    while (ls >> tok) v.push_back(parse_number(tok, no));
    if (v.size() != t.columns.size() + 1) throw ParseError("line " + std::to_string(no) + ": wrong column count");
    t.snr.push_back(v[0]);
    t.values.emplace_back(v.begin() + 1, v.end());
  }
  return t;
}

// Reads an aggregate CSV and writes <prefix>hops.dat and <prefix>mse.dat.
inline void emit_plot_data(const std::string& aggregate_csv, const std::string& out_prefix) {
  std::ifstream f(aggregate_csv);
  if (!f) throw ConfigError("cannot open " + aggregate_csv);
  const auto rows = read_aggregate_csv(f);
  {
    auto o = open_out(out_prefix + "hops.dat");
    write_plot_table(o, plot_table(rows, &AggregateRow::avg_hops));
  }
  {
    auto o = open_out(out_prefix + "mse.dat");
    write_plot_table(o, plot_table(rows, &AggregateRow::mse));
  }
}

}  // namespace fhsync
