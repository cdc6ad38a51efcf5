#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "fhsync/hopplan.hpp"
#include "fhsync/waveform.hpp"

namespace fhsync {

struct SearchConfig {
  double dwell_s = 0.020;
  double shift_uplink_s = 0.100;
  double shift_downlink_s = 0.020;
  double threshold = 0.5;
  int uncertainty_region_cells = 3;
  double cell_s = 0.0005;
  // reference offset of cell 0
  double base_offset_s = 0.0;
  // calibrated post-filter noise power subtracted before thresholding
  double noise_floor = 0.0;
  double signal_level = 1.0;
  FilterConfig filter{};

  void validate() const {
    if (!(dwell_s > 0) || !(shift_uplink_s > 0) || !(shift_downlink_s > 0))
      throw ConfigError("search dwell and shift intervals must be positive");
    if (!(threshold > 0) || threshold > 1) throw ConfigError("search threshold must lie in (0, 1]");
    if (uncertainty_region_cells < 1) throw ConfigError("uncertainty region needs R >= 1");
    if (!(cell_s > 0)) throw ConfigError("cell width must be positive");
    if (!(signal_level > 0)) throw ConfigError("signal level must be positive");
  }
};

struct CoarseResult {
  bool detected = false;
  int detected_cell = -1;
  double z_max = 0.0;
  std::int64_t hops_consumed = 0;
  std::int64_t cells_tested = 0;
  double estimated_offset_s = 0.0;
  // threshold crossings turned down by the verifier
  int rejected_alarms = 0;
  // filled in by callers that know the true offset
  double residual_offset_s = std::numeric_limits<double>::quiet_NaN();
};

struct MatParams {
  int r_cells = 1;
  double p_d = 1.0;
  double t_ic_s = 0.0;
  double t_c_s = 0.0;
  double t_r_s = 0.0;
  double t_ac_s = 0.0;
};

// Post-filter noise power for a given input SNR (unit amplitude).
inline double calibrated_noise_floor(double snr_db, const LowpassFir& fir, double amplitude = 1.0) {
  const double sigma = noise_sigma_for(snr_db, amplitude);
  return 2.0 * sigma * sigma * fir.noise_gain();
}

inline double normalized_energy(double e, const SearchConfig& cfg) {
  return (e - cfg.noise_floor) / cfg.signal_level;
}

// Tests cells 0, 1, ..., R-1, 0, 1, ... one dwell each until a cell clears the
// threshold or the stream runs out. Rewinds are free.
// verify, when set, confirms a threshold crossing; a rejected cell costs its
// dwell and the sweep moves on.
inline CoarseResult serial_search(const SampleStream& received, const HopPlan& plan,
                                  const SearchConfig& cfg, const std::function<bool(int)>& verify = {}) {
  cfg.validate();
  const double fs = received.sample_rate_hz;
  const auto fir = LowpassFir::for_plan(plan, cfg.filter);
  const std::int64_t margin = fir.half_width();
  const std::int64_t dwell = exact_samples(cfg.dwell_s, fs, "dwell");
  const std::int64_t sph = plan.samples_per_hop();
  if (dwell % sph != 0) throw ConfigError("dwell must be a whole number of hops");
  const std::int64_t hops_per_dwell = dwell / sph;

  CoarseResult res;
  const auto n = static_cast<std::int64_t>(received.size());
  std::int64_t pos = margin;
  int cell = 0;
  while (pos + dwell + margin <= n) {
    const DehopReference ref{plan, cfg.base_offset_s + cell * cfg.cell_s};
    const auto win = received.slice(pos - margin, dwell + 2 * margin);
    const auto y = dehop_bandpass(win, ref, fir);
    const double e = energy(y, static_cast<double>(received.start_index() + pos) / fs, cfg.dwell_s);
    res.hops_consumed += hops_per_dwell;
    ++res.cells_tested;
    res.z_max = std::max(res.z_max, e);
    if (normalized_energy(e, cfg) >= cfg.threshold && verify && !verify(cell)) {
      ++res.rejected_alarms;
    } else if (normalized_energy(e, cfg) >= cfg.threshold) {
      res.detected = true;
      res.detected_cell = cell;
      res.estimated_offset_s = ref.time_offset_s;
      return res;
    }
    pos += dwell;
    cell = (cell + 1) % cfg.uncertainty_region_cells;
  }
  return res;
}

inline double mat_analytic(const MatParams& p) {
  if (!(p.p_d > 0) || p.p_d > 1) throw DomainError("mat_analytic needs 0 < P_D <= 1");
  if (p.r_cells < 1) throw DomainError("mat_analytic needs R >= 1");
  if (p.t_ic_s < 0 || p.t_c_s < 0 || p.t_r_s < 0 || p.t_ac_s < 0)
    throw DomainError("mat_analytic times must be >= 0");
  const double pd = p.p_d;
  return (p.r_cells - 1) * ((2.0 - pd) / (2.0 * pd)) * p.t_ic_s +
         ((1.0 - pd) / pd) * (p.t_c_s + p.t_r_s) + p.t_ac_s;
}

// One received uplink stream for a search whose true offset (relative to the
// plan start) is true_offset_s. Covers `cells` dwells plus filter margins.
struct SearchStreamSpec {
  HopPlan plan;
  double true_offset_s = 0.0;
  double snr_db = 100.0;
  std::uint64_t noise_seed = 0;
  std::int64_t cells = 1;
  bool noisy = true;
};

inline SampleStream make_search_stream(const SearchStreamSpec& spec, const SearchConfig& cfg) {
  const auto& plan = spec.plan;
  const double fs = plan.sample_rate_hz();
  const std::int64_t margin = LowpassFir::for_plan(plan, cfg.filter).half_width();
  const std::int64_t dwell = exact_samples(cfg.dwell_s, fs, "dwell");
  // start late enough that every cell's reference time is non-negative
  const double max_ref = cfg.base_offset_s + cfg.uncertainty_region_cells * cfg.cell_s;
  const std::int64_t start = static_cast<std::int64_t>(std::ceil(std::max(spec.true_offset_s, max_ref) * fs)) +
                             plan.samples_per_hop();
  const std::int64_t n = spec.cells * dwell + 2 * margin;
  const std::int64_t tx_first = start - std::llround(spec.true_offset_s * fs);
  if (tx_first + n > plan.size() * plan.samples_per_hop())
    throw ArgumentError("hop plan too short for the requested search stream");
  SampleStream s;
  s.sample_rate_hz = fs;
  s.t0_s = static_cast<double>(start) / fs;
  s.samples.resize(static_cast<std::size_t>(n));
  const NoiseSource noise{spec.noise_seed, spec.noisy ? noise_sigma_for(spec.snr_db, 1.0) : 0.0};
  const double sph = static_cast<double>(plan.samples_per_hop());
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t k = tx_first + i;  // transmit-time sample
    const auto j = static_cast<std::int64_t>(std::floor(static_cast<double>(k) / sph));
    const cplx v = std::polar(1.0, 2.0 * kPi * plan.center_hz(j) * static_cast<double>(k) / fs);
    s.samples[static_cast<std::size_t>(i)] = v + noise.at(start + i);
  }
  return s;
}

inline std::int64_t hops_for(double t_s, const SystemConfig& sys) {
  return static_cast<std::int64_t>(std::ceil(t_s / sys.hop_duration_s - 1e-9));
}

inline double empirical_p_d(double snr_db, const SearchConfig& cfg, int trials, std::uint64_t seed,
                            const SystemConfig& sys = {}, bool noisy = true) {
  if (trials < 1) throw ArgumentError("empirical_p_d needs trials >= 1");
  cfg.validate();
  SearchConfig one = cfg;
  one.uncertainty_region_cells = 1;
  one.base_offset_s = 0.0;
  int hits = 0;
  for (int t = 0; t < trials; ++t) {
    const std::uint64_t ts = hash_values(seed, static_cast<std::uint64_t>(t));
    const auto plan = sys.plan({ts, Link::Uplink}, {}, hops_for(cfg.dwell_s, sys) + 8);
    const auto s = make_search_stream({plan, 0.0, snr_db, splitmix64(ts), 1, noisy}, one);
    const auto fir = LowpassFir::for_plan(plan, cfg.filter);
    const auto y = dehop_bandpass(s, {plan, 0.0}, fir);
    const double e = energy(y, static_cast<double>(s.start_index() + fir.half_width()) / s.sample_rate_hz,
                            cfg.dwell_s);
    hits += normalized_energy(e, cfg) >= cfg.threshold;
  }
  return static_cast<double>(hits) / trials;
}

struct SearchTrial {
  CoarseResult result;
  double true_offset_s = 0.0;
  // detected the cell nearest the true offset
  bool correct = false;
};

// One serial search against a stream whose true offset is true_offset_s; the
// stream holds max_passes sweeps of the R cells. ideal_verify rejects every
// crossing away from the true cell.
inline SearchTrial run_search_trial(const SearchConfig& cfg, double true_offset_s, double snr_db,
                                    std::uint64_t seed, std::int64_t max_passes,
                                    const SystemConfig& sys = {}, bool noisy = true, bool ideal_verify = false) {
  const std::int64_t cells = max_passes * cfg.uncertainty_region_cells;
  const double span = std::max(true_offset_s, cfg.base_offset_s + cfg.uncertainty_region_cells * cfg.cell_s);
  const auto plan = sys.plan({seed, Link::Uplink}, {}, hops_for(cells * cfg.dwell_s + span, sys) + 8);
  const auto s = make_search_stream({plan, true_offset_s, snr_db, splitmix64(seed), cells, noisy}, cfg);
  SearchTrial t;
  t.true_offset_s = true_offset_s;
  auto is_true_cell = [&](int cell) {
    return std::abs(true_offset_s - (cfg.base_offset_s + cell * cfg.cell_s)) <= cfg.cell_s / 2 + 1e-12;
  };
  t.result = ideal_verify ? serial_search(s, plan, cfg, is_true_cell) : serial_search(s, plan, cfg);
  if (t.result.detected) {
    t.result.residual_offset_s = true_offset_s - t.result.estimated_offset_s;
    t.correct = std::abs(t.result.residual_offset_s) <= cfg.cell_s / 2 + 1e-12;
  }
  return t;
}

}  // namespace fhsync
