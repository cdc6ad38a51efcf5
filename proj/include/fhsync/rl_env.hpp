#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "fhsync/fine_baseline.hpp"
#include "fhsync/link.hpp"

namespace fhsync {

inline constexpr int kStateSamples = 50;

struct EnvState {
  std::vector<double> samples_sq;  // |z|^2, one per sample period
};

enum class SyncAction : int { EpsMinus = 0, EpsPlus = 1, DeltaMinus = 2, DeltaPlus = 3, Hold = 4 };
inline constexpr int kNumActions = 5;

inline const char* action_name(SyncAction a) {
  switch (a) {
    case SyncAction::EpsMinus: return "eps-";
    case SyncAction::EpsPlus: return "eps+";
    case SyncAction::DeltaMinus: return "delta-";
    case SyncAction::DeltaPlus: return "delta+";
    case SyncAction::Hold: return "hold";
  }
  return "?";
}

struct EpisodeConfig {
  double shift_interval_s = 20e-6;
  int max_steps = 200;
  double snr_db = 100.0;
  std::uint64_t seed = 0;
  bool noisy = true;
  std::optional<OffsetPair> initial{};  // injected post-coarse residuals
  double tol = 0.02;
  // sync is judged on the observed windows of the last few hops
  int sync_window_hops = 4;
};

struct StepInfo {
  OffsetPair offsets{};
  double tau_hat_s = 0.0;
  double tau_true_s = 0.0;
};

struct StepOutcome {
  EnvState next_state;
  double reward = 0.0;
  bool terminated = false;
  bool synchronized = false;  // terminated because of sync rather than the cap
  StepInfo info{};
};

struct TraceRow {
  int step = 0;
  SyncAction action = SyncAction::Hold;
  double eps_s = 0.0;
  double delta_s = 0.0;
  double reward = 0.0;
  bool terminated = false;
};

inline void write_trace_csv(std::ostream& os, const std::vector<TraceRow>& rows) {
  os << "step,action,eps_s,delta_s,reward,terminated\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%s,%.9g,%.9g,%.17g,%d\n", r.step, action_name(r.action), r.eps_s, r.delta_s,
                  r.reward, r.terminated ? 1 : 0);
    os << buf;
  }
}

// Fine-acquisition MDP over the two-link simulator. Observations are
// consecutive half-hop windows of the ground dehopper output.
class SyncEnvironment {
 public:
  explicit SyncEnvironment(LinkConfig cfg = {}) : sim_(std::move(cfg)) {}

  LinkSimulator& simulator() { return sim_; }
  const LinkSimulator& simulator() const { return sim_; }

  EnvState reset(const EpisodeConfig& cfg) {
    exact_samples(cfg.shift_interval_s, sim_.sample_rate(), "shift interval");
    if (cfg.max_steps < 1) throw ConfigError("max_steps must be >= 1");
    if (cfg.sync_window_hops < 1) throw ConfigError("sync_window_hops must be >= 1");
    if (sim_.samples_per_hop() != 2 * kStateSamples) throw ConfigError("state window must be half a hop");
    cfg_ = cfg;
    LinkEpisode ep;
    ep.seed = cfg.seed;
    ep.snr_db = cfg.snr_db;
    ep.noisy = cfg.noisy;
    ep.injected = cfg.initial;
    coarse_ = sim_.reset(ep);
    hop_ = sim_.current_hop();
    half_ = 0;
    steps_ = 0;
    active_ = true;
    synced_ = false;
    recent_.clear();
    state_ = observe(&last_reward_);
    remember(last_reward_);
    return state_;
  }

  StepOutcome step(SyncAction a) {
    if (!active_) throw ContractError("step() after the episode terminated");
    const double I = cfg_.shift_interval_s;
    switch (a) {
      case SyncAction::EpsMinus: sim_.shift_epsilon(-I); break;
      case SyncAction::EpsPlus: sim_.shift_epsilon(I); break;
      case SyncAction::DeltaMinus: sim_.shift_delta(-I); break;
      case SyncAction::DeltaPlus: sim_.shift_delta(I); break;
      case SyncAction::Hold: break;
    }
    // next half-hop window of the live stream
    sim_.advance(kStateSamples);
    if (++half_ == 2) {
      half_ = 0;
      ++hop_;
    }
    ++steps_;
    StepOutcome out;
    state_ = observe(&out.reward);
    last_reward_ = out.reward;
    remember(out.reward);
    out.next_state = state_;
    synced_ = is_synchronized();
    out.synchronized = synced_;
    out.terminated = synced_ || steps_ >= cfg_.max_steps;
    active_ = !out.terminated;
    out.info = info();
    return out;
  }

  // Z_M' and the early/late energies over the windows observed in the last
  // sync_window_hops hops, against the calibrated aligned level. Needs at
  // least one early and one late window.
  bool is_synchronized() const {
    const auto m = recent_measurement();
    if (m.dwell_s <= 0) return false;
    return energy_at_max(m, m.z_m, cfg_.tol) && elg_balanced(m, cfg_.tol);
  }

  EnergyMeasurement recent_measurement() const {
    EnergyMeasurement m;
    m.z_m = sim_.aligned_level();
    int ne = 0, nl = 0;
    for (const auto& [half, e] : recent_) {
      (half == 0 ? m.z_e : m.z_l) += e;
      (half == 0 ? ne : nl) += 1;
    }
    if (ne == 0 || nl == 0) return m;
    m.z_m_prime = (m.z_e + m.z_l) / (ne + nl);
    m.z_e /= ne;
    m.z_l /= nl;
    m.dwell_s = 0.5 * (ne + nl) * sim_.hop_duration_s();
    return m;
  }

  StepInfo info() const { return {sim_.offsets(), sim_.tau_hat_s(), sim_.tau_true_s()}; }
  const EnvState& state() const { return state_; }
  double last_reward() const { return last_reward_; }
  int steps() const { return steps_; }
  bool active() const { return active_; }
  bool synchronized() const { return synced_; }
  const CoarseSummary& coarse() const { return coarse_; }
  const EpisodeConfig& episode() const { return cfg_; }
  // observation windows are half a hop; the reset observation counts too
  double fine_hops() const { return 0.5 * (steps_ + 1); }

  // The current observation window as a dehopped stream.
  SampleStream window_stream() const { return sim_.ground_window(hop_, half_ * kStateSamples, kStateSamples); }

 private:
  void remember(double e) {
    recent_.emplace_back(half_, e);
    while (static_cast<int>(recent_.size()) > 2 * cfg_.sync_window_hops) recent_.pop_front();
  }

  EnvState observe(double* reward) const {
    const auto s = window_stream();
    EnvState st;
    st.samples_sq.resize(kStateSamples);
    for (int i = 0; i < kStateSamples; ++i) st.samples_sq[static_cast<std::size_t>(i)] = std::norm(s.samples[static_cast<std::size_t>(i)]);
    *reward = energy(s, s.t0_s, kStateSamples / s.sample_rate_hz);
    return st;
  }

  LinkSimulator sim_;
  EpisodeConfig cfg_{};
  CoarseSummary coarse_{};
  std::int64_t hop_ = 0;
  int half_ = 0;
  int steps_ = 0;
  bool active_ = false;
  bool synced_ = false;
  EnvState state_{};
  std::deque<std::pair<int, double>> recent_;
  double last_reward_ = 0.0;
};

// Noise-free mean reward at fixed offsets, averaged over `hops` consecutive
// hops and over `thetas` evenly spaced DRT staggers in [0, T_h).
inline double mean_reward_surface(LinkSimulator& sim, const OffsetPair& off, int hops, int thetas) {
  LinkEpisode ep;
  ep.seed = 11;
  ep.noisy = false;
  ep.injected = off;
  sim.reset(ep);
  const std::int64_t H = sim.samples_per_hop();
  const std::int64_t first = sim.current_hop();
  const std::int64_t saved = sim.stagger_samples();
  double acc = 0.0;
  for (int t = 0; t < thetas; ++t) {
    sim.set_stagger_samples(H * t / thetas);
    const auto s = sim.ground_window(first, 0, H * hops);
    acc += energy(s, s.t0_s, static_cast<double>(H * hops) / sim.sample_rate());
  }
  sim.set_stagger_samples(saved);
  return acc / thetas;
}

}  // namespace fhsync
