#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "fhsync/coarse.hpp"
#include "fhsync/hopplan.hpp"
#include "fhsync/waveform.hpp"

namespace fhsync {

// Offsets are "signal late versus reference" on each link: epsilon at the
// DRT dehopper, delta at the ground dehopper.
struct OffsetPair {
  double epsilon_s = 0.0;
  double delta_s = 0.0;
};

struct EnergyMeasurement {
  double z_m = 0.0;  // aligned reference level
  double z_m_prime = 0.0;
  double z_e = 0.0;
  double z_l = 0.0;
  double dwell_s = 0.0;
};

struct LinkConfig {
  SystemConfig sys{};
  std::uint64_t key_uplink = 0x5550;
  std::uint64_t key_downlink = 0x444e;
  std::uint64_t tod_count = 0;
  std::array<double, 2> uplink_delay_range_s{0.05980, 0.06065};
  std::array<double, 2> downlink_delay_range_s{0.05935, 0.06025};
  // DRT process delay, and the phase of the DRT's downlink rehop grid
  // against its uplink dehop grid. Their sum staggers the two hop grids.
  double tau_h_s = 0.0;
  double rehop_phase_s = 250e-6;
  double drift_rate = 0.0;
  // received amplitude relative to the nominal unit level; 0 = noise only
  double amplitude = 1.0;
  SearchConfig search{};
  // passes over the uncertainty region before coarse acquisition gives up
  int coarse_max_passes = 8;

  void validate() const {
    if (sys.m < 2) throw ConfigError("channels.m must be >= 2");
    sys.samples_per_hop();
    if (uplink_delay_range_s[0] < 0 || uplink_delay_range_s[1] < uplink_delay_range_s[0] ||
        downlink_delay_range_s[0] < 0 || downlink_delay_range_s[1] < downlink_delay_range_s[0])
      throw ConfigError("delay ranges must be ordered and non-negative");
    if (tau_h_s < 0 || rehop_phase_s < 0) throw ConfigError("tau_h and rehop_phase must be >= 0");
    if (!(amplitude >= 0)) throw ConfigError("amplitude must be >= 0");
    if (coarse_max_passes < 1) throw ConfigError("coarse_max_passes must be >= 1");
    search.validate();
  }

  int cells_for(const std::array<double, 2>& range) const {
    return static_cast<int>(std::floor((range[1] - range[0]) / search.cell_s + 1e-9)) + 2;
  }
};

struct CoarseSummary {
  CoarseResult uplink;
  CoarseResult downlink;
  double tau_u_s = 0.0;
  double tau_d_s = 0.0;
  std::int64_t hops() const { return uplink.hops_consumed + downlink.hops_consumed; }
};

struct LinkEpisode {
  std::uint64_t seed = 0;
  double snr_db = 100.0;
  bool noisy = true;
  // skip coarse acquisition and start from these residuals
  std::optional<OffsetPair> injected{};
};

// Two-link DRT simulator in the satellite time frame. The fine stage re-synthesises
// only the windows being measured, so offsets may change between windows.
class LinkSimulator {
 public:
  explicit LinkSimulator(LinkConfig cfg = {}) : cfg_(std::move(cfg)) {
    cfg_.validate();
    fs_ = cfg_.sys.sample_rate_hz;
    H_ = cfg_.sys.samples_per_hop();
    const std::int64_t huge = std::int64_t{1} << 40;
    up_ = cfg_.sys.plan({cfg_.key_uplink, Link::Uplink}, {cfg_.tod_count, 0}, huge);
    dn_ = cfg_.sys.plan({cfg_.key_downlink, Link::Downlink}, {cfg_.tod_count, 0}, huge);
    fir_ = LowpassFir::for_plan(up_, cfg_.sys.filter);
    c_ = fir_.half_width();
    const auto& h = fir_.taps();
    std::vector<double> hh(2 * h.size() - 1, 0.0);
    for (std::size_t i = 0; i < h.size(); ++i)
      for (std::size_t j = 0; j < h.size(); ++j) hh[i + j] += h[i] * h[j];
    gain_hh_ = 0;
    for (double v : hh) gain_hh_ += v * v;
    theta_ = std::llround((cfg_.tau_h_s + cfg_.rehop_phase_s) * fs_) % H_;
  }

  const LinkConfig& config() const { return cfg_; }
  const HopPlan& uplink_plan() const { return up_; }
  const HopPlan& downlink_plan() const { return dn_; }
  const LowpassFir& filter() const { return fir_; }
  double sample_rate() const { return fs_; }
  std::int64_t samples_per_hop() const { return H_; }
  double hop_duration_s() const { return static_cast<double>(H_) / fs_; }

  // Starts an episode: draws delays, runs both serial searches (unless
  // residuals are injected) and parks the ground clock after the search.
  CoarseSummary reset(const LinkEpisode& ep) {
    ep_ = ep;
    Rng rng(hash_values(ep.seed, 0xde1a7ULL));
    const double sigma = ep.noisy ? noise_sigma_for(ep.snr_db, 1.0) : 0.0;
    noise_up_ = {hash_values(ep.seed, 1), sigma};
    noise_dn_ = {hash_values(ep.seed, 2), sigma};
    noise_floor_in_ = 2.0 * sigma * sigma;
    coarse_ = {};
    coarse_.tau_u_s = rng.uniform(cfg_.uplink_delay_range_s[0], cfg_.uplink_delay_range_s[1]);
    coarse_.tau_d_s = rng.uniform(cfg_.downlink_delay_range_s[0], cfg_.downlink_delay_range_s[1]);
    if (ep.injected) {
      off_ = *ep.injected;
      tau_hat_s_ = coarse_.tau_u_s - off_.epsilon_s;
    } else {
      coarse_.uplink = search_link(up_, coarse_.tau_u_s, cfg_.uplink_delay_range_s, hash_values(ep.seed, 3));
      coarse_.downlink = search_link(dn_, coarse_.tau_d_s, cfg_.downlink_delay_range_s, hash_values(ep.seed, 4));
      off_.epsilon_s = coarse_.uplink.residual_offset_s;
      off_.delta_s = coarse_.downlink.residual_offset_s;
      tau_hat_s_ = coarse_.uplink.estimated_offset_s;
    }
    // fine stage starts on a fresh hop after the coarse dwells
    hop_ = 16 + coarse_.hops();
    elapsed_s_ = 0.0;
    return coarse_;
  }

  const CoarseSummary& coarse() const { return coarse_; }
  OffsetPair offsets() const { return off_; }
  // estimated uplink timing (the Tx's current advance) and the truth
  double tau_hat_s() const { return tau_hat_s_; }
  double tau_true_s() const { return coarse_.tau_u_s; }

  void shift_epsilon(double d) {
    off_.epsilon_s += d;
    tau_hat_s_ -= d;
  }
  void shift_delta(double d) { off_.delta_s += d; }

  // Aligned dwell energy the receiver expects: nominal unit signal plus the
  // post-filter noise floor of both legs (at the ground) or of the uplink
  // alone (at the DRT).
  double aligned_level(Link at = Link::Downlink) const { return 1.0 + noise_floor(at); }
  double noise_floor(Link at = Link::Downlink) const {
    return noise_floor_in_ * (at == Link::Uplink ? fir_.noise_gain() : gain_hh_ + fir_.noise_gain());
  }

  std::int64_t current_hop() const { return hop_; }
  std::int64_t stagger_samples() const { return theta_; }
  // DRT rehop stagger in samples, [0, H)
  void set_stagger_samples(std::int64_t theta) {
    if (theta < 0 || theta >= H_) throw ArgumentError("stagger must be within one hop");
    theta_ = theta;
  }

  // Dehopped ground samples over reference hop `hop`, half-hop offsets
  // [first, first+count) in samples, at the current offsets. Stream time is
  // ground reference time (hop l starts at l*T_h).
  SampleStream ground_window(std::int64_t hop, std::int64_t first, std::int64_t count) const {
    const std::int64_t eps = std::llround(off_.epsilon_s * fs_);
    const std::int64_t del = std::llround(off_.delta_s * fs_);
    const std::int64_t n_a = hop * H_ + theta_ - del + first;
    const auto z = ground_samples(n_a, count, eps, del);
    SampleStream s;
    s.sample_rate_hz = fs_;
    s.t0_s = static_cast<double>(hop * H_ + first) / fs_;
    s.samples = z;
    return s;
  }

  // DRT dehopper output over its uplink hop `hop`, offsets [first,
  // first+count) in samples. Stream time is satellite time.
  SampleStream drt_window(std::int64_t hop, std::int64_t first, std::int64_t count) const {
    SampleStream s;
    s.sample_rate_hz = fs_;
    s.t0_s = static_cast<double>(hop * H_ + first) / fs_;
    s.samples = drt_samples(hop * H_ + first, count, std::llround(off_.epsilon_s * fs_));
    return s;
  }

  // Accumulates Z_M', Z_E, Z_L over `dwell_s` worth of hops and advances the
  // clock. Downlink: at the ground dehopper on its hop grid. Uplink: at the
  // DRT dehopper on the uplink grid, the values being reported back to the Tx.
  EnergyMeasurement measure(double dwell_s, Link at = Link::Downlink) {
    const std::int64_t nh = exact_samples(dwell_s, fs_, "dwell") / H_;
    if (nh < 1) throw ConfigError("dwell must cover at least one hop");
    const auto s = at == Link::Uplink ? drt_window(hop_, 0, nh * H_) : ground_window(hop_, 0, nh * H_);
    EnergyMeasurement m;
    m.z_m = aligned_level(at);
    m.dwell_s = dwell_s;
    const double T = hop_duration_s();
    for (std::int64_t k = 0; k < nh; ++k) {
      const double t = s.t0_s + static_cast<double>(k) * T;
      m.z_e += energy(s, t, T / 2);
      m.z_l += energy(s, t + T / 2, T / 2);
    }
    m.z_e /= static_cast<double>(nh);
    m.z_l /= static_cast<double>(nh);
    m.z_m_prime = energy(s, s.t0_s, static_cast<double>(nh) * T);
    advance(nh * H_);
    return m;
  }

  void advance(std::int64_t samples) {
    const std::int64_t whole = samples / H_;
    hop_ += whole;
    const double dt = static_cast<double>(samples) / fs_;
    elapsed_s_ += dt;
    if (cfg_.drift_rate != 0.0) {
      off_.epsilon_s += cfg_.drift_rate * dt;
      off_.delta_s += cfg_.drift_rate * dt;
    }
  }

 private:
  CoarseResult search_link(const HopPlan& plan, double tau, const std::array<double, 2>& range,
                           std::uint64_t seed) const {
    SearchConfig sc = cfg_.search;
    sc.base_offset_s = range[0];
    sc.uncertainty_region_cells = cfg_.cells_for(range);
    sc.noise_floor = noise_floor_in_ * fir_.noise_gain();
    sc.signal_level = 1.0;
    const auto s = make_search_stream({plan, tau, ep_.snr_db, seed,
                                       static_cast<std::int64_t>(cfg_.coarse_max_passes) * sc.uncertainty_region_cells,
                                       ep_.noisy}, sc);
    auto r = serial_search(s, plan, sc);
    if (!r.detected) throw EpisodeSetupError("coarse acquisition failed to detect the hop timing");
    r.residual_offset_s = tau - r.estimated_offset_s;
    return r;
  }

  // Uplink arrival plus noise, dehopped and filtered at the DRT, over
  // satellite-frame samples [lo, lo+len).
  std::vector<cplx> drt_samples(std::int64_t lo, std::int64_t len, std::int64_t eps) const {
    const double A = cfg_.amplitude;
    const double w = 2.0 * kPi / fs_;
    std::vector<cplx> x(static_cast<std::size_t>(len + 2 * c_));
    for (std::int64_t i = 0; i < len + 2 * c_; ++i) {
      const std::int64_t n = lo - c_ + i;
      const std::int64_t tx = n - eps;
      const double fu = up_.center_hz(floor_div(tx, H_));
      const double fr = up_.center_hz(floor_div(n, H_));
      const cplx sig = A * std::polar(1.0, w * (fu * static_cast<double>(tx) - fr * static_cast<double>(n)));
      x[static_cast<std::size_t>(i)] = sig + noise_up_.at(n) * std::polar(1.0, -w * fr * static_cast<double>(n));
    }
    const auto b = fir_.apply(x);
    return {b.begin() + c_, b.begin() + c_ + len};
  }

  // Ground output z over satellite-frame samples [n_a, n_a+count).
  std::vector<cplx> ground_samples(std::int64_t n_a, std::int64_t count, std::int64_t eps,
                                   std::int64_t del) const {
    const std::int64_t lo = n_a - c_;
    const double w = 2.0 * kPi / fs_;
    const auto b = drt_samples(lo, count + 2 * c_, eps);
    // rehop on the staggered downlink grid, add downlink noise, dehop at ground
    std::vector<cplx> g(static_cast<std::size_t>(count + 2 * c_));
    for (std::int64_t i = 0; i < count + 2 * c_; ++i) {
      const std::int64_t n = lo + i;
      const std::int64_t td = n - theta_;
      const std::int64_t tg = td + del;
      const double fd = dn_.center_hz(floor_div(td, H_));
      const double fg = dn_.center_hz(floor_div(tg, H_));
      const cplx rx = b[static_cast<std::size_t>(i)] * std::polar(1.0, w * fd * static_cast<double>(td)) +
                      noise_dn_.at(n + (std::int64_t{1} << 36));
      g[static_cast<std::size_t>(i)] = rx * std::polar(1.0, -w * fg * static_cast<double>(tg));
    }
    const auto z = fir_.apply(g);
    return {z.begin() + c_, z.begin() + c_ + count};
  }

  LinkConfig cfg_;
  double fs_ = 100e3;
  std::int64_t H_ = 100;
  std::int64_t c_ = 31;
  std::int64_t theta_ = 0;
  HopPlan up_, dn_;
  LowpassFir fir_;
  double gain_hh_ = 0.0;
  LinkEpisode ep_{};
  NoiseSource noise_up_{}, noise_dn_{};
  double noise_floor_in_ = 0.0;
  CoarseSummary coarse_{};
  OffsetPair off_{};
  double tau_hat_s_ = 0.0;
  std::int64_t hop_ = 0;
  double elapsed_s_ = 0.0;
};

}  // namespace fhsync
