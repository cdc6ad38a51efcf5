#pragma once

#include <cmath>
#include <cstdint>
#include <utility>

#include "fhsync/link.hpp"

namespace fhsync {

struct FineConfig {
  double step_s = 20e-6;
  double dwell_uplink_s = 0.005;
  double dwell_downlink_s = 0.001;
  double tol = 0.02;

  void validate(double sample_rate_hz = 100e3) const {
    exact_samples(step_s, sample_rate_hz, "fine step");
    if (step_s <= 0) throw ConfigError("fine step must be positive");
    exact_samples(dwell_uplink_s, sample_rate_hz, "uplink dwell");
    exact_samples(dwell_downlink_s, sample_rate_hz, "downlink dwell");
    if (!(tol > 0 && tol < 1)) throw ConfigError("tol must be in (0,1)");
  }
};

// Z_E < Z_L means the signal arrives late against the reference, so the
// offset is pulled down. Sign taken from the sample-level oracle test.
inline constexpr double kElgDirection = -1.0;

inline std::pair<double, double> measure_elg(const SampleStream& dehopped, double hop_start_s, double hop_duration_s) {
  const double half = hop_duration_s / 2;
  return {energy(dehopped, hop_start_s, half), energy(dehopped, hop_start_s + half, half)};
}

struct FineResult {
  double final_offset_s = 0.0;
  int steps_used = 0;
  int measurements = 0;
  bool converged = false;
  double hops = 0.0;  // measurements x dwell / T_h
  EnergyMeasurement last{};
};

inline bool elg_balanced(const EnergyMeasurement& m, double tol) {
  return std::abs(m.z_e - m.z_l) <= tol * (m.z_e + m.z_l);
}

inline bool energy_at_max(const EnergyMeasurement& m, double z_m_ref, double tol) {
  return m.z_m_prime >= (1.0 - tol) * z_m_ref;
}

namespace detail {
inline double offset_of(const LinkSimulator& sim, Link which) {
  return which == Link::Uplink ? sim.offsets().epsilon_s : sim.offsets().delta_s;
}
inline void shift(LinkSimulator& sim, Link which, double d) {
  if (which == Link::Uplink)
    sim.shift_epsilon(d);
  else
    sim.shift_delta(d);
}
inline void finish(FineResult& r, const LinkSimulator& sim, Link which, double dwell_s) {
  r.final_offset_s = offset_of(sim, which);
  r.hops = r.measurements * dwell_s / sim.hop_duration_s();
}
}  // namespace detail

// Early-late gate on one link: the Rx (downlink) or Tx (uplink) moves its
// timing one step per dwell until the half-hop energies balance.
inline FineResult elg_fine_acquire(LinkSimulator& sim, const FineConfig& cfg, int max_steps,
                                   Link which = Link::Downlink) {
  cfg.validate(sim.sample_rate());
  const double dwell = which == Link::Uplink ? cfg.dwell_uplink_s : cfg.dwell_downlink_s;
  FineResult r;
  for (;;) {
    r.last = sim.measure(dwell, which);
    ++r.measurements;
    if (elg_balanced(r.last, cfg.tol)) {
      r.converged = true;
      break;
    }
    if (r.steps_used >= max_steps) break;
    const double sign = r.last.z_e < r.last.z_l ? 1.0 : -1.0;
    detail::shift(sim, which, kElgDirection * sign * cfg.step_s);
    ++r.steps_used;
  }
  detail::finish(r, sim, which, dwell);
  return r;
}

// Max-energy hill climb on the uplink timing. Probes +step first; a worse
// probe is undone and replaced by one move of -2 steps.
inline FineResult max_energy_fine_acquire(LinkSimulator& sim, const FineConfig& cfg, double z_m_ref, int max_steps) {
  cfg.validate(sim.sample_rate());
  const double dwell = cfg.dwell_uplink_s;
  FineResult r;
  r.last = sim.measure(dwell, Link::Uplink);
  r.measurements = 1;
  double dir = 1.0;
  while (!(r.converged = energy_at_max(r.last, z_m_ref, cfg.tol)) && r.steps_used < max_steps) {
    const double prev = r.last.z_m_prime;
    sim.shift_epsilon(dir * cfg.step_s);
    ++r.steps_used;
    r.last = sim.measure(dwell, Link::Uplink);
    ++r.measurements;
    if (r.last.z_m_prime < prev) {
      if (energy_at_max(r.last, z_m_ref, cfg.tol)) continue;
      if (r.steps_used >= max_steps) break;
      // went the wrong way: turn around, skipping back over the previous point
      dir = -dir;
      sim.shift_epsilon(2.0 * dir * cfg.step_s);
      ++r.steps_used;
      r.last = sim.measure(dwell, Link::Uplink);
      ++r.measurements;
    }
  }
  detail::finish(r, sim, Link::Uplink, dwell);
  return r;
}

}  // namespace fhsync
