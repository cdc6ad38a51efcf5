#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "fhsync/fine_baseline.hpp"

using namespace fhsync;

namespace {
LinkConfig no_stagger() {
  LinkConfig c;
  c.rehop_phase_s = 0.0;
  return c;
}

void start(LinkSimulator& sim, double eps, double del, bool noisy = false, double snr = 100.0,
           std::uint64_t seed = 1) {
  LinkEpisode ep;
  ep.seed = seed;
  ep.snr_db = snr;
  ep.noisy = noisy;
  ep.injected = OffsetPair{eps, del};
  sim.reset(ep);
}

double us(double s) { return s * 1e6; }
}  // namespace

TEST(MeasureElg, AlignedHopIsBalanced) {
  LinkSimulator sim;
  start(sim, 0, 0);
  const auto s = sim.ground_window(sim.current_hop(), 0, 100);
  const auto [ze, zl] = measure_elg(s, s.t0_s, 1e-3);
  EXPECT_NEAR(ze, zl, 0.02);
  EXPECT_NEAR(ze, 1.0, 0.02);
}

TEST(MeasureElg, LateSignalFavoursLateGate) {
  for (double theta : {0.0, 250e-6}) {
    auto cfg = no_stagger();
    cfg.rehop_phase_s = theta;
    LinkSimulator sim(cfg);
    start(sim, 0, 250e-6);
    const auto s = sim.ground_window(sim.current_hop(), 0, 100);
    const auto [ze, zl] = measure_elg(s, s.t0_s, 1e-3);
    EXPECT_LT(ze, zl);
    EXPECT_NEAR(ze, 0.5, 0.05);
  }
}

TEST(MeasureElg, NoiseOnlyGatesAgree) {
  auto cfg = no_stagger();
  cfg.amplitude = 0.0;
  LinkSimulator sim(cfg);
  start(sim, 0, 0, true, 0.0, 5);
  const int n = 1000;
  const auto s = sim.ground_window(sim.current_hop(), 0, 100 * n);
  std::vector<double> d(n);
  for (int k = 0; k < n; ++k) {
    const auto [ze, zl] = measure_elg(s, s.t0_s + k * 1e-3, 1e-3);
    d[static_cast<std::size_t>(k)] = ze - zl;
  }
  double mean = 0, var = 0;
  for (double v : d) mean += v;
  mean /= n;
  for (double v : d) var += (v - mean) * (v - mean);
  var /= n - 1;
  EXPECT_LT(std::abs(mean), 3.0 * std::sqrt(var / n));
}

TEST(MeasureElg, WindowOutsideStreamThrows) {
  LinkSimulator sim;
  start(sim, 0, 0);
  const auto s = sim.ground_window(sim.current_hop(), 0, 100);
  EXPECT_THROW(measure_elg(s, s.t0_s + 0.5e-3, 1e-3), ArgumentError);
}

TEST(MeasureElg, AlignedFixedPointEveryHop) {
  LinkSimulator sim;
  start(sim, 0, 0);
  const int n = 300;
  const auto s = sim.ground_window(sim.current_hop(), 0, 100 * n);
  for (int k = 0; k < n; ++k) {
    const auto [ze, zl] = measure_elg(s, s.t0_s + k * 1e-3, 1e-3);
    ASSERT_LE(std::abs(ze - zl), 0.02) << "hop " << k;
  }
}

TEST(ElgFine, AlignedStartNeedsOneMeasurement) {
  LinkSimulator sim;
  start(sim, 0, 0);
  const auto r = elg_fine_acquire(sim, {}, 10);
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.steps_used, 0);
  EXPECT_EQ(r.measurements, 1);
}

TEST(ElgFine, FortyMicrosecondsLate) {
  LinkSimulator sim;
  start(sim, 0, 40e-6);
  const auto r = elg_fine_acquire(sim, {}, 10);
  EXPECT_TRUE(r.converged);
  EXPECT_LE(r.steps_used, 3);
  EXPECT_LE(std::abs(r.final_offset_s), 20e-6 + 1e-12);
}

TEST(ElgFine, ExactCountsWithinHundredMicroseconds) {
  // steps from each start on the 20 us grid (noise-free, default stagger)
  const std::map<int, int> expected{{-100, 4}, {-80, 3}, {-60, 2}, {-40, 2}, {-20, 0}, {0, 0},
                                    {20, 0},   {40, 1},  {60, 2},  {80, 3},  {100, 4}};
  LinkSimulator sim;
  for (const auto& [d, steps] : expected) {
    start(sim, 0, d * 1e-6);
    const auto r = elg_fine_acquire(sim, {}, 6);
    EXPECT_TRUE(r.converged) << d;
    EXPECT_EQ(r.steps_used, steps) << d;
    EXPECT_LE(std::abs(us(r.final_offset_s)), 20.0 + 1e-6) << d;
    EXPECT_DOUBLE_EQ(r.hops, r.measurements * 1.0);
  }
}

TEST(ElgFine, NonConvergenceIsReported) {
  LinkSimulator sim;
  start(sim, 0, 200e-6);
  const auto r = elg_fine_acquire(sim, {}, 2);
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.steps_used, 2);
  EXPECT_NEAR(us(r.final_offset_s), 160.0, 1e-6);
}

TEST(ElgFine, ZeroDbMedianResidual) {
  LinkSimulator sim;
  Rng rng(77);
  std::vector<double> res;
  for (int t = 0; t < 100; ++t) {
    const double d0 = 20e-6 * (static_cast<double>(rng.below(11)) - 5.0);
    start(sim, 0, d0, true, 0.0, 100 + t);
    const auto r = elg_fine_acquire(sim, {}, 20);
    res.push_back(std::abs(r.final_offset_s));
  }
  std::nth_element(res.begin(), res.begin() + 50, res.end());
  EXPECT_LE(res[50], 40e-6 + 1e-12);
}

TEST(MaxEnergyFine, AlignedStopsImmediately) {
  LinkSimulator sim;
  start(sim, 0, 0);
  const auto r = max_energy_fine_acquire(sim, {}, sim.aligned_level(Link::Uplink), 10);
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.steps_used, 0);
  EXPECT_DOUBLE_EQ(r.hops, 5.0);
}

TEST(MaxEnergyFine, SixtyMicrosecondsEarly) {
  LinkSimulator sim;
  start(sim, -60e-6, 0);
  const auto r = max_energy_fine_acquire(sim, {}, sim.aligned_level(Link::Uplink), 10);
  EXPECT_TRUE(r.converged);
  EXPECT_LE(r.steps_used, 4);
  EXPECT_NEAR(r.final_offset_s, 0.0, 1e-12);
}

TEST(MaxEnergyFine, ExactCountsWithinHundredMicroseconds) {
  // a late start pays for the wrong-way probe
  const std::map<int, int> expected{{-100, 5}, {-80, 4}, {-60, 3}, {-40, 2}, {-20, 1}, {0, 0},
                                    {20, 2},   {40, 3},  {60, 4},  {80, 5},  {100, 6}};
  LinkSimulator sim;
  for (const auto& [e, steps] : expected) {
    start(sim, e * 1e-6, 0);
    const auto r = max_energy_fine_acquire(sim, {}, sim.aligned_level(Link::Uplink), 6);
    EXPECT_TRUE(r.converged) << e;
    EXPECT_EQ(r.steps_used, steps) << e;
    EXPECT_NEAR(r.final_offset_s, 0.0, 1e-12) << e;
    EXPECT_EQ(r.measurements, r.steps_used + 1);
    EXPECT_DOUBLE_EQ(r.hops, 5.0 * r.measurements);
  }
}

TEST(MaxEnergyFine, NoiseOnlyNeverConverges) {
  auto cfg = LinkConfig{};
  cfg.amplitude = 0.0;
  LinkSimulator sim(cfg);
  for (double snr : {0.0, 10.0, 20.0}) {
    start(sim, 0, 0, true, snr, 9);
    const auto r = max_energy_fine_acquire(sim, {}, sim.aligned_level(Link::Uplink), 30);
    EXPECT_FALSE(r.converged) << snr;
    EXPECT_EQ(r.steps_used, 30);
  }
}

TEST(MaxEnergyFine, EnergyIsUnimodalInEpsilon) {
  LinkSimulator sim;
  std::map<int, double> z;
  for (int k = -25; k <= 25; ++k) {
    start(sim, k * 20e-6, 0);
    z[k] = sim.measure(0.005, Link::Uplink).z_m_prime;
  }
  for (int k = 1; k <= 25; ++k) {
    EXPECT_LE(z[k], z[k - 1] + 1e-12) << k;
    EXPECT_LE(z[-k], z[-k + 1] + 1e-12) << -k;
  }
}

TEST(FineConfig, StepMustSitOnTheSampleGrid) {
  FineConfig c;
  c.step_s = 15e-6;
  EXPECT_THROW(c.validate(), ConfigError);
  c.step_s = 30e-6;
  EXPECT_NO_THROW(c.validate());
}

TEST(FineHops, MeasurementsAdvanceTheClock) {
  LinkSimulator sim;
  start(sim, 0, 60e-6);
  const auto h0 = sim.current_hop();
  const auto r = elg_fine_acquire(sim, {}, 10);
  EXPECT_EQ(sim.current_hop() - h0, r.measurements);
}
