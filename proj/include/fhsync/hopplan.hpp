#pragma once

#include <cstdint>
#include <vector>

#include "fhsync/common.hpp"

namespace fhsync {

enum class Link : std::uint8_t { Uplink = 0, Downlink = 1 };

struct HoppingKey {
  std::uint64_t key_id = 0;
  Link link = Link::Uplink;
};

inline constexpr std::uint64_t kTicksPerEpoch = 1'000'000;

// Minimum circular channel distance between consecutive hops.
inline constexpr int kMinHopGap = 3;

struct TimeOfDay {
  std::uint64_t tod_count = 0;
  std::uint64_t clock_tick = 0;
};

struct FrequencyTable {
  std::vector<int> channels;
  double channel_spacing_hz = 0.0;
};

namespace detail {

constexpr std::uint64_t kTableDomain = 0x7461626c65ULL;  // "table"
constexpr std::uint64_t kHopDomain = 0x686f70ULL;        // "hop"

inline std::uint64_t hop_word(const HoppingKey& key, const TimeOfDay& tod,
                              std::uint64_t slot, std::uint64_t salt) {
  return hash_values(key.key_id, static_cast<std::uint64_t>(key.link) + 1,
                     kHopDomain, tod.tod_count, slot, salt);
}

inline void check_tod(const TimeOfDay& tod) {
  if (tod.clock_tick >= kTicksPerEpoch)
    throw ConfigError("clock_tick must be below ticks_per_epoch");
}

}  // namespace detail

inline FrequencyTable derive_frequency_table(const HoppingKey& key, int m,
                                             double sample_rate_hz = 100e3) {
  if (m < 2) throw ConfigError("frequency table needs m >= 2 channels");
  FrequencyTable t;
  t.channel_spacing_hz = sample_rate_hz / m;
  t.channels.resize(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const auto w = hash_values(key.key_id, static_cast<std::uint64_t>(key.link) + 1,
                               detail::kTableDomain, static_cast<std::uint64_t>(i));
    t.channels[static_cast<std::size_t>(i)] = static_cast<int>(w % static_cast<std::uint64_t>(m));
  }
  return t;
}

// Channel of hop `hop_index`. For m >= 4*kMinHopGap-1 consecutive hops are
// always at least kMinHopGap channels apart (circular distance), which keeps a hop's
// neighbours out of the dehop filter passband. Even slots are uniform; an
// odd slot picks uniformly among channels clear of both even neighbours.
// Stateless: hop j is computed from (key, tod, j) without touching j-1.
inline int hop_channel(const HoppingKey& key, const TimeOfDay& tod,
                       std::int64_t hop_index, int m) {
  if (hop_index < 0) throw ArgumentError("hop_index must be >= 0");
  if (m < 2) throw ConfigError("hop_channel needs m >= 2");
  detail::check_tod(tod);
  const auto slot = tod.clock_tick + static_cast<std::uint64_t>(hop_index);
  const auto um = static_cast<std::uint64_t>(m);
  auto free_pick = [&](std::uint64_t s) { return detail::hop_word(key, tod, s, 0) % um; };
  if (m < 4 * kMinHopGap - 1 || slot % 2 == 0) return static_cast<int>(free_pick(slot));

  const std::uint64_t a = free_pick(slot - 1);
  const std::uint64_t b = free_pick(slot + 1);
  auto near = [&](std::uint64_t v, std::uint64_t c) {
    const std::uint64_t d = (v + um - c) % um;
    const std::uint64_t g = kMinHopGap - 1;
    return d <= g || d >= um - g;
  };
  auto blocked = [&](std::uint64_t v) { return near(v, a) || near(v, b); };
  std::uint64_t allowed = 0;
  for (std::uint64_t k = 0; k < um; ++k)
    if (!blocked((a + k) % um)) ++allowed;
  std::uint64_t pick = detail::hop_word(key, tod, slot, 1) % allowed;
  for (std::uint64_t k = 0; k < um; ++k) {
    const std::uint64_t v = (a + k) % um;
    if (blocked(v)) continue;
    if (pick == 0) return static_cast<int>(v);
    --pick;
  }
  return static_cast<int>(a);  // unreachable
}

struct Hop {
  std::int64_t index = 0;
  int channel = 0;
  double start_time_s = 0.0;
};

// Hop plan over hops [0, n_hops). Channels are computed on demand so long
// plans cost nothing to build.
class HopPlan {
 public:
  HopPlan() = default;
  HopPlan(HoppingKey key, TimeOfDay tod, std::int64_t n_hops, std::int64_t samples_per_hop,
          int m, double sample_rate_hz)
      : key_(key), tod_(tod), n_hops_(n_hops), sph_(samples_per_hop), m_(m), fs_(sample_rate_hz) {}

  std::int64_t size() const { return n_hops_; }
  std::int64_t samples_per_hop() const { return sph_; }
  int m() const { return m_; }
  double sample_rate_hz() const { return fs_; }
  double hop_duration_s() const { return static_cast<double>(sph_) / fs_; }
  double channel_spacing_hz() const { return fs_ / m_; }
  const HoppingKey& key() const { return key_; }
  const TimeOfDay& tod() const { return tod_; }

  int channel(std::int64_t j) const {
    check(j);
    return hop_channel(key_, tod_, j, m_);
  }
  double center_hz(std::int64_t j) const { return channel_offset_hz(channel(j)); }
  double channel_offset_hz(int c) const { return (c - (m_ - 1) / 2.0) * channel_spacing_hz(); }
  std::int64_t start_sample(std::int64_t j) const { return j * sph_; }
  double start_time_s(std::int64_t j) const { return static_cast<double>(j * sph_) / fs_; }

  Hop hop(std::int64_t j) const { return {j, channel(j), start_time_s(j)}; }
  std::vector<Hop> hops() const {
    std::vector<Hop> out;
    out.reserve(static_cast<std::size_t>(n_hops_));
    for (std::int64_t j = 0; j < n_hops_; ++j) out.push_back(hop(j));
    return out;
  }

  bool covers_sample(std::int64_t n) const { return n >= 0 && n < n_hops_ * sph_; }

 private:
  void check(std::int64_t j) const {
    if (j < 0 || j >= n_hops_) throw ArgumentError("hop index outside plan");
  }

  HoppingKey key_{};
  TimeOfDay tod_{};
  std::int64_t n_hops_ = 0;
  std::int64_t sph_ = 1;
  int m_ = 16;
  double fs_ = 100e3;
};

inline HopPlan build_hop_plan(const HoppingKey& key, const TimeOfDay& tod, std::int64_t n_hops,
                              double hop_duration_s, int m, double sample_rate_hz = 100e3) {
  if (n_hops < 1) throw ConfigError("hop plan needs at least one hop");
  if (m < 2) throw ConfigError("hop plan needs m >= 2");
  if (!(hop_duration_s > 0)) throw ConfigError("hop duration must be positive");
  if (!(sample_rate_hz > 0)) throw ConfigError("sample rate must be positive");
  detail::check_tod(tod);
  const auto sph = exact_samples(hop_duration_s, sample_rate_hz, "hop duration");
  if (sph < 1) throw ConfigError("hop duration shorter than one sample");
  return HopPlan(key, tod, n_hops, sph, m, sample_rate_hz);
}

}  // namespace fhsync
