#pragma once

#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "fhsync/common.hpp"
#include "fhsync/hopplan.hpp"

namespace fhsync {

using cplx = std::complex<double>;

struct SampleStream {
  std::vector<cplx> samples;
  double sample_rate_hz = 100e3;
  double t0_s = 0.0;
  // Sub-sample part of the channel delay that was rounded away.
  double residue_s = 0.0;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  std::int64_t start_index() const { return std::llround(t0_s * sample_rate_hz); }
  double duration_s() const { return static_cast<double>(samples.size()) / sample_rate_hz; }

  // Samples [first, first+count) relative to the stream start, as a new stream.
  SampleStream slice(std::int64_t first, std::int64_t count) const {
    if (first < 0 || count < 0 || first + count > static_cast<std::int64_t>(samples.size()))
      throw ArgumentError("slice outside stream");
    SampleStream out;
    out.sample_rate_hz = sample_rate_hz;
    out.t0_s = static_cast<double>(start_index() + first) / sample_rate_hz;
    out.residue_s = residue_s;
    out.samples.assign(samples.begin() + first, samples.begin() + first + count);
    return out;
  }
};

enum class Pulse { Rect, OqpskEnvelope };

struct SynthOptions {
  int samples_per_symbol = 50;
  std::uint64_t data_seed = 1;
};

inline SampleStream oqpsk_modulate(std::span<const int> bits, int samples_per_symbol,
                                   double sample_rate_hz = 100e3) {
  if (bits.size() % 2 != 0) throw ArgumentError("OQPSK needs an even number of bits");
  if (samples_per_symbol < 2 || samples_per_symbol % 2 != 0)
    throw ArgumentError("samples_per_symbol must be even and >= 2");
  const std::size_t nsym = bits.size() / 2;
  const std::size_t sps = static_cast<std::size_t>(samples_per_symbol);
  const std::size_t half = sps / 2;
  SampleStream out;
  out.sample_rate_hz = sample_rate_hz;
  if (nsym == 0) return out;
  const double a = 1.0 / std::sqrt(2.0);
  out.samples.assign(nsym * sps + half, cplx{});
  for (std::size_t s = 0; s < nsym; ++s) {
    const double i_val = bits[2 * s] ? -a : a;
    const double q_val = bits[2 * s + 1] ? -a : a;
    for (std::size_t k = 0; k < sps; ++k) {
      out.samples[s * sps + k] += cplx(i_val, 0.0);
      out.samples[s * sps + k + half] += cplx(0.0, q_val);
    }
  }
  return out;
}

inline SampleStream synth_fh_signal(const HopPlan& plan, double amplitude, Pulse pulse,
                                    double duration_s, const SynthOptions& opt = {}) {
  const double fs = plan.sample_rate_hz();
  const auto n = static_cast<std::int64_t>(std::llround(duration_s * fs));
  if (duration_s < 0 || n > plan.size() * plan.samples_per_hop())
    throw ArgumentError("synth duration exceeds hop plan");
  SampleStream out;
  out.sample_rate_hz = fs;
  out.samples.resize(static_cast<std::size_t>(n));

  std::vector<cplx> env;
  if (pulse == Pulse::OqpskEnvelope && n > 0) {
    // take samples from the region where both rails are active
    const std::int64_t sps = opt.samples_per_symbol;
    const std::int64_t nsym = n / sps + 2;
    std::vector<int> bits(static_cast<std::size_t>(2 * nsym));
    Rng rng(opt.data_seed);
    for (auto& b : bits) b = static_cast<int>(rng.next_u64() >> 63);
    const auto mod = oqpsk_modulate(bits, opt.samples_per_symbol, fs);
    env.assign(mod.samples.begin() + sps / 2, mod.samples.begin() + sps / 2 + n);
  }

  const std::int64_t sph = plan.samples_per_hop();
  for (std::int64_t j = 0; j * sph < n; ++j) {
    const double w = 2.0 * kPi * plan.center_hz(j) / fs;
    const std::int64_t end = std::min(n, (j + 1) * sph);
    for (std::int64_t k = j * sph; k < end; ++k) {
      cplx v = std::polar(amplitude, w * static_cast<double>(k));
      if (!env.empty()) v *= env[static_cast<std::size_t>(k)];
      out.samples[static_cast<std::size_t>(k)] = v;
    }
  }
  return out;
}

struct ChannelParams {
  double tau_u_s = 0.0;
  double tau_d_s = 0.0;
  double tau_h_s = 0.0;
  double snr_db = 100.0;
  double drift_rate_s_per_s = 0.0;
};

enum class Leg { Uplink, Downlink, Process };

inline double leg_delay(const ChannelParams& ch, Leg leg) {
  switch (leg) {
    case Leg::Uplink: return ch.tau_u_s;
    case Leg::Downlink: return ch.tau_d_s;
    case Leg::Process: return ch.tau_h_s;
  }
  return 0.0;
}

// Counter-based AWGN: the value at absolute sample index k depends only on
// (seed, k), so any re-synthesised window sees the same noise.
struct NoiseSource {
  std::uint64_t seed = 0;
  double sigma = 0.0;  // per component

  cplx at(std::int64_t k) const {
    if (sigma == 0.0) return {};
    const std::uint64_t h1 = hash_values(seed, static_cast<std::uint64_t>(k), 0x6e6f697365ULL);
    const std::uint64_t h2 = splitmix64(h1);
    double u1 = u01_from_bits(h1);
    if (u1 <= 0.0) u1 = 0x1.0p-60;
    const double u2 = u01_from_bits(h2);
    const double r = sigma * std::sqrt(-2.0 * std::log(u1));
    return {r * std::cos(2.0 * kPi * u2), r * std::sin(2.0 * kPi * u2)};
  }
};

// Per-component sigma giving SNR = A^2 / E|n|^2.
inline double noise_sigma_for(double snr_db, double amplitude) {
  return amplitude / std::pow(10.0, snr_db / 20.0) / std::sqrt(2.0);
}

inline SampleStream apply_channel(const SampleStream& s, const ChannelParams& ch,
                                  const NoiseSource& noise, Leg leg = Leg::Uplink) {
  const double tau = leg_delay(ch, leg);
  if (tau < 0) throw ArgumentError("channel delay must be >= 0");
  const double fs = s.sample_rate_hz;
  const double d_exact = tau * fs;
  const auto d0 = static_cast<std::int64_t>(std::llround(d_exact));
  SampleStream out;
  out.sample_rate_hz = fs;
  const std::int64_t in_start = s.start_index();
  const std::int64_t out_start = in_start + d0;
  out.t0_s = static_cast<double>(out_start) / fs;
  out.residue_s = s.residue_s + (d_exact - static_cast<double>(d0)) / fs;
  const std::size_t n = s.samples.size();
  out.samples.resize(n);
  const bool drift = ch.drift_rate_s_per_s != 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::int64_t k = out_start + static_cast<std::int64_t>(i);
    cplx v;
    if (!drift) {
      v = s.samples[i];
    } else {
      const double t = static_cast<double>(k) / fs;
      const auto d = static_cast<std::int64_t>(std::llround((tau + ch.drift_rate_s_per_s * t) * fs));
      const std::int64_t src = k - d - in_start;
      if (src >= 0 && src < static_cast<std::int64_t>(n)) v = s.samples[static_cast<std::size_t>(src)];
    }
    out.samples[i] = v + noise.at(k);
  }
  return out;
}

struct FilterConfig {
  int taps = 63;
  double cutoff_factor = 1.5;  // cutoff = factor x channel spacing
};

class LowpassFir {
 public:
  LowpassFir() = default;
  explicit LowpassFir(std::vector<double> taps) : h_(std::move(taps)) {
    if (h_.empty() || h_.size() % 2 == 0) throw ConfigError("FIR needs an odd tap count");
  }

  // Hamming-windowed sinc, normalised to unity DC gain.
  static LowpassFir design(int taps, double cutoff_hz, double fs) {
    if (taps < 1 || taps % 2 == 0) throw ConfigError("filter.taps must be odd and positive");
    if (!(cutoff_hz > 0) || cutoff_hz >= fs / 2) throw ConfigError("filter cutoff out of range");
    std::vector<double> h(static_cast<std::size_t>(taps));
    const double fc = cutoff_hz / fs;
    const int c = (taps - 1) / 2;
    double sum = 0.0;
    for (int k = 0; k < taps; ++k) {
      const int m = k - c;
      const double sinc = m == 0 ? 2.0 * fc : std::sin(2.0 * kPi * fc * m) / (kPi * m);
      const double win = taps == 1 ? 1.0 : 0.54 - 0.46 * std::cos(2.0 * kPi * k / (taps - 1));
      h[static_cast<std::size_t>(k)] = sinc * win;
      sum += h[static_cast<std::size_t>(k)];
    }
    for (auto& v : h) v /= sum;
    return LowpassFir(std::move(h));
  }

  static LowpassFir for_plan(const HopPlan& plan, const FilterConfig& cfg = {}) {
    return design(cfg.taps, cfg.cutoff_factor * plan.channel_spacing_hz(), plan.sample_rate_hz());
  }

  const std::vector<double>& taps() const { return h_; }
  int half_width() const { return static_cast<int>(h_.size() / 2); }

  // Zero-phase ("same") filtering; samples beyond the ends count as zero.
  std::vector<cplx> apply(const std::vector<cplx>& x) const {
    const auto n = static_cast<std::int64_t>(x.size());
    const auto L = static_cast<std::int64_t>(h_.size());
    const std::int64_t c = (L - 1) / 2;
    std::vector<cplx> y(x.size());
    for (std::int64_t i = 0; i < n; ++i) {
      double re = 0, im = 0;
      const std::int64_t k0 = std::max<std::int64_t>(0, i + c - (n - 1));
      const std::int64_t k1 = std::min<std::int64_t>(L - 1, i + c);
      for (std::int64_t k = k0; k <= k1; ++k) {
        const cplx& v = x[static_cast<std::size_t>(i + c - k)];
        const double hk = h_[static_cast<std::size_t>(k)];
        re += hk * v.real();
        im += hk * v.imag();
      }
      y[static_cast<std::size_t>(i)] = {re, im};
    }
    return y;
  }

  // Post-filter power of white complex noise with total power p.
  double noise_gain() const {
    double s = 0;
    for (double v : h_) s += v * v;
    return s;
  }

 private:
  std::vector<double> h_{1.0};
};

// Signal-plan constants shared by every module.
struct SystemConfig {
  int m = 16;
  double hop_duration_s = 1e-3;
  double sample_rate_hz = 100e3;
  FilterConfig filter{};

  std::int64_t samples_per_hop() const { return exact_samples(hop_duration_s, sample_rate_hz, "hop duration"); }
  HopPlan plan(const HoppingKey& key, const TimeOfDay& tod, std::int64_t n_hops) const {
    return build_hop_plan(key, tod, n_hops, hop_duration_s, m, sample_rate_hz);
  }
};

struct DehopReference {
  HopPlan plan;
  double time_offset_s = 0.0;
};

// Multiplies by the conjugate reference carrier only (no filter).
inline std::vector<cplx> dehop_mix(const SampleStream& r, const DehopReference& ref) {
  const double fs = r.sample_rate_hz;
  const auto& plan = ref.plan;
  const double sph = static_cast<double>(plan.samples_per_hop());
  const std::int64_t n0 = r.start_index();
  const double off = ref.time_offset_s * fs;
  std::vector<cplx> out(r.samples.size());
  if (r.samples.empty()) return out;
  const double first = static_cast<double>(n0) - off;
  const double last = first + static_cast<double>(r.samples.size() - 1);
  if (first < 0 || std::floor(last / sph) >= static_cast<double>(plan.size()))
    throw ArgumentError("dehop reference does not cover the stream");
  for (std::size_t i = 0; i < r.samples.size(); ++i) {
    const double tr = first + static_cast<double>(i);
    const auto k = static_cast<std::int64_t>(std::floor(tr / sph));
    const double ph = -2.0 * kPi * plan.center_hz(k) * tr / fs;
    out[i] = r.samples[i] * std::polar(1.0, ph);
  }
  return out;
}

inline SampleStream dehop_bandpass(const SampleStream& r, const DehopReference& ref,
                                   const LowpassFir& fir) {
  SampleStream out;
  out.sample_rate_hz = r.sample_rate_hz;
  out.t0_s = r.t0_s;
  out.residue_s = r.residue_s;
  out.samples = fir.apply(dehop_mix(r, ref));
  return out;
}

inline SampleStream dehop_bandpass(const SampleStream& r, const DehopReference& ref) {
  return dehop_bandpass(r, ref, LowpassFir::for_plan(ref.plan));
}

// Rehop onto the downlink plan. offset_s shifts the downlink hop grid relative
// to stream time (the DRT process stagger).
inline SampleStream drt_rehop(const SampleStream& b, const HopPlan& downlink_plan,
                              double offset_s = 0.0) {
  SampleStream out = b;
  if (b.samples.empty()) return out;
  const double fs = b.sample_rate_hz;
  const double sph = static_cast<double>(downlink_plan.samples_per_hop());
  const double first = static_cast<double>(b.start_index()) - offset_s * fs;
  const double last = first + static_cast<double>(b.samples.size() - 1);
  if (first < 0 || std::floor(last / sph) >= static_cast<double>(downlink_plan.size()))
    throw ArgumentError("downlink plan does not cover the stream");
  for (std::size_t i = 0; i < b.samples.size(); ++i) {
    const double tr = first + static_cast<double>(i);
    const auto l = static_cast<std::int64_t>(std::floor(tr / sph));
    out.samples[i] *= std::polar(1.0, 2.0 * kPi * downlink_plan.center_hz(l) * tr / fs);
  }
  return out;
}

// Mean |x|^2 over [start_s, start_s + window_s), times in stream time.
inline double energy(const SampleStream& s, double start_s, double window_s) {
  const double fs = s.sample_rate_hz;
  const std::int64_t first = std::llround(start_s * fs) - s.start_index();
  const std::int64_t count = std::llround(window_s * fs);
  if (count <= 0 || first < 0 || first + count > static_cast<std::int64_t>(s.samples.size()))
    throw ArgumentError("energy window outside stream");
  double acc = 0.0;
  for (std::int64_t i = first; i < first + count; ++i) acc += std::norm(s.samples[static_cast<std::size_t>(i)]);
  return acc / static_cast<double>(count);
}

inline constexpr char kStreamMagic[4] = {'F', 'H', 'S', '1'};

inline void write_stream(const std::string& path, const SampleStream& s) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ArgumentError("cannot open " + path + " for writing");
  const std::uint32_t reserved = 0;
  f.write(kStreamMagic, 4);
  f.write(reinterpret_cast<const char*>(&reserved), 4);
  f.write(reinterpret_cast<const char*>(&s.sample_rate_hz), 8);
  for (const auto& v : s.samples) {
    const double re = v.real(), im = v.imag();
    f.write(reinterpret_cast<const char*>(&re), 8);
    f.write(reinterpret_cast<const char*>(&im), 8);
  }
  if (!f) throw ArgumentError("write failed: " + path);
}

inline SampleStream read_stream(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ArgumentError("cannot open " + path);
  char magic[4];
  std::uint32_t reserved = 0;
  SampleStream s;
  f.read(magic, 4);
  f.read(reinterpret_cast<char*>(&reserved), 4);
  f.read(reinterpret_cast<char*>(&s.sample_rate_hz), 8);
  if (!f || std::memcmp(magic, kStreamMagic, 4) != 0) throw ArgumentError("not an FHS1 stream: " + path);
  double re, im;
  while (f.read(reinterpret_cast<char*>(&re), 8) && f.read(reinterpret_cast<char*>(&im), 8))
    s.samples.emplace_back(re, im);
  return s;
}

}  // namespace fhsync
