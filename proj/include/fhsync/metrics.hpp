#pragma once

#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "fhsync/common.hpp"

namespace fhsync {

enum class Method : int { Elg = 0, MaxEnergyElg = 1, Rl = 2 };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::Elg: return "elg";
    case Method::MaxEnergyElg: return "maxenergy_elg";
    case Method::Rl: return "rl";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "elg") return Method::Elg;
  if (s == "maxenergy_elg") return Method::MaxEnergyElg;
  if (s == "rl") return Method::Rl;
  throw ConfigError("unknown method '" + s + "' (elg|maxenergy_elg|rl)");
}

struct TimingEstimate {
  double tau_hat_s = 0.0;
  double tau_true_s = 0.0;
  double hop_duration_s = 1e-3;
};

struct TrialRecord {
  double snr_db = 0.0;
  Method method = Method::Elg;
  double hops_total = 0.0;
  TimingEstimate timing{};
  bool converged = false;
  int trial = 0;
  // hops_total = coarse + uplink fine + downlink fine
  double coarse_hops = 0.0;
  double fine_uplink_hops = 0.0;
  double fine_downlink_hops = 0.0;
  bool setup_failed = false;
};

// (1/N) sum ((tau_hat - tau) / T_h)^2 over all records
inline double mse_uplink(const std::vector<TimingEstimate>& recs) {
  if (recs.empty()) throw DomainError("mse_uplink of an empty record set");
  double acc = 0.0;
  for (const auto& r : recs) {
    if (!(r.hop_duration_s > 0)) throw DomainError("hop duration must be positive");
    const double e = (r.tau_hat_s - r.tau_true_s) / r.hop_duration_s;
    acc += e * e;
  }
  return acc / static_cast<double>(recs.size());
}

struct AggregateRow {
  double snr_db = 0.0;
  Method method = Method::Elg;
  double avg_hops = 0.0;
  double mse = std::numeric_limits<double>::quiet_NaN();  // over converged trials
  double convergence_rate = 0.0;
  int trials = 0;
};

// Rows ordered by (snr, method). Failed episode setups count as trials that
// did not converge and are left out of the hop average.
inline std::vector<AggregateRow> aggregate(const std::vector<TrialRecord>& recs) {
  std::map<std::pair<double, int>, std::vector<const TrialRecord*>> groups;
  for (const auto& r : recs) groups[{r.snr_db, static_cast<int>(r.method)}].push_back(&r);
  std::vector<AggregateRow> out;
  for (const auto& [key, rs] : groups) {
    AggregateRow row;
    row.snr_db = key.first;
    row.method = static_cast<Method>(key.second);
    row.trials = static_cast<int>(rs.size());
    std::vector<TimingEstimate> conv;
    double hops = 0;
    int counted = 0;
    for (const auto* r : rs) {
      if (!r->setup_failed) {
        hops += r->hops_total;
        ++counted;
      }
      if (r->converged) conv.push_back(r->timing);
    }
    row.avg_hops = counted ? hops / counted : std::numeric_limits<double>::quiet_NaN();
    row.convergence_rate = static_cast<double>(conv.size()) / row.trials;
    if (!conv.empty()) row.mse = mse_uplink(conv);
    out.push_back(row);
  }
  return out;
}

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_aggregate_csv(std::ostream& os, const std::vector<AggregateRow>& rows) {
  os << "snr_db,method,avg_hops,mse,convergence_rate,trials\n";
  for (const auto& r : rows)
    os << format_double(r.snr_db) << ',' << method_name(r.method) << ',' << format_double(r.avg_hops) << ','
       << format_double(r.mse) << ',' << format_double(r.convergence_rate) << ',' << r.trials << '\n';
}

struct ParseError : ConfigError {
  using ConfigError::ConfigError;
};

inline double parse_number(const std::string& s, int line) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  std::size_t pos = 0;
  double v;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw ParseError("line " + std::to_string(line) + ": bad number '" + s + "'");
  }
  if (pos != s.size()) throw ParseError("line " + std::to_string(line) + ": bad number '" + s + "'");
  return v;
}

inline std::vector<AggregateRow> read_aggregate_csv(std::istream& is) {
  std::string line;
  int no = 1;
  if (!std::getline(is, line) || line != "snr_db,method,avg_hops,mse,convergence_rate,trials")
    throw ParseError("line 1: expected aggregate CSV header");
  std::vector<AggregateRow> rows;
  while (std::getline(is, line)) {
    ++no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 6) throw ParseError("line " + std::to_string(no) + ": expected 6 fields");
    AggregateRow r;
    r.snr_db = parse_number(f[0], no);
    try {
      r.method = parse_method(f[1]);
    } catch (const ConfigError&) {
      throw ParseError("line " + std::to_string(no) + ": unknown method '" + f[1] + "'");
    }
    r.avg_hops = parse_number(f[2], no);
    r.mse = parse_number(f[3], no);
    r.convergence_rate = parse_number(f[4], no);
    const double t = parse_number(f[5], no);
    if (t < 0 || t != std::floor(t)) throw ParseError("line " + std::to_string(no) + ": bad trial count");
    r.trials = static_cast<int>(t);
    rows.push_back(r);
  }
  return rows;
}

// Mean over the SNR points where both methods have a value of the per-point
// percentage reduction of `field` achieved by `better` against `base`.
inline double mean_reduction_percent(const std::vector<AggregateRow>& rows, Method better, Method base,
                                     double AggregateRow::*field) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::map<double, std::pair<double, double>> pts;
  for (const auto& r : rows) {
    auto it = pts.try_emplace(r.snr_db, nan, nan).first;
    if (r.method == better) it->second.first = r.*field;
    if (r.method == base) it->second.second = r.*field;
  }
  double acc = 0;
  int n = 0;
  for (const auto& [snr, p] : pts) {
    const auto [a, b] = p;
    if (std::isnan(a) || std::isnan(b) || b == 0) continue;
    acc += 100.0 * (b - a) / b;
    ++n;
  }
  return n ? acc / n : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace fhsync
