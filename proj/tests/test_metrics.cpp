#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "fhsync/metrics.hpp"

using namespace fhsync;

namespace {
TimingEstimate est(double err_hops, double tau = 0.06) { return {tau + err_hops * 1e-3, tau, 1e-3}; }

TrialRecord rec(double snr, Method m, double hops, bool conv, double err = 0.0) {
  TrialRecord r;
  r.snr_db = snr;
  r.method = m;
  r.hops_total = hops;
  r.converged = conv;
  r.timing = est(err);
  return r;
}
}  // namespace

TEST(MseUplink, ExactEstimatesGiveZero) {
  std::vector<TimingEstimate> v(7, est(0.0));
  EXPECT_EQ(mse_uplink(v), 0.0);
}

TEST(MseUplink, HalfHopErrorGivesQuarter) {
  std::vector<TimingEstimate> v;
  for (int i = 0; i < 9; ++i) v.push_back(est(i % 2 ? 0.5 : -0.5, 0.06 + 1e-5 * i));
  EXPECT_NEAR(mse_uplink(v), 0.25, 1e-12);
}

TEST(MseUplink, HandSumOfFive) {
  // errors in hops: 0.1 -0.2 0.05 0.3 0 -> squares sum 0.1425
  const std::vector<TimingEstimate> v{est(0.1), est(-0.2), est(0.05), est(0.3), est(0.0)};
  EXPECT_NEAR(mse_uplink(v), 0.1425 / 5, 1e-15);
}

TEST(MseUplink, EveryRecordCounts) {
  // a single bad last record must show up
  std::vector<TimingEstimate> v(3, est(0.0));
  v.push_back(est(1.0));
  EXPECT_NEAR(mse_uplink(v), 0.25, 1e-12);
}

TEST(MseUplink, EmptyIsDomainError) { EXPECT_THROW(mse_uplink({}), DomainError); }

TEST(MseUplink, NonPositiveHopDurationRejected) {
  EXPECT_THROW(mse_uplink({{0.0, 0.0, 0.0}}), DomainError);
}

TEST(MseUplink, MatchesDirectSumOnRandomRecords) {
  Rng rng(99);
  for (int rep = 0; rep < 5; ++rep) {
    std::vector<TimingEstimate> v;
    for (int i = 0; i < 100; ++i)
      v.push_back({rng.uniform(0.05, 0.07), rng.uniform(0.05, 0.07), rng.uniform(1e-4, 2e-3)});
    long double acc = 0;
    for (const auto& r : v) {
      const long double e = (static_cast<long double>(r.tau_hat_s) - r.tau_true_s) / r.hop_duration_s;
      acc += e * e;
    }
    EXPECT_NEAR(mse_uplink(v), static_cast<double>(acc / v.size()), 1e-12);
  }
}

TEST(MseUplink, NonNegativeAndZeroOnlyWhenExact) {
  Rng rng(3);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<TimingEstimate> v(5, est(0.0));
    const auto k = rng.below(5);
    v[k] = est(rng.uniform(-1, 1) * 1e-3 + 1e-9);
    const double m = mse_uplink(v);
    EXPECT_GT(m, 0.0);
  }
}

TEST(MseUplink, PermutationInvariant) {
  Rng rng(5);
  std::vector<TimingEstimate> v;
  for (int i = 0; i < 40; ++i) v.push_back(est(rng.uniform(-0.5, 0.5)));
  const double ref = mse_uplink(v);
  for (int rep = 0; rep < 10; ++rep) {
    for (std::size_t i = v.size() - 1; i > 0; --i) std::swap(v[i], v[rng.below(i + 1)]);
    EXPECT_NEAR(mse_uplink(v), ref, 1e-15);
  }
}

TEST(Aggregate, SingleRecordPassesThrough) {
  const auto rows = aggregate({rec(10, Method::Elg, 42, true, 0.2)});
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].avg_hops, 42);
  EXPECT_NEAR(rows[0].mse, 0.04, 1e-12);
  EXPECT_EQ(rows[0].convergence_rate, 1.0);
  EXPECT_EQ(rows[0].trials, 1);
}

TEST(Aggregate, MeanOfHops) {
  const auto rows = aggregate({rec(0, Method::Rl, 10, true), rec(0, Method::Rl, 20, true)});
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].avg_hops, 15);
}

TEST(Aggregate, MseOverConvergedOnly) {
  const auto rows = aggregate({rec(0, Method::Elg, 10, true, 0.1), rec(0, Method::Elg, 30, false, 0.9),
                               rec(0, Method::Elg, 20, true, 0.3)});
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_NEAR(rows[0].mse, (0.01 + 0.09) / 2, 1e-12);
  EXPECT_NEAR(rows[0].convergence_rate, 2.0 / 3, 1e-15);
  EXPECT_EQ(rows[0].avg_hops, 20);
}

TEST(Aggregate, NothingConvergedLeavesMseNan) {
  const auto rows = aggregate({rec(0, Method::Elg, 10, false)});
  EXPECT_TRUE(std::isnan(rows[0].mse));
  EXPECT_EQ(rows[0].convergence_rate, 0.0);
}

TEST(Aggregate, FailedSetupsExcludedFromHops) {
  auto bad = rec(0, Method::Elg, 0, false);
  bad.setup_failed = true;
  const auto rows = aggregate({rec(0, Method::Elg, 12, true), bad});
  EXPECT_EQ(rows[0].avg_hops, 12);
  EXPECT_EQ(rows[0].trials, 2);
  EXPECT_EQ(rows[0].convergence_rate, 0.5);
}

TEST(Aggregate, GroupsOrderedBySnrThenMethod) {
  const auto rows = aggregate({rec(20, Method::Rl, 1, true), rec(0, Method::Rl, 1, true),
                               rec(20, Method::Elg, 1, true), rec(0, Method::MaxEnergyElg, 1, true)});
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].snr_db, 0);
  EXPECT_EQ(rows[0].method, Method::MaxEnergyElg);
  EXPECT_EQ(rows[1].method, Method::Rl);
  EXPECT_EQ(rows[2].snr_db, 20);
  EXPECT_EQ(rows[2].method, Method::Elg);
}

TEST(AggregateCsv, RoundTripIsExact) {
  Rng rng(11);
  std::vector<TrialRecord> recs;
  for (int i = 0; i < 60; ++i)
    recs.push_back(rec(5.0 * (i % 3), static_cast<Method>(i % 2 * 2), rng.uniform(20, 90), rng.uniform() < 0.7,
                       rng.uniform(-0.3, 0.3)));
  const auto rows = aggregate(recs);
  std::stringstream ss;
  write_aggregate_csv(ss, rows);
  const auto back = read_aggregate_csv(ss);
  ASSERT_EQ(back.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(back[i].snr_db, rows[i].snr_db);
    EXPECT_EQ(back[i].method, rows[i].method);
    EXPECT_EQ(back[i].avg_hops, rows[i].avg_hops);
    EXPECT_EQ(back[i].mse, rows[i].mse);
    EXPECT_EQ(back[i].convergence_rate, rows[i].convergence_rate);
    EXPECT_EQ(back[i].trials, rows[i].trials);
  }
}

TEST(AggregateCsv, HeaderLine) {
  std::stringstream ss;
  write_aggregate_csv(ss, {});
  EXPECT_EQ(ss.str(), "snr_db,method,avg_hops,mse,convergence_rate,trials\n");
}

TEST(AggregateCsv, ParseErrorNamesTheLine) {
  std::stringstream ss("snr_db,method,avg_hops,mse,convergence_rate,trials\n0,elg,1,0,1,1\n10,elg,x,0,1,1\n");
  try {
    read_aggregate_csv(ss);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(AggregateCsv, UnknownMethodRejected) {
  std::stringstream ss("snr_db,method,avg_hops,mse,convergence_rate,trials\n0,dqn,1,0,1,1\n");
  EXPECT_THROW(read_aggregate_csv(ss), ParseError);
}

TEST(Reduction, MeanOfPerPointPercentages) {
  std::vector<AggregateRow> rows;
  auto add = [&](double snr, Method m, double mse) {
    AggregateRow r;
    r.snr_db = snr;
    r.method = m;
    r.mse = mse;
    rows.push_back(r);
  };
  add(0, Method::Elg, 0.1);
  add(0, Method::Rl, 0.05);  // 50%
  add(10, Method::Elg, 0.2);
  add(10, Method::Rl, 0.15);  // 25%
  add(20, Method::Elg, 0.1);
  add(20, Method::Rl, 0.11);  // -10%
  EXPECT_NEAR(mean_reduction_percent(rows, Method::Rl, Method::Elg, &AggregateRow::mse), 65.0 / 3, 1e-12);
}

TEST(Reduction, SkipsPointsWithoutBothMethods) {
  std::vector<AggregateRow> rows(3);
  rows[0] = {0, Method::Elg, 10, 0.1, 1, 1};
  rows[1] = {0, Method::Rl, 5, 0.1, 1, 1};
  rows[2] = {10, Method::Elg, 10, 0.1, 1, 1};
  EXPECT_NEAR(mean_reduction_percent(rows, Method::Rl, Method::Elg, &AggregateRow::avg_hops), 50.0, 1e-12);
}

TEST(MethodName, RoundTrips) {
  for (auto m : {Method::Elg, Method::MaxEnergyElg, Method::Rl}) EXPECT_EQ(parse_method(method_name(m)), m);
  EXPECT_THROW(parse_method("lstm"), ConfigError);
}
