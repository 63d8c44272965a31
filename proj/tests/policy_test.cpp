#include "awima/policy.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

using namespace awima;

TEST(Goodness, UpdateArithmetic) {
  EXPECT_DOUBLE_EQ(update_goodness({0.8, 0.5, 0}, 0.4).value, 0.6);
  EXPECT_DOUBLE_EQ(update_goodness({0.8, 1.0, 0}, 0.4).value, 0.4);
  EXPECT_DOUBLE_EQ(update_goodness({0.8, 0.0, 0}, 0.4).value, 0.8);
  EXPECT_EQ(update_goodness({0.8, 0.5, 3}, 0.4).sessionsSeen, 4u);
  EXPECT_THROW(update_goodness({0.5, 0.5, 0}, 1.01), Error);
  EXPECT_THROW(update_goodness({0.5, 0.5, 0}, -0.01), Error);
}

TEST(Goodness, ConvexAndGeometricConvergence) {
  SeededRng rng(1);
  for (int i = 0; i < 5000; ++i) {
    const GoodnessMetric g{rng.uniform01(), rng.uniform01(), 0};
    const double s = rng.uniform01();
    const double v = update_goodness(g, s).value;
    EXPECT_GE(v, std::min(g.value, s) - 1e-12);
    EXPECT_LE(v, std::max(g.value, s) + 1e-12);
  }
  GoodnessMetric g{0.1, 0.3, 0};
  const double target = 0.9;
  for (int n = 1; n <= 30; ++n) {
    g = update_goodness(g, target);
    EXPECT_NEAR(target - g.value, (target - 0.1) * std::pow(0.7, n), 1e-12);
  }
}

TEST(ScoreSession, ProductFormula) {
  SessionRecord r;
  r.promise = {1000, 60, 1};
  r.deliveredBandwidth = 1000;
  r.completionRatio = 1.0;
  EXPECT_DOUBLE_EQ(score_session(r), 1.0);
  r.deliveredBandwidth = 500;
  r.completionRatio = 0.5;
  EXPECT_DOUBLE_EQ(score_session(r), 0.25);
  r.promise.avgBandwidth = 0;
  EXPECT_THROW(score_session(r), Error);
}

TEST(ScoreSession, OverDeliveryCappedAtCompletion) {
  SeededRng rng(2);
  for (int i = 0; i < 10000; ++i) {
    SessionRecord r;
    r.promise = {1 + rng.uniform01() * 1e6, 10, 1};
    r.deliveredBandwidth = rng.uniform01() * 3e6;
    r.completionRatio = rng.uniform01();
    const double g = score_session(r);
    EXPECT_GE(g, 0.0);
    EXPECT_LE(g, 1.0);
    EXPECT_LE(g, r.completionRatio + 1e-12);
    if (r.deliveredBandwidth >= r.promise.avgBandwidth) EXPECT_DOUBLE_EQ(g, r.completionRatio);
  }
}

TEST(SpUtility, ZeroWeightsDenyAtThreshold) {
  UtilityWeights w;
  w.sp = {0, 0, 0, 0};
  const double u = sp_utility({100, 1, 10, 100, 0.5}, {1000, 60, 1}, w);
  EXPECT_DOUBLE_EQ(u, 0.0);
  EXPECT_FALSE(sp_should_serve(u, w));
}

TEST(SpUtility, DepletedEnergyDenies) {
  UtilityWeights w;
  const double u = sp_utility({0.0, 1.0, 0, 100, 0.5}, {1000, 60, 1}, w);
  EXPECT_LT(u, -1e6);
  EXPECT_FALSE(sp_should_serve(u, w));
}

TEST(SpUtility, MonotoneInRevenue) {
  SeededRng rng(3);
  for (int i = 0; i < 5000; ++i) {
    UtilityWeights w;
    w.sp = {rng.uniform01(), rng.uniform01(), rng.uniform01(), rng.uniform01()};
    const SpUtilityInputs s{1 + rng.uniform01() * 1000, rng.uniform01(), rng.uniform01() * 1e5, 1 + rng.uniform01() * 1e6,
                            rng.uniform01()};
    QosPromise lo{1000, 1 + rng.uniform01() * 100, 0.01 + rng.uniform01()};
    QosPromise hi = lo;
    hi.cost += rng.uniform01();
    EXPECT_GE(sp_utility(s, hi, w), sp_utility(s, lo, w));
  }
}

TEST(ClientUtility, SingleTermMonotonicity) {
  ClientWeights w;
  const QosPromise needs{100000, 60, 1};
  OfferView a{0.9, 200000, 1, 100};
  OfferView b = a;
  b.goodness = 0.4;
  EXPECT_GT(client_utility(needs, a, 1.0, 1e6, w), client_utility(needs, b, 1.0, 1e6, w));
  OfferView free = a;
  free.cost = 0;
  EXPECT_GT(client_utility(needs, free, 1.0, 1e6, w), client_utility(needs, a, 1.0, 1e6, w));
  EXPECT_THROW(client_utility({0, 60, 1}, a, 1.0, 1e6, w), Error);
}

TEST(ClientUtility, ArgmaxInvariantUnderUniformScaling) {
  SeededRng rng(4);
  for (int trial = 0; trial < 2000; ++trial) {
    ClientWeights w{rng.uniform01(), rng.uniform01(), rng.uniform01(), rng.uniform01()};
    const double c = 0.01 + rng.uniform01() * 100;
    ClientWeights scaled{w.cost * c, w.duration * c, w.goodness * c, w.bandwidth * c};
    const QosPromise needs{1 + rng.uniform01() * 1e6, 1 + rng.uniform01() * 100, 1};
    const auto n = 2 + rng.below(6);
    std::vector<std::pair<OfferView, double>> cands;
    for (std::uint64_t i = 0; i < n; ++i) {
      cands.push_back({{rng.uniform01(), rng.uniform01() * 2e6, rng.uniform01() * 5, rng.uniform01() * 200},
                       rng.uniform01()});
    }
    auto pick = [&](const ClientWeights& ww) {
      std::size_t best = 0;
      double bu = -1e300;
      for (std::size_t i = 0; i < cands.size(); ++i) {
        const double u = client_utility(needs, cands[i].first, cands[i].second, 1e6, ww);
        if (u > bu) {
          bu = u;
          best = i;
        }
      }
      return best;
    };
    EXPECT_EQ(pick(w), pick(scaled));
  }
}

TEST(AllocateFractions, Examples) {
  auto single = allocate_fractions(100, {{sp_id(1), 500}});
  EXPECT_EQ(single.units, std::vector<std::uint32_t>{1024});
  EXPECT_FALSE(single.bestEffort);

  auto two = allocate_fractions(200, {{sp_id(1), 100}, {sp_id(2), 100}});
  EXPECT_EQ(two.units, (std::vector<std::uint32_t>{512, 512}));

  auto split = allocate_fractions(400, {{sp_id(1), 300}, {sp_id(2), 100}});
  EXPECT_EQ(split.units, (std::vector<std::uint32_t>{768, 256}));

  // Minimal prefix: the first offer alone covers the demand.
  auto prefix = allocate_fractions(100, {{sp_id(1), 150}, {sp_id(2), 100}});
  EXPECT_EQ(prefix.sps.size(), 1u);

  auto short_of = allocate_fractions(1000, {{sp_id(1), 100}, {sp_id(2), 300}});
  EXPECT_TRUE(short_of.bestEffort);
  EXPECT_EQ(short_of.sps.size(), 2u);
  EXPECT_EQ(short_of.units, (std::vector<std::uint32_t>{256, 768}));

  EXPECT_THROW(allocate_fractions(1, {}), Error);
  EXPECT_THROW(allocate_fractions(1, {{sp_id(1), 0}}), Error);
}

TEST(AllocateFractions, AlwaysAProbabilityVector) {
  SeededRng rng(5);
  for (int i = 0; i < 5000; ++i) {
    std::vector<Offer> offers;
    double total = 0;
    const auto n = 1 + rng.below(8);
    for (std::uint64_t j = 0; j < n; ++j) {
      offers.push_back({sp_id(static_cast<std::uint32_t>(j)), 1 + rng.uniform01() * 1e6});
      total += offers.back().bandwidth;
    }
    const double demand = rng.uniform01() * total * 1.2;
    const auto a = allocate_fractions(demand, offers);
    EXPECT_EQ(std::accumulate(a.units.begin(), a.units.end(), 0u), kFractionUnits);
    double used_bw = 0;
    for (std::size_t j = 0; j < a.sps.size(); ++j) used_bw += offers[j].bandwidth;
    for (std::size_t j = 0; j < a.sps.size(); ++j) {
      EXPECT_NEAR(a.fraction(j), offers[j].bandwidth / used_bw, 1.0 / kFractionUnits);
    }
    if (!a.bestEffort) {
      EXPECT_GE(used_bw, demand);
      if (a.sps.size() > 1) EXPECT_LT(used_bw - offers[a.sps.size() - 1].bandwidth, demand);
    }
  }
}

TEST(Revenue, ExactSplit) {
  SessionRecord r;
  r.promise = {1000, 10, 1.0};
  r.elapsed = 10;
  const auto s = allocate_revenue(r, {0.5, 0.3, 0.2});
  EXPECT_EQ(s.total, 10000);
  EXPECT_EQ(s.serviceProvider, 5000);
  EXPECT_EQ(s.server, 3000);
  EXPECT_EQ(s.carrier, 2000);

  r.elapsed = 0;
  const auto z = allocate_revenue(r, {0.5, 0.3, 0.2});
  EXPECT_EQ(z.total + z.serviceProvider + z.server + z.carrier, 0);

  EXPECT_THROW(allocate_revenue(r, {0.5, 0.3, 0.3}), Error);
  EXPECT_THROW(allocate_revenue(r, {1.2, -0.2, 0.0}), Error);
}

TEST(Revenue, RandomPoliciesConserveMoney) {
  SeededRng rng(6);
  for (int i = 0; i < 10000; ++i) {
    const double a = rng.uniform01();
    const double b = rng.uniform01() * (1 - a);
    RevenuePolicy p{a, b, 1 - a - b};
    SessionRecord r;
    r.promise = {1, 1, 0.001 + rng.uniform01() * 10};
    r.elapsed = rng.uniform01() * 1000;
    const auto s = allocate_revenue(r, p);
    EXPECT_EQ(s.serviceProvider + s.server + s.carrier, s.total);
    EXPECT_GE(s.serviceProvider, 0);
    EXPECT_LE(std::abs(static_cast<double>(s.server) - p.server * s.total), 1.0);
  }
}

TEST(Apportion, LargestRemainderTiesToLowerIndex) {
  EXPECT_EQ(apportion(10, {1, 1, 1}), (std::vector<std::uint64_t>{4, 3, 3}));
  EXPECT_EQ(apportion(6, {2, 1}), (std::vector<std::uint64_t>{4, 2}));
  EXPECT_EQ(apportion(1024, {200000, 100000}), (std::vector<std::uint64_t>{683, 341}));
}
