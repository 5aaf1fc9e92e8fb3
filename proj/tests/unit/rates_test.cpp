#include <gtest/gtest.h>

#include <filesystem>

#include "evload/profile.hpp"
#include "evload/rates.hpp"
#include "support.hpp"

using namespace evload;

namespace {

LoadProfile constant(int dt, double kw) {
  auto p = LoadProfile::zeros(dt);
  std::fill(p.values.begin(), p.values.end(), kw);
  return p;
}

}  // namespace

TEST(EnergyCost, FlatAndPiecewise) {
  EXPECT_NEAR(energy_cost(constant(15, 10), test::flat_rate(0.10)), 24.0, 1e-9);
  EXPECT_EQ(energy_cost(LoadProfile::zeros(15), test::flat_rate(0.10)), 0.0);
  RateSchedule two;
  two.energy_prices = {{{0, 720}, 0.10}, {{720, 1440}, 0.20}};
  EXPECT_NEAR(energy_cost(constant(1, 10), two), 36.0, 1e-9);
}

TEST(DemandCost, WindowMaxima) {
  RateSchedule r = test::flat_rate(0.0);
  r.demand_charges = {{{0, 1440}, 2.0}};
  LoadProfile p{480, {10, 20, 15}};
  EXPECT_NEAR(demand_cost(p, r), 40.0, 1e-12);
  EXPECT_EQ(demand_cost(LoadProfile{480, {0, 0, 0}}, r), 0.0);

  RateSchedule two = test::flat_rate(0.0);
  two.demand_charges = {{{0, 1440}, 1.0}, {{960, 1260}, 3.0}};
  auto q = LoadProfile::zeros(60);
  q.values[12] = 50;
  q.values[18] = 20;
  EXPECT_NEAR(demand_cost(q, two), 110.0, 1e-12);
}

TEST(DemandCost, WrappingWindow) {
  RateSchedule r = test::flat_rate(0.0);
  r.demand_charges = {{{1320, 120}, 1.0}};
  auto q = LoadProfile::zeros(60);
  q.values[0] = 30;
  q.values[12] = 100;
  EXPECT_NEAR(demand_cost(q, r), 30.0, 1e-12);
}

TEST(TotalCost, SumsAndPeakMin) {
  RateSchedule r = test::flat_rate(0.10);
  r.demand_charges = {{{0, 1440}, 2.0}};
  const auto p = constant(15, 10);
  EXPECT_NEAR(total_cost(p, r), 24.0 + 20.0, 1e-9);
  EXPECT_NEAR(total_cost(p, test::flat_rate(0.10)), energy_cost(p, test::flat_rate(0.10)), 1e-12);
  EXPECT_EQ(total_cost(LoadProfile{480, {10, 20, 15}}, test::peak_min_rate()), 20.0);
}

TEST(TotalCost, HomogeneousMonotoneAndResampleInvariant) {
  const auto r = load_rate(test::source_path("rates/pge_e19.json"));
  auto p = LoadProfile::zeros(15);
  for (std::size_t k = 0; k < p.size(); ++k) p.values[k] = 50 + 40 * std::sin(0.1 * k);
  RateSchedule demand_only = r;
  demand_only.energy_prices = {{{0, 1440}, 0.0}};
  auto scaled = p;
  scaled *= 2.5;
  EXPECT_NEAR(demand_cost(scaled, demand_only), 2.5 * demand_cost(p, demand_only), 1e-9);
  auto bigger = p;
  bigger.values[40] += 30;
  EXPECT_LE(total_cost(p, r), total_cost(bigger, r));
  EXPECT_NEAR(total_cost(resample(p, 1), r), total_cost(p, r), 1e-9);
}

TEST(ValidateRate, Diagnostics) {
  EXPECT_FALSE(validate_rate(test::flat_rate(0.1)).has_value());
  RateSchedule gap;
  gap.name = "gap";
  gap.energy_prices = {{{0, 600}, 0.1}, {{700, 1440}, 0.2}};
  auto d = validate_rate(gap);
  ASSERT_TRUE(d.has_value());
  EXPECT_FALSE(d->indices.empty());
  RateSchedule neg = test::flat_rate(-0.1);
  EXPECT_TRUE(validate_rate(neg).has_value());
  RateSchedule cap = test::flat_rate(0.1);
  cap.cap_kw = 0.0;
  EXPECT_TRUE(validate_rate(cap).has_value());
  RateSchedule overlap;
  overlap.name = "overlap";
  overlap.energy_prices = {{{0, 800}, 0.1}, {{700, 1440}, 0.2}};
  EXPECT_TRUE(validate_rate(overlap).has_value());
}

TEST(RateFiles, ShippedFixturesLoadAndRoundTrip) {
  int n = 0;
  for (const auto& e : std::filesystem::directory_iterator(test::source_path("rates"))) {
    const auto r = load_rate(e.path().string());
    EXPECT_FALSE(validate_rate(r).has_value()) << e.path();
    const auto back = rate_from_json(to_json(r));
    EXPECT_EQ(rate_hash(back), rate_hash(r));
    ++n;
  }
  EXPECT_GE(n, 6);
}

TEST(RateFiles, HashTracksContent) {
  auto a = test::flat_rate(0.1), b = test::flat_rate(0.1);
  EXPECT_EQ(rate_hash(a), rate_hash(b));
  b.energy_prices[0].price = 0.11;
  EXPECT_NE(rate_hash(a), rate_hash(b));
  EXPECT_EQ(rate_hash(a).size(), 64u);
}
