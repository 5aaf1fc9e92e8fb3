#include <gtest/gtest.h>

#include <random>

#include "evload/chargeopt.hpp"
#include "support.hpp"

using namespace evload;
using evload::test::make_session;

namespace {

double relative_diff(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace

TEST(Optimize, ChargesInCheapestHour) {
  std::vector<double> prices(24, 0.30);
  prices[3] = 0.10;
  const auto rate = test::hourly_tou(prices);
  const std::vector<Session> s = {make_session(0, 240, 6.6)};
  const auto sched = optimize(s, rate, 60);
  EXPECT_NEAR(sched.rates[0][3], 6.6, 1e-6);
  EXPECT_NEAR(sched.cost, 0.66, 1e-6);
  EXPECT_NEAR(brute_force_cost(s, rate, 60), sched.cost, 1e-9);
  EXPECT_FALSE(check_schedule(sched, s).has_value());
}

TEST(Optimize, PeakMinFlattensOverlappingSessions) {
  const std::vector<Session> s = {make_session(600, 120, 6.6, 6.6, make_segment(Location::Workplace, Level::L2, DayType::Weekday), "a"),
                                  make_session(600, 120, 6.6, 6.6, make_segment(Location::Workplace, Level::L2, DayType::Weekday), "b")};
  const auto sched = optimize(s, test::peak_min_rate(), 60);
  EXPECT_NEAR(sched.aggregate().peak(), 6.6, 1e-6);
  EXPECT_NEAR(brute_force_cost(s, test::peak_min_rate(), 60), 6.6, 1e-9);
}

TEST(Optimize, FlatPriceCostIsEnergyTimesPrice) {
  Rng rng(2);
  std::uniform_real_distribution<double> start(0, 900), energy(0, 20);
  std::vector<Session> s;
  double total = 0;
  for (int i = 0; i < 30; ++i) {
    s.push_back(make_session(start(rng), 480, energy(rng)));
    total += s.back().energy_kwh;
  }
  const auto sched = optimize(s, test::flat_rate(0.2), 15);
  EXPECT_NEAR(sched.cost, 0.2 * total, 1e-6 * total);
}

TEST(Optimize, CapAtMinimumPeakIsFeasible) {
  std::vector<Session> s = {make_session(600, 120, 6.6), make_session(600, 120, 6.6)};
  auto rate = test::flat_rate(0.1);
  rate.cap_kw = 6.6;
  const auto sched = optimize(s, rate, 60);
  EXPECT_LE(sched.aggregate().peak(), 6.6 + 1e-9);
  EXPECT_FALSE(check_schedule(sched, s).has_value());
}

TEST(Optimize, BindingCapIsNamed) {
  std::vector<Session> s = {make_session(600, 120, 13.2), make_session(600, 120, 13.2)};
  auto rate = test::flat_rate(0.1);
  rate.cap_kw = 6.6;
  try {
    optimize(s, rate, 60);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "infeasible");
    EXPECT_NE(std::string(e.what()).find("cap"), std::string::npos);
  }
}

TEST(Optimize, RejectsMidnightCrossing) {
  std::vector<Session> s = {make_session(1400, 120, 1)};
  EXPECT_THROW(optimize(s, test::flat_rate(0.1), 15), Error);
  const auto prepared = prepare_instance(s, 15);
  EXPECT_EQ(prepared.report.truncated_at_midnight, 1u);
  EXPECT_NO_THROW(optimize(prepared.sessions, test::flat_rate(0.1), 15));
}

TEST(Optimize, DemandChargeDominatesUncontrolled) {
  const auto rate = load_rate(test::source_path("rates/pge_e19.json"));
  Rng rng(8);
  std::uniform_real_distribution<double> start(360, 720), dur(240, 600), energy(2, 25);
  std::vector<Session> s;
  for (int i = 0; i < 40; ++i) s.push_back(make_session(start(rng), dur(rng), energy(rng)));
  const auto prepared = prepare_instance(s, 15);
  const auto sched = optimize(prepared.sessions, rate, 15);
  EXPECT_LE(sched.cost, uncontrolled_cost(prepared.sessions, rate, 15) + 1e-9);
  EXPECT_FALSE(check_schedule(sched, prepared.sessions).has_value());
  EXPECT_NEAR(sched.aggregate().energy_kwh(), aggregate(prepared.sessions, 15).energy_kwh(), 1e-6);
}

TEST(Optimize, PeakScalesWithDuplication) {
  Rng rng(5);
  std::uniform_real_distribution<double> start(420, 600), dur(120, 480), energy(1, 12);
  std::vector<Session> base;
  for (int i = 0; i < 6; ++i) base.push_back(make_session(start(rng), dur(rng), energy(rng)));
  const double peak = optimize(base, test::peak_min_rate(), 15).aggregate().peak();
  for (int k : {2, 3}) {
    std::vector<Session> dup;
    for (int r = 0; r < k; ++r) dup.insert(dup.end(), base.begin(), base.end());
    EXPECT_NEAR(optimize(dup, test::peak_min_rate(), 15).aggregate().peak(), k * peak, 1e-6 * k * peak);
  }
}

TEST(Prepare, ClipsAndReports) {
  std::vector<Session> s = {make_session(600, 60, 100), make_session(0, 60, 1)};
  const auto p = prepare_instance(s, 15);
  EXPECT_NEAR(p.sessions[0].energy_kwh, 6.6, 1e-12);
  EXPECT_EQ(p.report.clipped_sessions, 1u);
  EXPECT_NEAR(p.report.clipped_kwh, 93.4, 1e-9);
  EXPECT_EQ(p.sessions[1].energy_kwh, 1.0);
  EXPECT_TRUE(prepare_instance(std::vector<Session>{}, 15).sessions.empty());
}

TEST(BruteForce, ExactlyFilledWindowIsUnique) {
  const std::vector<Session> s = {make_session(120, 180, 19.8)};
  const auto rate = load_rate(test::source_path("rates/pge_e19.json"));
  EXPECT_NEAR(brute_force_cost(s, rate, 60), optimize(s, rate, 60).cost, 1e-9);
}

TEST(BruteForce, RejectsLargeInstances) {
  std::vector<Session> s(7, make_session(0, 60, 1));
  EXPECT_THROW(brute_force_cost(s, test::flat_rate(0.1), 60), Error);
  std::vector<Session> wide = {make_session(0, 1200, 1)};
  EXPECT_THROW(brute_force_cost(wide, test::flat_rate(0.1), 60), Error);
}

TEST(BruteForce, UpperBoundsLp) {
  Rng rng(12);
  std::uniform_real_distribution<double> start(0, 600), dur(120, 480), energy(0.5, 10);
  const auto rate = load_rate(test::source_path("rates/pge_e19.json"));
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<Session> s;
    for (int i = 0; i < 3; ++i) s.push_back(make_session(start(rng), dur(rng), energy(rng)));
    const auto p = prepare_instance(s, 120);
    const double lp = optimize(p.sessions, rate, 120).cost;
    const double bf = brute_force_cost(p.sessions, rate, 120);
    EXPECT_LE(lp, bf + 1e-9 * std::max(1.0, bf)) << relative_diff(lp, bf);
  }
}

TEST(Instance, DumpAndReload) {
  const auto dir = std::filesystem::temp_directory_path() / "evload_instance_test";
  std::filesystem::remove_all(dir);
  std::vector<Session> s = {make_session(600, 120, 6.6)};
  const auto rate = load_rate(test::source_path("rates/pge_e19.json"));
  write_instance(dir.string(), s, rate, 15);
  const auto back = read_instance(dir.string());
  EXPECT_EQ(back.dt, 15);
  EXPECT_EQ(rate_hash(back.rate), rate_hash(rate));
  ASSERT_EQ(back.sessions.size(), 1u);
  EXPECT_EQ(back.sessions[0].energy_kwh, 6.6);
  std::filesystem::remove_all(dir);
}
