#include <gtest/gtest.h>

#include "evload/registry.hpp"
#include "evload/scenario.hpp"
#include "support.hpp"

using namespace evload;

namespace {

const ModelRegistry& registry() {
  static const ModelRegistry reg = ModelRegistry::load(test::source_path("models"));
  return reg;
}

ScenarioConfig base(double drivers = 200000) {
  auto c = load_scenario_config(test::source_path("configs/base_case.json"));
  c.total_drivers = drivers;
  return c;
}

Segment seg(Location l, Level v, DayType d = DayType::Weekday) { return make_segment(l, v, d); }

}  // namespace

TEST(SegmentCounts, BaseCaseArithmetic) {
  const auto counts = segment_counts(base(5000000));
  EXPECT_EQ(counts.at(seg(Location::MUD, Level::L2)), 300000u);
  EXPECT_EQ(counts.at(seg(Location::ResidentialSF, Level::L1)), 540000u);
  EXPECT_EQ(counts.at(seg(Location::ResidentialSF, Level::L2)), 2160000u);
  EXPECT_EQ(counts.at(seg(Location::Workplace, Level::L2)), 600000u);
  EXPECT_EQ(counts.at(seg(Location::PublicL2, Level::L2)), 82500u);
  EXPECT_EQ(counts.at(seg(Location::PublicDCFC, Level::DCFC)), 82500u);
}

TEST(SegmentCounts, ZeroShareAndRoundingConserveGroups) {
  auto c = base(1001);
  c.segment_shares = {{Group::Residential, 0.0}, {Group::Workplace, 1.0}, {Group::PublicL2, 0.0}, {Group::PublicDCFC, 0.0}};
  const auto counts = segment_counts(c);
  EXPECT_EQ(counts.at(seg(Location::MUD, Level::L2)), 0u);
  EXPECT_EQ(counts.at(seg(Location::Workplace, Level::L2)), round_half_up(1001 * 0.8));
  c = base(12345);
  const auto k = segment_counts(c);
  const auto res = round_half_up(12345 * 0.75 * 0.8);
  EXPECT_EQ(k.at(seg(Location::MUD, Level::L2)) + k.at(seg(Location::ResidentialSF, Level::L1)) +
                k.at(seg(Location::ResidentialSF, Level::L2)),
            res);
  EXPECT_EQ(round_half_up(2.5), 3u);
  EXPECT_EQ(round_half_up(2.4999), 2u);
}

TEST(SegmentCounts, DoublingDriversDoublesCounts) {
  const auto a = segment_counts(base(1000000)), b = segment_counts(base(2000000));
  for (const auto& [s, n] : a) EXPECT_NEAR(static_cast<double>(b.at(s)), 2.0 * n, 2.0) << s.key();
}

TEST(Config, FieldErrorsNameTheField) {
  auto j = to_json(base());
  j["segment_shares"]["workplace"] = 0.05;
  try {
    scenario_config_from_json(j);
    FAIL();
  } catch (const FieldError& e) {
    EXPECT_EQ(e.field(), "segment_shares");
    EXPECT_NE(std::string(e.what()).find("0.9"), std::string::npos) << e.what();
  }
  j = to_json(base());
  j["mud_fraction"] = 1.5;
  try {
    scenario_config_from_json(j);
    FAIL();
  } catch (const FieldError& e) {
    EXPECT_EQ(e.field(), "mud_fraction");
  }
  j = to_json(base());
  j["colour"] = "red";
  EXPECT_THROW(scenario_config_from_json(j), FieldError);
  j = to_json(base());
  j["timer_policies"] = {{{"participation", 0.7}, {"start", 1380}}, {{"participation", 0.5}, {"start", 60}}};
  EXPECT_THROW(scenario_config_from_json(j), FieldError);
}

TEST(Config, JsonRoundTrip) {
  auto c = base();
  c.timer_policies = {{0.25, 1380}};
  c.control_assignment["workplace_l2_weekday"] = "workplace_peak_min";
  const auto back = scenario_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
}

TEST(Config, ShippedConfigsLoad) {
  for (const auto& e : std::filesystem::directory_iterator(test::source_path("configs")))
    EXPECT_NO_THROW(load_scenario_config(e.path().string())) << e.path();
}

TEST(Scenario, WorkplaceOnlyTotalEqualsSegment) {
  auto c = base(100000);
  c.segment_shares = {{Group::Residential, 0.0}, {Group::Workplace, 1.0}, {Group::PublicL2, 0.0}, {Group::PublicDCFC, 0.0}};
  const auto r = run_scenario(c, registry().models(), {});
  const auto& w = r.at(seg(Location::Workplace, Level::L2));
  EXPECT_EQ(w.sessions, 80000u);
  for (std::size_t k = 0; k < r.total.size(); ++k) EXPECT_NEAR(r.total.values[k], w.profile.values[k], 1e-9);
}

TEST(Scenario, SegmentsAddUpAndRunsAreDeterministic) {
  const auto c = base();
  const auto a = run_scenario(c, registry().models(), {}, 1);
  const auto b = run_scenario(c, registry().models(), {}, 4);
  EXPECT_EQ(a.total.values, b.total.values);
  double e = 0;
  for (const auto& s : a.segments) e += s.profile.energy_kwh();
  EXPECT_NEAR(a.energy_kwh(), e, 1e-6 * e);
}

TEST(Scenario, BaseCasePeaksInLateEvening) {
  const auto r = run_scenario(base(1000000), registry().models(), {});
  EXPECT_GE(r.peak_minute(), 21 * 60);
  EXPECT_LT(r.peak_minute(), 24 * 60);
}

TEST(Scenario, L1DerivedWithoutTimerComponents) {
  const auto r = run_scenario(base(), registry().models(), {});
  const auto& l1 = r.at(seg(Location::ResidentialSF, Level::L1));
  EXPECT_NE(l1.model_note.find("derived from residential_sf_l2_weekday"), std::string::npos) << l1.model_note;
  auto [m, note] = resolve_model(base(), registry().models(), seg(Location::ResidentialSF, Level::L1));
  EXPECT_TRUE(flag_timer_components(m.mixture, 1110, 30, 10).empty());
}

TEST(Scenario, TimerPolicyCreatesStepAtStart) {
  auto c = base();
  c.observed_timers = false;
  c.timer_policies = {{1.0, 1380}};
  const auto r = run_scenario(c, registry().models(), {});
  const auto& l2 = r.at(seg(Location::ResidentialSF, Level::L2));
  const auto p = resample(l2.profile, 15);
  EXPECT_GE(p.values[1380 / 15], 10 * p.values[1365 / 15]);
  EXPECT_EQ(l2.timers.selected, l2.sessions);
  EXPECT_EQ(l2.timers.applied + l2.timers.rejected, l2.timers.selected);
  EXPECT_GT(l2.timers.applied, l2.sessions / 2);
  // Zero participation draws the same sessions, so energy must match.
  auto plain = c;
  plain.timer_policies = {{0.0, 1380}};
  const auto u = run_scenario(plain, registry().models(), {});
  EXPECT_NEAR(l2.profile.energy_kwh(), u.at(l2.segment).profile.energy_kwh(), 1e-6 * l2.profile.energy_kwh());
}

TEST(Scenario, StaggeredTimersLowerPeak) {
  const auto single = load_scenario_config(test::source_path("configs/timers_2000.json"));
  const auto staggered = load_scenario_config(test::source_path("configs/timers_staggered.json"));
  auto small = [](ScenarioConfig c) {
    c.total_drivers = 500000;
    return c;
  };
  const auto a = run_scenario(small(single), registry().models(), {});
  const auto b = run_scenario(small(staggered), registry().models(), {});
  EXPECT_LE(b.peak_kw(), a.peak_kw());
}

TEST(Scenario, MoreWorkplaceMovesPeakEarlier) {
  auto c = base(1000000);
  auto shifted = c;
  shifted.segment_shares = {{Group::Residential, 0.40}, {Group::Workplace, 0.50}, {Group::PublicL2, 0.05}, {Group::PublicDCFC, 0.05}};
  const auto r = compare_scenarios({c, shifted}, registry().models(), {}, 7);
  EXPECT_LT(r[1].peak_minute(), r[0].peak_minute());
}

TEST(Scenario, CompareIsPositionIndependent) {
  const auto a = base(), b = base(50000);
  const auto r1 = compare_scenarios({a, b}, registry().models(), {}, 3);
  const auto r2 = compare_scenarios({b, a}, registry().models(), {}, 3);
  EXPECT_EQ(r1[0].total.values, r2[1].total.values);
  EXPECT_EQ(r1[1].total.values, r2[0].total.values);
  EXPECT_TRUE(compare_scenarios({}, registry().models(), {}, 3).empty());
}

TEST(Scenario, ControlledSegmentUsesSurrogateResolution) {
  auto c = base();
  c.control_assignment["workplace_l2_weekday"] = "workplace_peak_min";
  const auto r = run_scenario(c, registry().models(), registry().surrogates());
  const auto& w = r.at(seg(Location::Workplace, Level::L2));
  ASSERT_TRUE(w.uncontrolled.has_value());
  EXPECT_EQ(w.profile.dt, 15);
  EXPECT_EQ(r.total.dt, 15);
  EXPECT_LT(w.profile.peak(), resample(*w.uncontrolled, 15).peak());
  c.control_assignment["workplace_l2_weekday"] = "nope";
  EXPECT_THROW(run_scenario(c, registry().models(), registry().surrogates()), Error);
}

TEST(Scenario, MissingModelIsReported) {
  ModelSet none;
  EXPECT_THROW(run_scenario(base(1000), none, {}), Error);
}

TEST(RateDesign, PeakMinLowersWorkplacePeak) {
  auto c = base(100000);
  RateDesignOptions opt;
  opt.n_instances = 40;
  opt.n_vehicles = 60;
  const auto rep = rate_design_workflow(test::peak_min_rate(), registry().models(), c, 5, opt);
  const auto s = seg(Location::Workplace, Level::L2);
  EXPECT_LT(rep.after.at(s).profile.peak(), resample(rep.before.at(s).profile, 15).peak());
  EXPECT_GT(rep.speedup(), 1.0);
  const auto j = to_json(rep);
  EXPECT_TRUE(j.contains("timings"));
}

TEST(RateDesign, FlatRateConservesEnergyWithinDrift) {
  RateDesignOptions opt;
  opt.n_instances = 40;
  opt.n_vehicles = 60;
  const auto rep = rate_design_workflow(test::flat_rate(0.2), registry().models(), base(100000), 6, opt);
  const auto s = seg(Location::Workplace, Level::L2);
  const double before = rep.before.at(s).profile.energy_kwh(), after = rep.after.at(s).profile.energy_kwh();
  EXPECT_LE(std::abs(after - before) / before, std::max(0.02, 3 * rep.drift));
}

TEST(Display, DownsamplesTo288Points) {
  const auto r = run_scenario(base(10000), registry().models(), {});
  EXPECT_EQ(display_profile(r.total).size(), 288u);
  const auto cols = profile_columns(r);
  EXPECT_EQ(cols.back().first, "total");
}
