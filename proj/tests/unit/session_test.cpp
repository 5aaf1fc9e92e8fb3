#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "evload/session.hpp"
#include "support.hpp"

using namespace evload;
using evload::test::make_session;

namespace {

GroundTruthSpec single_component(double corr, double energy_std = 3.0) {
  GroundTruthSpec spec;
  SegmentSpec ss;
  GeneratorComponent c;
  c.start_mean = 600;
  c.start_std = 60;
  c.energy_mean = 20;
  c.energy_std = energy_std;
  c.duration_mean = 480;
  c.duration_std = 30;
  c.correlation = corr;
  ss.components.push_back(c);
  ss.max_rate_pool.push_back({6.6, 1.0});
  spec.segments[make_segment(Location::Workplace, Level::L2, DayType::Weekday)] = ss;
  return spec;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i] / n, my += y[i] / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

const Segment kWork = make_segment(Location::Workplace, Level::L2, DayType::Weekday);

}  // namespace

TEST(Generate, ZeroSessionsIsEmpty) {
  EXPECT_TRUE(generate_sessions(single_component(0), kWork, 0, 1).empty());
}

TEST(Generate, DegenerateEnergySpread) {
  auto spec = single_component(0, 1e-9);
  spec.segments.begin()->second.components[0].energy_mean = 6.6;
  for (const auto& s : generate_sessions(spec, kWork, 200, 4)) EXPECT_NEAR(s.energy_kwh, 6.6, 1e-6);
}

TEST(Generate, RawDrawsCarryRequestedCorrelation) {
  const auto r = generate_sessions_detailed(single_component(-0.5), kWork, 20000, 9);
  EXPECT_NEAR(pearson(r.raw_start, r.raw_energy), -0.5, 0.03);
}

TEST(Generate, SessionsAreFeasibleAndDeterministic) {
  const auto a = generate_sessions(single_component(0.2), kWork, 500, 17);
  const auto b = generate_sessions(single_component(0.2), kWork, 500, 17);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_FALSE(check_session(a[i]).has_value());
    EXPECT_EQ(a[i].start_min, b[i].start_min);
    EXPECT_EQ(a[i].energy_kwh, b[i].energy_kwh);
    EXPECT_GE(a[i].start_min, 0);
    EXPECT_LT(a[i].start_min, 1440);
  }
}

TEST(Generate, ShippedSpecHasFewZeroEnergySessions) {
  const auto spec = load_ground_truth(test::source_path("data/ground_truth.json"));
  for (const auto& [seg, ss] : spec.segments) {
    const auto r = generate_sessions_detailed(spec, seg, 20000, 5);
    EXPECT_LT(r.zero_energy_fraction(), 0.02) << seg.key();
  }
}

TEST(Generate, ShippedWorkplaceAfternoonArrivalsNeedLessEnergy) {
  const auto spec = load_ground_truth(test::source_path("data/ground_truth.json"));
  const auto sessions = generate_sessions(spec, kWork, 50000, 21);
  const auto stats = conditional_energy_stats(sessions, {{360, 600}, {720, 1020}});
  ASSERT_GT(stats.windows[0].count, 100u);
  ASSERT_GT(stats.windows[1].count, 100u);
  EXPECT_LT(stats.windows[1].mean, stats.windows[0].mean);
}

TEST(SessionCsv, RoundTrip) {
  const auto sessions = generate_sessions(single_component(0.3), kWork, 50, 2);
  std::stringstream buf;
  write_sessions_csv(sessions, buf);
  const auto back = read_sessions_csv(buf);
  ASSERT_EQ(back.size(), sessions.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].id, sessions[i].id);
    EXPECT_EQ(back[i].segment, sessions[i].segment);
    EXPECT_EQ(back[i].start_min, sessions[i].start_min);
    EXPECT_EQ(back[i].duration_min, sessions[i].duration_min);
    EXPECT_EQ(back[i].energy_kwh, sessions[i].energy_kwh);
  }
}

TEST(SessionCsv, NegativeEnergyNamesLine) {
  std::stringstream in(std::string(kSessionsHeader) +
                       "\na,workplace,l2,weekday,600,60,5,6.6\nb,workplace,l2,weekday,600,60,-1,6.6\n");
  try {
    read_sessions_csv(in, "x.csv");
    FAIL() << "expected a parse error";
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("x.csv:3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("energy"), std::string::npos) << msg;
  }
}

TEST(SessionCsv, StartOutOfRangeRejected) {
  std::stringstream in(std::string(kSessionsHeader) + "\na,workplace,l2,weekday,1500,60,5,6.6\n");
  try {
    read_sessions_csv(in);
    FAIL() << "expected a parse error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
}

TEST(SessionCsv, WrongHeaderRejected) {
  std::stringstream in("id,start\n1,2\n");
  EXPECT_THROW(read_sessions_csv(in), Error);
}

TEST(CheckSession, EnergyBeyondWindowIsInfeasible) {
  EXPECT_TRUE(check_session(make_session(600, 60, 10, 6.6)).has_value());
  EXPECT_FALSE(check_session(make_session(600, 60, 6.6, 6.6)).has_value());
}

TEST(ConditionalStats, CountsAndMedians) {
  std::vector<Session> s = {make_session(100, 600, 2), make_session(110, 600, 4), make_session(500, 600, 10),
                            make_session(900, 300, 1)};
  const auto st = conditional_energy_stats(s, {{0, 200}, {400, 600}}, 2.0);
  EXPECT_EQ(st.windows[0].count, 2u);
  EXPECT_DOUBLE_EQ(st.windows[0].mean, 3.0);
  EXPECT_DOUBLE_EQ(st.windows[0].median, 3.0);
  EXPECT_EQ(st.windows[1].count, 1u);
  EXPECT_EQ(st.other.count, 1u);
  EXPECT_EQ(st.windows[0].histogram[1], 1u);
  EXPECT_EQ(st.windows[0].histogram[2], 1u);
}

TEST(ConditionalStats, OverlappingWindowsRejected) {
  EXPECT_THROW(conditional_energy_stats({}, {{0, 200}, {100, 300}}), Error);
}

TEST(SegmentKey, RoundTrips) {
  for (auto loc : kAllLocations)
    for (auto day : {DayType::Weekday, DayType::Weekend}) {
      const Level lvl = loc == Location::PublicDCFC ? Level::DCFC : Level::L2;
      const auto seg = make_segment(loc, lvl, day);
      EXPECT_EQ(parse_segment_key(seg.key()), seg);
    }
  EXPECT_THROW(parse_segment_key("garage_l2_weekday"), Error);
}
