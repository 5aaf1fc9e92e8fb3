#pragma once

#include <string>
#include <vector>

#include "evload/rates.hpp"
#include "evload/session.hpp"
#include "evload/surrogate.hpp"

namespace evload::test {

inline std::string source_path(const std::string& rel) { return std::string(EVLOAD_SOURCE_DIR) + "/" + rel; }

inline Session make_session(double start, double duration, double energy, double max_rate = 6.6,
                            Segment seg = make_segment(Location::Workplace, Level::L2, DayType::Weekday),
                            std::string id = "s") {
  Session s;
  s.id = std::move(id);
  s.segment = seg;
  s.start_min = start;
  s.duration_min = duration;
  s.energy_kwh = energy;
  s.max_rate_kw = max_rate;
  return s;
}

inline RateSchedule flat_rate(double price, std::string name = "flat") {
  RateSchedule r;
  r.name = std::move(name);
  r.energy_prices.push_back({{0, 1440}, price});
  return r;
}

inline RateSchedule peak_min_rate() {
  RateSchedule r = flat_rate(0.0, "peak_min");
  r.objective = Objective::PeakMin;
  return r;
}

/// Energy prices given per hour of the day.
inline RateSchedule hourly_tou(const std::vector<double>& per_hour, std::string name = "tou") {
  RateSchedule r;
  r.name = std::move(name);
  for (std::size_t h = 0; h < per_hour.size(); ++h)
    r.energy_prices.push_back({{60.0 * h, 60.0 * (h + 1)}, per_hour[h]});
  return r;
}

/// Surrogate whose map is the identity at the given resolution.
inline SurrogateModel identity_surrogate(int dt = 15) {
  SurrogateModel m;
  m.kind = RegressorKind::Linear;
  m.dt = dt;
  m.rate_name = "identity";
  LinearMap lin;
  lin.A = Matrix::Identity(m.dimension(), m.dimension());
  lin.b = Vector::Zero(m.dimension());
  m.regressor = lin;
  return m;
}

}  // namespace evload::test
