#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "evload/profile.hpp"
#include "evload/util.hpp"

namespace evload {

/// [start, end) in minutes since midnight; end < start wraps past midnight.
struct Window {
  double start = 0.0;
  double end = kMinutesPerDay;

  bool wraps() const { return end < start; }
  double length() const { return wraps() ? kMinutesPerDay - start + end : end - start; }

  /// Overlap in minutes with [a, b), 0 ≤ a < b ≤ 1440.
  double overlap(double a, double b) const {
    auto ov = [&](double lo, double hi) { return std::max(0.0, std::min(b, hi) - std::max(a, lo)); };
    if (!wraps()) return ov(start, end);
    return ov(start, kMinutesPerDay) + ov(0.0, end);
  }
};

struct EnergyPrice {
  Window window;
  double price = 0.0;  // $/kWh
};

struct DemandCharge {
  Window window;
  double price = 0.0;  // $/kW on the window maximum
};

enum class Objective { CostMin, PeakMin };

struct RateSchedule {
  std::string name;
  std::vector<EnergyPrice> energy_prices;
  std::vector<DemandCharge> demand_charges;
  std::optional<double> cap_kw;
  Objective objective = Objective::CostMin;
};

struct RateDiagnostic {
  std::string message;
  std::vector<std::size_t> indices;  // offending window indices
};

inline std::optional<RateDiagnostic> validate_rate(const RateSchedule& rate) {
  auto bad_window = [](const Window& w) {
    return !(std::isfinite(w.start) && std::isfinite(w.end) && w.start >= 0 && w.start < kMinutesPerDay &&
             w.end > 0 && w.end <= kMinutesPerDay && w.start != w.end);
  };
  if (rate.name.empty()) return RateDiagnostic{"rate name must be non-empty", {}};
  if (rate.energy_prices.empty()) return RateDiagnostic{"energy prices must cover the day", {}};
  for (std::size_t i = 0; i < rate.energy_prices.size(); ++i) {
    const auto& e = rate.energy_prices[i];
    if (bad_window(e.window)) return RateDiagnostic{"energy window " + std::to_string(i) + " is malformed", {i}};
    if (!(e.price >= 0) || !std::isfinite(e.price))
      return RateDiagnostic{"energy price " + std::to_string(i) + " must be ≥ 0", {i}};
  }
  for (std::size_t i = 0; i < rate.demand_charges.size(); ++i) {
    const auto& d = rate.demand_charges[i];
    if (bad_window(d.window)) return RateDiagnostic{"demand window " + std::to_string(i) + " is malformed", {i}};
    if (!(d.price >= 0) || !std::isfinite(d.price))
      return RateDiagnostic{"demand price " + std::to_string(i) + " must be ≥ 0", {i}};
  }
  if (rate.cap_kw && !(*rate.cap_kw > 0 && std::isfinite(*rate.cap_kw)))
    return RateDiagnostic{"cap_kw must be > 0", {}};

  // Energy windows must tile [0, 1440): split wrapping windows and sweep.
  struct Piece {
    double a, b;
    std::size_t idx;
  };
  std::vector<Piece> pieces;
  for (std::size_t i = 0; i < rate.energy_prices.size(); ++i) {
    const auto& w = rate.energy_prices[i].window;
    if (w.wraps()) {
      pieces.push_back({w.start, static_cast<double>(kMinutesPerDay), i});
      pieces.push_back({0.0, w.end, i});
    } else {
      pieces.push_back({w.start, w.end, i});
    }
  }
  std::sort(pieces.begin(), pieces.end(), [](const Piece& x, const Piece& y) { return x.a < y.a; });
  double cursor = 0.0;
  std::size_t prev = pieces.front().idx;
  for (const auto& p : pieces) {
    if (p.a > cursor)
      return RateDiagnostic{"gap in energy windows at minute " + format_double(cursor), {prev, p.idx}};
    if (p.a < cursor)
      return RateDiagnostic{"energy windows " + std::to_string(prev) + " and " + std::to_string(p.idx) + " overlap",
                            {prev, p.idx}};
    cursor = p.b;
    prev = p.idx;
  }
  if (cursor < kMinutesPerDay)
    return RateDiagnostic{"gap in energy windows at minute " + format_double(cursor), {prev}};
  return std::nullopt;
}

inline void require_valid(const RateSchedule& rate) {
  if (auto d = validate_rate(rate)) throw Error("rate", "rate '" + rate.name + "': " + d->message);
}

/// Time-weighted average energy price of each dt slot, $/kWh.
inline std::vector<double> slot_energy_prices(const RateSchedule& rate, int dt) {
  const auto T = static_cast<std::size_t>(kMinutesPerDay / dt);
  std::vector<double> out(T, 0.0);
  for (std::size_t k = 0; k < T; ++k) {
    const double a = static_cast<double>(k * dt), b = a + dt;
    for (const auto& e : rate.energy_prices) out[k] += e.price * e.window.overlap(a, b) / dt;
  }
  return out;
}

/// Slots that overlap the window with positive length.
inline std::vector<std::size_t> window_slots(const Window& w, int dt) {
  std::vector<std::size_t> out;
  const auto T = static_cast<std::size_t>(kMinutesPerDay / dt);
  for (std::size_t k = 0; k < T; ++k)
    if (w.overlap(static_cast<double>(k * dt), static_cast<double>((k + 1) * dt)) > 0) out.push_back(k);
  return out;
}

inline double energy_cost(const LoadProfile& p, const RateSchedule& rate) {
  const auto prices = slot_energy_prices(rate, p.dt);
  double c = 0;
  for (std::size_t k = 0; k < p.size(); ++k) c += prices[k] * p.values[k];
  return c * p.dt / 60.0;
}

inline double demand_cost(const LoadProfile& p, const RateSchedule& rate) {
  double c = 0;
  for (const auto& d : rate.demand_charges) {
    double m = 0;
    for (auto k : window_slots(d.window, p.dt)) m = std::max(m, p.values[k]);
    c += d.price * m;
  }
  return c;
}

inline double total_cost(const LoadProfile& p, const RateSchedule& rate) {
  if (rate.objective == Objective::PeakMin) return p.peak();
  return energy_cost(p, rate) + demand_cost(p, rate);
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const RateSchedule& r) {
  nlohmann::json j;
  j["version"] = 1;
  j["kind"] = "rate_schedule";
  j["name"] = r.name;
  j["objective"] = r.objective == Objective::PeakMin ? "peak_min" : "cost_min";
  j["energy_prices"] = nlohmann::json::array();
  for (const auto& e : r.energy_prices)
    j["energy_prices"].push_back({{"start", e.window.start}, {"end", e.window.end}, {"price", e.price}});
  j["demand_charges"] = nlohmann::json::array();
  for (const auto& d : r.demand_charges)
    j["demand_charges"].push_back({{"start", d.window.start}, {"end", d.window.end}, {"price", d.price}});
  if (r.cap_kw) j["cap_kw"] = *r.cap_kw;
  return j;
}

inline RateSchedule rate_from_json(const nlohmann::json& j) {
  if (j.value("version", 0) != 1) throw Error("schema", "unsupported rate file version");
  RateSchedule r;
  try {
    r.name = j.at("name").get<std::string>();
    const auto obj = j.value("objective", std::string("cost_min"));
    if (obj == "peak_min")
      r.objective = Objective::PeakMin;
    else if (obj != "cost_min")
      throw Error("schema", "objective must be cost_min or peak_min");
    for (const auto& e : j.at("energy_prices"))
      r.energy_prices.push_back({{e.at("start").get<double>(), e.at("end").get<double>()}, e.at("price").get<double>()});
    if (j.contains("demand_charges"))
      for (const auto& d : j["demand_charges"])
        r.demand_charges.push_back({{d.at("start").get<double>(), d.at("end").get<double>()}, d.at("price").get<double>()});
    if (j.contains("cap_kw") && !j["cap_kw"].is_null()) r.cap_kw = j["cap_kw"].get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error("schema", std::string("rate file: ") + e.what());
  }
  require_valid(r);
  return r;
}

inline RateSchedule load_rate(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("io", "cannot open rate file " + path);
  try {
    return rate_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("schema", path + ": " + e.what());
  }
}

/// Content hash of the canonical serialization; used for provenance links.
inline std::string rate_hash(const RateSchedule& r) { return sha256_hex(to_json(r).dump()); }

}  // namespace evload
