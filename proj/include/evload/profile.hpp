#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "evload/session.hpp"
#include "evload/util.hpp"

namespace evload {

/// Circular 24 h power series: values[k] is the average kW over
/// [k*dt, (k+1)*dt) minutes.
struct LoadProfile {
  int dt = 1;
  std::vector<double> values;

  static LoadProfile zeros(int dt) {
    if (!valid_step(dt)) throw Error("argument", "dt=" + std::to_string(dt) + " does not divide 1440");
    return {dt, std::vector<double>(kMinutesPerDay / dt, 0.0)};
  }

  std::size_t size() const { return values.size(); }
  double energy_kwh() const {
    double s = 0;
    for (double v : values) s += v;
    return s * dt / 60.0;
  }
  double peak() const { return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end()); }
  std::size_t peak_index() const {
    return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
  }
  double peak_minute() const { return static_cast<double>(peak_index() * dt); }
  double at_minute(double minute) const {
    return values[static_cast<std::size_t>(wrap_minutes(minute) / dt)];
  }

  void validate() const {
    if (!valid_step(dt)) throw Error("profile", "dt=" + std::to_string(dt) + " does not divide 1440");
    if (values.size() != static_cast<std::size_t>(kMinutesPerDay / dt))
      throw Error("profile", "expected " + std::to_string(kMinutesPerDay / dt) + " values, got " +
                                 std::to_string(values.size()));
    for (std::size_t k = 0; k < values.size(); ++k)
      if (!std::isfinite(values[k]) || values[k] < 0)
        throw Error("profile", "value " + std::to_string(k) + " must be finite and ≥ 0");
  }

  LoadProfile& operator+=(const LoadProfile& o) {
    if (o.dt != dt || o.size() != size()) throw Error("argument", "cannot add profiles with different dt");
    for (std::size_t k = 0; k < values.size(); ++k) values[k] += o.values[k];
    return *this;
  }
  LoadProfile& operator*=(double c) {
    for (auto& v : values) v *= c;
    return *this;
  }
};

/// Accumulates constant-power rectangles on a circular day through a
/// difference array, so each rectangle costs O(1) regardless of its length.
class ProfileAccumulator {
 public:
  explicit ProfileAccumulator(int dt) : dt_(dt) {
    if (!valid_step(dt)) throw Error("argument", "dt=" + std::to_string(dt) + " does not divide 1440");
    diff_.assign(kMinutesPerDay / dt + 1, 0.0);
  }

  int dt() const { return dt_; }

  /// Adds `power_kw` from `start_min` for `length_min` minutes, wrapping past midnight.
  void add(double start_min, double length_min, double power_kw) {
    if (!(length_min > 0) || power_kw == 0) return;
    const double days = std::floor(length_min / kMinutesPerDay);
    constant_ += days * power_kw;
    const double rem = length_min - days * kMinutesPerDay;
    if (rem <= 0) return;
    const double s = wrap_minutes(start_min);
    const double e = s + rem;
    if (e <= kMinutesPerDay) {
      span(s, e, power_kw);
    } else {
      span(s, kMinutesPerDay, power_kw);
      span(0.0, e - kMinutesPerDay, power_kw);
    }
  }

  /// Uncontrolled charging: full rate from plug-in until the energy is delivered.
  void add_session(double start_min, double energy_kwh, double rate_kw) {
    if (energy_kwh <= 0) return;
    add(start_min, energy_kwh / rate_kw * 60.0, rate_kw);
  }

  void merge(const ProfileAccumulator& o) {
    if (o.dt_ != dt_) throw Error("argument", "cannot merge accumulators with different dt");
    for (std::size_t k = 0; k < diff_.size(); ++k) diff_[k] += o.diff_[k];
    constant_ += o.constant_;
  }

  LoadProfile finish() const {
    LoadProfile p{dt_, std::vector<double>(diff_.size() - 1)};
    double run = constant_;
    for (std::size_t k = 0; k + 1 < diff_.size(); ++k) {
      run += diff_[k];
      p.values[k] = run;
    }
    // Cancellation residue only; the true value is never negative.
    const double eps = 1e-9 * std::max(1.0, p.peak());
    for (auto& v : p.values)
      if (v < 0 && v > -eps) v = 0;
    return p;
  }

 private:
  void step(double x, double power) {
    const double pos = x / dt_;
    const auto k = static_cast<std::size_t>(std::floor(pos));
    if (k + 1 >= diff_.size()) return;  // x == 1440
    const double frac = pos - static_cast<double>(k);
    diff_[k] += power * (1.0 - frac);
    diff_[k + 1] += power * frac;
  }
  void span(double a, double b, double power) {
    step(a, power);
    step(b, -power);
  }

  int dt_;
  std::vector<double> diff_;
  double constant_ = 0.0;
};

inline LoadProfile session_to_profile(const Session& s, int dt) {
  if (auto bad = check_session(s)) throw Error("infeasible", "session " + s.id + ": " + *bad);
  ProfileAccumulator acc(dt);
  acc.add_session(s.start_min, s.energy_kwh, s.charge_rate_kw());
  return acc.finish();
}

inline LoadProfile aggregate(std::span<const LoadProfile> parts) {
  if (parts.empty()) throw Error("argument", "aggregate needs at least one profile");
  LoadProfile out = LoadProfile::zeros(parts.front().dt);
  for (const auto& p : parts) {
    if (p.dt != out.dt)
      throw Error("argument", "mixed dt in aggregate (" + std::to_string(out.dt) + " vs " +
                                  std::to_string(p.dt) + "); resample first");
    out += p;
  }
  return out;
}

inline LoadProfile aggregate(std::span<const Session> sessions, int dt) {
  ProfileAccumulator acc(dt);
  for (const auto& s : sessions) {
    if (auto bad = check_session(s)) throw Error("infeasible", "session " + s.id + ": " + *bad);
    acc.add_session(s.start_min, s.energy_kwh, s.charge_rate_kw());
  }
  return acc.finish();
}

/// Moves the session's start to the timer time while keeping its departure.
inline Session apply_timer(const Session& s, double timer_start) {
  if (!(timer_start >= 0 && timer_start < kMinutesPerDay))
    throw Error("argument", "timer start must lie in [0, 1440)");
  const double offset = wrap_minutes(timer_start - s.start_min);
  if (offset >= s.duration_min)
    throw Error("timer", "session " + s.id + ": timer " + format_double(timer_start) +
                             " is outside the plug-in window");
  Session out = s;
  out.start_min = timer_start;
  out.duration_min = s.duration_min - offset;
  if (out.window_capacity_kwh() * (1 + kFeasibilityRelTol) + 1e-12 < s.energy_kwh)
    throw Error("timer", "session " + s.id + ": only " + format_double(out.window_capacity_kwh()) +
                             " kWh deliverable after timer, " + format_double(s.energy_kwh) + " kWh required");
  return out;
}

/// True when apply_timer would succeed.
inline bool admits_timer(const Session& s, double timer_start) {
  const double offset = wrap_minutes(timer_start - s.start_min);
  if (offset >= s.duration_min) return false;
  return (s.duration_min - offset) / 60.0 * s.charge_rate_kw() * (1 + kFeasibilityRelTol) + 1e-12 >= s.energy_kwh;
}

struct NormalizedProfile {
  LoadProfile unit;
  double scale = 0.0;
};

inline NormalizedProfile normalize(const LoadProfile& p) {
  const double scale = p.peak();
  if (!(scale > 0)) throw Error("argument", "cannot normalize zero profile");
  NormalizedProfile out{p, scale};
  for (auto& v : out.unit.values) v /= scale;
  return out;
}

/// Energy-preserving averaging (coarser) or constant hold (finer).
inline LoadProfile resample(const LoadProfile& p, int dt_new) {
  if (!valid_step(dt_new)) throw Error("argument", "dt=" + std::to_string(dt_new) + " does not divide 1440");
  if (dt_new == p.dt) return p;
  LoadProfile out = LoadProfile::zeros(dt_new);
  if (dt_new % p.dt == 0) {
    const int k = dt_new / p.dt;
    for (std::size_t j = 0; j < out.size(); ++j) {
      double s = 0;
      for (int i = 0; i < k; ++i) s += p.values[j * k + i];
      out.values[j] = s / k;
    }
  } else if (p.dt % dt_new == 0) {
    const int k = p.dt / dt_new;
    for (std::size_t j = 0; j < out.size(); ++j) out.values[j] = p.values[j / k];
  } else {
    throw Error("argument", "cannot resample dt=" + std::to_string(p.dt) + " to dt=" + std::to_string(dt_new));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV: "minute,<name>,<name>,..."

using NamedProfile = std::pair<std::string, LoadProfile>;

inline void write_profiles_csv(const std::vector<NamedProfile>& cols, std::ostream& out) {
  if (cols.empty()) throw Error("argument", "no profiles to write");
  const int dt = cols.front().second.dt;
  out << "minute";
  for (const auto& [name, p] : cols) {
    if (p.dt != dt) throw Error("argument", "profile columns must share dt; resample first");
    out << ',' << name;
  }
  out << '\n';
  for (std::size_t k = 0; k < cols.front().second.size(); ++k) {
    out << k * dt;
    for (const auto& c : cols) out << ',' << format_double(c.second.values[k]);
    out << '\n';
  }
}

inline void write_profiles_csv(const std::vector<NamedProfile>& cols, const std::string& path) {
  ensure_parent_dir(path);
  std::ofstream out(path);
  if (!out) throw Error("io", "cannot write " + path);
  write_profiles_csv(cols, out);
}

inline std::vector<NamedProfile> read_profiles_csv(std::istream& in, const std::string& source = "<stream>") {
  std::string line;
  if (!std::getline(in, line)) throw Error("parse", source + ": missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> header;
  for (auto f : split_csv_line(line)) header.emplace_back(f);
  if (header.size() < 2 || header[0] != "minute")
    throw Error("parse", source + ":1: header must be 'minute,<name>,...'");
  std::vector<double> minutes;
  std::vector<std::vector<double>> cols(header.size() - 1);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != header.size())
      throw Error("parse", source + ":" + std::to_string(lineno) + ": wrong field count");
    double m;
    if (!parse_double(f[0], m)) throw Error("parse", source + ":" + std::to_string(lineno) + ": field 'minute'");
    minutes.push_back(m);
    for (std::size_t c = 1; c < f.size(); ++c) {
      double v;
      if (!parse_double(f[c], v))
        throw Error("parse", source + ":" + std::to_string(lineno) + ": field '" + header[c] + "'");
      cols[c - 1].push_back(v);
    }
  }
  if (minutes.empty() || kMinutesPerDay % minutes.size() != 0)
    throw Error("parse", source + ": row count must divide 1440");
  const int dt = kMinutesPerDay / static_cast<int>(minutes.size());
  for (std::size_t k = 0; k < minutes.size(); ++k)
    if (minutes[k] != static_cast<double>(k * dt))
      throw Error("parse", source + ": minute column must be 0, dt, 2dt, ...");
  std::vector<NamedProfile> out;
  for (std::size_t c = 0; c < cols.size(); ++c) {
    LoadProfile p{dt, std::move(cols[c])};
    p.validate();
    out.emplace_back(header[c + 1], std::move(p));
  }
  return out;
}

inline std::vector<NamedProfile> read_profiles_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("io", "cannot open " + path);
  return read_profiles_csv(in, path);
}

}  // namespace evload
