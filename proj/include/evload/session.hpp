#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "evload/util.hpp"

namespace evload {

enum class Location { ResidentialSF, MUD, Workplace, PublicL2, PublicDCFC };
enum class Level { L1, L2, DCFC };
enum class DayType { Weekday, Weekend };

inline constexpr std::array<Location, 5> kAllLocations = {
    Location::ResidentialSF, Location::MUD, Location::Workplace, Location::PublicL2,
    Location::PublicDCFC};

inline std::string to_string(Location l) {
  switch (l) {
    case Location::ResidentialSF: return "residential_sf";
    case Location::MUD: return "mud";
    case Location::Workplace: return "workplace";
    case Location::PublicL2: return "public_l2";
    case Location::PublicDCFC: return "public_dcfc";
  }
  return "?";
}

inline std::string to_string(Level l) {
  switch (l) {
    case Level::L1: return "l1";
    case Level::L2: return "l2";
    case Level::DCFC: return "dcfc";
  }
  return "?";
}

inline std::string to_string(DayType d) { return d == DayType::Weekday ? "weekday" : "weekend"; }

inline std::optional<Location> parse_location(std::string_view s) {
  for (auto l : kAllLocations)
    if (to_string(l) == s) return l;
  return std::nullopt;
}

inline std::optional<Level> parse_level(std::string_view s) {
  for (auto l : {Level::L1, Level::L2, Level::DCFC})
    if (to_string(l) == s) return l;
  return std::nullopt;
}

inline std::optional<DayType> parse_day_type(std::string_view s) {
  if (s == "weekday") return DayType::Weekday;
  if (s == "weekend") return DayType::Weekend;
  return std::nullopt;
}

/// Rated charging power per level, kW.
inline constexpr double rated_power_kw(Level level) {
  switch (level) {
    case Level::L1: return 1.4;
    case Level::L2: return 6.6;
    case Level::DCFC: return 150.0;
  }
  return 0.0;
}

struct Segment {
  Location location = Location::Workplace;
  Level level = Level::L2;
  DayType day_type = DayType::Weekday;

  auto operator<=>(const Segment&) const = default;

  double rated_power() const { return rated_power_kw(level); }

  /// "workplace_l2_weekday"
  std::string key() const {
    return to_string(location) + "_" + to_string(level) + "_" + to_string(day_type);
  }
};

inline bool is_valid(const Segment& s) {
  switch (s.location) {
    case Location::ResidentialSF: return s.level == Level::L1 || s.level == Level::L2;
    case Location::MUD:
    case Location::Workplace:
    case Location::PublicL2: return s.level == Level::L2;
    case Location::PublicDCFC: return s.level == Level::DCFC;
  }
  return false;
}

inline Segment make_segment(Location loc, Level level, DayType day) {
  Segment s{loc, level, day};
  if (!is_valid(s)) throw Error("segment", "invalid segment " + s.key());
  return s;
}

inline Segment parse_segment_key(std::string_view key) {
  for (auto loc : kAllLocations)
    for (auto lvl : {Level::L1, Level::L2, Level::DCFC})
      for (auto day : {DayType::Weekday, DayType::Weekend}) {
        Segment s{loc, lvl, day};
        if (is_valid(s) && s.key() == key) return s;
      }
  throw Error("segment", "unknown segment '" + std::string(key) + "'");
}

struct Session {
  std::string id;
  Segment segment;
  double start_min = 0.0;     // minutes since midnight, [0, 1440)
  double duration_min = 0.0;  // plug-in window length
  double energy_kwh = 0.0;
  double max_rate_kw = 0.0;

  bool operator==(const Session&) const = default;

  double charge_rate_kw() const { return std::min(max_rate_kw, segment.rated_power()); }
  double window_capacity_kwh() const { return duration_min / 60.0 * charge_rate_kw(); }
  /// Unwrapped departure time; may exceed 1440 for overnight sessions.
  double end_min() const { return start_min + duration_min; }
};

inline constexpr double kFeasibilityRelTol = 1e-9;

/// First violated Session invariant, if any.
inline std::optional<std::string> check_session(const Session& s) {
  if (!is_valid(s.segment)) return "invalid segment " + s.segment.key();
  if (!std::isfinite(s.start_min) || s.start_min < 0 || s.start_min >= kMinutesPerDay)
    return "start out of range";
  if (!std::isfinite(s.duration_min) || s.duration_min <= 0) return "duration must be > 0";
  if (!std::isfinite(s.energy_kwh) || s.energy_kwh < 0) return "energy must be ≥ 0";
  if (!std::isfinite(s.max_rate_kw) || s.max_rate_kw <= 0) return "max rate must be > 0";
  if (s.energy_kwh > s.window_capacity_kwh() * (1 + kFeasibilityRelTol) + 1e-12)
    return "infeasible session: energy " + format_double(s.energy_kwh) +
           " kWh exceeds window capacity " + format_double(s.window_capacity_kwh()) + " kWh";
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Ground-truth generator

struct GeneratorComponent {
  double weight = 1.0;
  double start_mean = 0.0;  // minutes
  double start_std = 1.0;
  double energy_mean = 0.0;  // kWh
  double energy_std = 1.0;
  double duration_mean = 60.0;  // minutes
  double duration_std = 1.0;
  double correlation = 0.0;  // start-energy
  bool timer = false;        // label only; marks timer-driven plug-in spikes
};

struct RatePoolEntry {
  double kw = 0.0;
  double probability = 0.0;
};

struct SegmentSpec {
  std::vector<GeneratorComponent> components;
  std::vector<RatePoolEntry> max_rate_pool;
};

struct GroundTruthSpec {
  std::map<Segment, SegmentSpec> segments;

  void validate() const {
    for (const auto& [seg, spec] : segments) {
      const auto where = "segment " + seg.key() + ": ";
      if (!is_valid(seg)) throw Error("schema", where + "invalid segment");
      if (spec.components.empty()) throw Error("schema", where + "no components");
      double wsum = 0;
      for (std::size_t i = 0; i < spec.components.size(); ++i) {
        const auto& c = spec.components[i];
        const auto cw = where + "component " + std::to_string(i) + ": ";
        if (!(c.weight >= 0)) throw Error("schema", cw + "weight must be ≥ 0");
        if (!(c.start_std > 0 && c.energy_std > 0 && c.duration_std > 0))
          throw Error("schema", cw + "standard deviations must be > 0");
        if (!(c.correlation >= -1 && c.correlation <= 1))
          throw Error("schema", cw + "correlation must lie in [-1, 1]");
        wsum += c.weight;
      }
      if (std::abs(wsum - 1.0) > 1e-9) throw Error("schema", where + "weights must sum to 1");
      if (spec.max_rate_pool.empty()) throw Error("schema", where + "empty max_rate_pool");
      double psum = 0;
      for (const auto& r : spec.max_rate_pool) {
        if (!(r.kw > 0) || !(r.probability >= 0))
          throw Error("schema", where + "max_rate_pool entries need kw > 0, probability ≥ 0");
        psum += r.probability;
      }
      if (std::abs(psum - 1.0) > 1e-9)
        throw Error("schema", where + "max_rate_pool probabilities must sum to 1");
    }
  }

  const SegmentSpec& at(const Segment& seg) const {
    auto it = segments.find(seg);
    if (it == segments.end())
      throw Error("segment", "segment " + seg.key() + " not present in ground-truth spec");
    return it->second;
  }
};

inline Segment segment_from_json(const nlohmann::json& j) {
  auto loc = parse_location(j.at("location").get<std::string>());
  auto lvl = parse_level(j.at("level").get<std::string>());
  auto day = parse_day_type(j.at("day_type").get<std::string>());
  if (!loc || !lvl || !day) throw Error("schema", "unknown location/level/day_type in " + j.dump());
  return make_segment(*loc, *lvl, *day);
}

inline nlohmann::json segment_to_json(const Segment& s) {
  return {{"location", to_string(s.location)},
          {"level", to_string(s.level)},
          {"day_type", to_string(s.day_type)}};
}

inline nlohmann::json to_json(const GroundTruthSpec& spec) {
  nlohmann::json segs = nlohmann::json::array();
  for (const auto& [seg, ss] : spec.segments) {
    nlohmann::json j = segment_to_json(seg);
    for (const auto& c : ss.components)
      j["components"].push_back({{"weight", c.weight},
                                 {"start_mean", c.start_mean},
                                 {"start_std", c.start_std},
                                 {"energy_mean", c.energy_mean},
                                 {"energy_std", c.energy_std},
                                 {"duration_mean", c.duration_mean},
                                 {"duration_std", c.duration_std},
                                 {"correlation", c.correlation},
                                 {"timer", c.timer}});
    for (const auto& r : ss.max_rate_pool)
      j["max_rate_pool"].push_back({{"kw", r.kw}, {"probability", r.probability}});
    segs.push_back(std::move(j));
  }
  return {{"version", 1}, {"kind", "ground_truth_spec"}, {"segments", segs}};
}

inline GroundTruthSpec ground_truth_from_json(const nlohmann::json& j) {
  if (j.value("version", 0) != 1) throw Error("schema", "unsupported ground-truth spec version");
  GroundTruthSpec spec;
  for (const auto& sj : j.at("segments")) {
    SegmentSpec ss;
    for (const auto& cj : sj.at("components")) {
      GeneratorComponent c;
      c.weight = cj.at("weight").get<double>();
      c.start_mean = cj.at("start_mean").get<double>();
      c.start_std = cj.at("start_std").get<double>();
      c.energy_mean = cj.at("energy_mean").get<double>();
      c.energy_std = cj.at("energy_std").get<double>();
      c.duration_mean = cj.at("duration_mean").get<double>();
      c.duration_std = cj.at("duration_std").get<double>();
      c.correlation = cj.value("correlation", 0.0);
      c.timer = cj.value("timer", false);
      ss.components.push_back(c);
    }
    for (const auto& rj : sj.at("max_rate_pool"))
      ss.max_rate_pool.push_back({rj.at("kw").get<double>(), rj.at("probability").get<double>()});
    spec.segments[segment_from_json(sj)] = std::move(ss);
  }
  spec.validate();
  return spec;
}

inline GroundTruthSpec load_ground_truth(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("io", "cannot open ground-truth spec " + path);
  try {
    return ground_truth_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error("schema", path + ": " + e.what());
  }
}

struct GenerationResult {
  std::vector<Session> sessions;
  // Pre-clip, pre-wrap draws and the component that produced each session.
  std::vector<double> raw_start;
  std::vector<double> raw_energy;
  std::vector<int> component;
  std::size_t zero_energy = 0;

  double zero_energy_fraction() const {
    return sessions.empty() ? 0.0 : static_cast<double>(zero_energy) / sessions.size();
  }
};

inline GenerationResult generate_sessions_detailed(const GroundTruthSpec& spec, const Segment& segment,
                                                   std::size_t n, std::uint64_t seed) {
  const SegmentSpec& ss = spec.at(segment);
  GenerationResult out;
  out.sessions.reserve(n);
  out.raw_start.reserve(n);
  out.raw_energy.reserve(n);
  out.component.reserve(n);

  std::vector<double> weights, rate_probs;
  for (const auto& c : ss.components) weights.push_back(c.weight);
  for (const auto& r : ss.max_rate_pool) rate_probs.push_back(r.probability);
  std::discrete_distribution<int> pick(weights.begin(), weights.end());
  std::discrete_distribution<int> pick_rate(rate_probs.begin(), rate_probs.end());
  std::normal_distribution<double> normal(0.0, 1.0);
  Rng rng(seed);
  const double rated = segment.rated_power();
  const std::string prefix = segment.key() + "-";

  for (std::size_t i = 0; i < n; ++i) {
    const int g = pick(rng);
    const auto& c = ss.components[g];
    const double z1 = normal(rng);
    const double z2 = normal(rng);
    const double start = c.start_mean + c.start_std * z1;
    const double energy =
        c.energy_mean +
        c.energy_std * (c.correlation * z1 + std::sqrt(1.0 - c.correlation * c.correlation) * z2);
    double duration = 0.0;
    for (int attempt = 0; attempt < 64 && duration <= 1.0; ++attempt)
      duration = c.duration_mean + c.duration_std * normal(rng);
    duration = std::max(duration, 1.0);
    const double max_rate = std::min(ss.max_rate_pool[pick_rate(rng)].kw, rated);

    Session s;
    s.id = prefix + std::to_string(i);
    s.segment = segment;
    s.start_min = wrap_minutes(start);
    s.energy_kwh = std::max(0.0, energy);
    s.max_rate_kw = max_rate;
    // Extend the window until the energy fits at the session's charge rate.
    const double needed = s.energy_kwh / s.charge_rate_kw() * 60.0;
    s.duration_min = std::max(duration, needed);
    if (s.energy_kwh == 0.0) ++out.zero_energy;

    out.sessions.push_back(std::move(s));
    out.raw_start.push_back(start);
    out.raw_energy.push_back(energy);
    out.component.push_back(g);
  }
  return out;
}

inline std::vector<Session> generate_sessions(const GroundTruthSpec& spec, const Segment& segment,
                                              std::size_t n, std::uint64_t seed) {
  return generate_sessions_detailed(spec, segment, n, seed).sessions;
}

// ---------------------------------------------------------------------------
// CSV

inline constexpr std::string_view kSessionsHeader =
    "id,location,level,day_type,start_min,duration_min,energy_kwh,max_rate_kw";

inline void write_sessions_csv(const std::vector<Session>& sessions, std::ostream& out) {
  out << kSessionsHeader << '\n';
  for (const auto& s : sessions) {
    if (s.id.find_first_of(",\n\r\"") != std::string::npos)
      throw Error("schema", "session id '" + s.id + "' contains a CSV delimiter");
    out << s.id << ',' << to_string(s.segment.location) << ',' << to_string(s.segment.level) << ','
        << to_string(s.segment.day_type) << ',' << format_double(s.start_min) << ','
        << format_double(s.duration_min) << ',' << format_double(s.energy_kwh) << ','
        << format_double(s.max_rate_kw) << '\n';
  }
}

inline void write_sessions_csv(const std::vector<Session>& sessions, const std::string& path) {
  ensure_parent_dir(path);
  std::ofstream out(path);
  if (!out) throw Error("io", "cannot write " + path);
  write_sessions_csv(sessions, out);
  if (!out) throw Error("io", "write failed for " + path);
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t pos = 0;
  while (true) {
    auto comma = line.find(',', pos);
    fields.push_back(line.substr(pos, comma == std::string_view::npos ? line.npos : comma - pos));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return fields;
}

inline std::vector<Session> read_sessions_csv(std::istream& in, const std::string& source = "<stream>") {
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& field, const std::string& msg) -> Error {
    return Error("parse", source + ":" + std::to_string(lineno) + ": field '" + field + "': " + msg);
  };
  if (!std::getline(in, line)) throw Error("parse", source + ": missing header");
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kSessionsHeader)
    throw Error("parse", source + ":1: header must be '" + std::string(kSessionsHeader) + "'");

  static constexpr std::array<const char*, 8> kNames = {
      "id", "location", "level", "day_type", "start_min", "duration_min", "energy_kwh", "max_rate_kw"};
  std::vector<Session> out;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != kNames.size())
      throw Error("parse", source + ":" + std::to_string(lineno) + ": expected 8 fields, got " +
                               std::to_string(f.size()));
    Session s;
    s.id = std::string(f[0]);
    auto loc = parse_location(f[1]);
    if (!loc) throw fail(kNames[1], "unknown location '" + std::string(f[1]) + "'");
    auto lvl = parse_level(f[2]);
    if (!lvl) throw fail(kNames[2], "unknown level '" + std::string(f[2]) + "'");
    auto day = parse_day_type(f[3]);
    if (!day) throw fail(kNames[3], "unknown day type '" + std::string(f[3]) + "'");
    s.segment = Segment{*loc, *lvl, *day};
    if (!is_valid(s.segment)) throw fail(kNames[2], "invalid location/level pair");
    double* targets[] = {&s.start_min, &s.duration_min, &s.energy_kwh, &s.max_rate_kw};
    for (std::size_t k = 0; k < 4; ++k)
      if (!parse_double(f[4 + k], *targets[k]) || !std::isfinite(*targets[k]))
        throw fail(kNames[4 + k], "not a finite number: '" + std::string(f[4 + k]) + "'");
    if (s.start_min < 0 || s.start_min >= kMinutesPerDay) throw fail(kNames[4], "start out of range");
    if (s.duration_min <= 0) throw fail(kNames[5], "duration must be > 0");
    if (s.energy_kwh < 0) throw fail(kNames[6], "energy must be ≥ 0");
    if (s.max_rate_kw <= 0) throw fail(kNames[7], "max rate must be > 0");
    s.max_rate_kw = std::min(s.max_rate_kw, s.segment.rated_power());
    if (auto bad = check_session(s)) throw fail(kNames[6], *bad);
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<Session> read_sessions_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("io", "cannot open " + path);
  return read_sessions_csv(in, path);
}

// ---------------------------------------------------------------------------
// Start-time conditioned energy statistics

struct StartWindow {
  double lo = 0.0;  // [lo, hi) minutes
  double hi = 0.0;
};

struct EnergyBucket {
  StartWindow window;
  std::size_t count = 0;
  double mean = 0.0;
  double median = 0.0;
  std::vector<std::size_t> histogram;  // bins of width bin_kwh from 0
};

struct ConditionalEnergyStats {
  double bin_kwh = 0.0;
  std::vector<EnergyBucket> windows;
  EnergyBucket other;  // sessions outside every window
  std::size_t total = 0;
};

inline ConditionalEnergyStats conditional_energy_stats(const std::vector<Session>& sessions,
                                                       const std::vector<StartWindow>& windows,
                                                       double bin_kwh = 2.0) {
  if (windows.empty()) throw Error("argument", "at least one start window is required");
  if (!(bin_kwh > 0)) throw Error("argument", "histogram bin width must be > 0");
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto& w = windows[i];
    if (!(w.lo >= 0 && w.hi <= kMinutesPerDay && w.lo < w.hi))
      throw Error("argument", "window " + std::to_string(i) + " must satisfy 0 ≤ lo < hi ≤ 1440");
    for (std::size_t j = 0; j < i; ++j)
      if (w.lo < windows[j].hi && windows[j].lo < w.hi)
        throw Error("argument",
                    "windows " + std::to_string(j) + " and " + std::to_string(i) + " overlap");
  }

  std::vector<std::vector<double>> energies(windows.size() + 1);
  double max_energy = 0;
  for (const auto& s : sessions) {
    std::size_t slot = windows.size();
    for (std::size_t i = 0; i < windows.size(); ++i)
      if (s.start_min >= windows[i].lo && s.start_min < windows[i].hi) {
        slot = i;
        break;
      }
    energies[slot].push_back(s.energy_kwh);
    max_energy = std::max(max_energy, s.energy_kwh);
  }
  const auto nbins = static_cast<std::size_t>(std::floor(max_energy / bin_kwh)) + 1;

  auto summarize = [&](std::vector<double>& e, StartWindow w) {
    EnergyBucket b;
    b.window = w;
    b.count = e.size();
    b.histogram.assign(nbins, 0);
    if (e.empty()) return b;
    double sum = 0;
    for (double v : e) {
      sum += v;
      ++b.histogram[std::min(nbins - 1, static_cast<std::size_t>(v / bin_kwh))];
    }
    b.mean = sum / e.size();
    std::sort(e.begin(), e.end());
    const auto m = e.size() / 2;
    b.median = e.size() % 2 ? e[m] : 0.5 * (e[m - 1] + e[m]);
    return b;
  };

  ConditionalEnergyStats out;
  out.bin_kwh = bin_kwh;
  out.total = sessions.size();
  for (std::size_t i = 0; i < windows.size(); ++i) out.windows.push_back(summarize(energies[i], windows[i]));
  out.other = summarize(energies.back(), {});
  return out;
}

}  // namespace evload
