#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "evload/gmm.hpp"
#include "evload/profile.hpp"
#include "evload/rates.hpp"
#include "evload/session.hpp"
#include "evload/surrogate.hpp"
#include "evload/util.hpp"

namespace evload {

/// Configuration error tied to a field path such as "segment_shares".
class FieldError : public Error {
 public:
  FieldError(std::string field, const std::string& message)
      : Error("config", field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

enum class Group { Residential, Workplace, PublicL2, PublicDCFC };
inline constexpr std::array<Group, 4> kAllGroups = {Group::Residential, Group::Workplace, Group::PublicL2,
                                                    Group::PublicDCFC};

inline std::string to_string(Group g) {
  switch (g) {
    case Group::Residential: return "residential";
    case Group::Workplace: return "workplace";
    case Group::PublicL2: return "public_l2";
    case Group::PublicDCFC: return "public_dcfc";
  }
  return "?";
}

struct TimerPolicy {
  double participation = 0.0;
  double start_min = 0.0;
};

struct ScenarioConfig {
  std::string name = "scenario";
  double total_drivers = 0;
  std::map<Group, double> segment_shares{
      {Group::Residential, 0.75}, {Group::Workplace, 0.15}, {Group::PublicL2, 0.05}, {Group::PublicDCFC, 0.05}};
  double mud_fraction = 0.1;
  double l1_fraction = 0.2;
  // {weekday, weekend}
  std::map<Group, std::array<double, 2>> charge_probability{{Group::Residential, {0.8, 0.8}},
                                                            {Group::Workplace, {0.8, 0.1}},
                                                            {Group::PublicL2, {0.33, 0.33}},
                                                            {Group::PublicDCFC, {0.33, 0.33}}};
  /// Residential L2 keeps the timer spikes of its fitted model; when false the
  /// timer components are removed as for L1.
  bool observed_timers = true;
  std::vector<TimerPolicy> timer_policies;
  std::map<std::string, std::string> control_assignment;  // segment key → surrogate id
  DayType day_type = DayType::Weekday;
  int dt_output = 1;
  std::uint64_t seed = 0;
  // Components treated as timer-driven when deriving L1 from residential L2.
  Window timer_window{1110, 30};
  double timer_max_start_std = 10.0;

  double probability(Group g) const { return charge_probability.at(g)[day_type == DayType::Weekday ? 0 : 1]; }

  void validate() const {
    if (!(total_drivers >= 0) || !std::isfinite(total_drivers) || total_drivers != std::floor(total_drivers))
      throw FieldError("total_drivers", "must be a non-negative integer");
    double sum = 0;
    for (auto g : kAllGroups) {
      auto it = segment_shares.find(g);
      if (it == segment_shares.end()) throw FieldError("segment_shares." + to_string(g), "missing");
      if (!(it->second >= 0 && it->second <= 1)) throw FieldError("segment_shares." + to_string(g), "must lie in [0, 1]");
      sum += it->second;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw FieldError("segment_shares", "shares must sum to 1 (got " + format_double(sum) + ")");
    if (!(mud_fraction >= 0 && mud_fraction <= 1)) throw FieldError("mud_fraction", "must lie in [0, 1]");
    if (!(l1_fraction >= 0 && l1_fraction <= 1)) throw FieldError("l1_fraction", "must lie in [0, 1]");
    for (auto g : kAllGroups) {
      auto it = charge_probability.find(g);
      if (it == charge_probability.end()) throw FieldError("charge_probability." + to_string(g), "missing");
      for (double p : it->second)
        if (!(p >= 0 && p <= 1)) throw FieldError("charge_probability." + to_string(g), "must lie in [0, 1]");
    }
    double part = 0;
    for (std::size_t i = 0; i < timer_policies.size(); ++i) {
      const auto& t = timer_policies[i];
      const auto f = "timer_policies[" + std::to_string(i) + "]";
      if (!(t.participation >= 0 && t.participation <= 1)) throw FieldError(f + ".participation", "must lie in [0, 1]");
      if (!(t.start_min >= 0 && t.start_min < kMinutesPerDay)) throw FieldError(f + ".start", "must lie in [0, 1440)");
      part += t.participation;
    }
    if (part > 1 + 1e-9) throw FieldError("timer_policies", "participation fractions sum to more than 1");
    if (!valid_step(dt_output)) throw FieldError("dt_output", "must divide 1440");
    for (const auto& [key, id] : control_assignment) {
      try {
        const auto seg = parse_segment_key(key);
        if (seg.day_type != day_type) throw FieldError("control_assignment." + key, "segment is for a different day type");
      } catch (const FieldError&) {
        throw;
      } catch (const Error& e) {
        throw FieldError("control_assignment." + key, e.what());
      }
      if (id.empty()) throw FieldError("control_assignment." + key, "surrogate id must be non-empty");
    }
  }
};

// ---------------------------------------------------------------------------
// Config JSON

inline nlohmann::json to_json(const ScenarioConfig& c) {
  nlohmann::json j;
  j["version"] = 1;
  j["kind"] = "scenario_config";
  j["name"] = c.name;
  j["total_drivers"] = static_cast<std::uint64_t>(c.total_drivers);
  for (const auto& [g, s] : c.segment_shares) j["segment_shares"][to_string(g)] = s;
  j["mud_fraction"] = c.mud_fraction;
  j["l1_fraction"] = c.l1_fraction;
  for (const auto& [g, p] : c.charge_probability) j["charge_probability"][to_string(g)] = {{"weekday", p[0]}, {"weekend", p[1]}};
  j["observed_timers"] = c.observed_timers;
  j["timer_policies"] = nlohmann::json::array();
  for (const auto& t : c.timer_policies) j["timer_policies"].push_back({{"participation", t.participation}, {"start", t.start_min}});
  j["control_assignment"] = c.control_assignment;
  j["day_type"] = to_string(c.day_type);
  j["dt_output"] = c.dt_output;
  j["seed"] = c.seed;
  j["timer_window"] = {c.timer_window.start, c.timer_window.end};
  j["timer_max_start_std"] = c.timer_max_start_std;
  return j;
}

inline ScenarioConfig scenario_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw FieldError("$", "config must be a JSON object");
  if (j.contains("version") && j["version"] != 1) throw FieldError("version", "unsupported version");
  ScenarioConfig c;
  auto number = [](const nlohmann::json& v, const std::string& field) {
    if (!v.is_number()) throw FieldError(field, "must be a number");
    return v.get<double>();
  };
  auto group_of = [](const std::string& key, const std::string& field) {
    for (auto g : kAllGroups)
      if (to_string(g) == key) return g;
    throw FieldError(field + "." + key, "unknown segment group");
  };
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const auto& v = it.value();
    if (k == "version" || k == "kind") continue;
    if (k == "name") {
      if (!v.is_string()) throw FieldError(k, "must be a string");
      c.name = v.get<std::string>();
    } else if (k == "total_drivers") {
      c.total_drivers = number(v, k);
    } else if (k == "segment_shares") {
      if (!v.is_object()) throw FieldError(k, "must be an object");
      c.segment_shares.clear();
      for (auto s = v.begin(); s != v.end(); ++s) c.segment_shares[group_of(s.key(), k)] = number(s.value(), k + "." + s.key());
      for (auto g : kAllGroups) c.segment_shares.try_emplace(g, 0.0);
    } else if (k == "mud_fraction") {
      c.mud_fraction = number(v, k);
    } else if (k == "l1_fraction") {
      c.l1_fraction = number(v, k);
    } else if (k == "charge_probability") {
      if (!v.is_object()) throw FieldError(k, "must be an object");
      for (auto s = v.begin(); s != v.end(); ++s) {
        const auto g = group_of(s.key(), k);
        const auto f = k + "." + s.key();
        if (s.value().is_number()) {
          const double p = number(s.value(), f);
          c.charge_probability[g] = {p, p};
        } else if (s.value().is_object()) {
          for (auto d = s.value().begin(); d != s.value().end(); ++d) {
            const auto day = parse_day_type(d.key());
            if (!day) throw FieldError(f + "." + d.key(), "expected weekday or weekend");
            c.charge_probability[g][*day == DayType::Weekday ? 0 : 1] = number(d.value(), f + "." + d.key());
          }
        } else {
          throw FieldError(f, "must be a number or {weekday, weekend}");
        }
      }
    } else if (k == "observed_timers") {
      if (!v.is_boolean()) throw FieldError(k, "must be true or false");
      c.observed_timers = v.get<bool>();
    } else if (k == "timer_policies") {
      if (!v.is_array()) throw FieldError(k, "must be an array");
      for (std::size_t i = 0; i < v.size(); ++i) {
        const auto f = k + "[" + std::to_string(i) + "]";
        if (!v[i].is_object() || !v[i].contains("participation") || !v[i].contains("start"))
          throw FieldError(f, "needs participation and start");
        c.timer_policies.push_back({number(v[i]["participation"], f + ".participation"), number(v[i]["start"], f + ".start")});
      }
    } else if (k == "control_assignment") {
      if (!v.is_object()) throw FieldError(k, "must be an object");
      for (auto s = v.begin(); s != v.end(); ++s) {
        if (s.value().is_null()) continue;
        if (!s.value().is_string()) throw FieldError(k + "." + s.key(), "must be a surrogate id");
        c.control_assignment[s.key()] = s.value().get<std::string>();
      }
    } else if (k == "day_type") {
      const auto d = v.is_string() ? parse_day_type(v.get<std::string>()) : std::nullopt;
      if (!d) throw FieldError(k, "expected weekday or weekend");
      c.day_type = *d;
    } else if (k == "dt_output") {
      if (!v.is_number_integer()) throw FieldError(k, "must be an integer");
      c.dt_output = v.get<int>();
    } else if (k == "seed") {
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
        throw FieldError(k, "must be a non-negative integer");
      c.seed = v.get<std::uint64_t>();
    } else if (k == "timer_window") {
      if (!v.is_array() || v.size() != 2) throw FieldError(k, "must be [start, end]");
      c.timer_window = {number(v[0], k), number(v[1], k)};
    } else if (k == "timer_max_start_std") {
      c.timer_max_start_std = number(v, k);
    } else {
      throw FieldError(k, "unknown field");
    }
  }
  c.validate();
  return c;
}

inline ScenarioConfig load_scenario_config(const std::string& path) {
  return scenario_config_from_json(load_json(path));
}

// ---------------------------------------------------------------------------

inline std::uint64_t round_half_up(double x) { return static_cast<std::uint64_t>(std::floor(x + 0.5)); }

/// Session count per segment. Sub-splits are taken from the rounded group
/// count so the group total is conserved exactly.
inline std::map<Segment, std::uint64_t> segment_counts(const ScenarioConfig& c) {
  c.validate();
  std::map<Segment, std::uint64_t> out;
  const auto day = c.day_type;
  auto group = [&](Group g) { return round_half_up(c.total_drivers * c.segment_shares.at(g) * c.probability(g)); };
  const auto res = group(Group::Residential);
  const auto mud = round_half_up(static_cast<double>(res) * c.mud_fraction);
  const auto sf = res - mud;
  const auto l1 = round_half_up(static_cast<double>(sf) * c.l1_fraction);
  out[make_segment(Location::MUD, Level::L2, day)] = mud;
  out[make_segment(Location::ResidentialSF, Level::L1, day)] = l1;
  out[make_segment(Location::ResidentialSF, Level::L2, day)] = sf - l1;
  out[make_segment(Location::Workplace, Level::L2, day)] = group(Group::Workplace);
  out[make_segment(Location::PublicL2, Level::L2, day)] = group(Group::PublicL2);
  out[make_segment(Location::PublicDCFC, Level::DCFC, day)] = group(Group::PublicDCFC);
  return out;
}

struct TimerStats {
  std::uint64_t selected = 0;
  std::uint64_t applied = 0;
  std::uint64_t rejected = 0;  // window did not admit the timer; original start kept
};

struct SegmentResult {
  Segment segment;
  std::uint64_t sessions = 0;
  LoadProfile profile;                   // final (controlled when assigned)
  std::optional<LoadProfile> uncontrolled;  // set when a surrogate was applied
  std::string surrogate_id;
  std::string model_note;  // e.g. derived from another segment
  TimerStats timers;
  double seconds = 0.0;
};

struct ScenarioResult {
  std::string name;
  std::uint64_t seed = 0;
  std::vector<SegmentResult> segments;
  LoadProfile total;
  std::map<std::string, double> timings;

  double peak_kw() const { return total.peak(); }
  double peak_minute() const { return total.peak_minute(); }
  double energy_kwh() const { return total.energy_kwh(); }
  const SegmentResult& at(const Segment& s) const {
    for (const auto& r : segments)
      if (r.segment == s) return r;
    throw Error("segment", "segment " + s.key() + " not in result");
  }
};

using ModelSet = std::map<Segment, SegmentModel>;
using SurrogateSet = std::map<std::string, SurrogateModel>;

/// Mixture used for a segment: native when available, otherwise L1 residential
/// derived from residential L2 without its timer components.
inline std::pair<SegmentModel, std::string> resolve_model(const ScenarioConfig& c, const ModelSet& models,
                                                          const Segment& seg) {
  auto strip = [&](const SegmentModel& base) {
    SegmentModel out = base;
    const auto flagged = flag_timer_components(base.mixture, c.timer_window.start, c.timer_window.end,
                                               c.timer_max_start_std);
    if (!flagged.empty() && flagged.size() < base.mixture.size()) out.mixture = remove_components(base.mixture, flagged);
    return std::pair{out, std::to_string(flagged.size()) + " timer component(s) removed"};
  };
  const auto l2 = make_segment(Location::ResidentialSF, Level::L2, seg.day_type);
  if (seg.location == Location::ResidentialSF && seg.level == Level::L2 && !c.observed_timers) {
    auto it = models.find(seg);
    if (it == models.end()) throw Error("model", "no mixture model for segment " + seg.key());
    auto [m, note] = strip(it->second);
    m.mixture.segment = seg.key();
    return {m, note};
  }
  if (auto it = models.find(seg); it != models.end()) return {it->second, ""};
  if (seg.location == Location::ResidentialSF && seg.level == Level::L1) {
    auto it = models.find(l2);
    if (it == models.end()) throw Error("model", "no mixture model for segment " + seg.key() + " or " + l2.key());
    auto [m, note] = strip(it->second);
    m.mixture.segment = seg.key();
    return {m, "derived from " + l2.key() + "; " + note};
  }
  throw Error("model", "no mixture model for segment " + seg.key());
}

namespace detail {

inline constexpr std::uint64_t kBlock = 1 << 16;

/// Streams sessions block by block into a 1-minute accumulator.
inline SegmentResult simulate_segment(const ScenarioConfig& c, const Segment& seg, std::uint64_t count,
                                      const SegmentModel& model, std::uint64_t seed, std::size_t threads) {
  Stopwatch clock;
  SegmentResult r;
  r.segment = seg;
  r.sessions = count;
  const bool timers = seg.location == Location::ResidentialSF && seg.level == Level::L2 && !c.timer_policies.empty();
  if (timers && !model.duration)
    throw Error("model", "segment " + seg.key() + " has no duration model; timer policies need plug-in windows");
  const std::size_t blocks = static_cast<std::size_t>((count + kBlock - 1) / kBlock);
  std::vector<ProfileAccumulator> acc(blocks, ProfileAccumulator(1));
  std::vector<TimerStats> stats(blocks);
  std::vector<double> cumulative;
  double run = 0;
  for (const auto& t : c.timer_policies) cumulative.push_back(run += t.participation);
  const double rate = seg.rated_power();
  if (count > 0) {
    const MixtureSampler sampler(model.mixture);
    parallel_for(
        blocks,
        [&](std::size_t b) {
          Rng rng(derive_seed(seed, b));
          std::uniform_real_distribution<double> u(0.0, 1.0);
          const std::uint64_t n = std::min<std::uint64_t>(kBlock, count - b * kBlock);
          for (std::uint64_t i = 0; i < n; ++i) {
            auto [p, g] = sampler.draw(rng);
            if (timers) {
              Session s;
              s.segment = seg;
              s.start_min = p.start;
              s.energy_kwh = p.energy;
              s.max_rate_kw = rate;
              s.duration_min = model.duration->sample(rng, p.energy, rate);
              const double pick = u(rng);
              const auto pol = std::upper_bound(cumulative.begin(), cumulative.end(), pick) - cumulative.begin();
              if (pol < static_cast<std::ptrdiff_t>(cumulative.size())) {
                ++stats[b].selected;
                const double target = c.timer_policies[pol].start_min;
                if (admits_timer(s, target)) {
                  s = apply_timer(s, target);
                  ++stats[b].applied;
                } else {
                  ++stats[b].rejected;
                }
              }
              p.start = s.start_min;
            }
            acc[b].add_session(p.start, p.energy, rate);
          }
        },
        threads);
  }
  ProfileAccumulator total(1);
  for (std::size_t b = 0; b < blocks; ++b) {
    total.merge(acc[b]);
    r.timers.selected += stats[b].selected;
    r.timers.applied += stats[b].applied;
    r.timers.rejected += stats[b].rejected;
  }
  r.profile = total.finish();
  r.seconds = clock.seconds();
  return r;
}

}  // namespace detail

/// Recomputes the total at the coarsest segment resolution (at least dt_output).
inline void assemble_total(ScenarioResult& res, int dt_output) {
  int dt = dt_output;
  for (const auto& s : res.segments) dt = std::max(dt, s.profile.dt);
  while (kMinutesPerDay % dt != 0) ++dt;
  for (const auto& s : res.segments)
    if (dt % s.profile.dt != 0)
      throw Error("argument", "segment dt " + std::to_string(s.profile.dt) + " does not divide output dt " +
                                  std::to_string(dt));
  res.total = LoadProfile::zeros(dt);
  for (const auto& s : res.segments) res.total += resample(s.profile, dt);
}

/// Replaces a segment's profile with the surrogate-controlled one.
inline void apply_control(SegmentResult& seg, const SurrogateModel& model, const std::string& id) {
  const LoadProfile base = seg.uncontrolled ? *seg.uncontrolled : seg.profile;
  if (model.dt % base.dt != 0 && base.dt != model.dt)
    throw Error("argument", "surrogate '" + id + "' dt=" + std::to_string(model.dt) +
                                " is not reachable from the segment's dt=" + std::to_string(base.dt));
  seg.uncontrolled = base;
  seg.profile = apply(model, resample(base, model.dt));
  seg.surrogate_id = id;
}

inline ScenarioResult run_scenario(const ScenarioConfig& config, const ModelSet& models, const SurrogateSet& surrogates,
                                   std::size_t threads = worker_count()) {
  Stopwatch clock;
  config.validate();
  const auto counts = segment_counts(config);
  ScenarioResult res;
  res.name = config.name;
  res.seed = config.seed;

  // Resolve everything first so missing models fail before any sampling.
  std::vector<std::pair<Segment, SegmentModel>> plan;
  std::vector<std::string> notes;
  for (const auto& [seg, n] : counts) {
    if (n == 0) {
      plan.emplace_back(seg, SegmentModel{});
      notes.emplace_back();
      continue;
    }
    auto [m, note] = resolve_model(config, models, seg);
    plan.emplace_back(seg, std::move(m));
    notes.push_back(std::move(note));
  }
  for (const auto& [key, id] : config.control_assignment) {
    if (!surrogates.count(id)) throw Error("not_found", "unknown surrogate id '" + id + "'");
    if (!counts.count(parse_segment_key(key)))
      throw FieldError("control_assignment." + key, "segment is not part of this scenario");
  }
  res.timings["resolve"] = clock.seconds();

  Stopwatch sim;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const auto& [seg, model] = plan[i];
    const auto n = counts.at(seg);
    if (n == 0) {
      SegmentResult r;
      r.segment = seg;
      r.profile = LoadProfile::zeros(1);
      res.segments.push_back(std::move(r));
      continue;
    }
    auto r = detail::simulate_segment(config, seg, n, model, derive_seed(config.seed, hash_string(seg.key())), threads);
    r.model_note = notes[i];
    res.segments.push_back(std::move(r));
  }
  res.timings["simulate"] = sim.seconds();

  Stopwatch ctl;
  for (auto& s : res.segments) {
    auto it = config.control_assignment.find(s.segment.key());
    if (it != config.control_assignment.end()) apply_control(s, surrogates.at(it->second), it->second);
  }
  res.timings["control"] = ctl.seconds();
  assemble_total(res, config.dt_output);
  res.timings["total"] = clock.seconds();
  return res;
}

/// Each scenario gets a seed derived from the master seed and its own content,
/// so identical configs give identical results in any position.
inline std::vector<ScenarioResult> compare_scenarios(const std::vector<ScenarioConfig>& configs, const ModelSet& models,
                                                     const SurrogateSet& surrogates, std::uint64_t master_seed) {
  std::vector<ScenarioResult> out;
  for (auto c : configs) {
    c.seed = 0;
    c.seed = derive_seed(master_seed, hash_string(to_json(c).dump()));
    out.push_back(run_scenario(c, models, surrogates));
  }
  return out;
}

// ---------------------------------------------------------------------------

inline nlohmann::json metrics_json(const ScenarioResult& r) {
  nlohmann::json j;
  j["name"] = r.name;
  j["seed"] = r.seed;
  j["dt"] = r.total.dt;
  j["peak_kw"] = r.peak_kw();
  j["peak_minute"] = r.peak_minute();
  j["energy_kwh"] = r.energy_kwh();
  for (const auto& s : r.segments) {
    nlohmann::json sj{{"sessions", s.sessions},
                      {"dt", s.profile.dt},
                      {"peak_kw", s.profile.peak()},
                      {"peak_minute", s.profile.peak_minute()},
                      {"energy_kwh", s.profile.energy_kwh()}};
    if (!s.surrogate_id.empty()) {
      sj["surrogate"] = s.surrogate_id;
      sj["uncontrolled_peak_kw"] = s.uncontrolled->peak();
      sj["uncontrolled_energy_kwh"] = s.uncontrolled->energy_kwh();
    }
    if (!s.model_note.empty()) sj["model"] = s.model_note;
    if (s.timers.selected > 0)
      sj["timers"] = {{"selected", s.timers.selected}, {"applied", s.timers.applied}, {"rejected", s.timers.rejected}};
    j["segments"][s.segment.key()] = sj;
  }
  return j;
}

inline nlohmann::json timings_json(const ScenarioResult& r) {
  nlohmann::json j = r.timings;
  for (const auto& s : r.segments) j["segments"][s.segment.key()] = s.seconds;
  return j;
}

/// Columns of every segment and the total, all at the total's dt.
inline std::vector<NamedProfile> profile_columns(const ScenarioResult& r) {
  std::vector<NamedProfile> cols;
  for (const auto& s : r.segments) cols.emplace_back(s.segment.key(), resample(s.profile, r.total.dt));
  cols.emplace_back("total", r.total);
  return cols;
}

/// Point-averaged copy with at most max_points values.
inline LoadProfile display_profile(const LoadProfile& p, std::size_t max_points = 288) {
  int dt = p.dt;
  while (static_cast<std::size_t>(kMinutesPerDay / dt) > max_points || kMinutesPerDay % dt != 0 || dt % p.dt != 0) ++dt;
  return resample(p, dt);
}

// ---------------------------------------------------------------------------
// Rate design: train a surrogate under a proposed rate and apply it to the
// controlled segment of a scenario.

struct RateDesignOptions {
  std::size_t n_instances = 1000;
  std::size_t n_vehicles = 250;
  int dt = 15;
  RegressorKind kind = RegressorKind::Ridge;
  std::vector<Hyperparameters> grid;
  std::size_t threads = worker_count();
};

struct RateDesignReport {
  std::string rate_name;
  Segment controlled;
  SurrogateModel model;
  double drift = 0.0;
  ClipReport clips;
  ScenarioResult before;
  ScenarioResult after;
  double mean_lp_seconds = 0.0;
  double mean_apply_seconds = 0.0;
  std::map<std::string, double> timings;

  double speedup() const { return mean_apply_seconds > 0 ? mean_lp_seconds / mean_apply_seconds : 0.0; }
};

inline RateDesignReport rate_design_workflow(const RateSchedule& rate, const ModelSet& models,
                                             const ScenarioConfig& config, std::uint64_t seed,
                                             const RateDesignOptions& opt = {}) {
  require_valid(rate);
  RateDesignReport rep;
  rep.rate_name = rate.name;
  rep.controlled = make_segment(Location::Workplace, Level::L2, config.day_type);
  auto it = models.find(rep.controlled);
  if (it == models.end()) throw Error("model", "no mixture model for segment " + rep.controlled.key());
  if (!it->second.duration) throw Error("model", "segment " + rep.controlled.key() + " has no duration model");

  // (1)-(2) artificial sessions and optimization instances
  Stopwatch clock;
  const auto source = mixture_source(it->second.mixture, *it->second.duration, rep.controlled);
  const auto ts = build_training_set(source, rate, opt.n_instances, opt.n_vehicles, opt.dt, seed, opt.threads);
  rep.timings["training_set"] = clock.seconds();
  rep.mean_lp_seconds = ts.mean_lp_seconds();
  rep.clips = ts.clips;

  // (3) surrogate
  clock.reset();
  rep.model = fit(opt.kind, ts, 5, opt.grid, seed);
  rep.timings["fit"] = clock.seconds();
  rep.drift = energy_drift(rep.model, ts);

  // (4) uncontrolled scenario
  clock.reset();
  ScenarioConfig base = config;
  base.control_assignment.clear();
  rep.before = run_scenario(base, models, {}, opt.threads);
  rep.timings["scenario"] = clock.seconds();

  // (5) apply to the controlled segment
  clock.reset();
  rep.after = rep.before;
  for (auto& s : rep.after.segments)
    if (s.segment == rep.controlled) apply_control(s, rep.model, "rate_design:" + rate.name);
  assemble_total(rep.after, config.dt_output);
  rep.timings["apply"] = clock.seconds();

  // Per-lot apply cost on the same instances the LP solved.
  std::vector<LoadProfile> lots;
  for (Eigen::Index j = 0; j < ts.X.rows(); ++j) {
    LoadProfile p = LoadProfile::zeros(opt.dt);
    for (Eigen::Index k = 0; k < ts.X.cols(); ++k) p.values[k] = ts.X(j, k) * ts.scale[j];
    lots.push_back(std::move(p));
  }
  double sink = 0;
  std::size_t calls = 0;
  Stopwatch apply_clock;
  do {
    for (const auto& p : lots) sink += apply(rep.model, p).values[0];
    calls += lots.size();
  } while (apply_clock.seconds() < 0.05);
  rep.mean_apply_seconds = apply_clock.seconds() / calls;
  volatile double keep = sink;
  (void)keep;
  return rep;
}

inline nlohmann::json to_json(const RateDesignReport& r) {
  const auto& b = r.before.at(r.controlled);
  const auto& a = r.after.at(r.controlled);
  nlohmann::json j;
  j["rate"] = r.rate_name;
  j["controlled_segment"] = r.controlled.key();
  j["surrogate"] = {{"kind", to_string(r.model.kind)},
                    {"hyperparameters", to_json(r.model.hyper, r.model.kind)},
                    {"cv_rmse", r.model.cv_rmse},
                    {"test_rmse", r.model.test_rmse},
                    {"energy_drift", r.drift}};
  j["clipping"] = {{"sessions", r.clips.clipped_sessions},
                   {"kwh", r.clips.clipped_kwh},
                   {"truncated_at_midnight", r.clips.truncated_at_midnight}};
  j["segment_peak_kw"] = {{"before", b.profile.peak()}, {"after", a.profile.peak()}};
  j["segment_energy_kwh"] = {{"before", b.profile.energy_kwh()}, {"after", a.profile.energy_kwh()}};
  j["total_peak_kw"] = {{"before", r.before.peak_kw()}, {"after", r.after.peak_kw()}};
  j["peak_change_kw"] = r.after.peak_kw() - r.before.peak_kw();
  j["timings"] = r.timings;
  j["mean_lp_seconds"] = r.mean_lp_seconds;
  j["mean_apply_seconds"] = r.mean_apply_seconds;
  j["speedup"] = r.speedup();
  return j;
}

}  // namespace evload
