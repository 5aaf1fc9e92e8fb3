#pragma once

#include <boost/graph/adjacency_list.hpp>
#include <boost/graph/push_relabel_max_flow.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "evload/lp.hpp"
#include "evload/profile.hpp"
#include "evload/rates.hpp"
#include "evload/session.hpp"
#include "evload/util.hpp"

namespace evload {

struct ClipReport {
  std::size_t clipped_sessions = 0;
  double clipped_kwh = 0.0;
  std::size_t truncated_at_midnight = 0;
};

struct PreparedInstance {
  std::vector<Session> sessions;
  ClipReport report;
};

/// Makes every session feasible for a same-day control instance: windows are
/// cut at midnight and energy above the remaining window capacity is clipped.
inline PreparedInstance prepare_instance(std::span<const Session> sessions, int dt) {
  if (!valid_step(dt)) throw Error("argument", "dt=" + std::to_string(dt) + " does not divide 1440");
  PreparedInstance out;
  out.sessions.reserve(sessions.size());
  for (const auto& in : sessions) {
    Session s = in;
    if (s.end_min() > kMinutesPerDay) {
      s.duration_min = kMinutesPerDay - s.start_min;
      ++out.report.truncated_at_midnight;
    }
    const double cap = s.window_capacity_kwh();
    if (s.energy_kwh > cap) {
      out.report.clipped_kwh += s.energy_kwh - cap;
      ++out.report.clipped_sessions;
      s.energy_kwh = cap;
    }
    out.sessions.push_back(std::move(s));
  }
  return out;
}

/// Upper bound on the average charging power of a session in slot k: the
/// charge rate times the fraction of the slot the vehicle is plugged in.
inline std::vector<double> slot_rate_bounds(const Session& s, int dt) {
  const auto T = static_cast<std::size_t>(kMinutesPerDay / dt);
  std::vector<double> ub(T, 0.0);
  const double a = s.start_min, b = std::min(s.end_min(), static_cast<double>(kMinutesPerDay));
  const double rate = s.charge_rate_kw();
  for (std::size_t k = static_cast<std::size_t>(a / dt); k < T; ++k) {
    const double lo = static_cast<double>(k * dt), hi = lo + dt;
    if (lo >= b) break;
    const double ov = std::min(b, hi) - std::max(a, lo);
    if (ov > 0) ub[k] = rate * ov / dt;
  }
  return ub;
}

struct ChargeSchedule {
  int dt = 15;
  std::vector<std::vector<double>> rates;  // [session][slot], kW
  double cost = 0.0;                       // total_cost of the aggregate
  int lp_iterations = 0;
  double solve_seconds = 0.0;

  LoadProfile aggregate() const {
    LoadProfile p = LoadProfile::zeros(dt);
    for (const auto& r : rates)
      for (std::size_t k = 0; k < r.size(); ++k) p.values[k] += r[k];
    return p;
  }
};

/// First violated schedule invariant, if any.
inline std::optional<std::string> check_schedule(const ChargeSchedule& sched, std::span<const Session> sessions,
                                                 double energy_tol = 1e-6, double bound_tol = 1e-9) {
  if (sched.rates.size() != sessions.size()) return "schedule/session count mismatch";
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    const auto ub = slot_rate_bounds(sessions[i], sched.dt);
    const double rate = sessions[i].charge_rate_kw();
    double e = 0;
    for (std::size_t k = 0; k < ub.size(); ++k) {
      const double r = sched.rates[i][k];
      if (r < -bound_tol) return "session " + sessions[i].id + ": negative rate in slot " + std::to_string(k);
      if (r > rate + bound_tol) return "session " + sessions[i].id + ": rate above maximum in slot " + std::to_string(k);
      if (r > ub[k] + bound_tol)
        return "session " + sessions[i].id + ": charging outside plug-in window in slot " + std::to_string(k);
      e += r * sched.dt / 60.0;
    }
    if (std::abs(e - sessions[i].energy_kwh) > energy_tol)
      return "session " + sessions[i].id + ": delivered " + format_double(e) + " kWh, required " +
             format_double(sessions[i].energy_kwh);
  }
  return std::nullopt;
}

namespace detail {

/// Largest energy deliverable when the aggregate is capped at cap_kw (max-flow).
inline double max_deliverable_kwh(const std::vector<std::vector<double>>& ub, const std::vector<double>& energy,
                                  double cap_kw, int dt) {
  using namespace boost;
  using Traits = adjacency_list_traits<vecS, vecS, directedS>;
  using Graph = adjacency_list<
      vecS, vecS, directedS, no_property,
      property<edge_capacity_t, double,
               property<edge_residual_capacity_t, double, property<edge_reverse_t, Traits::edge_descriptor>>>>;
  const std::size_t n = ub.size();
  const std::size_t T = n ? ub.front().size() : 0;
  Graph g(n + T + 2);
  const auto source = n + T, sink = n + T + 1;
  auto cap = get(edge_capacity, g);
  auto rev = get(edge_reverse, g);
  auto link = [&](std::size_t a, std::size_t b, double c) {
    auto e = add_edge(a, b, g).first;
    auto r = add_edge(b, a, g).first;
    cap[e] = c;
    cap[r] = 0;
    rev[e] = r;
    rev[r] = e;
  };
  const double h = dt / 60.0;
  for (std::size_t i = 0; i < n; ++i) {
    link(source, i, energy[i]);
    for (std::size_t k = 0; k < T; ++k)
      if (ub[i][k] > 0) link(i, n + k, ub[i][k] * h);
  }
  for (std::size_t k = 0; k < T; ++k) link(n + k, sink, cap_kw * h);
  return push_relabel_max_flow(g, source, sink);
}

}  // namespace detail

/// Exact cost-optimal (or peak-minimizing) schedule for one site-day. Sessions
/// must be same-day feasible (see prepare_instance).
inline ChargeSchedule optimize(std::span<const Session> sessions, const RateSchedule& rate, int dt,
                               const LpOptions& lp_opt = {}) {
  require_valid(rate);
  if (!valid_step(dt)) throw Error("argument", "dt=" + std::to_string(dt) + " does not divide 1440");
  Stopwatch clock;
  const auto T = static_cast<std::size_t>(kMinutesPerDay / dt);
  const double h = dt / 60.0;
  const std::size_t n = sessions.size();

  std::vector<std::vector<double>> ub(n);
  std::vector<double> energy(n);
  std::vector<char> is_free(n, 0);
  std::vector<double> fixed_load(T, 0.0);
  double total_energy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = sessions[i];
    if (auto bad = check_session(s)) throw Error("infeasible", "session " + s.id + ": " + *bad);
    if (s.end_min() > kMinutesPerDay * (1 + 1e-12))
      throw Error("argument", "session " + s.id + " crosses midnight; run prepare_instance first");
    ub[i] = slot_rate_bounds(s, dt);
    double capacity = 0;
    for (double b : ub[i]) capacity += b * h;
    energy[i] = s.energy_kwh;
    total_energy += energy[i];
    if (energy[i] <= 0) continue;
    if (energy[i] >= capacity * (1 - 1e-12)) {
      for (std::size_t k = 0; k < T; ++k) fixed_load[k] += ub[i][k];
    } else {
      is_free[i] = 1;
    }
  }

  if (rate.cap_kw) {
    const double delivered = detail::max_deliverable_kwh(ub, energy, *rate.cap_kw, dt);
    if (delivered < total_energy * (1 - 1e-9) - 1e-9)
      throw Error("infeasible", "capacity cap of " + format_double(*rate.cap_kw) + " kW is binding: at most " +
                                    format_double(delivered) + " kWh deliverable, " + format_double(total_energy) +
                                    " kWh required");
  }

  const bool peak_min = rate.objective == Objective::PeakMin;
  const auto prices = slot_energy_prices(rate, dt);
  LinearProgram lp;
  std::vector<std::vector<int>> slot_vars(T);         // LP columns charging in slot k
  std::vector<std::vector<std::pair<std::size_t, int>>> var_of(n);  // (slot, column)
  for (std::size_t i = 0; i < n; ++i) {
    if (!is_free[i]) continue;
    const int row = lp.add_row(energy[i]);
    for (std::size_t k = 0; k < T; ++k) {
      if (ub[i][k] <= 0) continue;
      const int col = lp.add_variable(peak_min ? 0.0 : prices[k] * h, ub[i][k]);
      lp.add_coefficient(row, col, h);
      slot_vars[k].push_back(col);
      var_of[i].emplace_back(k, col);
    }
  }
  std::vector<char> active(T, 0);
  for (std::size_t k = 0; k < T; ++k) active[k] = !slot_vars[k].empty() || fixed_load[k] > 0;

  // Epigraph rows: sum_i r_ik - aux + slack = -fixed_k for k in the window.
  auto add_epigraph = [&](const std::vector<std::size_t>& slots, double price) {
    std::vector<std::size_t> used;
    for (auto k : slots)
      if (active[k]) used.push_back(k);
    if (used.empty()) return;
    const int aux = lp.add_variable(price);
    for (auto k : used) {
      const int row = lp.add_row(-fixed_load[k]);
      for (int col : slot_vars[k]) lp.add_coefficient(row, col, 1.0);
      lp.add_coefficient(row, aux, -1.0);
      lp.add_coefficient(row, lp.add_variable(0.0), 1.0);
    }
  };
  if (peak_min) {
    std::vector<std::size_t> all(T);
    for (std::size_t k = 0; k < T; ++k) all[k] = k;
    add_epigraph(all, 1.0);
  } else {
    for (const auto& d : rate.demand_charges)
      if (d.price > 0) add_epigraph(window_slots(d.window, dt), d.price);
  }
  if (rate.cap_kw) {
    for (std::size_t k = 0; k < T; ++k) {
      if (slot_vars[k].empty()) continue;
      const int row = lp.add_row(*rate.cap_kw - fixed_load[k]);
      for (int col : slot_vars[k]) lp.add_coefficient(row, col, 1.0);
      lp.add_coefficient(row, lp.add_variable(0.0), 1.0);
    }
  }

  ChargeSchedule sched;
  sched.dt = dt;
  sched.rates.assign(n, std::vector<double>(T, 0.0));
  if (lp.cols() > 0) {
    const auto sol = solve_lp(lp, lp_opt);
    if (sol.status != LpStatus::Optimal)
      throw Error("internal", "LP solver did not converge (status " + std::to_string(static_cast<int>(sol.status)) +
                                  ", gap " + format_double(sol.relative_gap) + ", primal residual " +
                                  format_double(sol.primal_residual) + ")");
    sched.lp_iterations = sol.iterations;
    for (std::size_t i = 0; i < n; ++i)
      for (const auto& [k, col] : var_of[i]) sched.rates[i][k] = std::clamp(sol.x[col], 0.0, ub[i][k]);
  }
  for (std::size_t i = 0; i < n; ++i)
    if (!is_free[i] && energy[i] > 0) sched.rates[i] = ub[i];
  sched.cost = total_cost(sched.aggregate(), rate);
  sched.solve_seconds = clock.seconds();
  return sched;
}

/// Cost of the uncontrolled (charge-on-arrival) aggregate of the same sessions.
inline double uncontrolled_cost(std::span<const Session> sessions, const RateSchedule& rate, int dt) {
  return total_cost(aggregate(sessions, dt), rate);
}

/// Exhaustive search over schedules whose per-slot rates lie on
/// {0, 1/2, 1} x charge rate. Returns +inf when no grid schedule exists.
inline double brute_force_cost(std::span<const Session> sessions, const RateSchedule& rate, int dt) {
  require_valid(rate);
  if (sessions.size() > 6) throw Error("too_large", "brute force supports at most 6 sessions");
  const auto T = static_cast<std::size_t>(kMinutesPerDay / dt);
  const double h = dt / 60.0;
  std::vector<char> used(T, 0);
  std::vector<std::vector<double>> ubs;
  for (const auto& s : sessions) {
    if (auto bad = check_session(s)) throw Error("infeasible", "session " + s.id + ": " + *bad);
    if (s.end_min() > kMinutesPerDay * (1 + 1e-12))
      throw Error("argument", "session " + s.id + " crosses midnight; run prepare_instance first");
    ubs.push_back(slot_rate_bounds(s, dt));
    for (std::size_t k = 0; k < T; ++k)
      if (ubs.back()[k] > 0) used[k] = 1;
  }
  if (std::count(used.begin(), used.end(), 1) > 16)
    throw Error("too_large", "brute force supports at most 16 occupied time steps");

  // Per-session grid schedules meeting the energy requirement exactly.
  std::vector<std::vector<std::vector<double>>> options(sessions.size());
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    const double rate_kw = sessions[i].charge_rate_kw();
    std::vector<std::size_t> slots;
    for (std::size_t k = 0; k < T; ++k)
      if (ubs[i][k] > 0) slots.push_back(k);
    const double target = sessions[i].energy_kwh;
    std::vector<double> cur(T, 0.0);
    auto recurse = [&](auto&& self, std::size_t pos, double e) -> void {
      if (e > target + 1e-9 * (1 + target)) return;
      if (pos == slots.size()) {
        if (std::abs(e - target) <= 1e-9 * (1 + target)) {
          options[i].push_back(cur);
          if (options[i].size() > 2'000'000) throw Error("too_large", "too many grid schedules");
        }
        return;
      }
      const auto k = slots[pos];
      for (double level : {0.0, 0.5, 1.0}) {
        const double r = level * rate_kw;
        if (r > ubs[i][k] + 1e-12) continue;
        cur[k] = r;
        self(self, pos + 1, e + r * h);
      }
      cur[k] = 0.0;
    };
    recurse(recurse, 0, 0.0);
    if (options[i].empty()) return std::numeric_limits<double>::infinity();
  }

  // Combine sessions, keeping one representative per distinct aggregate.
  auto key_of = [](const std::vector<double>& v) {
    std::vector<long long> key(v.size());
    for (std::size_t k = 0; k < v.size(); ++k) key[k] = std::llround(v[k] * 1e6);
    return key;
  };
  std::map<std::vector<long long>, std::vector<double>> frontier;
  frontier[key_of(std::vector<double>(T, 0.0))] = std::vector<double>(T, 0.0);
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    std::map<std::vector<long long>, std::vector<double>> next;
    for (const auto& [key, agg] : frontier) {
      for (const auto& opt : options[i]) {
        std::vector<double> sum = agg;
        for (std::size_t k = 0; k < T; ++k) sum[k] += opt[k];
        next.emplace(key_of(sum), std::move(sum));
      }
      if (next.size() > 5'000'000) throw Error("too_large", "brute force state space exceeded");
    }
    frontier = std::move(next);
  }

  double best = std::numeric_limits<double>::infinity();
  for (const auto& [key, agg] : frontier) {
    LoadProfile p{dt, agg};
    if (rate.cap_kw && p.peak() > *rate.cap_kw + 1e-9) continue;
    best = std::min(best, total_cost(p, rate));
  }
  return best;
}

// ---------------------------------------------------------------------------
// Instance dump: sessions.csv + rate.json + instance.json

inline void write_instance(const std::string& dir, std::span<const Session> sessions, const RateSchedule& rate,
                           int dt) {
  std::filesystem::create_directories(dir);
  write_sessions_csv(std::vector<Session>(sessions.begin(), sessions.end()), dir + "/sessions.csv");
  std::ofstream(dir + "/rate.json") << to_json(rate).dump(2) << '\n';
  nlohmann::json meta = {{"version", 1}, {"kind", "control_instance"}, {"dt", dt}, {"rate_hash", rate_hash(rate)}};
  std::ofstream(dir + "/instance.json") << meta.dump(2) << '\n';
}

struct ControlInstance {
  std::vector<Session> sessions;
  RateSchedule rate;
  int dt = 15;
};

inline ControlInstance read_instance(const std::string& dir) {
  ControlInstance inst;
  inst.sessions = read_sessions_csv(dir + "/sessions.csv");
  inst.rate = load_rate(dir + "/rate.json");
  std::ifstream in(dir + "/instance.json");
  if (!in) throw Error("io", "cannot open " + dir + "/instance.json");
  const auto meta = nlohmann::json::parse(in);
  inst.dt = meta.at("dt").get<int>();
  if (meta.contains("rate_hash") && meta["rate_hash"].get<std::string>() != rate_hash(inst.rate))
    throw Error("hash", "rate file in " + dir + " does not match the recorded hash");
  return inst;
}

}  // namespace evload
