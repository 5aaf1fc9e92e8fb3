#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "evload/chargeopt.hpp"
#include "evload/gmm.hpp"
#include "evload/profile.hpp"
#include "evload/rates.hpp"
#include "evload/regress.hpp"
#include "evload/session.hpp"
#include "evload/util.hpp"

namespace evload {

enum class Split { Train, Dev, Test };

/// Draws one lot of n sessions.
using SessionSource = std::function<std::vector<Session>(std::size_t n, Rng& rng)>;

/// Resamples rows (with replacement) from an observed session pool.
inline SessionSource pool_source(std::vector<Session> pool) {
  if (pool.empty()) throw Error("argument", "session pool is empty");
  return [pool = std::move(pool)](std::size_t n, Rng& rng) {
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    std::vector<Session> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      out.push_back(pool[pick(rng)]);
      out.back().id = "s" + std::to_string(i);
    }
    return out;
  };
}

/// Samples (start, energy) from a mixture and departure from a duration model.
inline SessionSource mixture_source(const MixtureModel& mixture, const DurationModel& duration, const Segment& seg) {
  MixtureSampler sampler(mixture);
  return [sampler, duration, seg](std::size_t n, Rng& rng) {
    std::vector<Session> out;
    out.reserve(n);
    const double rate = seg.rated_power();
    for (std::size_t i = 0; i < n; ++i) {
      auto [p, g] = sampler.draw(rng);
      Session s;
      s.id = "s" + std::to_string(i);
      s.segment = seg;
      s.start_min = p.start;
      s.energy_kwh = p.energy;
      s.max_rate_kw = rate;
      s.duration_min = duration.sample(rng, s.energy_kwh, rate);
      out.push_back(std::move(s));
    }
    return out;
  };
}

struct TrainingSet {
  std::string rate_name;
  std::string rate_hash;
  int dt = 15;
  std::size_t n_vehicles = 0;
  std::uint64_t seed = 0;
  Matrix X;  // instances x T, each row divided by its own maximum
  Matrix Y;
  std::vector<double> scale;  // max of the raw uncontrolled profile
  std::vector<Split> split;
  std::vector<double> lp_seconds;
  ClipReport clips;
  std::size_t resampled = 0;

  std::size_t size() const { return static_cast<std::size_t>(X.rows()); }
  std::vector<int> indices(Split s) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < split.size(); ++i)
      if (split[i] == s) out.push_back(static_cast<int>(i));
    return out;
  }
  double mean_lp_seconds() const {
    return lp_seconds.empty() ? 0.0 : std::accumulate(lp_seconds.begin(), lp_seconds.end(), 0.0) / lp_seconds.size();
  }
};

inline Matrix take_rows(const Matrix& M, const std::vector<int>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), M.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = M.row(rows[i]);
  return out;
}

/// Seeded 70/10/20 assignment.
inline std::vector<Split> split_labels(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, 0x5b117));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(0.7 * n));
  const auto n_dev = std::min(n - n_train, static_cast<std::size_t>(std::llround(0.1 * n)));
  std::vector<Split> out(n, Split::Test);
  for (std::size_t k = 0; k < n; ++k)
    out[order[k]] = k < n_train ? Split::Train : (k < n_train + n_dev ? Split::Dev : Split::Test);
  return out;
}

inline TrainingSet build_training_set(const SessionSource& source, const RateSchedule& rate, std::size_t n_instances,
                                      std::size_t n_vehicles, int dt, std::uint64_t seed,
                                      std::size_t threads = worker_count()) {
  require_valid(rate);
  if (n_instances < 10) throw Error("argument", "n_instances must be ≥ 10");
  if (n_vehicles < 1) throw Error("argument", "n_vehicles must be ≥ 1");
  if (!valid_step(dt)) throw Error("argument", "dt=" + std::to_string(dt) + " does not divide 1440");
  const auto T = static_cast<Eigen::Index>(kMinutesPerDay / dt);
  TrainingSet ts;
  ts.rate_name = rate.name;
  ts.rate_hash = rate_hash(rate);
  ts.dt = dt;
  ts.n_vehicles = n_vehicles;
  ts.seed = seed;
  ts.X.resize(static_cast<Eigen::Index>(n_instances), T);
  ts.Y.resize(static_cast<Eigen::Index>(n_instances), T);
  ts.scale.resize(n_instances);
  ts.lp_seconds.resize(n_instances);
  std::vector<ClipReport> clips(n_instances);
  std::vector<char> retried(n_instances, 0);

  parallel_for(
      n_instances,
      [&](std::size_t j) {
        for (int attempt = 0;; ++attempt) {
          Rng rng(derive_seed(seed, j + (static_cast<std::uint64_t>(attempt) << 32)));
          auto prepared = prepare_instance(source(n_vehicles, rng), dt);
          const LoadProfile X = aggregate(std::span<const Session>(prepared.sessions), dt);
          try {
            if (!(X.peak() > 0)) throw Error("infeasible", "instance has no charging energy");
            const auto sched = optimize(prepared.sessions, rate, dt);
            const LoadProfile Y = sched.aggregate();
            const double scale = X.peak();
            const auto row = static_cast<Eigen::Index>(j);
            for (Eigen::Index k = 0; k < T; ++k) {
              ts.X(row, k) = X.values[k] / scale;
              ts.Y(row, k) = Y.values[k] / scale;
            }
            ts.X(row, static_cast<Eigen::Index>(X.peak_index())) = 1.0;
            ts.scale[j] = scale;
            ts.lp_seconds[j] = sched.solve_seconds;
            clips[j] = prepared.report;
            retried[j] = attempt > 0;
            return;
          } catch (const Error& e) {
            if (attempt > 0)
              throw Error(e.code(), "instance " + std::to_string(j) + " failed after resampling: " + e.what());
          }
        }
      },
      threads);

  for (std::size_t j = 0; j < n_instances; ++j) {
    ts.clips.clipped_sessions += clips[j].clipped_sessions;
    ts.clips.clipped_kwh += clips[j].clipped_kwh;
    ts.clips.truncated_at_midnight += clips[j].truncated_at_midnight;
    ts.resampled += retried[j];
  }
  ts.split = split_labels(n_instances, seed);
  return ts;
}

// ---------------------------------------------------------------------------

struct CandidateScore {
  Hyperparameters hyper;
  double cv_rmse = 0.0;
};

struct SurrogateModel {
  RegressorKind kind = RegressorKind::Ridge;
  Hyperparameters hyper;
  Regressor regressor;
  int dt = 15;
  std::string rate_name;
  std::string rate_hash;
  std::uint64_t seed = 0;
  std::size_t n_instances = 0;
  std::size_t n_vehicles = 0;
  double cv_rmse = std::nan("");
  double dev_rmse = std::nan("");
  double test_rmse = std::nan("");
  double fit_seconds = 0.0;
  std::vector<CandidateScore> grid_scores;
  std::vector<std::string> warnings;

  Eigen::Index dimension() const { return kMinutesPerDay / dt; }
};

inline std::vector<Hyperparameters> default_grid(RegressorKind kind) {
  std::vector<Hyperparameters> g;
  switch (kind) {
    case RegressorKind::Linear: g.emplace_back(); break;
    case RegressorKind::Ridge:
      for (double a : {1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0}) {
        Hyperparameters h;
        h.ridge_alpha = a;
        g.push_back(h);
      }
      break;
    case RegressorKind::RandomForest:
      for (int trees : {50, 100, 200})
        for (int depth : {4, 8, 16, 0}) {
          Hyperparameters h;
          h.n_trees = trees;
          h.max_depth = depth;
          g.push_back(h);
        }
      break;
    case RegressorKind::MLP:
      for (const std::vector<int>& layers : {std::vector<int>{64}, std::vector<int>{128}, std::vector<int>{64, 64}})
        for (auto act : {Activation::Relu, Activation::Tanh})
          for (double l2 : {1e-4, 1e-2}) {
            Hyperparameters h;
            h.hidden = layers;
            h.activation = act;
            h.l2 = l2;
            g.push_back(h);
          }
      break;
  }
  return g;
}

/// Grid search by k-fold CV on the train split, refit on the whole train split,
/// then score on dev and test.
inline SurrogateModel fit(RegressorKind kind, const TrainingSet& ts, int cv_folds = 5,
                          std::vector<Hyperparameters> grid = {}, std::uint64_t seed = 0) {
  if (grid.empty()) grid = default_grid(kind);
  if (cv_folds < 2) throw Error("argument", "cv_folds must be ≥ 2");
  std::vector<int> train = ts.indices(Split::Train);
  if (train.empty()) throw Error("argument", "training split is empty");
  if (static_cast<int>(train.size()) < cv_folds)
    throw Error("argument", "training split smaller than the number of CV folds");
  Stopwatch clock;
  SurrogateModel model;
  model.kind = kind;
  model.dt = ts.dt;
  model.rate_name = ts.rate_name;
  model.rate_hash = ts.rate_hash;
  model.seed = seed;
  model.n_instances = ts.size();
  model.n_vehicles = ts.n_vehicles;

  Rng rng(derive_seed(seed, 0xcf01d));
  std::shuffle(train.begin(), train.end(), rng);
  const Matrix Xtr = take_rows(ts.X, train), Ytr = take_rows(ts.Y, train);
  const auto n = static_cast<int>(train.size());

  std::vector<double> scores(grid.size(), 0.0);
  std::vector<std::string> sink;
  const std::size_t jobs = grid.size() * static_cast<std::size_t>(cv_folds);
  std::vector<double> fold_scores(jobs);
  parallel_for(jobs, [&](std::size_t job) {
    const std::size_t c = job / cv_folds;
    const int f = static_cast<int>(job % cv_folds);
    const int lo = n * f / cv_folds, hi = n * (f + 1) / cv_folds;
    std::vector<int> fit_rows, val_rows;
    for (int i = 0; i < n; ++i) (i >= lo && i < hi ? val_rows : fit_rows).push_back(i);
    const Matrix Xf = take_rows(Xtr, fit_rows), Yf = take_rows(Ytr, fit_rows);
    const auto reg = train_regressor(kind, grid[c], Xf, Yf, derive_seed(seed, job));
    fold_scores[job] = rmse(take_rows(Ytr, val_rows), predict(reg, take_rows(Xtr, val_rows)));
  });
  for (std::size_t job = 0; job < jobs; ++job) scores[job / cv_folds] += fold_scores[job] / cv_folds;

  std::size_t best = 0;
  for (std::size_t c = 0; c < grid.size(); ++c) {
    model.grid_scores.push_back({grid[c], scores[c]});
    if (scores[c] < scores[best]) best = c;
  }
  model.hyper = grid[best];
  model.cv_rmse = scores[best];
  model.regressor = train_regressor(kind, model.hyper, Xtr, Ytr, derive_seed(seed, 0xf17a1), &model.warnings);
  for (auto [split, out] : {std::pair{Split::Dev, &model.dev_rmse}, std::pair{Split::Test, &model.test_rmse}}) {
    const auto rows = ts.indices(split);
    if (!rows.empty()) *out = rmse(take_rows(ts.Y, rows), predict(model.regressor, take_rows(ts.X, rows)));
  }
  model.fit_seconds = clock.seconds();
  return model;
}

/// normalize → map → rescale, clipped at zero.
inline LoadProfile apply(const SurrogateModel& model, const LoadProfile& uncontrolled) {
  if (uncontrolled.dt != model.dt)
    throw Error("argument", "surrogate expects dt=" + std::to_string(model.dt) + ", profile has dt=" +
                                std::to_string(uncontrolled.dt));
  uncontrolled.validate();
  LoadProfile out = LoadProfile::zeros(model.dt);
  const double scale = uncontrolled.peak();
  if (!(scale > 0)) return out;
  Matrix x(1, model.dimension());
  for (Eigen::Index k = 0; k < x.cols(); ++k) x(0, k) = uncontrolled.values[k] / scale;
  const Matrix y = predict(model.regressor, x);
  for (Eigen::Index k = 0; k < y.cols(); ++k) out.values[k] = std::max(0.0, scale * y(0, k));
  return out;
}

/// Median of |E(Ŷ) − E(X)| / E(X) over the test split, in normalized units.
inline double energy_drift(const SurrogateModel& model, const TrainingSet& ts) {
  auto rows = ts.indices(Split::Test);
  if (rows.empty()) rows = ts.indices(Split::Train);
  const Matrix pred = predict(model.regressor, take_rows(ts.X, rows)).cwiseMax(0.0);
  std::vector<double> drift;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double ex = ts.X.row(rows[i]).sum();
    drift.push_back(std::abs(pred.row(static_cast<Eigen::Index>(i)).sum() - ex) / ex);
  }
  std::nth_element(drift.begin(), drift.begin() + drift.size() / 2, drift.end());
  return drift[drift.size() / 2];
}

struct SelectionRow {
  RegressorKind kind;
  Hyperparameters hyper;
  double cv_rmse;
  double test_rmse;
  double energy_drift;
  double fit_seconds;
};

struct SelectionReport {
  std::vector<SelectionRow> rows;
  RegressorKind selected = RegressorKind::Ridge;  // best CV
  RegressorKind best_test = RegressorKind::Ridge;
  bool disagreement = false;
  std::vector<SurrogateModel> models;

  const SurrogateModel& selected_model() const {
    for (const auto& m : models)
      if (m.kind == selected) return m;
    throw Error("internal", "selected model missing");
  }
};

inline SelectionReport model_selection_report(const TrainingSet& ts, const std::vector<RegressorKind>& kinds,
                                              std::uint64_t seed,
                                              const std::map<RegressorKind, std::vector<Hyperparameters>>& grids = {}) {
  if (kinds.empty()) throw Error("argument", "no regressor kinds requested");
  SelectionReport rep;
  for (auto kind : kinds) {
    auto it = grids.find(kind);
    auto m = fit(kind, ts, 5, it == grids.end() ? std::vector<Hyperparameters>{} : it->second, seed);
    rep.rows.push_back({kind, m.hyper, m.cv_rmse, m.test_rmse, energy_drift(m, ts), m.fit_seconds});
    rep.models.push_back(std::move(m));
  }
  std::size_t by_cv = 0, by_test = 0;
  for (std::size_t i = 1; i < rep.rows.size(); ++i) {
    if (rep.rows[i].cv_rmse < rep.rows[by_cv].cv_rmse) by_cv = i;
    if (rep.rows[i].test_rmse < rep.rows[by_test].test_rmse) by_test = i;
  }
  rep.selected = rep.rows[by_cv].kind;
  rep.best_test = rep.rows[by_test].kind;
  rep.disagreement = by_cv != by_test;
  return rep;
}

inline nlohmann::json to_json(const SelectionReport& rep) {
  nlohmann::json j;
  j["kind"] = "model_selection_report";
  j["rmse"] = "joint mean over samples and time steps, normalized units";
  j["selected"] = to_string(rep.selected);
  j["best_test"] = to_string(rep.best_test);
  j["cv_test_disagreement"] = rep.disagreement;
  for (const auto& r : rep.rows)
    j["rows"].push_back({{"kind", to_string(r.kind)},
                         {"hyperparameters", to_json(r.hyper, r.kind)},
                         {"cv_rmse", r.cv_rmse},
                         {"test_rmse", r.test_rmse},
                         {"energy_drift", r.energy_drift},
                         {"fit_seconds", r.fit_seconds}});
  return j;
}

// ---------------------------------------------------------------------------
// Persistence

inline nlohmann::json to_json(const SurrogateModel& m) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json j;
  j["version"] = 1;
  j["kind"] = "surrogate_model";
  j["regressor"] = to_string(m.kind);
  j["dt"] = m.dt;
  j["dimension"] = m.dimension();
  j["rate_name"] = m.rate_name;
  j["hyperparameters"] = to_json(m.hyper, m.kind);
  j["parameters"] = regressor_to_json(m.regressor);
  j["scores"] = {{"cv_rmse", num(m.cv_rmse)}, {"dev_rmse", num(m.dev_rmse)}, {"test_rmse", num(m.test_rmse)}};
  j["provenance"] = {{"rate_hash", m.rate_hash},
                     {"seed", m.seed},
                     {"n_instances", m.n_instances},
                     {"n_vehicles", m.n_vehicles}};
  j["warnings"] = m.warnings;
  return j;
}

inline SurrogateModel surrogate_from_json(const nlohmann::json& j) {
  if (j.value("kind", std::string()) != "surrogate_model") throw Error("schema", "not a surrogate model file");
  if (j.value("version", 0) != 1) throw Error("schema", "unsupported surrogate model version");
  SurrogateModel m;
  try {
    auto num = [](const nlohmann::json& v) { return v.is_null() ? std::nan("") : v.get<double>(); };
    m.kind = parse_regressor_kind(j.at("regressor").get<std::string>());
    m.dt = j.at("dt").get<int>();
    if (!valid_step(m.dt)) throw Error("schema", "surrogate dt does not divide 1440");
    m.rate_name = j.value("rate_name", std::string());
    m.hyper = hyperparameters_from_json(j.value("hyperparameters", nlohmann::json::object()));
    m.regressor = regressor_from_json(j.at("parameters"));
    const auto& s = j.at("scores");
    m.cv_rmse = num(s.value("cv_rmse", nlohmann::json(nullptr)));
    m.dev_rmse = num(s.value("dev_rmse", nlohmann::json(nullptr)));
    m.test_rmse = num(s.value("test_rmse", nlohmann::json(nullptr)));
    const auto& p = j.at("provenance");
    m.rate_hash = p.value("rate_hash", std::string());
    m.seed = p.value("seed", std::uint64_t{0});
    m.n_instances = p.value("n_instances", std::size_t{0});
    m.n_vehicles = p.value("n_vehicles", std::size_t{0});
    m.warnings = j.value("warnings", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw Error("schema", std::string("surrogate model: ") + e.what());
  }
  const auto T = m.dimension();
  if (j.value("dimension", T) != T || regressor_inputs(m.regressor) != T || regressor_outputs(m.regressor) != T)
    throw Error("schema", "surrogate input/output dimension must equal 1440/dt = " + std::to_string(T));
  return m;
}

inline void save_json(const nlohmann::json& j, const std::string& path) {
  ensure_parent_dir(path);
  std::ofstream out(path);
  if (!out) throw Error("io", "cannot write " + path);
  out << j.dump(1) << '\n';
}

inline nlohmann::json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("io", "cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("parse", path + ": " + e.what());
  }
}

inline SurrogateModel load_surrogate(const std::string& path) {
  try {
    return surrogate_from_json(load_json(path));
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

}  // namespace evload
