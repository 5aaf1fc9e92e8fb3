#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "evload/session.hpp"
#include "evload/util.hpp"

namespace evload {

/// One (start minute, energy kWh) observation.
struct Point {
  double start = 0.0;
  double energy = 0.0;
};

inline constexpr double kCovarianceFloor = 1e-4;  // eigenvalue floor in standardized units

struct GaussianComponent {
  double weight = 0.0;
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  Eigen::Matrix2d cov = Eigen::Matrix2d::Identity();

  double start_std() const { return std::sqrt(cov(0, 0)); }
};

struct FitInfo {
  std::size_t n = 0;
  double log_likelihood = 0.0;
  double bic = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> trajectory;  // log-likelihood before each M-step
  std::vector<std::string> warnings;
};

struct MixtureModel {
  std::string segment;
  std::vector<GaussianComponent> components;
  // Per-dimension standardization scale used when fitting; the covariance floor
  // is checked in these units. (1, 1) for hand-built models.
  Eigen::Vector2d scale = Eigen::Vector2d::Ones();
  FitInfo fit;

  std::size_t size() const { return components.size(); }

  /// Throws on the first broken invariant.
  void validate() const {
    if (components.empty()) throw Error("model", "mixture has no components");
    double wsum = 0;
    for (std::size_t g = 0; g < components.size(); ++g) {
      const auto& c = components[g];
      const auto where = "component " + std::to_string(g) + ": ";
      if (!(c.weight >= 0)) throw Error("model", where + "negative weight");
      if (!c.mean.allFinite() || !c.cov.allFinite()) throw Error("model", where + "non-finite parameters");
      if (std::abs(c.cov(0, 1) - c.cov(1, 0)) > 1e-12 * (1 + c.cov.cwiseAbs().maxCoeff()))
        throw Error("model", where + "covariance not symmetric");
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> raw(c.cov, Eigen::EigenvaluesOnly);
      if (raw.eigenvalues().minCoeff() <= 0)
        throw Error("model", where + "covariance is not positive definite");
      const Eigen::Matrix2d std_cov = scale.cwiseInverse().asDiagonal() * c.cov * scale.cwiseInverse().asDiagonal();
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> st(std_cov, Eigen::EigenvaluesOnly);
      if (st.eigenvalues().minCoeff() < kCovarianceFloor * (1 - 1e-6))
        throw Error("model", where + "covariance eigenvalue below floor");
      wsum += c.weight;
    }
    if (std::abs(wsum - 1.0) > 1e-9) throw Error("model", "weights sum to " + format_double(wsum));
  }
};

namespace detail {

struct ComponentTerms {
  double log_norm;  // log(weight) - log(2 pi) - 0.5 log det
  double ia, ib, ic;  // inverse covariance [[ia, ib], [ib, ic]]
  double mx, my;
};

inline ComponentTerms component_terms(double weight, const Eigen::Vector2d& mean, const Eigen::Matrix2d& cov) {
  const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(1, 0);
  if (!(det > 0) || !(cov(0, 0) > 0)) throw Error("model", "covariance is not positive definite");
  const double lw = weight > 0 ? std::log(weight) : -std::numeric_limits<double>::infinity();
  return {lw - std::log(2 * std::numbers::pi) - 0.5 * std::log(det),
          cov(1, 1) / det,
          -cov(0, 1) / det,
          cov(0, 0) / det,
          mean(0),
          mean(1)};
}

inline double component_log_density(const ComponentTerms& t, double x, double y) {
  const double dx = x - t.mx, dy = y - t.my;
  return t.log_norm - 0.5 * (t.ia * dx * dx + 2 * t.ib * dx * dy + t.ic * dy * dy);
}

inline double log_sum_exp(const double* v, std::size_t n) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, v[i]);
  if (!std::isfinite(m)) return m;
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(v[i] - m);
  return m + std::log(s);
}

inline Eigen::Matrix2d floor_covariance(const Eigen::Matrix2d& cov, double floor) {
  Eigen::Matrix2d sym = 0.5 * (cov + cov.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(sym);
  Eigen::Vector2d ev = es.eigenvalues().cwiseMax(floor);
  Eigen::Matrix2d out = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

}  // namespace detail

inline double log_likelihood(const MixtureModel& model, std::span<const Point> data) {
  if (data.empty()) throw Error("argument", "log_likelihood needs at least one point");
  if (model.components.empty()) throw Error("model", "mixture has no components");
  std::vector<detail::ComponentTerms> terms;
  for (const auto& c : model.components) terms.push_back(detail::component_terms(c.weight, c.mean, c.cov));
  std::vector<double> buf(terms.size());
  double total = 0;
  for (const auto& p : data) {
    for (std::size_t g = 0; g < terms.size(); ++g)
      buf[g] = detail::component_log_density(terms[g], p.start, p.energy);
    total += detail::log_sum_exp(buf.data(), buf.size());
  }
  return total;
}

/// Free parameters of a G-component bivariate mixture with full covariances.
inline int free_parameters(int G) { return (G - 1) + 2 * G + 3 * G; }

inline double bic(double log_lik, int G, std::size_t n) {
  return free_parameters(G) * std::log(static_cast<double>(n)) - 2.0 * log_lik;
}

struct EmOptions {
  double tol = 1e-7;  // relative log-likelihood change
  int max_iter = 500;
  int restarts = 5;
  std::uint64_t seed = 0;
};

namespace detail {

struct Standardized {
  std::vector<double> x, y;
  Eigen::Vector2d center, scale;
  bool degenerate = false;
};

inline Standardized standardize(std::span<const Point> data) {
  Standardized s;
  const double n = static_cast<double>(data.size());
  double mx = 0, my = 0;
  for (const auto& p : data) {
    mx += p.start;
    my += p.energy;
  }
  mx /= n;
  my /= n;
  double vx = 0, vy = 0;
  for (const auto& p : data) {
    vx += (p.start - mx) * (p.start - mx);
    vy += (p.energy - my) * (p.energy - my);
  }
  double sx = std::sqrt(vx / n), sy = std::sqrt(vy / n);
  if (!(sx > 0)) {
    sx = 1.0;
    s.degenerate = true;
  }
  if (!(sy > 0)) {
    sy = 1.0;
    s.degenerate = true;
  }
  s.center = {mx, my};
  s.scale = {sx, sy};
  s.x.reserve(data.size());
  s.y.reserve(data.size());
  for (const auto& p : data) {
    s.x.push_back((p.start - mx) / sx);
    s.y.push_back((p.energy - my) / sy);
  }
  return s;
}

struct EmRun {
  std::vector<GaussianComponent> comps;  // standardized units
  double log_likelihood = -std::numeric_limits<double>::infinity();
  std::vector<double> trajectory;
  int iterations = 0;
  bool converged = false;
};

// k-means++ seeding followed by a few Lloyd steps; returns hard-assignment parameters.
inline std::vector<GaussianComponent> kmeans_init(const Standardized& d, int G, std::uint64_t seed) {
  const std::size_t n = d.x.size();
  Rng rng(seed);
  std::vector<Eigen::Vector2d> centers;
  std::uniform_int_distribution<std::size_t> first(0, n - 1);
  auto p0 = first(rng);
  centers.push_back({d.x[p0], d.y[p0]});
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  for (int k = 1; k < G; ++k) {
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& c = centers.back();
      dist[i] = std::min(dist[i], (d.x[i] - c(0)) * (d.x[i] - c(0)) + (d.y[i] - c(1)) * (d.y[i] - c(1)));
      total += dist[i];
    }
    std::size_t pick = first(rng);
    if (total > 0) {
      double u = std::uniform_real_distribution<double>(0.0, total)(rng);
      for (std::size_t i = 0; i < n; ++i) {
        u -= dist[i];
        if (u <= 0) {
          pick = i;
          break;
        }
      }
    }
    centers.push_back({d.x[pick], d.y[pick]});
  }

  std::vector<int> label(n, 0);
  for (int iter = 0; iter < 10; ++iter) {
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int k = 0; k < G; ++k) {
        const double dd = (d.x[i] - centers[k](0)) * (d.x[i] - centers[k](0)) +
                          (d.y[i] - centers[k](1)) * (d.y[i] - centers[k](1));
        if (dd < best) {
          best = dd;
          label[i] = k;
        }
      }
    }
    std::vector<Eigen::Vector2d> sums(G, Eigen::Vector2d::Zero());
    std::vector<std::size_t> counts(G, 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums[label[i]] += Eigen::Vector2d(d.x[i], d.y[i]);
      ++counts[label[i]];
    }
    for (int k = 0; k < G; ++k)
      if (counts[k] > 0) centers[k] = sums[k] / static_cast<double>(counts[k]);
  }

  std::vector<GaussianComponent> comps(G);
  std::vector<std::size_t> counts(G, 0);
  std::vector<Eigen::Matrix2d> scatter(G, Eigen::Matrix2d::Zero());
  for (std::size_t i = 0; i < n; ++i) {
    const int k = label[i];
    Eigen::Vector2d v(d.x[i] - centers[k](0), d.y[i] - centers[k](1));
    scatter[k] += v * v.transpose();
    ++counts[k];
  }
  for (int k = 0; k < G; ++k) {
    comps[k].weight = (counts[k] + 1.0) / (static_cast<double>(n) + G);
    comps[k].mean = centers[k];
    comps[k].cov = counts[k] >= 3 ? Eigen::Matrix2d(scatter[k] / static_cast<double>(counts[k]))
                                  : Eigen::Matrix2d(0.01 * Eigen::Matrix2d::Identity());
    comps[k].cov = floor_covariance(comps[k].cov, kCovarianceFloor);
  }
  return comps;
}

inline EmRun run_em(const Standardized& d, int G, const EmOptions& opt, std::uint64_t seed) {
  const std::size_t n = d.x.size();
  EmRun run;
  run.comps = kmeans_init(d, G, seed);
  std::vector<double> resp(n * G);
  std::vector<ComponentTerms> terms(G);
  double prev = -std::numeric_limits<double>::infinity();

  for (int iter = 0; iter < opt.max_iter; ++iter) {
    for (int g = 0; g < G; ++g) terms[g] = component_terms(run.comps[g].weight, run.comps[g].mean, run.comps[g].cov);
    double ll = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double* r = &resp[i * G];
      for (int g = 0; g < G; ++g) r[g] = component_log_density(terms[g], d.x[i], d.y[i]);
      const double lse = log_sum_exp(r, G);
      ll += lse;
      for (int g = 0; g < G; ++g) r[g] = std::exp(r[g] - lse);
    }
    run.trajectory.push_back(ll);
    run.log_likelihood = ll;
    run.iterations = iter + 1;
    if (iter > 0 && std::abs(ll - prev) <= opt.tol * std::abs(prev)) {
      run.converged = true;
      break;
    }
    prev = ll;

    // M-step
    for (int g = 0; g < G; ++g) {
      double nk = 0, sx = 0, sy = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const double r = resp[i * G + g];
        nk += r;
        sx += r * d.x[i];
        sy += r * d.y[i];
      }
      auto& c = run.comps[g];
      c.weight = nk / static_cast<double>(n);
      if (nk < 1e-8) continue;  // collapsed component keeps its last shape
      const double mx = sx / nk, my = sy / nk;
      double cxx = 0, cxy = 0, cyy = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const double r = resp[i * G + g];
        const double dx = d.x[i] - mx, dy = d.y[i] - my;
        cxx += r * dx * dx;
        cxy += r * dx * dy;
        cyy += r * dy * dy;
      }
      c.mean = {mx, my};
      Eigen::Matrix2d cov;
      cov << cxx / nk, cxy / nk, cxy / nk, cyy / nk;
      c.cov = floor_covariance(cov, kCovarianceFloor);
    }
    double wsum = 0;
    for (const auto& c : run.comps) wsum += c.weight;
    for (auto& c : run.comps) c.weight /= wsum;
  }
  return run;
}

}  // namespace detail

/// Fits a G-component mixture by EM with k-means++ initialization and
/// best-of-`restarts` selection. Deterministic for a given seed.
inline MixtureModel fit_em(std::span<const Point> data, int G, const EmOptions& opt = {}) {
  if (G < 1) throw Error("argument", "component count must be ≥ 1");
  if (data.size() < static_cast<std::size_t>(G))
    throw Error("argument", "need at least G=" + std::to_string(G) + " points, got " + std::to_string(data.size()));
  if (opt.restarts < 1 || opt.max_iter < 1) throw Error("argument", "restarts and max_iter must be ≥ 1");

  const auto d = detail::standardize(data);
  std::vector<detail::EmRun> runs(opt.restarts);
  parallel_for(runs.size(), [&](std::size_t r) { runs[r] = detail::run_em(d, G, opt, derive_seed(opt.seed, r)); });
  std::size_t best = 0;
  for (std::size_t r = 1; r < runs.size(); ++r)
    if (runs[r].log_likelihood > runs[best].log_likelihood) best = r;
  const auto& run = runs[best];

  MixtureModel model;
  model.scale = d.scale;
  const Eigen::DiagonalMatrix<double, 2> S(d.scale);
  for (const auto& c : run.comps) {
    GaussianComponent o;
    o.weight = c.weight;
    o.mean = S * c.mean + d.center;
    o.cov = S * c.cov * S;
    o.cov = 0.5 * (o.cov + o.cov.transpose());
    model.components.push_back(o);
  }
  const double log_jacobian = std::log(d.scale(0)) + std::log(d.scale(1));
  model.fit.n = data.size();
  model.fit.iterations = run.iterations;
  model.fit.converged = run.converged;
  for (double ll : run.trajectory) model.fit.trajectory.push_back(ll - data.size() * log_jacobian);
  model.fit.log_likelihood = log_likelihood(model, data);
  model.fit.bic = bic(model.fit.log_likelihood, G, data.size());
  if (d.degenerate && G > 1)
    model.fit.warnings.push_back("degenerate data: zero variance in at least one dimension; covariances floored");
  if (!run.converged)
    model.fit.warnings.push_back("EM hit max_iter=" + std::to_string(opt.max_iter) + " before converging");
  return model;
}

struct ComponentSelection {
  int chosen_G = 0;
  int elbow_G = 0;  // largest-curvature point of the BIC curve, for human review
  std::vector<int> G_values;
  std::vector<double> bic_values;
  std::vector<MixtureModel> models;
  std::vector<std::string> warnings;

  const MixtureModel& chosen() const {
    for (std::size_t i = 0; i < G_values.size(); ++i)
      if (G_values[i] == chosen_G) return models[i];
    throw Error("internal", "chosen model missing");
  }
};

namespace detail {

inline int elbow_point(const std::vector<int>& gs, const std::vector<double>& bics) {
  if (gs.size() < 3) return gs.empty() ? 0 : gs[std::min_element(bics.begin(), bics.end()) - bics.begin()];
  const double x0 = gs.front(), x1 = gs.back();
  const double lo = *std::min_element(bics.begin(), bics.end());
  const double hi = *std::max_element(bics.begin(), bics.end());
  const double span = hi > lo ? hi - lo : 1.0;
  const double y0 = (bics.front() - lo) / span, y1 = (bics.back() - lo) / span;
  double best = -1;
  int arg = gs.front();
  for (std::size_t i = 0; i < gs.size(); ++i) {
    const double x = (gs[i] - x0) / (x1 - x0);
    const double y = (bics[i] - lo) / span;
    const double dist = std::abs((y1 - y0) * x - y + y0) / std::hypot(y1 - y0, 1.0);
    if (dist > best) {
      best = dist;
      arg = gs[i];
    }
  }
  return arg;
}

}  // namespace detail

/// BIC-minimizing component count over G_range; ties go to the smaller G.
inline ComponentSelection select_components(std::span<const Point> data, const std::vector<int>& G_range,
                                            const EmOptions& opt = {}) {
  if (G_range.empty()) throw Error("argument", "G range must be non-empty");
  if (!std::is_sorted(G_range.begin(), G_range.end()) ||
      std::adjacent_find(G_range.begin(), G_range.end()) != G_range.end())
    throw Error("argument", "G range must be strictly ascending");
  ComponentSelection sel;
  double best = std::numeric_limits<double>::infinity();
  for (int G : G_range) {
    try {
      auto m = fit_em(data, G, opt);
      for (const auto& w : m.fit.warnings) sel.warnings.push_back("G=" + std::to_string(G) + ": " + w);
      if (m.fit.bic < best) {
        best = m.fit.bic;
        sel.chosen_G = G;
      }
      sel.G_values.push_back(G);
      sel.bic_values.push_back(m.fit.bic);
      sel.models.push_back(std::move(m));
    } catch (const Error& e) {
      sel.warnings.push_back("G=" + std::to_string(G) + " skipped: " + e.what());
    }
  }
  if (sel.models.empty()) throw Error("fit", "no component count in range could be fitted");
  sel.elbow_G = detail::elbow_point(sel.G_values, sel.bic_values);
  return sel;
}

/// Precomputed draw state; one instance is reusable across many draws.
class MixtureSampler {
 public:
  explicit MixtureSampler(const MixtureModel& model) {
    model.validate();
    double acc = 0;
    for (const auto& c : model.components) {
      acc += c.weight;
      cumulative_.push_back(acc);
      Eigen::LLT<Eigen::Matrix2d> llt(c.cov);
      if (llt.info() != Eigen::Success) throw Error("model", "covariance is not positive definite");
      chol_.push_back(llt.matrixL());
      means_.push_back(c.mean);
    }
    cumulative_.back() = 1.0;
  }

  /// Unclipped, unwrapped draw and its component.
  std::pair<Point, int> draw_raw(Rng& rng) const {
    const double u = uniform_(rng);
    int g = static_cast<int>(std::upper_bound(cumulative_.begin(), cumulative_.end(), u) - cumulative_.begin());
    g = std::min<int>(g, static_cast<int>(cumulative_.size()) - 1);
    const double z1 = normal_(rng), z2 = normal_(rng);
    const auto& L = chol_[g];
    return {{means_[g](0) + L(0, 0) * z1, means_[g](1) + L(1, 0) * z1 + L(1, 1) * z2}, g};
  }

  /// Start wrapped to [0, 1440), energy clipped at zero.
  std::pair<Point, int> draw(Rng& rng) const {
    auto [p, g] = draw_raw(rng);
    return {{wrap_minutes(p.start), std::max(0.0, p.energy)}, g};
  }

 private:
  std::vector<double> cumulative_;
  std::vector<Eigen::Matrix2d> chol_;
  std::vector<Eigen::Vector2d> means_;
  mutable std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  mutable std::normal_distribution<double> normal_{0.0, 1.0};
};

struct LabelledSample {
  std::vector<Point> points;
  std::vector<int> component;
};

inline LabelledSample sample_labelled(const MixtureModel& model, std::size_t n, std::uint64_t seed) {
  LabelledSample out;
  if (n == 0) return out;
  MixtureSampler sampler(model);
  Rng rng(seed);
  out.points.reserve(n);
  out.component.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto [p, g] = sampler.draw(rng);
    out.points.push_back(p);
    out.component.push_back(g);
  }
  return out;
}

inline std::vector<Point> sample(const MixtureModel& model, std::size_t n, std::uint64_t seed) {
  return sample_labelled(model, n, seed).points;
}

inline MixtureModel remove_components(const MixtureModel& model, const std::vector<std::size_t>& indices) {
  std::vector<bool> drop(model.size(), false);
  for (auto i : indices) {
    if (i >= model.size()) throw Error("argument", "component index " + std::to_string(i) + " out of range");
    drop[i] = true;
  }
  MixtureModel out = model;
  out.components.clear();
  double remaining = 0;
  for (std::size_t g = 0; g < model.size(); ++g)
    if (!drop[g]) {
      out.components.push_back(model.components[g]);
      remaining += model.components[g].weight;
    }
  if (out.components.empty()) throw Error("argument", "cannot remove every component");
  if (!(remaining > 0)) throw Error("argument", "remaining components carry zero weight");
  for (auto& c : out.components) c.weight /= remaining;
  return out;
}

/// Components whose (wrapped) start mean lies in [window_start, window_end),
/// wrapping past midnight when window_end < window_start, and whose start
/// standard deviation is at most max_start_std minutes.
inline std::vector<std::size_t> flag_timer_components(const MixtureModel& model, double window_start,
                                                      double window_end, double max_start_std) {
  std::vector<std::size_t> out;
  for (std::size_t g = 0; g < model.size(); ++g) {
    const auto& c = model.components[g];
    const double m = wrap_minutes(c.mean(0));
    const bool inside = window_start <= window_end ? (m >= window_start && m < window_end)
                                                   : (m >= window_start || m < window_end);
    if (inside && c.start_std() <= max_start_std) out.push_back(g);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Plug-in duration model used where departure times are needed.

struct DurationModel {
  double log_mean = 0.0;  // of minutes
  double log_std = 0.1;

  static DurationModel fit(const std::vector<Session>& sessions) {
    if (sessions.size() < 2) throw Error("argument", "duration model needs at least two sessions");
    double s = 0, ss = 0;
    for (const auto& x : sessions) {
      const double l = std::log(x.duration_min);
      s += l;
      ss += l * l;
    }
    const double n = static_cast<double>(sessions.size());
    DurationModel m;
    m.log_mean = s / n;
    m.log_std = std::sqrt(std::max(ss / n - m.log_mean * m.log_mean, 1e-8));
    return m;
  }

  /// Lognormal draw, floored so the session can deliver its energy.
  double sample(Rng& rng, double energy_kwh, double rate_kw) const {
    std::normal_distribution<double> normal(log_mean, log_std);
    const double d = std::exp(normal(rng));
    return std::max(d, energy_kwh / rate_kw * 60.0 * (1 + 1e-12));
  }
};

/// Mixture plus optional duration model: the per-segment artifact stored on disk.
struct SegmentModel {
  MixtureModel mixture;
  std::optional<DurationModel> duration;
};

inline nlohmann::json to_json(const MixtureModel& m) {
  nlohmann::json j;
  j["version"] = 1;
  j["kind"] = "mixture_model";
  j["segment"] = m.segment;
  j["G"] = m.size();
  for (const auto& c : m.components) {
    j["weights"].push_back(c.weight);
    j["means"].push_back({c.mean(0), c.mean(1)});
    j["covariances"].push_back({c.cov(0, 0), c.cov(0, 1), c.cov(1, 0), c.cov(1, 1)});
  }
  j["scale"] = {m.scale(0), m.scale(1)};
  j["fit"] = {{"n", m.fit.n},
              {"log_likelihood", m.fit.log_likelihood},
              {"bic", m.fit.bic},
              {"iterations", m.fit.iterations},
              {"converged", m.fit.converged},
              {"warnings", m.fit.warnings}};
  return j;
}

inline MixtureModel mixture_from_json(const nlohmann::json& j) {
  if (j.value("version", 0) != 1) throw Error("schema", "unsupported mixture model version");
  MixtureModel m;
  try {
    m.segment = j.value("segment", "");
    const auto G = j.at("G").get<std::size_t>();
    const auto& w = j.at("weights");
    const auto& mu = j.at("means");
    const auto& cov = j.at("covariances");
    if (w.size() != G || mu.size() != G || cov.size() != G)
      throw Error("schema", "mixture arrays disagree with G=" + std::to_string(G));
    for (std::size_t g = 0; g < G; ++g) {
      GaussianComponent c;
      c.weight = w[g].get<double>();
      c.mean = {mu[g][0].get<double>(), mu[g][1].get<double>()};
      c.cov << cov[g][0].get<double>(), cov[g][1].get<double>(), cov[g][2].get<double>(), cov[g][3].get<double>();
      m.components.push_back(c);
    }
    if (j.contains("scale")) m.scale = {j["scale"][0].get<double>(), j["scale"][1].get<double>()};
    if (j.contains("fit")) {
      const auto& f = j["fit"];
      m.fit.n = f.value("n", std::size_t{0});
      m.fit.log_likelihood = f.value("log_likelihood", 0.0);
      m.fit.bic = f.value("bic", 0.0);
      m.fit.iterations = f.value("iterations", 0);
      m.fit.converged = f.value("converged", false);
      m.fit.warnings = f.value("warnings", std::vector<std::string>{});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error("schema", std::string("mixture model: ") + e.what());
  }
  m.validate();
  return m;
}

inline nlohmann::json to_json(const SegmentModel& sm) {
  auto j = to_json(sm.mixture);
  if (sm.duration) j["duration"] = {{"log_mean", sm.duration->log_mean}, {"log_std", sm.duration->log_std}};
  return j;
}

inline SegmentModel segment_model_from_json(const nlohmann::json& j) {
  SegmentModel sm;
  sm.mixture = mixture_from_json(j);
  if (j.contains("duration")) {
    DurationModel d;
    d.log_mean = j["duration"].at("log_mean").get<double>();
    d.log_std = j["duration"].at("log_std").get<double>();
    if (!(d.log_std > 0)) throw Error("schema", "duration log_std must be > 0");
    sm.duration = d;
  }
  return sm;
}

inline std::vector<Point> to_points(const std::vector<Session>& sessions) {
  std::vector<Point> pts;
  pts.reserve(sessions.size());
  for (const auto& s : sessions) pts.push_back({s.start_min, s.energy_kwh});
  return pts;
}

}  // namespace evload
