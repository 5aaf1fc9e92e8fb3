#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "evload/util.hpp"

namespace evload {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// min c'x  s.t.  A x = b,  0 ≤ x ≤ u  (u may be +inf). A is stored by column.
struct LinearProgram {
  std::vector<double> cost;
  std::vector<double> upper;
  std::vector<std::vector<std::pair<int, double>>> columns;
  std::vector<double> rhs;

  int rows() const { return static_cast<int>(rhs.size()); }
  int cols() const { return static_cast<int>(cost.size()); }

  int add_row(double b) {
    rhs.push_back(b);
    return rows() - 1;
  }
  int add_variable(double c, double ub = kInf) {
    cost.push_back(c);
    upper.push_back(ub);
    columns.emplace_back();
    return cols() - 1;
  }
  void add_coefficient(int row, int col, double value) { columns[col].emplace_back(row, value); }
};

struct LpOptions {
  double tol = 1e-9;         // relative gap and dual residual
  double primal_tol = 1e-8;  // relative primal residual
  double accept_tol = 1e-7;  // best iterate accepted on stall when all measures are below this
  int max_iter = 200;
};

enum class LpStatus { Optimal, IterationLimit, NumericalFailure };

struct LpSolution {
  LpStatus status = LpStatus::NumericalFailure;
  std::vector<double> x;
  Eigen::VectorXd y;
  double objective = 0.0;
  double dual_objective = 0.0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double relative_gap = 0.0;
  int iterations = 0;
};

/// Primal-dual interior-point method (Mehrotra predictor-corrector) with
/// explicit upper bounds. Normal equations A D A' are formed densely and
/// factored by Cholesky; suitable for a few thousand rows.
inline LpSolution solve_lp(const LinearProgram& lp, const LpOptions& opt = {}) {
  const int m = lp.rows();
  const int n = lp.cols();
  using Vec = Eigen::VectorXd;
  LpSolution sol;
  if (n == 0) {
    sol.status = LpStatus::Optimal;
    for (double bi : lp.rhs)
      if (std::abs(bi) > opt.tol) sol.status = LpStatus::NumericalFailure;
    sol.y = Vec::Zero(m);
    return sol;
  }

  const Vec c = Eigen::Map<const Vec>(lp.cost.data(), n);
  const Vec b = Eigen::Map<const Vec>(lp.rhs.data(), m);
  std::vector<char> bounded(n);
  Vec u = Vec::Zero(n);
  for (int j = 0; j < n; ++j) {
    bounded[j] = std::isfinite(lp.upper[j]);
    u(j) = bounded[j] ? lp.upper[j] : 0.0;
  }

  auto A_times = [&](const Vec& v) {
    Vec out = Vec::Zero(m);
    for (int j = 0; j < n; ++j)
      for (const auto& [i, a] : lp.columns[j]) out(i) += a * v(j);
    return out;
  };
  auto At_times = [&](const Vec& v) {
    Vec out = Vec::Zero(n);
    for (int j = 0; j < n; ++j) {
      double s = 0;
      for (const auto& [i, a] : lp.columns[j]) s += a * v(i);
      out(j) = s;
    }
    return out;
  };

  const double bnorm = b.lpNorm<Eigen::Infinity>();
  const double cnorm = c.lpNorm<Eigen::Infinity>();
  const double unorm = u.lpNorm<Eigen::Infinity>();

  // Starting point: midpoint of boxes, scaled interior elsewhere.
  const double xs = std::max(1.0, bnorm);
  const double zs = std::max(1.0, cnorm);
  Vec x(n), w = Vec::Zero(n), z(n), v = Vec::Zero(n), y = Vec::Zero(m);
  for (int j = 0; j < n; ++j) {
    if (bounded[j]) {
      x(j) = 0.5 * u(j);
      w(j) = 0.5 * u(j);
      v(j) = zs;
    } else {
      x(j) = xs;
    }
    z(j) = zs;
  }

  Eigen::MatrixXd M(m, m);
  Eigen::LLT<Eigen::MatrixXd> llt;
  Vec D(n);
  const int ncomp = n + static_cast<int>(std::count(bounded.begin(), bounded.end(), 1));

  auto factor = [&]() -> bool {
    M.setZero();
    for (int j = 0; j < n; ++j) {
      const auto& col = lp.columns[j];
      for (std::size_t p = 0; p < col.size(); ++p)
        for (std::size_t q = 0; q < col.size(); ++q)
          M(col[p].first, col[q].first) += D(j) * col[p].second * col[q].second;
    }
    double reg = 1e-14 * std::max(1.0, M.diagonal().cwiseAbs().maxCoeff());
    for (int attempt = 0; attempt < 8; ++attempt) {
      Eigen::MatrixXd Mr = M;
      Mr.diagonal().array() += reg;
      llt.compute(Mr);
      if (llt.info() == Eigen::Success) return true;
      reg *= 100;
    }
    return false;
  };

  // Solves the reduced Newton system for given complementarity right-hand sides.
  auto newton = [&](const Vec& rb, const Vec& ru, const Vec& rc, const Vec& rxz, const Vec& rwv, Vec& dx, Vec& dw,
                    Vec& dy, Vec& dz, Vec& dv) {
    Vec r(n);
    for (int j = 0; j < n; ++j) {
      r(j) = rc(j) - rxz(j) / x(j);
      if (bounded[j]) r(j) += (rwv(j) - v(j) * ru(j)) / w(j);
    }
    Vec Dr = D.cwiseProduct(r);
    const Vec rhs = rb + A_times(Dr);
    dy = llt.solve(rhs);
    for (int pass = 0; pass < 2; ++pass) dy += llt.solve(rhs - M.selfadjointView<Eigen::Lower>() * dy);
    dx = D.cwiseProduct(At_times(dy) - r);
    for (int j = 0; j < n; ++j) {
      dz(j) = (rxz(j) - z(j) * dx(j)) / x(j);
      if (bounded[j]) {
        dw(j) = ru(j) - dx(j);
        dv(j) = (rwv(j) - v(j) * dw(j)) / w(j);
      } else {
        dw(j) = 0;
        dv(j) = 0;
      }
    }
  };

  auto max_step = [&](const Vec& val, const Vec& delta, bool only_bounded) {
    double a = 1.0;
    for (int j = 0; j < n; ++j) {
      if (only_bounded && !bounded[j]) continue;
      if (delta(j) < 0) a = std::min(a, -val(j) / delta(j));
    }
    return a;
  };

  LpSolution best;
  double best_merit = kInf;
  Vec dx(n), dw(n), dy(m), dz(n), dv(n);
  Vec dxa(n), dwa(n), dya(m), dza(n), dva(n);
  for (int iter = 0; iter < opt.max_iter; ++iter) {
    const Vec Aty = At_times(y);
    const Vec rb = b - A_times(x);
    Vec ru = Vec::Zero(n);
    Vec rc = c - Aty - z;
    for (int j = 0; j < n; ++j)
      if (bounded[j]) {
        ru(j) = u(j) - x(j) - w(j);
        rc(j) += v(j);
      }
    double comp = x.dot(z);
    for (int j = 0; j < n; ++j)
      if (bounded[j]) comp += w(j) * v(j);
    const double mu = comp / ncomp;

    sol.objective = c.dot(x);
    sol.dual_objective = b.dot(y) - u.dot(v);
    sol.primal_residual = std::max(rb.lpNorm<Eigen::Infinity>() / (1 + bnorm), ru.lpNorm<Eigen::Infinity>() / (1 + unorm));
    sol.dual_residual = rc.lpNorm<Eigen::Infinity>() / (1 + cnorm);
    sol.relative_gap = std::abs(sol.objective - sol.dual_objective) / (1 + std::abs(sol.objective));
    sol.iterations = iter;
    if (sol.primal_residual < opt.primal_tol && sol.dual_residual < opt.tol && sol.relative_gap < opt.tol) {
      sol.status = LpStatus::Optimal;
      break;
    }
    const double merit = std::max({sol.primal_residual, sol.dual_residual, sol.relative_gap});
    if (merit < best_merit) {
      best_merit = merit;
      best = sol;
      best.x.assign(x.data(), x.data() + n);
      best.y = y;
    }

    for (int j = 0; j < n; ++j) {
      double inv = z(j) / x(j);
      if (bounded[j]) inv += v(j) / w(j);
      D(j) = 1.0 / inv;
    }
    if (!factor()) {
      sol.status = LpStatus::NumericalFailure;
      break;
    }

    // Predictor (affine scaling).
    Vec rxz = -x.cwiseProduct(z);
    Vec rwv = -w.cwiseProduct(v);
    newton(rb, ru, rc, rxz, rwv, dxa, dwa, dya, dza, dva);
    const double ap = std::min(max_step(x, dxa, false), max_step(w, dwa, true));
    const double ad = std::min(max_step(z, dza, false), max_step(v, dva, true));
    double comp_aff = (x + ap * dxa).dot(z + ad * dza);
    for (int j = 0; j < n; ++j)
      if (bounded[j]) comp_aff += (w(j) + ap * dwa(j)) * (v(j) + ad * dva(j));
    const double mu_aff = comp_aff / ncomp;
    const double sigma = std::pow(std::clamp(mu_aff / mu, 0.0, 1.0), 3);

    // Corrector.
    for (int j = 0; j < n; ++j) {
      rxz(j) = sigma * mu - x(j) * z(j) - dxa(j) * dza(j);
      rwv(j) = bounded[j] ? sigma * mu - w(j) * v(j) - dwa(j) * dva(j) : 0.0;
    }
    newton(rb, ru, rc, rxz, rwv, dx, dw, dy, dz, dv);
    const double eta = std::max(0.9, 1.0 - mu);
    const double sp = std::min(1.0, eta * std::min(max_step(x, dx, false), max_step(w, dw, true)));
    const double sd = std::min(1.0, eta * std::min(max_step(z, dz, false), max_step(v, dv, true)));
    x += sp * dx;
    w += sp * dw;
    y += sd * dy;
    z += sd * dz;
    v += sd * dv;
    for (int j = 0; j < n; ++j) {
      x(j) = std::max(x(j), 1e-300);
      z(j) = std::max(z(j), 1e-300);
      if (bounded[j]) {
        w(j) = std::max(w(j), 1e-300);
        v(j) = std::max(v(j), 1e-300);
      }
    }
    sol.status = LpStatus::IterationLimit;
  }

  if (sol.status != LpStatus::Optimal) {
    if (best_merit < opt.accept_tol) {
      best.status = LpStatus::Optimal;
      return best;
    }
    return sol;
  }
  sol.x.assign(x.data(), x.data() + n);
  sol.y = y;
  return sol;
}

}  // namespace evload
