#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "evload/util.hpp"

namespace evload {

using Matrix = Eigen::MatrixXd;  // one sample per row
using Vector = Eigen::VectorXd;

enum class RegressorKind { Linear, Ridge, RandomForest, MLP };
enum class Activation { Relu, Tanh };

inline std::string to_string(RegressorKind k) {
  switch (k) {
    case RegressorKind::Linear: return "linear";
    case RegressorKind::Ridge: return "ridge";
    case RegressorKind::RandomForest: return "random_forest";
    case RegressorKind::MLP: return "mlp";
  }
  return "?";
}

inline RegressorKind parse_regressor_kind(std::string_view s) {
  for (auto k : {RegressorKind::Linear, RegressorKind::Ridge, RegressorKind::RandomForest, RegressorKind::MLP})
    if (to_string(k) == s) return k;
  throw Error("argument", "unknown regressor kind '" + std::string(s) + "'");
}

struct Hyperparameters {
  double ridge_alpha = 0.0;
  // random forest
  int n_trees = 100;
  int max_depth = 0;  // 0: unlimited
  double max_features = 1.0 / 3.0;  // fraction of inputs tried per split
  int min_samples_leaf = 1;
  // multi-layer perceptron
  std::vector<int> hidden{64};
  Activation activation = Activation::Relu;
  double l2 = 1e-4;
  int epochs = 200;
  int batch_size = 32;
  double learning_rate = 1e-3;
};

inline nlohmann::json to_json(const Hyperparameters& h, RegressorKind kind) {
  switch (kind) {
    case RegressorKind::Linear: return nlohmann::json::object();
    case RegressorKind::Ridge: return {{"alpha", h.ridge_alpha}};
    case RegressorKind::RandomForest:
      return {{"n_trees", h.n_trees},
              {"max_depth", h.max_depth},
              {"max_features", h.max_features},
              {"min_samples_leaf", h.min_samples_leaf}};
    case RegressorKind::MLP:
      return {{"hidden", h.hidden},
              {"activation", h.activation == Activation::Relu ? "relu" : "tanh"},
              {"l2", h.l2},
              {"epochs", h.epochs},
              {"batch_size", h.batch_size},
              {"learning_rate", h.learning_rate}};
  }
  return {};
}

inline Hyperparameters hyperparameters_from_json(const nlohmann::json& j) {
  Hyperparameters h;
  h.ridge_alpha = j.value("alpha", h.ridge_alpha);
  h.n_trees = j.value("n_trees", h.n_trees);
  h.max_depth = j.value("max_depth", h.max_depth);
  h.max_features = j.value("max_features", h.max_features);
  h.min_samples_leaf = j.value("min_samples_leaf", h.min_samples_leaf);
  h.hidden = j.value("hidden", h.hidden);
  h.activation = j.value("activation", std::string("relu")) == "tanh" ? Activation::Tanh : Activation::Relu;
  h.l2 = j.value("l2", h.l2);
  h.epochs = j.value("epochs", h.epochs);
  h.batch_size = j.value("batch_size", h.batch_size);
  h.learning_rate = j.value("learning_rate", h.learning_rate);
  return h;
}

/// Root mean squared error over every element of every sample.
inline double rmse(const Matrix& Y, const Matrix& Yhat) {
  if (Y.rows() != Yhat.rows() || Y.cols() != Yhat.cols()) throw Error("argument", "rmse: shape mismatch");
  if (Y.size() == 0) throw Error("argument", "rmse: empty input");
  return std::sqrt((Y - Yhat).squaredNorm() / static_cast<double>(Y.size()));
}

inline double rmse(const std::vector<double>& y, const std::vector<double>& yhat) {
  return rmse(Eigen::Map<const Matrix>(y.data(), 1, static_cast<Eigen::Index>(y.size())),
              Eigen::Map<const Matrix>(yhat.data(), 1, static_cast<Eigen::Index>(yhat.size())));
}

// ---------------------------------------------------------------------------
// Linear / ridge:  y = A x + b

struct LinearMap {
  Matrix A;  // outputs x inputs
  Vector b;

  Matrix predict(const Matrix& X) const { return (X * A.transpose()).rowwise() + b.transpose(); }
};

/// Least squares on centered data; alpha > 0 adds alpha*I to the normal
/// equations (intercept unpenalized). Singular unregularized systems fall
/// back to the minimum-norm solution.
inline LinearMap fit_linear(const Matrix& X, const Matrix& Y, double alpha, std::vector<std::string>* warnings = nullptr) {
  if (X.rows() != Y.rows() || X.rows() == 0) throw Error("argument", "fit_linear: need matching, non-empty X and Y");
  if (alpha < 0) throw Error("argument", "ridge alpha must be ≥ 0");
  const Vector xm = X.colwise().mean();
  const Vector ym = Y.colwise().mean();
  const Matrix Xc = X.rowwise() - xm.transpose();
  const Matrix Yc = Y.rowwise() - ym.transpose();
  Matrix gram = Xc.transpose() * Xc;
  Matrix W;  // inputs x outputs
  if (alpha > 0) {
    gram.diagonal().array() += alpha;
    W = gram.llt().solve(Xc.transpose() * Yc);
  } else {
    Eigen::LLT<Matrix> llt(gram);
    if (llt.info() == Eigen::Success && llt.rcond() > 1e-12) {
      W = llt.solve(Xc.transpose() * Yc);
    } else {
      if (warnings) warnings->push_back("singular normal equations; using minimum-norm least-squares solution");
      W = Xc.completeOrthogonalDecomposition().solve(Yc);
    }
  }
  LinearMap m;
  m.A = W.transpose();
  m.b = ym - m.A * xm;
  return m;
}

// ---------------------------------------------------------------------------
// Random forest of multi-output regression trees (variance reduction).

struct RegressionTree {
  // Node arrays; leaves have feature == -1 and `leaf` indexing into values.
  std::vector<int> feature;
  std::vector<double> threshold;
  std::vector<int> left, right, leaf;
  std::vector<double> values;  // leaf_count x outputs, row-major
  int outputs = 0;

  const double* lookup(const double* x) const {
    int node = 0;
    while (feature[node] >= 0) node = x[feature[node]] <= threshold[node] ? left[node] : right[node];
    return &values[static_cast<std::size_t>(leaf[node]) * outputs];
  }
};

struct RandomForest {
  std::vector<RegressionTree> trees;
  int inputs = 0;
  int outputs = 0;

  Matrix predict(const Matrix& X) const {
    Matrix out = Matrix::Zero(X.rows(), outputs);
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> Xr = X;
    for (Eigen::Index i = 0; i < X.rows(); ++i)
      for (const auto& t : trees) {
        const double* v = t.lookup(Xr.row(i).data());
        for (int o = 0; o < outputs; ++o) out(i, o) += v[o];
      }
    return out / static_cast<double>(trees.size());
  }
};

namespace detail {

class TreeBuilder {
 public:
  TreeBuilder(const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& X,
              const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& Y,
              const Hyperparameters& h, std::uint64_t seed)
      : X_(X), Y_(Y), h_(h), rng_(seed) {
    tree_.outputs = static_cast<int>(Y.cols());
    mtry_ = std::clamp(static_cast<int>(std::ceil(h.max_features * X.cols())), 1, static_cast<int>(X.cols()));
    features_.resize(X.cols());
    std::iota(features_.begin(), features_.end(), 0);
  }

  RegressionTree build(std::vector<int> idx) {
    grow(idx, 0);
    return std::move(tree_);
  }

 private:
  int make_leaf(const std::vector<int>& idx) {
    const int node = new_node();
    tree_.leaf[node] = static_cast<int>(tree_.values.size() / tree_.outputs);
    for (int o = 0; o < tree_.outputs; ++o) {
      double s = 0;
      for (int i : idx) s += Y_(i, o);
      tree_.values.push_back(s / idx.size());
    }
    return node;
  }

  int new_node() {
    tree_.feature.push_back(-1);
    tree_.threshold.push_back(0.0);
    tree_.left.push_back(-1);
    tree_.right.push_back(-1);
    tree_.leaf.push_back(-1);
    return static_cast<int>(tree_.feature.size()) - 1;
  }

  int grow(std::vector<int>& idx, int depth) {
    const int n = static_cast<int>(idx.size());
    const int q = tree_.outputs;
    if ((h_.max_depth > 0 && depth >= h_.max_depth) || n < 2 * h_.min_samples_leaf) return make_leaf(idx);

    std::vector<double> total(q, 0.0);
    for (int i : idx)
      for (int o = 0; o < q; ++o) total[o] += Y_(i, o);
    double parent = 0;
    for (int o = 0; o < q; ++o) parent += total[o] * total[o] / n;

    // Partial Fisher-Yates for the candidate feature subset.
    for (int k = 0; k < mtry_; ++k) {
      std::uniform_int_distribution<int> pick(k, static_cast<int>(features_.size()) - 1);
      std::swap(features_[k], features_[pick(rng_)]);
    }
    double best_gain = 1e-12 * (1 + std::abs(parent));
    int best_feature = -1;
    double best_threshold = 0;
    std::vector<int> order(idx);
    std::vector<double> left(q);
    for (int k = 0; k < mtry_; ++k) {
      const int f = features_[k];
      std::sort(order.begin(), order.end(), [&](int a, int b) { return X_(a, f) < X_(b, f); });
      if (X_(order.front(), f) == X_(order.back(), f)) continue;
      std::fill(left.begin(), left.end(), 0.0);
      for (int pos = 0; pos + 1 < n; ++pos) {
        const int i = order[pos];
        for (int o = 0; o < q; ++o) left[o] += Y_(i, o);
        const int nl = pos + 1, nr = n - nl;
        if (nl < h_.min_samples_leaf || nr < h_.min_samples_leaf) continue;
        const double xa = X_(i, f), xb = X_(order[pos + 1], f);
        if (xa == xb) continue;
        double score = 0;
        for (int o = 0; o < q; ++o) {
          const double r = total[o] - left[o];
          score += left[o] * left[o] / nl + r * r / nr;
        }
        const double gain = score - parent;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = f;
          best_threshold = 0.5 * (xa + xb);
          if (best_threshold >= xb) best_threshold = xa;
        }
      }
    }
    if (best_feature < 0) return make_leaf(idx);

    std::vector<int> li, ri;
    for (int i : idx) (X_(i, best_feature) <= best_threshold ? li : ri).push_back(i);
    idx.clear();
    idx.shrink_to_fit();
    const int node = new_node();
    tree_.feature[node] = best_feature;
    tree_.threshold[node] = best_threshold;
    const int l = grow(li, depth + 1);
    tree_.left[node] = l;
    const int r = grow(ri, depth + 1);
    tree_.right[node] = r;
    return node;
  }

  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& X_;
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& Y_;
  const Hyperparameters& h_;
  Rng rng_;
  RegressionTree tree_;
  int mtry_ = 1;
  std::vector<int> features_;
};

}  // namespace detail

inline RandomForest fit_random_forest(const Matrix& X, const Matrix& Y, const Hyperparameters& h, std::uint64_t seed) {
  if (X.rows() != Y.rows() || X.rows() == 0) throw Error("argument", "fit_random_forest: need matching, non-empty X and Y");
  if (h.n_trees < 1) throw Error("argument", "n_trees must be ≥ 1");
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> Xr = X, Yr = Y;
  RandomForest rf;
  rf.inputs = static_cast<int>(X.cols());
  rf.outputs = static_cast<int>(Y.cols());
  rf.trees.resize(h.n_trees);
  const int n = static_cast<int>(X.rows());
  parallel_for(rf.trees.size(), [&](std::size_t t) {
    Rng rng(derive_seed(seed, t));
    std::uniform_int_distribution<int> draw(0, n - 1);
    std::vector<int> boot(n);
    for (auto& i : boot) i = draw(rng);
    detail::TreeBuilder builder(Xr, Yr, h, rng());
    rf.trees[t] = builder.build(std::move(boot));
  });
  return rf;
}

// ---------------------------------------------------------------------------
// Multi-layer perceptron (one or two hidden layers), Adam on squared error.

struct Mlp {
  std::vector<Matrix> weights;  // layer l: out x in
  std::vector<Vector> biases;
  Activation activation = Activation::Relu;

  static void activate(Matrix& z, Activation a) {
    if (a == Activation::Relu)
      z = z.cwiseMax(0.0);
    else
      z = z.array().tanh().matrix();
  }

  /// Inputs as columns.
  Matrix forward(const Matrix& Xt) const {
    Matrix h = Xt;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      Matrix z = (weights[l] * h).colwise() + biases[l];
      if (l + 1 < weights.size()) activate(z, activation);
      h = std::move(z);
    }
    return h;
  }

  Matrix predict(const Matrix& X) const { return forward(X.transpose()).transpose(); }
};

inline Mlp fit_mlp(const Matrix& X, const Matrix& Y, const Hyperparameters& h, std::uint64_t seed) {
  if (X.rows() != Y.rows() || X.rows() == 0) throw Error("argument", "fit_mlp: need matching, non-empty X and Y");
  if (h.hidden.empty() || h.hidden.size() > 2) throw Error("argument", "MLP supports one or two hidden layers");
  Rng rng(seed);
  Mlp net;
  net.activation = h.activation;
  std::vector<int> sizes{static_cast<int>(X.cols())};
  for (int s : h.hidden) {
    if (s < 1) throw Error("argument", "hidden layer sizes must be ≥ 1");
    sizes.push_back(s);
  }
  sizes.push_back(static_cast<int>(Y.cols()));
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const double bound = std::sqrt(6.0 / (sizes[l] + sizes[l + 1]));
    std::uniform_real_distribution<double> u(-bound, bound);
    Matrix W(sizes[l + 1], sizes[l]);
    for (Eigen::Index k = 0; k < W.size(); ++k) W.data()[k] = u(rng);
    net.weights.push_back(std::move(W));
    net.biases.push_back(Vector::Zero(sizes[l + 1]));
  }

  const std::size_t L = net.weights.size();
  std::vector<Matrix> mW(L), vW(L);
  std::vector<Vector> mb(L), vb(L);
  for (std::size_t l = 0; l < L; ++l) {
    mW[l] = Matrix::Zero(net.weights[l].rows(), net.weights[l].cols());
    vW[l] = mW[l];
    mb[l] = Vector::Zero(net.biases[l].size());
    vb[l] = mb[l];
  }
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long step = 0;
  const Matrix Xt = X.transpose(), Yt = Y.transpose();
  const int n = static_cast<int>(X.rows());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < h.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (int start = 0; start < n; start += h.batch_size) {
      const int bs = std::min(h.batch_size, n - start);
      Matrix xb(Xt.rows(), bs), yb(Yt.rows(), bs);
      for (int k = 0; k < bs; ++k) {
        xb.col(k) = Xt.col(order[start + k]);
        yb.col(k) = Yt.col(order[start + k]);
      }
      std::vector<Matrix> acts{xb};
      for (std::size_t l = 0; l < L; ++l) {
        Matrix z = (net.weights[l] * acts.back()).colwise() + net.biases[l];
        if (l + 1 < L) Mlp::activate(z, net.activation);
        acts.push_back(std::move(z));
      }
      Matrix delta = (acts.back() - yb) / static_cast<double>(bs);
      ++step;
      for (std::size_t l = L; l-- > 0;) {
        Matrix gW = delta * acts[l].transpose() + (h.l2 / bs) * net.weights[l];
        Vector gb = delta.rowwise().sum();
        if (l > 0) {
          Matrix back = net.weights[l].transpose() * delta;
          if (net.activation == Activation::Relu)
            delta = back.cwiseProduct((acts[l].array() > 0).cast<double>().matrix());
          else
            delta = back.cwiseProduct((1.0 - acts[l].array().square()).matrix());
        }
        mW[l] = beta1 * mW[l] + (1 - beta1) * gW;
        vW[l] = beta2 * vW[l] + (1 - beta2) * gW.cwiseProduct(gW);
        mb[l] = beta1 * mb[l] + (1 - beta1) * gb;
        vb[l] = beta2 * vb[l] + (1 - beta2) * gb.cwiseProduct(gb);
        const double c1 = 1 - std::pow(beta1, static_cast<double>(step));
        const double c2 = 1 - std::pow(beta2, static_cast<double>(step));
        net.weights[l].array() -=
            h.learning_rate * (mW[l].array() / c1) / ((vW[l].array() / c2).sqrt() + eps);
        net.biases[l].array() -= h.learning_rate * (mb[l].array() / c1) / ((vb[l].array() / c2).sqrt() + eps);
      }
    }
  }
  return net;
}

// ---------------------------------------------------------------------------

using Regressor = std::variant<LinearMap, RandomForest, Mlp>;

inline Regressor train_regressor(RegressorKind kind, const Hyperparameters& h, const Matrix& X, const Matrix& Y,
                                 std::uint64_t seed, std::vector<std::string>* warnings = nullptr) {
  switch (kind) {
    case RegressorKind::Linear: return fit_linear(X, Y, 0.0, warnings);
    case RegressorKind::Ridge: return fit_linear(X, Y, h.ridge_alpha, warnings);
    case RegressorKind::RandomForest: return fit_random_forest(X, Y, h, seed);
    case RegressorKind::MLP: return fit_mlp(X, Y, h, seed);
  }
  throw Error("internal", "unknown regressor kind");
}

inline Matrix predict(const Regressor& r, const Matrix& X) {
  return std::visit([&](const auto& m) { return Matrix(m.predict(X)); }, r);
}

namespace detail {

inline nlohmann::json flatten(const Matrix& m) {
  std::vector<double> v;
  v.reserve(m.size());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) v.push_back(m(i, j));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", v}};
}

inline Matrix unflatten(const nlohmann::json& j) {
  const auto r = j.at("rows").get<Eigen::Index>(), c = j.at("cols").get<Eigen::Index>();
  const auto& d = j.at("data");
  if (static_cast<Eigen::Index>(d.size()) != r * c) throw Error("schema", "matrix data length mismatch");
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index k = 0; k < c; ++k) m(i, k) = d[i * c + k].get<double>();
  return m;
}

}  // namespace detail

inline nlohmann::json regressor_to_json(const Regressor& r) {
  if (auto* lin = std::get_if<LinearMap>(&r))
    return {{"type", "linear"}, {"A", detail::flatten(lin->A)}, {"b", std::vector<double>(lin->b.data(), lin->b.data() + lin->b.size())}};
  if (auto* rf = std::get_if<RandomForest>(&r)) {
    nlohmann::json trees = nlohmann::json::array();
    for (const auto& t : rf->trees)
      trees.push_back({{"feature", t.feature},
                       {"threshold", t.threshold},
                       {"left", t.left},
                       {"right", t.right},
                       {"leaf", t.leaf},
                       {"values", t.values}});
    return {{"type", "random_forest"}, {"inputs", rf->inputs}, {"outputs", rf->outputs}, {"trees", trees}};
  }
  const auto& mlp = std::get<Mlp>(r);
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < mlp.weights.size(); ++l)
    layers.push_back({{"weights", detail::flatten(mlp.weights[l])},
                      {"bias", std::vector<double>(mlp.biases[l].data(), mlp.biases[l].data() + mlp.biases[l].size())}});
  return {{"type", "mlp"}, {"activation", mlp.activation == Activation::Relu ? "relu" : "tanh"}, {"layers", layers}};
}

inline Regressor regressor_from_json(const nlohmann::json& j) {
  const auto type = j.at("type").get<std::string>();
  if (type == "linear") {
    LinearMap m;
    m.A = detail::unflatten(j.at("A"));
    const auto b = j.at("b").get<std::vector<double>>();
    m.b = Eigen::Map<const Vector>(b.data(), static_cast<Eigen::Index>(b.size()));
    if (m.b.size() != m.A.rows()) throw Error("schema", "linear map: bias length mismatch");
    return m;
  }
  if (type == "random_forest") {
    RandomForest rf;
    rf.inputs = j.at("inputs").get<int>();
    rf.outputs = j.at("outputs").get<int>();
    for (const auto& tj : j.at("trees")) {
      RegressionTree t;
      t.outputs = rf.outputs;
      t.feature = tj.at("feature").get<std::vector<int>>();
      t.threshold = tj.at("threshold").get<std::vector<double>>();
      t.left = tj.at("left").get<std::vector<int>>();
      t.right = tj.at("right").get<std::vector<int>>();
      t.leaf = tj.at("leaf").get<std::vector<int>>();
      t.values = tj.at("values").get<std::vector<double>>();
      const auto nodes = t.feature.size();
      if (nodes == 0 || t.threshold.size() != nodes || t.left.size() != nodes || t.right.size() != nodes ||
          t.leaf.size() != nodes)
        throw Error("schema", "random forest: inconsistent node arrays");
      for (std::size_t k = 0; k < nodes; ++k) {
        if (t.feature[k] >= rf.inputs) throw Error("schema", "random forest: feature index out of range");
        if (t.feature[k] < 0 && (t.leaf[k] < 0 || static_cast<std::size_t>(t.leaf[k] + 1) * rf.outputs > t.values.size()))
          throw Error("schema", "random forest: leaf index out of range");
        if (t.feature[k] >= 0 && (t.left[k] <= static_cast<int>(k) || t.right[k] <= static_cast<int>(k) ||
                                  t.left[k] >= static_cast<int>(nodes) || t.right[k] >= static_cast<int>(nodes)))
          throw Error("schema", "random forest: child index out of range");
      }
      rf.trees.push_back(std::move(t));
    }
    if (rf.trees.empty()) throw Error("schema", "random forest has no trees");
    return rf;
  }
  if (type == "mlp") {
    Mlp m;
    m.activation = j.at("activation").get<std::string>() == "tanh" ? Activation::Tanh : Activation::Relu;
    for (const auto& lj : j.at("layers")) {
      m.weights.push_back(detail::unflatten(lj.at("weights")));
      const auto b = lj.at("bias").get<std::vector<double>>();
      m.biases.push_back(Eigen::Map<const Vector>(b.data(), static_cast<Eigen::Index>(b.size())));
      if (m.biases.back().size() != m.weights.back().rows()) throw Error("schema", "mlp: bias length mismatch");
    }
    for (std::size_t l = 1; l < m.weights.size(); ++l)
      if (m.weights[l].cols() != m.weights[l - 1].rows()) throw Error("schema", "mlp: layer shapes do not chain");
    if (m.weights.empty()) throw Error("schema", "mlp has no layers");
    return m;
  }
  throw Error("schema", "unknown regressor type '" + type + "'");
}

inline Eigen::Index regressor_inputs(const Regressor& r) {
  if (auto* lin = std::get_if<LinearMap>(&r)) return lin->A.cols();
  if (auto* rf = std::get_if<RandomForest>(&r)) return rf->inputs;
  return std::get<Mlp>(r).weights.front().cols();
}

inline Eigen::Index regressor_outputs(const Regressor& r) {
  if (auto* lin = std::get_if<LinearMap>(&r)) return lin->A.rows();
  if (auto* rf = std::get_if<RandomForest>(&r)) return rf->outputs;
  return std::get<Mlp>(r).weights.back().rows();
}

}  // namespace evload
