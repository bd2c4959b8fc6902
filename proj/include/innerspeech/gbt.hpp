#pragma once

// Gradient-boosted regression trees with a softmax objective and exact greedy
// splits. One tree per class per round.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "innerspeech/error.hpp"
#include "innerspeech/features.hpp"

namespace innerspeech::gbt {

using Matrix = Eigen::MatrixXd;

struct GbtParams {
  std::size_t n_rounds = 100;
  std::size_t max_depth = 3;
  double learning_rate = 0.3;
  double lambda = 1.0;
  double min_child_weight = 1.0;
};

/// Flat node; feature < 0 marks a leaf. Samples with x[feature] < threshold go left.
struct Node {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double leaf_value = 0.0;
  double gain = 0.0;

  bool is_leaf() const { return feature < 0; }
};

struct Tree {
  std::vector<Node> nodes;  // nodes[0] is the root

  double predict(const double* row) const {
    std::size_t i = 0;
    while (!nodes[i].is_leaf()) {
      const auto& n = nodes[i];
      i = static_cast<std::size_t>(row[n.feature] < n.threshold ? n.left : n.right);
    }
    return nodes[i].leaf_value;
  }
};

struct GbtModel {
  std::size_t n_features = 0;
  std::size_t n_classes = 0;
  std::vector<int> classes;           // label id for each class slot
  std::vector<std::vector<Tree>> rounds;  // rounds[r][k]
  GbtParams params;
  std::vector<double> feature_gain;   // raw accumulated split gain
  std::vector<double> train_loss;     // mean log-loss before round 1, then after each round
};

namespace detail {

inline double log_loss(const Matrix& margin, const std::vector<std::size_t>& slot) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < margin.rows(); ++i) {
    const double m = margin.row(i).maxCoeff();
    const double lse = m + std::log((margin.row(i).array() - m).exp().sum());
    total += lse - margin(i, static_cast<Eigen::Index>(slot[static_cast<std::size_t>(i)]));
  }
  return margin.rows() > 0 ? total / static_cast<double>(margin.rows()) : 0.0;
}

inline Matrix softmax_rows(const Matrix& margin) {
  Matrix p(margin.rows(), margin.cols());
  for (Eigen::Index i = 0; i < margin.rows(); ++i) {
    const double m = margin.row(i).maxCoeff();
    p.row(i) = (margin.row(i).array() - m).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

inline double leaf_score(double g, double h, double lambda) { return g * g / (h + lambda); }

class TreeBuilder {
 public:
  TreeBuilder(const Matrix& x, const std::vector<std::vector<std::size_t>>& order, const std::vector<double>& grad,
              const std::vector<double>& hess, const GbtParams& p, std::vector<double>& feature_gain)
      : x_(x), order_(order), g_(grad), h_(hess), p_(p), gain_(feature_gain) {}

  Tree build() {
    std::vector<char> mask(g_.size(), 1);
    Tree t;
    t.nodes.emplace_back();
    grow(t, 0, mask, 0);
    return t;
  }

 private:
  void grow(Tree& t, std::size_t node, std::vector<char>& mask, std::size_t depth) {
    double G = 0.0, H = 0.0;
    for (std::size_t i = 0; i < g_.size(); ++i) {
      if (mask[i]) {
        G += g_[i];
        H += h_[i];
      }
    }
    t.nodes[node].leaf_value = -p_.learning_rate * G / (H + p_.lambda);
    if (depth >= p_.max_depth) return;

    const double parent = leaf_score(G, H, p_.lambda);
    double best_gain = 0.0;
    int best_feature = -1;
    double best_threshold = 0.0;
    for (std::size_t f = 0; f < order_.size(); ++f) {
      double gl = 0.0, hl = 0.0;
      double prev = 0.0;
      bool have_prev = false;
      for (std::size_t i : order_[f]) {
        if (!mask[i]) continue;
        const double v = x_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(f));
        if (have_prev && v > prev && hl >= p_.min_child_weight && H - hl >= p_.min_child_weight) {
          const double gain =
              0.5 * (leaf_score(gl, hl, p_.lambda) + leaf_score(G - gl, H - hl, p_.lambda) - parent);
          if (gain > best_gain + 1e-12) {
            best_gain = gain;
            best_feature = static_cast<int>(f);
            best_threshold = prev + (v - prev) / 2.0;
            if (best_threshold <= prev) best_threshold = v;
          }
        }
        gl += g_[i];
        hl += h_[i];
        prev = v;
        have_prev = true;
      }
    }
    if (best_feature < 0) return;

    auto& n = t.nodes[node];
    n.feature = best_feature;
    n.threshold = best_threshold;
    n.gain = best_gain;
    gain_[static_cast<std::size_t>(best_feature)] += best_gain;

    std::vector<char> left(mask.size(), 0), right(mask.size(), 0);
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (!mask[i]) continue;
      const double v = x_(static_cast<Eigen::Index>(i), best_feature);
      (v < best_threshold ? left : right)[i] = 1;
    }
    const auto li = t.nodes.size();
    t.nodes.emplace_back();
    const auto ri = t.nodes.size();
    t.nodes.emplace_back();
    t.nodes[node].left = static_cast<int>(li);
    t.nodes[node].right = static_cast<int>(ri);
    grow(t, li, left, depth + 1);
    grow(t, ri, right, depth + 1);
  }

  const Matrix& x_;
  const std::vector<std::vector<std::size_t>>& order_;
  const std::vector<double>& g_;
  const std::vector<double>& h_;
  const GbtParams& p_;
  std::vector<double>& gain_;
};

inline void scale_leaves(Tree& t, double s) {
  for (auto& n : t.nodes) n.leaf_value *= s;
}

}  // namespace detail

/// Raw class margins (sum of leaf values), n x n_classes.
inline Matrix gbt_margin(const GbtModel& model, const Matrix& x) {
  if (static_cast<std::size_t>(x.cols()) != model.n_features) {
    throw Error(ErrorCode::DimensionMismatch, "gbt",
                "expected " + std::to_string(model.n_features) + " features, got " + std::to_string(x.cols()));
  }
  Matrix margin = Matrix::Zero(x.rows(), static_cast<Eigen::Index>(model.n_classes));
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows = x;
  for (const auto& round : model.rounds) {
    for (std::size_t k = 0; k < round.size(); ++k) {
      for (Eigen::Index i = 0; i < rows.rows(); ++i) {
        margin(i, static_cast<Eigen::Index>(k)) += round[k].predict(rows.row(i).data());
      }
    }
  }
  return margin;
}

inline GbtModel gbt_train(const Matrix& x, std::span<const int> y, const GbtParams& params = {}) {
  if (static_cast<std::size_t>(x.rows()) != y.size()) {
    throw Error(ErrorCode::DimensionMismatch, "gbt", "row count differs from label count");
  }
  if (!x.allFinite()) throw Error(ErrorCode::NonFiniteFeature, "gbt", "training features contain NaN/Inf");
  std::vector<int> classes(y.begin(), y.end());
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  if (classes.size() < 2) throw Error(ErrorCode::SingleClassData, "gbt", "need at least two classes");

  GbtModel model;
  model.n_features = static_cast<std::size_t>(x.cols());
  model.n_classes = classes.size();
  model.classes = classes;
  model.params = params;
  model.feature_gain.assign(model.n_features, 0.0);

  const std::size_t n = y.size();
  const std::size_t k_classes = classes.size();
  std::vector<std::size_t> slot(n);
  for (std::size_t i = 0; i < n; ++i) {
    slot[i] = static_cast<std::size_t>(std::lower_bound(classes.begin(), classes.end(), y[i]) - classes.begin());
  }
  std::vector<std::vector<std::size_t>> order(model.n_features, std::vector<std::size_t>(n));
  for (std::size_t f = 0; f < model.n_features; ++f) {
    std::iota(order[f].begin(), order[f].end(), 0);
    std::stable_sort(order[f].begin(), order[f].end(), [&](std::size_t a, std::size_t b) {
      return x(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(f)) <
             x(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(f));
    });
  }

  Matrix margin = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k_classes));
  double loss = detail::log_loss(margin, slot);
  model.train_loss.push_back(loss);
  std::vector<double> grad(n), hess(n);

  for (std::size_t r = 0; r < params.n_rounds; ++r) {
    const Matrix p = detail::softmax_rows(margin);
    std::vector<double> round_gain(model.n_features, 0.0);
    std::vector<Tree> trees;
    for (std::size_t k = 0; k < k_classes; ++k) {
      for (std::size_t i = 0; i < n; ++i) {
        const double pk = p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
        grad[i] = pk - (slot[i] == k ? 1.0 : 0.0);
        hess[i] = std::max(2.0 * pk * (1.0 - pk), 1e-16);
      }
      detail::TreeBuilder builder(x, order, grad, hess, params, round_gain);
      trees.push_back(builder.build());
    }

    // Trees of one round are fit jointly from the same statistics; if their sum
    // overshoots, shrink the whole round until training loss does not rise.
    auto round_margin = [&](const std::vector<Tree>& ts) {
      GbtModel one;
      one.n_features = model.n_features;
      one.n_classes = k_classes;
      one.rounds.push_back(ts);
      return gbt_margin(one, x);
    };
    const Matrix delta = round_margin(trees);
    double scale = 1.0;
    Matrix next = margin + delta;
    double next_loss = detail::log_loss(next, slot);
    for (int halvings = 0; next_loss > loss && halvings < 40; ++halvings) {
      scale /= 2.0;
      next = margin + scale * delta;
      next_loss = detail::log_loss(next, slot);
    }
    if (next_loss > loss) {
      scale = 0.0;
      next = margin;
      next_loss = loss;
    }
    if (scale != 1.0) {
      for (auto& t : trees) detail::scale_leaves(t, scale);
    }
    for (std::size_t f = 0; f < model.n_features; ++f) model.feature_gain[f] += round_gain[f];
    margin = next;
    loss = next_loss;
    model.train_loss.push_back(loss);
    model.rounds.push_back(std::move(trees));
  }
  return model;
}

struct GbtPrediction {
  std::vector<int> labels;
  Matrix probabilities;  // n x n_classes
};

inline GbtPrediction gbt_predict(const GbtModel& model, const Matrix& x) {
  GbtPrediction out;
  out.probabilities = detail::softmax_rows(gbt_margin(model, x));
  out.labels.resize(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Eigen::Index best = 0;
    out.probabilities.row(i).maxCoeff(&best);
    out.labels[static_cast<std::size_t>(i)] = model.classes[static_cast<std::size_t>(best)];
  }
  return out;
}

inline features::ImportanceReport gbt_importances(const GbtModel& model, double threshold = 0.95) {
  if (model.rounds.empty()) throw Error(ErrorCode::UntrainedModel, "gbt", "model has no boosting rounds");
  features::ImportanceReport r;
  r.threshold = threshold;
  const double total = std::accumulate(model.feature_gain.begin(), model.feature_gain.end(), 0.0);
  r.gains.assign(model.n_features, 0.0);
  if (total > 0) {
    for (std::size_t f = 0; f < model.n_features; ++f) r.gains[f] = model.feature_gain[f] / total;
    r.selected = features::select_by_gain(r.gains, threshold);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Serialization: trees as nested {feature, threshold, left, right, leaf_value}.

namespace detail {

inline nlohmann::json node_to_json(const Tree& t, std::size_t i) {
  const auto& n = t.nodes[i];
  if (n.is_leaf()) return {{"leaf_value", n.leaf_value}};
  return {{"feature", n.feature},
          {"threshold", n.threshold},
          {"gain", n.gain},
          {"left", node_to_json(t, static_cast<std::size_t>(n.left))},
          {"right", node_to_json(t, static_cast<std::size_t>(n.right))}};
}

inline std::size_t node_from_json(Tree& t, const nlohmann::json& j, std::size_t n_features) {
  const auto i = t.nodes.size();
  t.nodes.emplace_back();
  if (j.contains("leaf_value")) {
    t.nodes[i].leaf_value = j.at("leaf_value").get<double>();
    return i;
  }
  const int f = j.at("feature").get<int>();
  if (f < 0 || static_cast<std::size_t>(f) >= n_features) {
    throw Error(ErrorCode::MalformedHeader, "gbt", "split references feature " + std::to_string(f));
  }
  t.nodes[i].feature = f;
  t.nodes[i].threshold = j.at("threshold").get<double>();
  t.nodes[i].gain = j.value("gain", 0.0);
  const auto l = node_from_json(t, j.at("left"), n_features);
  const auto r = node_from_json(t, j.at("right"), n_features);
  t.nodes[i].left = static_cast<int>(l);
  t.nodes[i].right = static_cast<int>(r);
  return i;
}

}  // namespace detail

inline nlohmann::json to_json(const GbtModel& m) {
  nlohmann::json j;
  j["kind"] = "gbt";
  j["version"] = 1;
  j["n_features"] = m.n_features;
  j["classes"] = m.classes;
  j["params"] = {{"n_rounds", m.params.n_rounds},
                 {"max_depth", m.params.max_depth},
                 {"learning_rate", m.params.learning_rate},
                 {"lambda", m.params.lambda},
                 {"min_child_weight", m.params.min_child_weight}};
  j["feature_gain"] = m.feature_gain;
  j["train_loss"] = m.train_loss;
  auto rounds = nlohmann::json::array();
  for (const auto& round : m.rounds) {
    auto trees = nlohmann::json::array();
    for (const auto& t : round) trees.push_back(detail::node_to_json(t, 0));
    rounds.push_back(trees);
  }
  j["rounds"] = rounds;
  return j;
}

inline GbtModel gbt_from_json(const nlohmann::json& j) {
  if (j.value("kind", "") != "gbt" || j.value("version", 0) != 1) {
    throw Error(ErrorCode::MalformedHeader, "gbt", "not a version-1 GBT artifact");
  }
  GbtModel m;
  m.n_features = j.at("n_features").get<std::size_t>();
  m.classes = j.at("classes").get<std::vector<int>>();
  m.n_classes = m.classes.size();
  const auto& p = j.at("params");
  m.params.n_rounds = p.at("n_rounds").get<std::size_t>();
  m.params.max_depth = p.at("max_depth").get<std::size_t>();
  m.params.learning_rate = p.at("learning_rate").get<double>();
  m.params.lambda = p.at("lambda").get<double>();
  m.params.min_child_weight = p.at("min_child_weight").get<double>();
  m.feature_gain = j.at("feature_gain").get<std::vector<double>>();
  m.train_loss = j.at("train_loss").get<std::vector<double>>();
  for (const auto& jr : j.at("rounds")) {
    std::vector<Tree> round;
    for (const auto& jt : jr) {
      Tree t;
      detail::node_from_json(t, jt, m.n_features);
      round.push_back(std::move(t));
    }
    if (round.size() != m.n_classes) throw Error(ErrorCode::MalformedHeader, "gbt", "round has wrong tree count");
    m.rounds.push_back(std::move(round));
  }
  return m;
}

}  // namespace innerspeech::gbt
