#pragma once

// C-support-vector classifier: SMO with second-order working-set selection on
// the full kernel matrix, one-vs-one for more than two classes.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "innerspeech/error.hpp"

namespace innerspeech::svm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class KernelKind { Linear, Rbf };

inline const char* to_string(KernelKind k) { return k == KernelKind::Linear ? "linear" : "rbf"; }

inline KernelKind kernel_from_string(const std::string& s) {
  if (s == "linear") return KernelKind::Linear;
  if (s == "rbf") return KernelKind::Rbf;
  throw Error(ErrorCode::ConfigInvalid, "svm", "unknown kernel '" + s + "'");
}

struct SvmParams {
  double C = 1.0;
  KernelKind kernel = KernelKind::Rbf;
  std::optional<double> gamma;  // unset: 1 / (n_features * var(X))
  double tolerance = 1e-3;
  std::size_t max_iterations = 10'000'000;
};

/// One pairwise machine: f(x) = sum_i coef_i K(sv_i, x) - rho; f > 0 votes `positive`.
struct BinaryMachine {
  int positive = 0;
  int negative = 1;
  Matrix support_vectors;  // n_sv x n_features
  Vector coef;             // alpha_i * y_i
  double rho = 0.0;
  Vector weights;          // linear kernel only: sum coef_i sv_i
  double kkt_gap = 0.0;    // max violation at termination
  std::size_t iterations = 0;
};

struct SvmModel {
  KernelKind kernel = KernelKind::Rbf;
  double gamma = 0.0;
  double C = 1.0;
  std::size_t n_features = 0;
  std::vector<int> classes;  // sorted class ids present in training
  std::vector<BinaryMachine> machines;

  std::size_t n_support() const {
    std::size_t n = 0;
    for (const auto& m : machines) n += static_cast<std::size_t>(m.support_vectors.rows());
    return n;
  }
};

namespace detail {

inline double kernel(KernelKind k, double gamma, const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) {
  if (k == KernelKind::Linear) return a.dot(b);
  return std::exp(-gamma * (a - b).squaredNorm());
}

inline Matrix gram(KernelKind k, double gamma, const Matrix& x) {
  const auto n = x.rows();
  Matrix g(n, n);
  if (k == KernelKind::Linear) {
    g.noalias() = x * x.transpose();
    return g;
  }
  const Vector sq = x.rowwise().squaredNorm();
  g.noalias() = x * x.transpose();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) g(i, j) = std::exp(-gamma * std::max(0.0, sq(i) + sq(j) - 2.0 * g(i, j)));
  }
  return g;
}

struct DualSolution {
  Vector alpha;
  double rho = 0.0;
  double gap = 0.0;
  std::size_t iterations = 0;
};

/// Solves min 1/2 a'Qa - e'a, 0 <= a <= C, y'a = 0 with Q_ij = y_i y_j K_ij.
inline DualSolution smo(const Matrix& k, const std::vector<double>& y, double c, double eps, std::size_t max_iter) {
  const auto n = static_cast<Eigen::Index>(y.size());
  constexpr double tau = 1e-12;
  DualSolution s;
  s.alpha = Vector::Zero(n);
  Vector grad = Vector::Constant(n, -1.0);
  auto q = [&](Eigen::Index i, Eigen::Index j) { return y[i] * y[j] * k(i, j); };
  auto upper = [&](Eigen::Index t) { return s.alpha(t) >= c; };
  auto lower = [&](Eigen::Index t) { return s.alpha(t) <= 0.0; };

  std::size_t iter = 0;
  for (; iter < max_iter; ++iter) {
    double gmax = -std::numeric_limits<double>::infinity();
    Eigen::Index i = -1;
    for (Eigen::Index t = 0; t < n; ++t) {
      if (y[t] > 0 ? !upper(t) : !lower(t)) {
        const double v = -y[t] * grad(t);
        if (v >= gmax) {
          gmax = v;
          i = t;
        }
      }
    }
    double gmax2 = -std::numeric_limits<double>::infinity();
    Eigen::Index j = -1;
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index t = 0; t < n; ++t) {
      if (y[t] > 0 ? lower(t) : upper(t)) continue;
      const double yg = y[t] * grad(t);
      gmax2 = std::max(gmax2, yg);
      if (i < 0) continue;
      const double grad_diff = gmax + yg;
      if (grad_diff > 0) {
        const double quad = k(i, i) + k(t, t) - 2.0 * k(i, t);
        const double obj = -(grad_diff * grad_diff) / (quad > 0 ? quad : tau);
        if (obj <= best) {
          best = obj;
          j = t;
        }
      }
    }
    s.gap = gmax + gmax2;
    if (i < 0 || j < 0 || s.gap < eps) break;

    const double ai = s.alpha(i), aj = s.alpha(j);
    if (y[i] != y[j]) {
      double quad = k(i, i) + k(j, j) + 2.0 * q(i, j);
      if (quad <= 0) quad = tau;
      const double delta = (-grad(i) - grad(j)) / quad;
      const double diff = ai - aj;
      double ni = ai + delta, nj = aj + delta;
      if (diff > 0) {
        if (nj < 0) { nj = 0; ni = diff; }
      } else {
        if (ni < 0) { ni = 0; nj = -diff; }
      }
      if (diff > 0) {
        if (ni > c) { ni = c; nj = c - diff; }
      } else {
        if (nj > c) { nj = c; ni = c + diff; }
      }
      s.alpha(i) = ni;
      s.alpha(j) = nj;
    } else {
      double quad = k(i, i) + k(j, j) - 2.0 * q(i, j);
      if (quad <= 0) quad = tau;
      const double delta = (grad(i) - grad(j)) / quad;
      const double sum = ai + aj;
      double ni = ai - delta, nj = aj + delta;
      if (sum > c) {
        if (ni > c) { ni = c; nj = sum - c; }
      } else {
        if (nj < 0) { nj = 0; ni = sum; }
      }
      if (sum > c) {
        if (nj > c) { nj = c; ni = sum - c; }
      } else {
        if (ni < 0) { ni = 0; nj = sum; }
      }
      s.alpha(i) = ni;
      s.alpha(j) = nj;
    }
    const double di = s.alpha(i) - ai;
    const double dj = s.alpha(j) - aj;
    for (Eigen::Index t = 0; t < n; ++t) grad(t) += q(i, t) * di + q(j, t) * dj;
  }
  s.iterations = iter;

  // rho: mean of y_i grad_i over free vectors, else midpoint of the feasible interval.
  double ub = std::numeric_limits<double>::infinity();
  double lb = -std::numeric_limits<double>::infinity();
  double sum_free = 0.0;
  std::size_t n_free = 0;
  for (Eigen::Index t = 0; t < n; ++t) {
    const double yg = y[t] * grad(t);
    if (upper(t)) {
      if (y[t] < 0) ub = std::min(ub, yg); else lb = std::max(lb, yg);
    } else if (lower(t)) {
      if (y[t] > 0) ub = std::min(ub, yg); else lb = std::max(lb, yg);
    } else {
      ++n_free;
      sum_free += yg;
    }
  }
  s.rho = n_free > 0 ? sum_free / static_cast<double>(n_free) : (ub + lb) / 2.0;
  return s;
}

}  // namespace detail

inline double default_gamma(const Matrix& x) {
  const double n = static_cast<double>(x.size());
  if (n == 0) return 1.0;
  const double mean = x.mean();
  const double var = (x.array() - mean).square().sum() / n;
  const double p = static_cast<double>(x.cols());
  return var > 0 ? 1.0 / (p * var) : 1.0 / p;
}

inline SvmModel svm_train(const Matrix& x, std::span<const int> y, const SvmParams& params = {}) {
  if (static_cast<std::size_t>(x.rows()) != y.size()) {
    throw Error(ErrorCode::DimensionMismatch, "svm", "row count differs from label count");
  }
  if (!x.allFinite()) throw Error(ErrorCode::NonFiniteFeature, "svm", "training features contain NaN/Inf");
  std::vector<int> classes(y.begin(), y.end());
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  if (classes.size() < 2) throw Error(ErrorCode::SingleClassData, "svm", "need at least two classes");

  SvmModel model;
  model.kernel = params.kernel;
  model.gamma = params.gamma.value_or(default_gamma(x));
  model.C = params.C;
  model.n_features = static_cast<std::size_t>(x.cols());
  model.classes = classes;

  for (std::size_t a = 0; a < classes.size(); ++a) {
    for (std::size_t b = a + 1; b < classes.size(); ++b) {
      std::vector<Eigen::Index> rows;
      std::vector<double> yy;
      for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] == classes[a] || y[i] == classes[b]) {
          rows.push_back(static_cast<Eigen::Index>(i));
          yy.push_back(y[i] == classes[a] ? 1.0 : -1.0);
        }
      }
      Matrix sub(static_cast<Eigen::Index>(rows.size()), x.cols());
      for (std::size_t r = 0; r < rows.size(); ++r) sub.row(static_cast<Eigen::Index>(r)) = x.row(rows[r]);
      const Matrix k = detail::gram(model.kernel, model.gamma, sub);
      auto sol = detail::smo(k, yy, params.C, params.tolerance, params.max_iterations);

      BinaryMachine m;
      m.positive = classes[a];
      m.negative = classes[b];
      m.rho = sol.rho;
      m.kkt_gap = sol.gap;
      m.iterations = sol.iterations;
      std::vector<Eigen::Index> sv;
      for (Eigen::Index i = 0; i < sol.alpha.size(); ++i) {
        if (sol.alpha(i) > 0.0) sv.push_back(i);
      }
      m.support_vectors.resize(static_cast<Eigen::Index>(sv.size()), x.cols());
      m.coef.resize(static_cast<Eigen::Index>(sv.size()));
      for (std::size_t r = 0; r < sv.size(); ++r) {
        m.support_vectors.row(static_cast<Eigen::Index>(r)) = sub.row(sv[r]);
        m.coef(static_cast<Eigen::Index>(r)) = sol.alpha(sv[r]) * yy[static_cast<std::size_t>(sv[r])];
      }
      if (model.kernel == KernelKind::Linear) m.weights = m.support_vectors.transpose() * m.coef;
      model.machines.push_back(std::move(m));
    }
  }
  return model;
}

struct SvmPrediction {
  std::vector<int> labels;
  Matrix decision;  // n x n_machines
};

inline double decision_value(const SvmModel& model, const BinaryMachine& m, const Eigen::Ref<const Vector>& x) {
  if (model.kernel == KernelKind::Linear && m.weights.size() == x.size()) return m.weights.dot(x) - m.rho;
  double f = 0.0;
  for (Eigen::Index i = 0; i < m.support_vectors.rows(); ++i) {
    f += m.coef(i) * detail::kernel(model.kernel, model.gamma, m.support_vectors.row(i).transpose(), x);
  }
  return f - m.rho;
}

/// One-vs-one voting; ties go to the class with the larger summed margin, then the lower id.
inline SvmPrediction svm_predict(const SvmModel& model, const Matrix& x) {
  if (static_cast<std::size_t>(x.cols()) != model.n_features) {
    throw Error(ErrorCode::DimensionMismatch, "svm",
                "expected " + std::to_string(model.n_features) + " features, got " + std::to_string(x.cols()));
  }
  SvmPrediction out;
  out.decision.resize(x.rows(), static_cast<Eigen::Index>(model.machines.size()));
  out.labels.resize(static_cast<std::size_t>(x.rows()));
  std::map<int, std::size_t> slot;
  for (std::size_t c = 0; c < model.classes.size(); ++c) slot[model.classes[c]] = c;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Vector row = x.row(r).transpose();
    std::vector<int> votes(model.classes.size(), 0);
    std::vector<double> margin(model.classes.size(), 0.0);
    for (std::size_t m = 0; m < model.machines.size(); ++m) {
      const auto& bm = model.machines[m];
      const double f = decision_value(model, bm, row);
      out.decision(r, static_cast<Eigen::Index>(m)) = f;
      if (f > 0) {
        votes[slot[bm.positive]] += 1;
      } else {
        votes[slot[bm.negative]] += 1;
      }
      margin[slot[bm.positive]] += f;
      margin[slot[bm.negative]] -= f;
    }
    std::size_t best = 0;
    for (std::size_t c = 1; c < votes.size(); ++c) {
      if (votes[c] > votes[best] || (votes[c] == votes[best] && margin[c] > margin[best])) best = c;
    }
    out.labels[static_cast<std::size_t>(r)] = model.classes[best];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace detail {

inline nlohmann::json matrix_to_json(const Matrix& m) {
  auto rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<double> r(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index j = 0; j < m.cols(); ++j) r[static_cast<std::size_t>(j)] = m(i, j);
    rows.push_back(r);
  }
  return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j, Eigen::Index cols) {
  Matrix m(static_cast<Eigen::Index>(j.size()), cols);
  for (std::size_t i = 0; i < j.size(); ++i) {
    auto r = j[i].get<std::vector<double>>();
    if (static_cast<Eigen::Index>(r.size()) != cols) {
      throw Error(ErrorCode::DimensionMismatch, "svm", "support vector width mismatch");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(i), c) = r[static_cast<std::size_t>(c)];
  }
  return m;
}

}  // namespace detail

inline nlohmann::json to_json(const SvmModel& m) {
  nlohmann::json j;
  j["kind"] = "svm";
  j["version"] = 1;
  j["kernel"] = to_string(m.kernel);
  j["gamma"] = m.gamma;
  j["C"] = m.C;
  j["n_features"] = m.n_features;
  j["classes"] = m.classes;
  auto machines = nlohmann::json::array();
  for (const auto& bm : m.machines) {
    machines.push_back({{"positive", bm.positive},
                        {"negative", bm.negative},
                        {"rho", bm.rho},
                        {"coef", std::vector<double>(bm.coef.data(), bm.coef.data() + bm.coef.size())},
                        {"support_vectors", detail::matrix_to_json(bm.support_vectors)}});
  }
  j["machines"] = machines;
  return j;
}

inline SvmModel svm_from_json(const nlohmann::json& j) {
  if (j.value("kind", "") != "svm" || j.value("version", 0) != 1) {
    throw Error(ErrorCode::MalformedHeader, "svm", "not a version-1 SVM artifact");
  }
  SvmModel m;
  m.kernel = kernel_from_string(j.at("kernel").get<std::string>());
  m.gamma = j.at("gamma").get<double>();
  m.C = j.at("C").get<double>();
  m.n_features = j.at("n_features").get<std::size_t>();
  m.classes = j.at("classes").get<std::vector<int>>();
  for (const auto& jm : j.at("machines")) {
    BinaryMachine bm;
    bm.positive = jm.at("positive").get<int>();
    bm.negative = jm.at("negative").get<int>();
    bm.rho = jm.at("rho").get<double>();
    auto coef = jm.at("coef").get<std::vector<double>>();
    bm.coef = Eigen::Map<Vector>(coef.data(), static_cast<Eigen::Index>(coef.size()));
    bm.support_vectors = detail::matrix_from_json(jm.at("support_vectors"), static_cast<Eigen::Index>(m.n_features));
    if (m.kernel == KernelKind::Linear) bm.weights = bm.support_vectors.transpose() * bm.coef;
    m.machines.push_back(std::move(bm));
  }
  return m;
}

}  // namespace innerspeech::svm
