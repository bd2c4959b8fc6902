#pragma once

// LSTM / BiLSTM sequence classifiers with a dense-ReLU-dropout head and a
// softmax output. Gradients are hand-derived (backprop through time).
//
// Batched tensors are column-per-sample: a sequence batch is a vector of T
// matrices, each features x batch.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "innerspeech/core.hpp"
#include "innerspeech/error.hpp"
#include "innerspeech/features.hpp"
#include "innerspeech/rng.hpp"

namespace innerspeech::neural {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

enum class FrontKind { Lstm, BiLstm };

inline const char* to_string(FrontKind k) { return k == FrontKind::Lstm ? "lstm" : "bilstm"; }

inline FrontKind front_from_string(const std::string& s) {
  if (s == "lstm") return FrontKind::Lstm;
  if (s == "bilstm") return FrontKind::BiLstm;
  throw Error(ErrorCode::ConfigInvalid, "neural", "unknown front '" + s + "'");
}

struct NetworkSpec {
  FrontKind front = FrontKind::BiLstm;
  std::size_t input_size = 1;
  std::size_t hidden = 64;
  std::size_t dense1 = 64;
  std::size_t dense2 = 32;
  std::size_t n_classes = 4;
  double dropout1 = 0.4;  // on the recurrent representation
  double dropout2 = 0.4;  // after the first dense layer

  std::size_t directions() const { return front == FrontKind::BiLstm ? 2 : 1; }
  std::size_t representation_size() const { return hidden * directions(); }

  void validate() const {
    if (input_size == 0 || hidden == 0 || dense1 == 0 || dense2 == 0 || n_classes < 2) {
      throw Error(ErrorCode::ConfigInvalid, "neural", "layer sizes must be positive and n_classes >= 2");
    }
    for (double p : {dropout1, dropout2}) {
      if (!(p >= 0.0 && p < 1.0)) throw Error(ErrorCode::ConfigInvalid, "neural", "dropout must lie in [0, 1)");
    }
  }
};

inline nlohmann::json to_json(const NetworkSpec& s) {
  return {{"front", to_string(s.front)}, {"input_size", s.input_size}, {"hidden", s.hidden},
          {"dense1", s.dense1},          {"dense2", s.dense2},         {"n_classes", s.n_classes},
          {"dropout1", s.dropout1},      {"dropout2", s.dropout2}};
}

inline NetworkSpec spec_from_json(const nlohmann::json& j) {
  NetworkSpec s;
  s.front = front_from_string(j.at("front").get<std::string>());
  s.input_size = j.at("input_size").get<std::size_t>();
  s.hidden = j.at("hidden").get<std::size_t>();
  s.dense1 = j.at("dense1").get<std::size_t>();
  s.dense2 = j.at("dense2").get<std::size_t>();
  s.n_classes = j.at("n_classes").get<std::size_t>();
  s.dropout1 = j.at("dropout1").get<double>();
  s.dropout2 = j.at("dropout2").get<double>();
  return s;
}

/// Gate order: input, forget, cell, output. W is 4h x d, U is 4h x h, b is 4h x 1.
template <typename T>
struct LstmParams {
  Mat<T> W, U, b;

  Eigen::Index hidden() const { return U.cols(); }
  Eigen::Index input() const { return W.cols(); }

  static LstmParams zeros(Eigen::Index d, Eigen::Index h) {
    return {Mat<T>::Zero(4 * h, d), Mat<T>::Zero(4 * h, h), Mat<T>::Zero(4 * h, 1)};
  }
};

template <typename T>
struct DenseParams {
  Mat<T> W, b;
};

template <typename T>
struct NetworkParams {
  LstmParams<T> fwd, bwd;  // bwd is empty for a unidirectional front
  DenseParams<T> d1, d2, out;

  bool operator==(const NetworkParams& o) const {
    bool same = true;
    auto a = tensors();
    auto b = o.tensors();
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      same = same && a[i]->rows() == b[i]->rows() && a[i]->cols() == b[i]->cols() && *a[i] == *b[i];
    }
    return same;
  }

  std::vector<const Mat<T>*> tensors() const {
    std::vector<const Mat<T>*> v{&fwd.W, &fwd.U, &fwd.b};
    if (bwd.W.size() > 0) v.insert(v.end(), {&bwd.W, &bwd.U, &bwd.b});
    v.insert(v.end(), {&d1.W, &d1.b, &d2.W, &d2.b, &out.W, &out.b});
    return v;
  }
  std::vector<Mat<T>*> tensors() {
    std::vector<Mat<T>*> v{&fwd.W, &fwd.U, &fwd.b};
    if (bwd.W.size() > 0) v.insert(v.end(), {&bwd.W, &bwd.U, &bwd.b});
    v.insert(v.end(), {&d1.W, &d1.b, &d2.W, &d2.b, &out.W, &out.b});
    return v;
  }
  std::vector<std::string> tensor_names() const {
    std::vector<std::string> v{"fwd.W", "fwd.U", "fwd.b"};
    if (bwd.W.size() > 0) v.insert(v.end(), {"bwd.W", "bwd.U", "bwd.b"});
    v.insert(v.end(), {"dense1.W", "dense1.b", "dense2.W", "dense2.b", "out.W", "out.b"});
    return v;
  }

  NetworkParams zeros_like() const {
    NetworkParams z = *this;
    for (auto* t : z.tensors()) t->setZero();
    return z;
  }

  template <typename U>
  NetworkParams<U> cast() const {
    NetworkParams<U> r;
    r.fwd = {fwd.W.template cast<U>(), fwd.U.template cast<U>(), fwd.b.template cast<U>()};
    r.bwd = {bwd.W.template cast<U>(), bwd.U.template cast<U>(), bwd.b.template cast<U>()};
    r.d1 = {d1.W.template cast<U>(), d1.b.template cast<U>()};
    r.d2 = {d2.W.template cast<U>(), d2.b.template cast<U>()};
    r.out = {out.W.template cast<U>(), out.b.template cast<U>()};
    return r;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* t : tensors()) n += static_cast<std::size_t>(t->size());
    return n;
  }
};

template <typename T>
NetworkParams<T> init_params(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  auto fill = [&](Mat<T>& m, double bound) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
    }
  };
  const auto d = static_cast<Eigen::Index>(spec.input_size);
  const auto h = static_cast<Eigen::Index>(spec.hidden);
  const double rb = 1.0 / std::sqrt(static_cast<double>(spec.hidden));
  auto lstm = [&]() {
    auto p = LstmParams<T>::zeros(d, h);
    fill(p.W, rb);
    fill(p.U, rb);
    p.b.middleRows(h, h).setConstant(T(1));
    return p;
  };
  auto dense = [&](std::size_t in, std::size_t out) {
    DenseParams<T> p{Mat<T>::Zero(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in)),
                     Mat<T>::Zero(static_cast<Eigen::Index>(out), 1)};
    fill(p.W, 1.0 / std::sqrt(static_cast<double>(in)));
    return p;
  };
  NetworkParams<T> p;
  p.fwd = lstm();
  if (spec.front == FrontKind::BiLstm) p.bwd = lstm();
  p.d1 = dense(spec.representation_size(), spec.dense1);
  p.d2 = dense(spec.dense1, spec.dense2);
  p.out = dense(spec.dense2, spec.n_classes);
  return p;
}

// ---------------------------------------------------------------------------
// LSTM

template <typename T>
struct LstmCache {
  std::vector<Mat<T>> i, f, g, o, c, tc, h;  // per processed step, each h x B
};

namespace detail {

template <typename T>
Mat<T> sigmoid(const Mat<T>& z) {
  return (T(1) / (T(1) + (-z.array()).exp())).matrix();
}

template <typename T>
void check_input(const LstmParams<T>& p, const std::vector<Mat<T>>& xs, Eigen::Index batch) {
  for (const auto& x : xs) {
    if (x.rows() != p.input() || x.cols() != batch) {
      throw Error(ErrorCode::DimensionMismatch, "neural",
                  "step is " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()) + ", expected " +
                      std::to_string(p.input()) + "x" + std::to_string(batch));
    }
  }
}

}  // namespace detail

/// Runs the cell over xs (reversed when `reverse`), returning the final hidden state (h x B).
template <typename T>
Mat<T> lstm_run(const LstmParams<T>& p, const std::vector<Mat<T>>& xs, Eigen::Index batch, bool reverse,
                LstmCache<T>* cache = nullptr) {
  detail::check_input(p, xs, batch);
  const Eigen::Index H = p.hidden();
  const std::size_t steps = xs.size();
  Mat<T> h = Mat<T>::Zero(H, batch);
  Mat<T> c = Mat<T>::Zero(H, batch);
  Mat<T> z(4 * H, batch);
  if (cache) *cache = {};
  for (std::size_t s = 0; s < steps; ++s) {
    const auto& x = xs[reverse ? steps - 1 - s : s];
    z.noalias() = p.W * x;
    z.noalias() += p.U * h;
    z.colwise() += p.b.col(0);
    Mat<T> i = detail::sigmoid<T>(z.topRows(H));
    Mat<T> f = detail::sigmoid<T>(z.middleRows(H, H));
    Mat<T> g = z.middleRows(2 * H, H).array().tanh().matrix();
    Mat<T> o = detail::sigmoid<T>(z.bottomRows(H));
    c = (f.array() * c.array() + i.array() * g.array()).matrix();
    Mat<T> tc = c.array().tanh().matrix();
    h = (o.array() * tc.array()).matrix();
    if (cache) {
      cache->i.push_back(std::move(i));
      cache->f.push_back(std::move(f));
      cache->g.push_back(std::move(g));
      cache->o.push_back(std::move(o));
      cache->c.push_back(c);
      cache->tc.push_back(std::move(tc));
      cache->h.push_back(h);
    }
  }
  return h;
}

/// Accumulates parameter gradients given dLoss/dh at the final step.
template <typename T>
void lstm_backward(const LstmParams<T>& p, const std::vector<Mat<T>>& xs, bool reverse, const LstmCache<T>& cache,
                   const Mat<T>& dh_final, LstmParams<T>& grad) {
  const Eigen::Index H = p.hidden();
  const Eigen::Index B = dh_final.cols();
  const std::size_t steps = xs.size();
  Mat<T> dh = dh_final;
  Mat<T> dc = Mat<T>::Zero(H, B);
  Mat<T> dz(4 * H, B);
  for (std::size_t s = steps; s-- > 0;) {
    const auto& x = xs[reverse ? steps - 1 - s : s];
    const auto i = cache.i[s].array();
    const auto f = cache.f[s].array();
    const auto g = cache.g[s].array();
    const auto o = cache.o[s].array();
    const auto tc = cache.tc[s].array();
    const auto dha = dh.array();
    Mat<T> dct = (dc.array() + dha * o * (T(1) - tc * tc)).matrix();
    if (s > 0) {
      dz.middleRows(H, H) = (dct.array() * cache.c[s - 1].array() * f * (T(1) - f)).matrix();
    } else {
      dz.middleRows(H, H).setZero();
    }
    dz.topRows(H) = (dct.array() * g * i * (T(1) - i)).matrix();
    dz.middleRows(2 * H, H) = (dct.array() * i * (T(1) - g * g)).matrix();
    dz.bottomRows(H) = (dha * tc * o * (T(1) - o)).matrix();
    dc = (dct.array() * f).matrix();
    grad.W.noalias() += dz * x.transpose();
    if (s > 0) grad.U.noalias() += dz * cache.h[s - 1].transpose();
    grad.b += dz.rowwise().sum();
    dh.noalias() = p.U.transpose() * dz;
  }
}

template <typename T>
struct LstmOutput {
  Mat<T> hidden;  // T x h, one row per step
  Mat<T> final;   // h x 1
};

/// Single sequence (rows = timesteps, cols = features).
template <typename T>
LstmOutput<T> lstm_forward(const LstmParams<T>& p, const Mat<T>& sequence) {
  if (sequence.rows() > 0 && sequence.cols() != p.input()) {
    throw Error(ErrorCode::DimensionMismatch, "neural",
                "sequence has " + std::to_string(sequence.cols()) + " features, cell expects " +
                    std::to_string(p.input()));
  }
  std::vector<Mat<T>> xs;
  for (Eigen::Index t = 0; t < sequence.rows(); ++t) xs.push_back(sequence.row(t).transpose());
  LstmCache<T> cache;
  LstmOutput<T> out;
  out.final = lstm_run(p, xs, 1, false, &cache);
  out.hidden.resize(sequence.rows(), p.hidden());
  for (std::size_t t = 0; t < cache.h.size(); ++t) out.hidden.row(static_cast<Eigen::Index>(t)) = cache.h[t].transpose();
  return out;
}

/// Forward final state stacked over the backward cell's final state on reverse(x).
template <typename T>
Mat<T> bilstm_forward(const LstmParams<T>& fwd, const LstmParams<T>& bwd, const Mat<T>& sequence) {
  if (fwd.hidden() != bwd.hidden() || fwd.input() != bwd.input()) {
    throw Error(ErrorCode::DimensionMismatch, "neural", "forward and backward cells differ in shape");
  }
  const Mat<T> reversed = sequence.colwise().reverse();
  Mat<T> out(2 * fwd.hidden(), 1);
  out << lstm_forward(fwd, sequence).final, lstm_forward(bwd, reversed).final;
  return out;
}

// ---------------------------------------------------------------------------
// Network

enum class Mode { Train, Eval };

template <typename T>
struct ForwardCache {
  LstmCache<T> fwd, bwd;
  Mat<T> rep, mask1, z1, a1, mask2, z2, a2, probs;  // probs: n_classes x B
};

namespace detail {

template <typename T>
Mat<T> dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Mode mode, Rng* rng) {
  if (mode == Mode::Eval || p <= 0.0) return Mat<T>::Ones(rows, cols);
  if (!rng) throw Error(ErrorCode::ConfigInvalid, "neural", "train-mode dropout needs an RNG");
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  Mat<T> m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng->uniform() < p ? T(0) : keep;
  }
  return m;
}

template <typename T>
Mat<T> softmax_cols(const Mat<T>& logits) {
  Mat<T> p(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const T m = logits.col(j).maxCoeff();
    p.col(j) = (logits.col(j).array() - m).exp().matrix();
    p.col(j) /= p.col(j).sum();
  }
  return p;
}

}  // namespace detail

/// Inverted dropout: zero with probability p, scale survivors by 1/(1-p).
template <typename T>
Mat<T> dropout(const Mat<T>& x, double p, Mode mode, Rng* rng) {
  return x.cwiseProduct(detail::dropout_mask<T>(x.rows(), x.cols(), p, mode, rng));
}

/// Class probabilities, batch x n_classes.
template <typename T>
Mat<T> forward(const NetworkSpec& spec, const NetworkParams<T>& params, const std::vector<Mat<T>>& xs,
               Eigen::Index batch, Mode mode, Rng* rng = nullptr, ForwardCache<T>* cache = nullptr) {
  ForwardCache<T> local;
  auto& c = cache ? *cache : local;
  const Eigen::Index H = params.fwd.hidden();
  if (spec.front == FrontKind::BiLstm) {
    if (params.bwd.hidden() != H || params.bwd.input() != params.fwd.input()) {
      throw Error(ErrorCode::DimensionMismatch, "neural", "forward and backward cells differ in shape");
    }
    c.rep.resize(2 * H, batch);
    c.rep.topRows(H) = lstm_run(params.fwd, xs, batch, false, &c.fwd);
    c.rep.bottomRows(H) = lstm_run(params.bwd, xs, batch, true, &c.bwd);
  } else {
    c.rep = lstm_run(params.fwd, xs, batch, false, &c.fwd);
  }
  if (params.d1.W.cols() != c.rep.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "neural", "dense1 input width does not match representation");
  }
  c.mask1 = detail::dropout_mask<T>(c.rep.rows(), batch, spec.dropout1, mode, rng);
  c.z1 = params.d1.W * c.rep.cwiseProduct(c.mask1);
  c.z1.colwise() += params.d1.b.col(0);
  c.a1 = c.z1.cwiseMax(T(0));
  c.mask2 = detail::dropout_mask<T>(c.a1.rows(), batch, spec.dropout2, mode, rng);
  c.z2 = params.d2.W * c.a1.cwiseProduct(c.mask2);
  c.z2.colwise() += params.d2.b.col(0);
  c.a2 = c.z2.cwiseMax(T(0));
  Mat<T> logits = params.out.W * c.a2;
  logits.colwise() += params.out.b.col(0);
  c.probs = detail::softmax_cols<T>(logits);
  return c.probs.transpose();
}

inline Mat<double> one_hot(std::span<const int> labels, std::size_t n_classes) {
  Mat<double> m = Mat<double>::Zero(static_cast<Eigen::Index>(labels.size()), static_cast<Eigen::Index>(n_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n_classes) {
      throw Error(ErrorCode::ShapeMismatch, "neural", "label " + std::to_string(labels[i]) + " out of range");
    }
    m(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return m;
}

/// Mean cross-entropy; probs is batch x n_classes.
template <typename T>
T loss(const Mat<T>& probs, std::span<const int> labels) {
  if (static_cast<std::size_t>(probs.rows()) != labels.size()) {
    throw Error(ErrorCode::ShapeMismatch, "neural", "probability rows differ from label count");
  }
  if (labels.empty()) return T(0);
  T total = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= probs.cols()) {
      throw Error(ErrorCode::ShapeMismatch, "neural", "label " + std::to_string(labels[i]) + " out of range");
    }
    total -= std::log(std::max(probs(static_cast<Eigen::Index>(i), labels[i]), T(1e-12)));
  }
  return total / static_cast<T>(labels.size());
}

template <typename T>
T loss(const Mat<T>& probs, const Mat<T>& one_hot_labels) {
  if (probs.rows() != one_hot_labels.rows() || probs.cols() != one_hot_labels.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "neural", "probabilities and one-hot labels differ in shape");
  }
  std::vector<int> labels;
  for (Eigen::Index i = 0; i < one_hot_labels.rows(); ++i) {
    Eigen::Index k = 0;
    one_hot_labels.row(i).maxCoeff(&k);
    if (std::abs(one_hot_labels.row(i).sum() - T(1)) > T(1e-6) || one_hot_labels(i, k) != T(1)) {
      throw Error(ErrorCode::ShapeMismatch, "neural", "label row " + std::to_string(i) + " is not one-hot");
    }
    labels.push_back(static_cast<int>(k));
  }
  return loss<T>(probs, labels);
}

/// Gradients of the mean loss; `cache` must come from the matching forward call.
template <typename T>
NetworkParams<T> backward(const NetworkSpec& spec, const NetworkParams<T>& params, const std::vector<Mat<T>>& xs,
                          const ForwardCache<T>& cache, std::span<const int> labels) {
  const Eigen::Index B = cache.probs.cols();
  if (static_cast<std::size_t>(B) != labels.size()) {
    throw Error(ErrorCode::ShapeMismatch, "neural", "label count differs from batch size");
  }
  NetworkParams<T> g = params.zeros_like();
  Mat<T> dlogits = cache.probs;
  for (Eigen::Index j = 0; j < B; ++j) dlogits(labels[static_cast<std::size_t>(j)], j) -= T(1);
  dlogits /= static_cast<T>(B);

  g.out.W.noalias() = dlogits * cache.a2.transpose();
  g.out.b = dlogits.rowwise().sum();
  Mat<T> dz2 = (params.out.W.transpose() * dlogits).cwiseProduct((cache.z2.array() > T(0)).matrix().template cast<T>());
  g.d2.W.noalias() = dz2 * cache.a1.cwiseProduct(cache.mask2).transpose();
  g.d2.b = dz2.rowwise().sum();
  Mat<T> dz1 = (params.d2.W.transpose() * dz2)
                   .cwiseProduct(cache.mask2)
                   .cwiseProduct((cache.z1.array() > T(0)).matrix().template cast<T>());
  g.d1.W.noalias() = dz1 * cache.rep.cwiseProduct(cache.mask1).transpose();
  g.d1.b = dz1.rowwise().sum();
  Mat<T> drep = (params.d1.W.transpose() * dz1).cwiseProduct(cache.mask1);

  const Eigen::Index H = params.fwd.hidden();
  lstm_backward(params.fwd, xs, false, cache.fwd, Mat<T>(drep.topRows(H)), g.fwd);
  if (spec.front == FrontKind::BiLstm) lstm_backward(params.bwd, xs, true, cache.bwd, Mat<T>(drep.bottomRows(H)), g.bwd);
  return g;
}

// ---------------------------------------------------------------------------
// Sequence data

enum class InputKind { PsdFeatures, RawAll, RawSelected };

inline const char* to_string(InputKind k) {
  switch (k) {
    case InputKind::PsdFeatures: return "psd_features";
    case InputKind::RawAll: return "raw_all";
    case InputKind::RawSelected: return "raw_selected";
  }
  return "raw_all";
}

inline InputKind input_kind_from_string(const std::string& s) {
  if (s == "psd_features") return InputKind::PsdFeatures;
  if (s == "raw_all") return InputKind::RawAll;
  if (s == "raw_selected") return InputKind::RawSelected;
  throw Error(ErrorCode::ConfigInvalid, "neural", "unknown input kind '" + s + "'");
}

/// n sequences of timesteps x features, stored sample-major then time then feature.
struct SequenceSet {
  std::size_t n = 0;
  std::size_t timesteps = 0;
  std::size_t features = 0;
  std::size_t n_classes = 0;
  std::vector<float> data;
  std::vector<int> labels;

  const float* sample(std::size_t i) const { return data.data() + i * timesteps * features; }
  float* sample(std::size_t i) { return data.data() + i * timesteps * features; }

  SequenceSet subset(std::span<const std::size_t> idx) const {
    SequenceSet s{idx.size(), timesteps, features, n_classes, {}, {}};
    s.data.reserve(idx.size() * timesteps * features);
    for (std::size_t i : idx) {
      s.data.insert(s.data.end(), sample(i), sample(i) + timesteps * features);
      s.labels.push_back(labels[i]);
    }
    return s;
  }

  Mat<double> one_hot_labels() const { return one_hot(labels, n_classes); }
};

inline SequenceSet shape_input(InputKind kind, const EpochSet& set) {
  if (kind == InputKind::PsdFeatures) {
    throw Error(ErrorCode::KindMismatch, "neural", "psd_features input needs a feature matrix, got raw epochs");
  }
  if (!set.is_rectangular()) throw Error(ErrorCode::ShapeMismatch, "neural", "epochs differ in length");
  SequenceSet s;
  s.n = set.size();
  s.timesteps = set.n_timesteps();
  s.features = set.n_channels();
  s.n_classes = set.n_classes();
  s.data.resize(s.n * s.timesteps * s.features);
  for (std::size_t e = 0; e < s.n; ++e) {
    const auto& ep = set.epochs[e];
    float* dst = s.sample(e);
    for (std::size_t c = 0; c < s.features; ++c) {
      for (std::size_t t = 0; t < s.timesteps; ++t) dst[t * s.features + c] = ep.data[c * s.timesteps + t];
    }
    s.labels.push_back(ep.label);
  }
  return s;
}

/// A flat feature vector becomes a sequence of n_features steps with one input each.
inline SequenceSet shape_input(InputKind kind, const features::FeatureMatrix& fm, std::size_t n_classes) {
  if (kind != InputKind::PsdFeatures) {
    throw Error(ErrorCode::KindMismatch, "neural", std::string(to_string(kind)) + " input needs raw epochs");
  }
  SequenceSet s;
  s.n = fm.n_rows();
  s.timesteps = fm.n_features();
  s.features = 1;
  s.n_classes = n_classes;
  s.labels = fm.labels;
  s.data.resize(s.n * s.timesteps);
  for (std::size_t i = 0; i < s.n; ++i) {
    for (std::size_t t = 0; t < s.timesteps; ++t) {
      s.data[i * s.timesteps + t] = static_cast<float>(fm.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)));
    }
  }
  return s;
}

/// Per-feature z-scoring with statistics from a training set.
struct Scaler {
  std::vector<double> mean, scale;

  static Scaler fit(const SequenceSet& s) {
    Scaler sc;
    sc.mean.assign(s.features, 0.0);
    sc.scale.assign(s.features, 1.0);
    const double count = static_cast<double>(s.n * s.timesteps);
    if (count == 0) return sc;
    std::vector<double> sq(s.features, 0.0);
    for (std::size_t k = 0; k < s.n * s.timesteps; ++k) {
      for (std::size_t f = 0; f < s.features; ++f) sc.mean[f] += s.data[k * s.features + f];
    }
    for (auto& m : sc.mean) m /= count;
    for (std::size_t k = 0; k < s.n * s.timesteps; ++k) {
      for (std::size_t f = 0; f < s.features; ++f) {
        const double d = s.data[k * s.features + f] - sc.mean[f];
        sq[f] += d * d;
      }
    }
    for (std::size_t f = 0; f < s.features; ++f) {
      const double sd = std::sqrt(sq[f] / count);
      sc.scale[f] = sd > 0 ? sd : 1.0;
    }
    return sc;
  }

  void apply(SequenceSet& s) const {
    if (mean.size() != s.features) throw Error(ErrorCode::DimensionMismatch, "neural", "scaler width mismatch");
    for (std::size_t k = 0; k < s.n * s.timesteps; ++k) {
      for (std::size_t f = 0; f < s.features; ++f) {
        auto& v = s.data[k * s.features + f];
        v = static_cast<float>((v - mean[f]) / scale[f]);
      }
    }
  }
};

template <typename T>
std::vector<Mat<T>> make_batch(const SequenceSet& s, std::span<const std::size_t> idx) {
  const auto B = static_cast<Eigen::Index>(idx.size());
  std::vector<Mat<T>> xs(s.timesteps, Mat<T>(static_cast<Eigen::Index>(s.features), B));
  for (Eigen::Index b = 0; b < B; ++b) {
    const float* src = s.sample(idx[static_cast<std::size_t>(b)]);
    for (std::size_t t = 0; t < s.timesteps; ++t) {
      for (std::size_t f = 0; f < s.features; ++f) xs[t](static_cast<Eigen::Index>(f), b) = static_cast<T>(src[t * s.features + f]);
    }
  }
  return xs;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 16;
  std::size_t max_epochs = 150;
  std::size_t patience = 20;
  std::uint64_t seed = 0;
  double clip_norm = 5.0;  // global gradient-norm cap; <= 0 disables

  void validate() const {
    if (!(learning_rate >= 0.0) || !(momentum >= 0.0 && momentum < 1.0) || batch_size == 0) {
      throw Error(ErrorCode::ConfigInvalid, "neural", "bad optimizer settings");
    }
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

template <typename T>
struct TrainResult {
  NetworkParams<T> params;  // best validation-loss epoch
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
};

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<int> predictions;
};

inline std::vector<int> argmax_rows(const Mat<double>& probs) {
  std::vector<int> out;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index k = 0;
    probs.row(i).maxCoeff(&k);
    out.push_back(static_cast<int>(k));
  }
  return out;
}

template <typename T>
Evaluation evaluate(const NetworkSpec& spec, const NetworkParams<T>& params, const SequenceSet& s,
                    std::size_t chunk = 64) {
  Evaluation ev;
  double total = 0.0;
  std::size_t hit = 0;
  for (std::size_t start = 0; start < s.n; start += chunk) {
    std::vector<std::size_t> idx(std::min(chunk, s.n - start));
    std::iota(idx.begin(), idx.end(), start);
    auto xs = make_batch<T>(s, idx);
    const Mat<double> probs = forward<T>(spec, params, xs, static_cast<Eigen::Index>(idx.size()), Mode::Eval).template cast<double>();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const int y = s.labels[idx[r]];
      total -= std::log(std::max(probs(static_cast<Eigen::Index>(r), y), 1e-12));
    }
    for (int p : argmax_rows(probs)) ev.predictions.push_back(p);
  }
  for (std::size_t i = 0; i < s.n; ++i) hit += ev.predictions[i] == s.labels[i];
  if (s.n > 0) {
    ev.loss = total / static_cast<double>(s.n);
    ev.accuracy = static_cast<double>(hit) / static_cast<double>(s.n);
  }
  return ev;
}

/// SGD with momentum on shuffled minibatches; keeps the parameters of the best
/// validation-loss epoch (training loss when no validation set is given).
template <typename T = float>
TrainResult<T> train(const NetworkSpec& spec, const SequenceSet& tr, const SequenceSet& va, const TrainConfig& cfg,
                     const NetworkParams<T>* init = nullptr) {
  spec.validate();
  cfg.validate();
  if (tr.features != spec.input_size || (va.n > 0 && va.features != spec.input_size)) {
    throw Error(ErrorCode::DimensionMismatch, "neural", "sequence width differs from network input size");
  }
  if (tr.n == 0) throw Error(ErrorCode::TooFewSamples, "neural", "empty training set");

  TrainResult<T> result;
  NetworkParams<T> params = init ? *init : init_params<T>(spec, cfg.seed);
  NetworkParams<T> velocity = params.zeros_like();
  result.params = params;
  Rng rng(cfg.seed ^ 0x5DEECE66DULL);
  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::vector<std::size_t> order(tr.n);

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double loss_sum = 0.0;
    std::size_t hit = 0;
    for (std::size_t start = 0; start < tr.n; start += cfg.batch_size) {
      std::span<const std::size_t> idx(order.data() + start, std::min(cfg.batch_size, tr.n - start));
      std::vector<int> labels;
      for (std::size_t i : idx) labels.push_back(tr.labels[i]);
      auto xs = make_batch<T>(tr, idx);
      ForwardCache<T> cache;
      const Mat<T> probs = forward<T>(spec, params, xs, static_cast<Eigen::Index>(idx.size()), Mode::Train, &rng, &cache);
      const double batch_loss = static_cast<double>(loss<T>(probs, labels));
      if (!std::isfinite(batch_loss)) {
        throw Error(ErrorCode::NonFiniteLoss, "neural",
                    "epoch " + std::to_string(epoch) + ", batch starting at " + std::to_string(start) +
                        ": loss is " + std::to_string(batch_loss));
      }
      loss_sum += batch_loss * static_cast<double>(idx.size());
      const auto pred = argmax_rows(probs.template cast<double>());
      for (std::size_t r = 0; r < idx.size(); ++r) hit += pred[r] == labels[r];

      auto grad = backward<T>(spec, params, xs, cache, labels);
      auto gt = grad.tensors();
      if (cfg.clip_norm > 0) {
        double sq = 0.0;
        for (auto* g : gt) sq += static_cast<double>(g->squaredNorm());
        const double norm = std::sqrt(sq);
        if (norm > cfg.clip_norm) {
          for (auto* g : gt) *g *= static_cast<T>(cfg.clip_norm / norm);
        }
      }
      auto pt = params.tensors();
      auto vt = velocity.tensors();
      for (std::size_t k = 0; k < pt.size(); ++k) {
        *vt[k] = static_cast<T>(cfg.momentum) * *vt[k] - static_cast<T>(cfg.learning_rate) * *gt[k];
        *pt[k] += *vt[k];
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(tr.n);
    rec.train_acc = static_cast<double>(hit) / static_cast<double>(tr.n);
    if (va.n > 0) {
      const auto ev = evaluate<T>(spec, params, va);
      rec.val_loss = ev.loss;
      rec.val_acc = ev.accuracy;
    } else {
      rec.val_loss = std::numeric_limits<double>::quiet_NaN();
      rec.val_acc = std::numeric_limits<double>::quiet_NaN();
    }
    result.history.push_back(rec);
    const double criterion = va.n > 0 ? rec.val_loss : rec.train_loss;
    if (criterion < best) {
      best = criterion;
      result.params = params;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return result;
}

inline std::string history_csv(std::span<const EpochRecord> history) {
  std::ostringstream os;
  os.precision(8);
  os << "epoch,train_loss,val_loss,train_acc,val_acc\n";
  for (const auto& r : history) {
    os << r.epoch << ',' << r.train_loss << ',' << r.val_loss << ',' << r.train_acc << ',' << r.val_acc << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Artifact: <base>.json (spec, scaler, tensor table) + <base>.f32 (row-major blobs)

struct NeuralArtifact {
  NetworkSpec spec;
  InputKind input = InputKind::RawAll;
  Scaler scaler;
  NetworkParams<float> params;
  std::vector<std::string> class_names;
};

inline void save_artifact(const NeuralArtifact& a, const std::filesystem::path& base) {
  const auto jp = innerspeech::detail::header_path(base);
  const auto tp = innerspeech::detail::tensor_path(base);
  if (jp.has_parent_path()) std::filesystem::create_directories(jp.parent_path());
  nlohmann::json j;
  j["kind"] = to_string(a.spec.front);
  j["version"] = 1;
  j["spec"] = to_json(a.spec);
  j["input"] = to_string(a.input);
  j["scaler"] = {{"mean", a.scaler.mean}, {"scale", a.scaler.scale}};
  j["class_names"] = a.class_names;
  j["blob"] = tp.filename().string();
  auto table = nlohmann::json::array();
  std::ofstream ts(tp, std::ios::binary);
  const auto names = a.params.tensor_names();
  const auto tensors = a.params.tensors();
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    const auto& m = *tensors[k];
    table.push_back({{"name", names[k]}, {"rows", m.rows()}, {"cols", m.cols()}});
    const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
    innerspeech::detail::write_f32_le(ts, std::span<const float>(rm.data(), static_cast<std::size_t>(rm.size())));
  }
  j["tensors"] = table;
  std::ofstream(jp) << j.dump(2) << '\n';
  if (!ts) throw Error(ErrorCode::IoFailure, "neural", "could not write " + tp.string());
}

inline NeuralArtifact load_artifact(const std::filesystem::path& base) {
  const auto jp = innerspeech::detail::header_path(base);
  const auto tp = innerspeech::detail::tensor_path(base);
  std::ifstream js(jp);
  if (!js) throw Error(ErrorCode::IoFailure, "neural", "cannot open " + jp.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedHeader, "neural", e.what());
  }
  if (j.value("version", 0) != 1) throw Error(ErrorCode::MalformedHeader, "neural", "unsupported artifact version");
  NeuralArtifact a;
  a.spec = spec_from_json(j.at("spec"));
  a.input = input_kind_from_string(j.at("input").get<std::string>());
  a.scaler.mean = j.at("scaler").at("mean").get<std::vector<double>>();
  a.scaler.scale = j.at("scaler").at("scale").get<std::vector<double>>();
  a.class_names = j.at("class_names").get<std::vector<std::string>>();
  a.params = init_params<float>(a.spec, 0);
  auto tensors = a.params.tensors();
  const auto& table = j.at("tensors");
  if (table.size() != tensors.size()) throw Error(ErrorCode::ShapeMismatch, "neural", "tensor table length mismatch");
  std::ifstream ts(tp, std::ios::binary);
  if (!ts) throw Error(ErrorCode::IoFailure, "neural", "cannot open " + tp.string());
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    const auto rows = table[k].at("rows").get<Eigen::Index>();
    const auto cols = table[k].at("cols").get<Eigen::Index>();
    if (rows != tensors[k]->rows() || cols != tensors[k]->cols()) {
      throw Error(ErrorCode::ShapeMismatch, "neural", "tensor " + table[k].at("name").get<std::string>() + " has wrong shape");
    }
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
    innerspeech::detail::read_f32_le(ts, std::span<float>(rm.data(), static_cast<std::size_t>(rm.size())));
    if (!ts) throw Error(ErrorCode::ShapeMismatch, "neural", "parameter blob is truncated");
    *tensors[k] = rm;
  }
  return a;
}

}  // namespace innerspeech::neural
