#pragma once

// Fold plans, classification metrics, plain and nested cross-validation, and
// report emission (CSV tables + SVG bar chart).

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "innerspeech/core.hpp"
#include "innerspeech/dsp.hpp"
#include "innerspeech/error.hpp"
#include "innerspeech/features.hpp"
#include "innerspeech/gbt.hpp"
#include "innerspeech/hash.hpp"
#include "innerspeech/rng.hpp"
#include "innerspeech/svm.hpp"

namespace innerspeech::eval {

using IndexList = std::vector<std::size_t>;

// ---------------------------------------------------------------------------
// Folds

struct FoldPlan {
  std::size_t k = 4;
  std::vector<std::size_t> fold_of;  // epoch index -> test fold
  bool stratified = true;
  std::uint64_t seed = 0;

  IndexList test_indices(std::size_t fold) const {
    IndexList out;
    for (std::size_t i = 0; i < fold_of.size(); ++i) {
      if (fold_of[i] == fold) out.push_back(i);
    }
    return out;
  }
  IndexList train_indices(std::size_t fold) const {
    IndexList out;
    for (std::size_t i = 0; i < fold_of.size(); ++i) {
      if (fold_of[i] != fold) out.push_back(i);
    }
    return out;
  }
  std::vector<std::size_t> fold_sizes() const {
    std::vector<std::size_t> s(k, 0);
    for (auto f : fold_of) s[f] += 1;
    return s;
  }
};

/// Shuffles each class (or everything, unstratified) and deals positions
/// round-robin, so test folds hold floor(n/k) or ceil(n/k) epochs and, when
/// stratified, per-class counts differ by at most one.
inline FoldPlan kfold(std::size_t n, std::span<const int> labels, std::size_t k = 4, bool stratified = true,
                      std::uint64_t seed = 0) {
  if (labels.size() != n) throw Error(ErrorCode::LengthMismatch, "eval", "label count differs from n");
  if (k < 2 || n < k) {
    throw Error(ErrorCode::TooFewSamples, "eval", std::to_string(n) + " epochs cannot form " + std::to_string(k) + " folds");
  }
  FoldPlan plan;
  plan.k = k;
  plan.stratified = stratified;
  plan.seed = seed;
  plan.fold_of.assign(n, 0);
  Rng rng(seed);
  auto shuffle = [&](IndexList& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
  };
  IndexList order;
  if (stratified) {
    std::set<int> classes(labels.begin(), labels.end());
    for (int c : classes) {
      IndexList members;
      for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] == c) members.push_back(i);
      }
      if (members.size() < k) {
        throw Error(ErrorCode::TooFewSamples, "eval",
                    "class " + std::to_string(c) + " has " + std::to_string(members.size()) + " epochs, fewer than k=" +
                        std::to_string(k));
      }
      shuffle(members);
      order.insert(order.end(), members.begin(), members.end());
    }
  } else {
    order.resize(n);
    std::iota(order.begin(), order.end(), 0);
    shuffle(order);
  }
  for (std::size_t pos = 0; pos < order.size(); ++pos) plan.fold_of[order[pos]] = pos % k;
  return plan;
}

// ---------------------------------------------------------------------------
// Metrics

struct Metrics {
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][pred]
  std::vector<double> precision, recall, f1;        // per class
  std::vector<std::string> warnings;
};

inline Metrics compute_metrics(std::span<const int> y_true, std::span<const int> y_pred, std::size_t n_classes) {
  if (y_true.size() != y_pred.size()) {
    throw Error(ErrorCode::LengthMismatch, "eval",
                std::to_string(y_true.size()) + " true labels vs " + std::to_string(y_pred.size()) + " predictions");
  }
  Metrics m;
  m.confusion.assign(n_classes, std::vector<std::size_t>(n_classes, 0));
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    for (int v : {y_true[i], y_pred[i]}) {
      if (v < 0 || static_cast<std::size_t>(v) >= n_classes) {
        throw Error(ErrorCode::ConfigInvalid, "eval", "label " + std::to_string(v) + " out of range");
      }
    }
    m.confusion[static_cast<std::size_t>(y_true[i])][static_cast<std::size_t>(y_pred[i])] += 1;
  }
  std::size_t diag = 0;
  for (std::size_t c = 0; c < n_classes; ++c) diag += m.confusion[c][c];
  m.accuracy = y_true.empty() ? 0.0 : static_cast<double>(diag) / static_cast<double>(y_true.size());
  for (std::size_t c = 0; c < n_classes; ++c) {
    std::size_t row = 0, col = 0;
    for (std::size_t j = 0; j < n_classes; ++j) {
      row += m.confusion[c][j];
      col += m.confusion[j][c];
    }
    const double tp = static_cast<double>(m.confusion[c][c]);
    const double p = col > 0 ? tp / static_cast<double>(col) : 0.0;
    const double r = row > 0 ? tp / static_cast<double>(row) : 0.0;
    if (row == 0) m.warnings.push_back("class " + std::to_string(c) + " absent from y_true");
    m.precision.push_back(p);
    m.recall.push_back(r);
    m.f1.push_back(p + r > 0 ? 2.0 * p * r / (p + r) : 0.0);
  }
  if (n_classes > 0) {
    const double k = static_cast<double>(n_classes);
    m.macro_precision = std::accumulate(m.precision.begin(), m.precision.end(), 0.0) / k;
    m.macro_recall = std::accumulate(m.recall.begin(), m.recall.end(), 0.0) / k;
    m.macro_f1 = std::accumulate(m.f1.begin(), m.f1.end(), 0.0) / k;
  }
  return m;
}

/// Arithmetic mean of the summary scores; confusions are summed.
inline Metrics mean_metrics(std::span<const Metrics> ms) {
  Metrics out;
  if (ms.empty()) return out;
  const double n = static_cast<double>(ms.size());
  for (const auto& m : ms) {
    out.accuracy += m.accuracy / n;
    out.macro_precision += m.macro_precision / n;
    out.macro_recall += m.macro_recall / n;
    out.macro_f1 += m.macro_f1 / n;
    if (out.confusion.empty()) {
      out.confusion = m.confusion;
    } else if (out.confusion.size() == m.confusion.size()) {
      for (std::size_t i = 0; i < m.confusion.size(); ++i) {
        for (std::size_t j = 0; j < m.confusion[i].size(); ++j) out.confusion[i][j] += m.confusion[i][j];
      }
    }
  }
  return out;
}

inline double chance_level(std::size_t n_classes) {
  if (n_classes < 2) throw Error(ErrorCode::ConfigInvalid, "eval", "chance level needs at least two classes");
  return 1.0 / static_cast<double>(n_classes);
}

inline nlohmann::json to_json(const Metrics& m) {
  return {{"accuracy", m.accuracy},   {"precision", m.macro_precision}, {"recall", m.macro_recall},
          {"f1", m.macro_f1},         {"confusion", m.confusion},       {"warnings", m.warnings}};
}

inline Metrics metrics_from_json(const nlohmann::json& j) {
  Metrics m;
  m.accuracy = j.at("accuracy").get<double>();
  m.macro_precision = j.at("precision").get<double>();
  m.macro_recall = j.at("recall").get<double>();
  m.macro_f1 = j.at("f1").get<double>();
  m.confusion = j.value("confusion", std::vector<std::vector<std::size_t>>{});
  m.warnings = j.value("warnings", std::vector<std::string>{});
  return m;
}

// ---------------------------------------------------------------------------
// Cross-validation

/// Trains on `train` with hyper-parameter point `grid_index` and returns one
/// predicted label per entry of `test`. It only ever sees indices.
using FitPredict =
    std::function<std::vector<int>(std::span<const std::size_t> train, std::span<const std::size_t> test, std::size_t grid_index)>;

/// Content hash per epoch; a hash present in both train and test of any split is leakage.
inline std::vector<std::uint64_t> content_hashes(const EpochSet& set) {
  std::vector<std::uint64_t> out;
  for (const auto& e : set.epochs) out.push_back(Fnv1a().add(std::span<const float>(e.data)).value());
  return out;
}

inline std::vector<std::uint64_t> content_hashes(const features::FeatureMatrix& fm) {
  std::vector<std::uint64_t> out;
  for (Eigen::Index r = 0; r < fm.values.rows(); ++r) {
    const Eigen::VectorXd row = fm.values.row(r).transpose();
    out.push_back(Fnv1a().add(std::span<const double>(row.data(), static_cast<std::size_t>(row.size()))).value());
  }
  return out;
}

inline void check_disjoint(std::span<const std::size_t> train, std::span<const std::size_t> test,
                           std::span<const std::uint64_t> hashes) {
  std::set<std::size_t> train_idx(train.begin(), train.end());
  for (auto i : test) {
    if (train_idx.count(i)) throw Error(ErrorCode::LeakageDetected, "eval", "epoch " + std::to_string(i) + " in both splits");
  }
  if (hashes.empty()) return;
  std::set<std::uint64_t> seen;
  for (auto i : train) seen.insert(hashes[i]);
  for (auto i : test) {
    if (seen.count(hashes[i])) {
      throw Error(ErrorCode::LeakageDetected, "eval",
                  "test epoch " + std::to_string(i) + " has the same content as a training epoch");
    }
  }
}

struct CvOptions {
  std::size_t outer_k = 4;
  std::size_t inner_k = 3;
  bool stratified = true;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

struct CvResult {
  FoldPlan plan;
  std::vector<Metrics> folds;
  std::vector<std::size_t> chosen;  // grid index per outer fold
  std::vector<int> predictions;     // out-of-fold, per epoch
  Metrics mean;
};

namespace detail {

/// Runs fn(i) for i in [0, n) on up to `jobs` threads; rethrows the first failure.
inline void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < jobs; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

inline IndexList pick(std::span<const std::size_t> from, std::span<const std::size_t> positions) {
  IndexList out;
  for (auto p : positions) out.push_back(from[p]);
  return out;
}

}  // namespace detail

/// Outer k-fold; with more than one grid point an inner CV on each outer-train
/// split picks the point with the best mean inner accuracy (ties to the first).
inline CvResult nested_cv(std::span<const int> labels, std::size_t n_classes, std::size_t grid_size,
                          const FitPredict& fit_predict, const CvOptions& opt = {},
                          std::span<const std::uint64_t> hashes = {}) {
  if (grid_size == 0) throw Error(ErrorCode::ConfigInvalid, "eval", "hyper-parameter grid is empty");
  if (!hashes.empty() && hashes.size() != labels.size()) {
    throw Error(ErrorCode::LengthMismatch, "eval", "one content hash per epoch required");
  }
  CvResult res;
  res.plan = kfold(labels.size(), labels, opt.outer_k, opt.stratified, opt.seed);
  res.folds.resize(opt.outer_k);
  res.chosen.assign(opt.outer_k, 0);
  res.predictions.assign(labels.size(), -1);

  detail::parallel_for(opt.outer_k, opt.jobs, [&](std::size_t f) {
    const auto train = res.plan.train_indices(f);
    const auto test = res.plan.test_indices(f);
    check_disjoint(train, test, hashes);
    std::size_t best = 0;
    if (grid_size > 1) {
      std::vector<int> inner_labels;
      for (auto i : train) inner_labels.push_back(labels[i]);
      const auto inner = kfold(train.size(), inner_labels, opt.inner_k, opt.stratified, opt.seed + 1 + f);
      double best_acc = -1.0;
      for (std::size_t g = 0; g < grid_size; ++g) {
        double acc = 0.0;
        for (std::size_t j = 0; j < opt.inner_k; ++j) {
          const auto itr = detail::pick(train, inner.train_indices(j));
          const auto ite = detail::pick(train, inner.test_indices(j));
          check_disjoint(itr, ite, hashes);
          const auto pred = fit_predict(itr, ite, g);
          std::vector<int> truth;
          for (auto i : ite) truth.push_back(labels[i]);
          acc += compute_metrics(truth, pred, n_classes).accuracy / static_cast<double>(opt.inner_k);
        }
        if (acc > best_acc) {
          best_acc = acc;
          best = g;
        }
      }
    }
    const auto pred = fit_predict(train, test, best);
    std::vector<int> truth;
    for (auto i : test) truth.push_back(labels[i]);
    res.folds[f] = compute_metrics(truth, pred, n_classes);
    res.chosen[f] = best;
    for (std::size_t r = 0; r < test.size(); ++r) res.predictions[test[r]] = pred[r];
  });
  res.mean = mean_metrics(res.folds);
  return res;
}

/// Plain k-fold evaluation of a single configuration.
inline CvResult cross_validate(std::span<const int> labels, std::size_t n_classes,
                               const std::function<std::vector<int>(std::span<const std::size_t>, std::span<const std::size_t>)>& fit_predict,
                               const CvOptions& opt = {}, std::span<const std::uint64_t> hashes = {}) {
  return nested_cv(
      labels, n_classes, 1,
      [&](std::span<const std::size_t> tr, std::span<const std::size_t> te, std::size_t) { return fit_predict(tr, te); },
      opt, hashes);
}

// ---------------------------------------------------------------------------
// Reports

struct SubjectResult {
  std::string subject;
  Metrics metrics;  // mean over outer folds
};

struct ComparisonRow {
  std::string classifier;
  std::string input_type;
  double accuracy = 0.0;
};

struct WindowResult {
  double window_start_s = 0.0;
  double accuracy = 0.0;
};

struct EvalReport {
  std::vector<SubjectResult> subjects;
  Metrics average;
  double chance = 0.25;
  std::string fingerprint;
  std::vector<ComparisonRow> comparison;
  std::vector<WindowResult> windows;
  nlohmann::json config;
};

/// Grand average = mean of subject rows.
inline EvalReport make_report(std::vector<SubjectResult> subjects, std::size_t n_classes, std::string fingerprint = {}) {
  EvalReport r;
  r.subjects = std::move(subjects);
  std::vector<Metrics> ms;
  for (const auto& s : r.subjects) ms.push_back(s.metrics);
  r.average = mean_metrics(ms);
  r.chance = chance_level(n_classes);
  r.fingerprint = std::move(fingerprint);
  return r;
}

namespace detail {

inline std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

}  // namespace detail

struct ChartGeometry {
  double width = 640, height = 400;
  double left = 60, right = 20, top = 40, bottom = 60;

  double plot_height() const { return height - top - bottom; }
  double plot_width() const { return width - left - right; }
  double y_of(double fraction) const { return top + (1.0 - fraction) * plot_height(); }
};

inline std::string subjects_csv(const EvalReport& r) {
  std::ostringstream os;
  os << "subject,accuracy,precision,recall,f1\n";
  auto row = [&](const std::string& name, const Metrics& m) {
    os << detail::csv_field(name) << ',' << detail::fixed(m.accuracy, 6) << ',' << detail::fixed(m.macro_precision, 6)
       << ',' << detail::fixed(m.macro_recall, 6) << ',' << detail::fixed(m.macro_f1, 6) << '\n';
  };
  for (const auto& s : r.subjects) row(s.subject, s.metrics);
  row("average", r.average);
  return os.str();
}

inline std::string comparison_csv(const EvalReport& r) {
  std::ostringstream os;
  os << "classifier,input_type,accuracy\n";
  for (const auto& c : r.comparison) {
    os << detail::csv_field(c.classifier) << ',' << detail::csv_field(c.input_type) << ',' << detail::fixed(c.accuracy, 6)
       << '\n';
  }
  return os.str();
}

inline std::string windows_csv(const EvalReport& r) {
  std::ostringstream os;
  os << "window_start_s,accuracy\n";
  for (const auto& w : r.windows) os << detail::fixed(w.window_start_s, 4) << ',' << detail::fixed(w.accuracy, 6) << '\n';
  return os.str();
}

/// One bar per subject, red chance line, axis 0-100%.
inline std::string accuracy_svg(const EvalReport& r, const ChartGeometry& g = {}) {
  using detail::fixed;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fixed(g.width, 0) << "\" height=\"" << fixed(g.height, 0)
     << "\" viewBox=\"0 0 " << fixed(g.width, 0) << ' ' << fixed(g.height, 0) << "\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << fixed(g.width, 0) << "\" height=\"" << fixed(g.height, 0)
     << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << fixed(g.width / 2, 3) << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        "font-size=\"14\">Accuracy per subject</text>\n";
  for (int tick = 0; tick <= 100; tick += 25) {
    const double y = g.y_of(tick / 100.0);
    os << "<line class=\"grid\" x1=\"" << fixed(g.left, 3) << "\" y1=\"" << fixed(y, 3) << "\" x2=\"" << fixed(g.width - g.right, 3)
       << "\" y2=\"" << fixed(y, 3) << "\" stroke=\"#dddddd\"/>\n";
    os << "<text x=\"" << fixed(g.left - 6, 3) << "\" y=\"" << fixed(y + 4, 3)
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << tick << "%</text>\n";
  }
  const std::size_t n = r.subjects.size();
  const double slot = n > 0 ? g.plot_width() / static_cast<double>(n) : g.plot_width();
  const double bar_w = slot * 0.6;
  for (std::size_t i = 0; i < n; ++i) {
    const double acc = std::clamp(r.subjects[i].metrics.accuracy, 0.0, 1.0);
    const double x = g.left + slot * static_cast<double>(i) + (slot - bar_w) / 2;
    const double y = g.y_of(acc);
    os << "<rect class=\"bar\" x=\"" << fixed(x, 3) << "\" y=\"" << fixed(y, 3) << "\" width=\"" << fixed(bar_w, 3)
       << "\" height=\"" << fixed(g.y_of(0.0) - y, 3) << "\" fill=\"#4a78b5\"/>\n";
    os << "<text x=\"" << fixed(x + bar_w / 2, 3) << "\" y=\"" << fixed(g.y_of(0.0) + 16, 3)
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
       << detail::xml_escape(r.subjects[i].subject) << "</text>\n";
  }
  const double cy = g.y_of(r.chance);
  os << "<line class=\"chance\" x1=\"" << fixed(g.left, 3) << "\" y1=\"" << fixed(cy, 3) << "\" x2=\""
     << fixed(g.width - g.right, 3) << "\" y2=\"" << fixed(cy, 3) << "\" stroke=\"red\" stroke-width=\"2\"/>\n";
  os << "<line class=\"axis\" x1=\"" << fixed(g.left, 3) << "\" y1=\"" << fixed(g.y_of(0.0), 3) << "\" x2=\""
     << fixed(g.left, 3) << "\" y2=\"" << fixed(g.y_of(1.0), 3) << "\" stroke=\"black\"/>\n";
  os << "</svg>\n";
  return os.str();
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json subjects = nlohmann::json::array();
  for (const auto& s : r.subjects) {
    auto j = to_json(s.metrics);
    j["subject"] = s.subject;
    subjects.push_back(j);
  }
  nlohmann::json comparison = nlohmann::json::array();
  for (const auto& c : r.comparison) {
    comparison.push_back({{"classifier", c.classifier}, {"input_type", c.input_type}, {"accuracy", c.accuracy}});
  }
  nlohmann::json windows = nlohmann::json::array();
  for (const auto& w : r.windows) windows.push_back({{"window_start_s", w.window_start_s}, {"accuracy", w.accuracy}});
  return {{"subjects", subjects},       {"average", to_json(r.average)}, {"chance_level", r.chance},
          {"fingerprint", r.fingerprint}, {"config", r.config},           {"comparison", comparison},
          {"windows", windows}};
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  try {
    for (const auto& js : j.at("subjects")) r.subjects.push_back({js.at("subject").get<std::string>(), metrics_from_json(js)});
    r.average = metrics_from_json(j.at("average"));
    r.chance = j.at("chance_level").get<double>();
    r.fingerprint = j.value("fingerprint", std::string{});
    r.config = j.value("config", nlohmann::json{});
    for (const auto& c : j.value("comparison", nlohmann::json::array())) {
      r.comparison.push_back(
          {c.at("classifier").get<std::string>(), c.at("input_type").get<std::string>(), c.at("accuracy").get<double>()});
    }
    for (const auto& w : j.value("windows", nlohmann::json::array())) {
      r.windows.push_back({w.at("window_start_s").get<double>(), w.at("accuracy").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedHeader, "eval", std::string("bad report JSON: ") + e.what());
  }
  return r;
}

/// Writes subjects.csv, comparison.csv, windows.csv (when present),
/// accuracy.svg and report.json. Nothing is written for an empty report.
inline std::vector<std::filesystem::path> emit_report(const EvalReport& r, const std::filesystem::path& out_dir) {
  if (r.subjects.empty()) throw Error(ErrorCode::EmptyReport, "eval", "report has no subjects");
  std::vector<std::pair<std::string, std::string>> files{{"subjects.csv", subjects_csv(r)},
                                                         {"comparison.csv", comparison_csv(r)},
                                                         {"accuracy.svg", accuracy_svg(r)},
                                                         {"report.json", to_json(r).dump(2) + "\n"}};
  if (!r.windows.empty()) files.emplace_back("windows.csv", windows_csv(r));
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "eval", "cannot create " + out_dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;
  for (const auto& [name, body] : files) {
    const auto p = out_dir / name;
    std::ofstream os(p, std::ios::binary);
    os << body;
    if (!os) throw Error(ErrorCode::IoFailure, "eval", "cannot write " + p.string());
    written.push_back(p);
  }
  return written;
}

// ---------------------------------------------------------------------------
// Binary rest-vs-action analysis over sliding windows

struct WindowedOptions {
  double width_s = 0.5;
  double overlap = 0.5;
  double rest_s = 1.5;
  double action_s = 2.5;
  std::vector<dsp::BandDef> bands = dsp::canonical_bands();
  svm::SvmParams svm;
  CvOptions cv;
  std::optional<double> gain_threshold;  // select features by GBT gain on each training fold
  gbt::GbtParams gbt;
};

namespace detail {

inline EpochSet windows_of(const EpochSet& src, const WindowedOptions& o, std::optional<std::size_t> position, int label) {
  EpochSet out = src.with_metadata_only();
  for (const auto& e : src.epochs) {
    auto ws = dsp::sliding_windows(e, src.sampling_rate_hz, o.width_s, o.overlap);
    for (std::size_t k = 0; k < ws.size(); ++k) {
      if (position && k != *position) continue;
      ws[k].label = label;
      out.epochs.push_back(std::move(ws[k]));
    }
  }
  return out;
}

}  // namespace detail

/// For each window position of the action interval: all rest windows (label 0)
/// against that action window (label 1), PSD per window, SVM under k-fold CV.
inline std::vector<WindowResult> windowed_rest_action(const RestActionSets& sets, const WindowedOptions& o = {}) {
  const double fs = sets.action.sampling_rate_hz;
  dsp::WelchParams welch;
  welch.seg_s = o.width_s;
  const auto rest = detail::windows_of(sets.rest, o, std::nullopt, 0);
  const auto rest_fm = features::build_feature_matrix(rest, o.bands, welch);
  const auto width = samples_for(o.width_s, fs);
  const auto starts = dsp::window_starts(sets.action.n_timesteps(), width, o.overlap);

  std::vector<WindowResult> out(starts.size());
  for (std::size_t pos = 0; pos < starts.size(); ++pos) {
    const auto act = detail::windows_of(sets.action, o, pos, 1);
    const auto act_fm = features::build_feature_matrix(act, o.bands, welch);
    Eigen::MatrixXd x(rest_fm.values.rows() + act_fm.values.rows(), rest_fm.values.cols());
    x << rest_fm.values, act_fm.values;
    std::vector<int> y(rest_fm.labels);
    y.insert(y.end(), act_fm.labels.begin(), act_fm.labels.end());
    auto fit_predict = [&](std::span<const std::size_t> tr, std::span<const std::size_t> te) {
      Eigen::MatrixXd xtr(static_cast<Eigen::Index>(tr.size()), x.cols()), xte(static_cast<Eigen::Index>(te.size()), x.cols());
      std::vector<int> ytr;
      for (std::size_t i = 0; i < tr.size(); ++i) {
        xtr.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(tr[i]));
        ytr.push_back(y[tr[i]]);
      }
      for (std::size_t i = 0; i < te.size(); ++i) xte.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(te[i]));
      const auto scaler = features::Standardizer::fit(xtr);
      xtr = scaler.apply(xtr);
      xte = scaler.apply(xte);
      if (o.gain_threshold) {
        const auto keep = gbt::gbt_importances(gbt::gbt_train(xtr, ytr, o.gbt), *o.gain_threshold).selected;
        Eigen::MatrixXd a(xtr.rows(), static_cast<Eigen::Index>(keep.size())), b(xte.rows(), static_cast<Eigen::Index>(keep.size()));
        for (std::size_t c = 0; c < keep.size(); ++c) {
          a.col(static_cast<Eigen::Index>(c)) = xtr.col(static_cast<Eigen::Index>(keep[c]));
          b.col(static_cast<Eigen::Index>(c)) = xte.col(static_cast<Eigen::Index>(keep[c]));
        }
        xtr = std::move(a);
        xte = std::move(b);
      }
      const auto model = svm::svm_train(xtr, ytr, o.svm);
      return svm::svm_predict(model, xte).labels;
    };
    const auto cv = cross_validate(y, 2, fit_predict, o.cv);
    out[pos] = {static_cast<double>(starts[pos]) / fs, cv.mean.accuracy};
  }
  return out;
}

inline std::vector<WindowResult> windowed_rest_action(const TrialSet& trials, const WindowedOptions& o = {}) {
  return windowed_rest_action(split_rest_action_sets(trials, o.rest_s, o.action_s), o);
}

}  // namespace innerspeech::eval
