#pragma once

// Feature matrix assembly (relative band power per channel and band) and the
// dimensionality-reduction strategies: PCA, gain-ranked selection, and
// cross-subject intersection.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "innerspeech/core.hpp"
#include "innerspeech/dsp.hpp"
#include "innerspeech/error.hpp"

namespace innerspeech::features {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Origin of one feature column: a (channel, band) pair, or a PCA component.
struct Provenance {
  std::string channel;
  std::string band;
  int component = -1;
  bool truncated_band = false;

  bool is_component() const { return component >= 0; }
  std::string label() const {
    return is_component() ? "component-" + std::to_string(component) : channel + ":" + band;
  }
  bool operator==(const Provenance&) const = default;
};

struct FeatureMatrix {
  Matrix values;  // n_epochs x n_features
  std::vector<Provenance> provenance;
  std::vector<int> labels;

  std::size_t n_rows() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t n_features() const { return static_cast<std::size_t>(values.cols()); }

  void validate() const {
    if (provenance.size() != n_features()) {
      throw Error(ErrorCode::DimensionMismatch, "features", "provenance length differs from column count");
    }
    if (labels.size() != n_rows()) {
      throw Error(ErrorCode::DimensionMismatch, "features", "label count differs from row count");
    }
    if (!values.allFinite()) throw Error(ErrorCode::NonFiniteFeature, "features", "non-finite feature value");
  }

  FeatureMatrix rows(std::span<const std::size_t> idx) const {
    FeatureMatrix out;
    out.values.resize(static_cast<Eigen::Index>(idx.size()), values.cols());
    out.labels.reserve(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      out.values.row(static_cast<Eigen::Index>(i)) = values.row(static_cast<Eigen::Index>(idx[i]));
      out.labels.push_back(labels.at(idx[i]));
    }
    out.provenance = provenance;
    return out;
  }

  FeatureMatrix columns(std::span<const std::size_t> idx) const {
    FeatureMatrix out;
    out.values.resize(values.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) {
      out.values.col(static_cast<Eigen::Index>(j)) = values.col(static_cast<Eigen::Index>(idx[j]));
      out.provenance.push_back(provenance.at(idx[j]));
    }
    out.labels = labels;
    return out;
  }
};

/// Column (c, b) holds the relative power of band b on channel c; columns are
/// channel-major, then band.
inline FeatureMatrix build_feature_matrix(const EpochSet& set, std::span<const dsp::BandDef> bands,
                                          const dsp::WelchParams& welch = {}) {
  if (set.empty()) throw Error(ErrorCode::DimensionMismatch, "features", "cannot featurize an empty EpochSet");
  const std::size_t n_ch = set.n_channels();
  const std::size_t n_b = bands.size();
  FeatureMatrix fm;
  fm.values.resize(static_cast<Eigen::Index>(set.size()), static_cast<Eigen::Index>(n_ch * n_b));
  for (const auto& ch : set.channels) {
    for (const auto& b : bands) fm.provenance.push_back({ch.name, b.name, -1, b.truncated});
  }
  std::vector<double> x;
  for (std::size_t e = 0; e < set.size(); ++e) {
    const auto& ep = set.epochs[e];
    fm.labels.push_back(ep.label);
    const std::size_t seg = welch.seg_len(ep.n_timesteps, set.sampling_rate_hz);
    for (std::size_t c = 0; c < n_ch; ++c) {
      auto row = ep.channel(c);
      x.assign(row.begin(), row.end());
      auto psd = dsp::welch_psd(x, set.sampling_rate_hz, seg, welch.overlap_frac, welch.taper, welch.detrend);
      auto rel = dsp::relative_band_power(psd, bands, welch.reference);
      for (std::size_t b = 0; b < n_b; ++b) {
        fm.values(static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(c * n_b + b)) = rel[b];
      }
    }
  }
  return fm;
}

// ---------------------------------------------------------------------------
// Column standardization (fit on training rows only)

struct Standardizer {
  Vector mean;
  Vector scale;

  static Standardizer fit(const Matrix& x) {
    Standardizer s;
    const double n = static_cast<double>(x.rows());
    s.mean = x.colwise().mean().transpose();
    s.scale = ((x.rowwise() - s.mean.transpose()).array().square().colwise().sum() / n).sqrt().transpose();
    for (auto& v : s.scale) {
      if (!(v > 1e-12)) v = 1.0;
    }
    return s;
  }

  Matrix apply(const Matrix& x) const {
    if (x.cols() != mean.size()) {
      throw Error(ErrorCode::DimensionMismatch, "features", "standardizer column count mismatch");
    }
    return (x.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
  }

  FeatureMatrix apply(const FeatureMatrix& fm) const {
    FeatureMatrix out = fm;
    out.values = apply(fm.values);
    return out;
  }
};

// ---------------------------------------------------------------------------
// PCA

struct PcaModel {
  Vector mean;
  Matrix components;  // k x n_features, orthonormal rows
  Vector explained_variance;
  Vector explained_variance_ratio;

  std::size_t n_components() const { return static_cast<std::size_t>(components.rows()); }
};

/// Keeps the smallest k whose cumulative explained-variance ratio reaches
/// `variance_target`. Components come from the eigendecomposition of the
/// sample covariance; sign is fixed so the largest-magnitude loading is positive.
inline PcaModel pca_fit(const FeatureMatrix& x, double variance_target = 0.99) {
  const auto n = x.values.rows();
  const auto p = x.values.cols();
  if (n < 2) throw Error(ErrorCode::DegenerateData, "features", "PCA needs at least two rows");
  if (!(variance_target > 0.0 && variance_target <= 1.0)) {
    throw Error(ErrorCode::DegenerateData, "features", "variance target must lie in (0, 1]");
  }
  PcaModel m;
  m.mean = x.values.colwise().mean().transpose();
  const Matrix centered = x.values.rowwise() - m.mean.transpose();
  const Matrix cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  if (eig.info() != Eigen::Success) throw Error(ErrorCode::DegenerateData, "features", "eigensolver failed");
  // Ascending order from Eigen; flip to descending.
  const Vector values = eig.eigenvalues().reverse();
  const Matrix vectors = eig.eigenvectors().rowwise().reverse();
  const double total = cov.trace();
  if (!(total > 0.0)) throw Error(ErrorCode::DegenerateData, "features", "zero total variance");

  const double floor = 1e-12 * std::max(values(0), 0.0);
  Eigen::Index rank = 0;
  while (rank < p && values(rank) > floor) ++rank;
  Eigen::Index k = 0;
  double cum = 0.0;
  while (k < rank) {
    cum += values(k) / total;
    ++k;
    if (cum >= variance_target - 1e-12) break;
  }
  m.components.resize(k, p);
  m.explained_variance.resize(k);
  m.explained_variance_ratio.resize(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    Vector v = vectors.col(i);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    m.components.row(i) = v.transpose();
    m.explained_variance(i) = values(i);
    m.explained_variance_ratio(i) = values(i) / total;
  }
  return m;
}

inline FeatureMatrix pca_transform(const PcaModel& model, const FeatureMatrix& x) {
  if (x.values.cols() != model.mean.size()) {
    throw Error(ErrorCode::DimensionMismatch, "features",
                "PCA expects " + std::to_string(model.mean.size()) + " columns, got " +
                    std::to_string(x.values.cols()));
  }
  FeatureMatrix out;
  out.values = (x.values.rowwise() - model.mean.transpose()) * model.components.transpose();
  out.labels = x.labels;
  for (std::size_t i = 0; i < model.n_components(); ++i) out.provenance.push_back({"", "", static_cast<int>(i), false});
  return out;
}

inline Matrix pca_inverse_transform(const PcaModel& model, const Matrix& scores) {
  return (scores * model.components).rowwise() + model.mean.transpose();
}

inline nlohmann::json to_json(const PcaModel& m) {
  nlohmann::json j;
  j["kind"] = "pca";
  j["version"] = 1;
  j["mean"] = std::vector<double>(m.mean.data(), m.mean.data() + m.mean.size());
  auto rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.components.rows(); ++i) {
    Vector r = m.components.row(i).transpose();
    rows.push_back(std::vector<double>(r.data(), r.data() + r.size()));
  }
  j["components"] = rows;
  j["explained_variance"] = std::vector<double>(m.explained_variance.data(),
                                                m.explained_variance.data() + m.explained_variance.size());
  j["explained_variance_ratio"] = std::vector<double>(
      m.explained_variance_ratio.data(), m.explained_variance_ratio.data() + m.explained_variance_ratio.size());
  return j;
}

inline PcaModel pca_from_json(const nlohmann::json& j) {
  PcaModel m;
  auto mean = j.at("mean").get<std::vector<double>>();
  m.mean = Eigen::Map<Vector>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  const auto& rows = j.at("components");
  m.components.resize(static_cast<Eigen::Index>(rows.size()), m.mean.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto r = rows[i].get<std::vector<double>>();
    if (r.size() != mean.size()) throw Error(ErrorCode::DimensionMismatch, "features", "PCA component width");
    m.components.row(static_cast<Eigen::Index>(i)) = Eigen::Map<Vector>(r.data(), static_cast<Eigen::Index>(r.size()));
  }
  auto ev = j.at("explained_variance").get<std::vector<double>>();
  auto evr = j.at("explained_variance_ratio").get<std::vector<double>>();
  m.explained_variance = Eigen::Map<Vector>(ev.data(), static_cast<Eigen::Index>(ev.size()));
  m.explained_variance_ratio = Eigen::Map<Vector>(evr.data(), static_cast<Eigen::Index>(evr.size()));
  return m;
}

// ---------------------------------------------------------------------------
// Gain-based selection

using IndexSet = std::vector<std::size_t>;  // ascending, unique

struct ImportanceReport {
  std::vector<double> gains;  // normalized to sum to 1
  IndexSet selected;
  double threshold = 0.0;
};

/// Smallest prefix of the gain-descending ranking (ties to the lower index)
/// whose normalized cumulative gain reaches `threshold`. Returned ascending.
inline IndexSet select_by_gain(std::span<const double> gains, double cumulative_threshold = 0.95) {
  double total = 0.0;
  for (double g : gains) {
    if (g < 0.0 || !std::isfinite(g)) {
      throw Error(ErrorCode::AllZeroGains, "features", "gains must be finite and non-negative");
    }
    total += g;
  }
  if (!(total > 0.0)) throw Error(ErrorCode::AllZeroGains, "features", "all gains are zero");
  std::vector<std::size_t> order(gains.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return gains[a] > gains[b]; });
  IndexSet chosen;
  double cum = 0.0;
  for (auto i : order) {
    if (gains[i] <= 0.0) break;
    chosen.push_back(i);
    cum += gains[i] / total;
    if (cum >= cumulative_threshold - 1e-9) break;
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

inline IndexSet intersect_selected(std::span<const IndexSet> per_subject) {
  if (per_subject.empty()) return {};
  std::set<std::size_t> acc(per_subject.front().begin(), per_subject.front().end());
  for (std::size_t s = 1; s < per_subject.size(); ++s) {
    std::set<std::size_t> next;
    for (auto i : per_subject[s]) {
      if (acc.count(i)) next.insert(i);
    }
    acc = std::move(next);
  }
  return {acc.begin(), acc.end()};
}

/// Channels owning at least one selected column, in first-appearance order.
inline std::vector<std::string> columns_to_channels(std::span<const std::size_t> selected,
                                                    std::span<const Provenance> provenance) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& p : provenance) {
    if (p.is_component()) {
      throw Error(ErrorCode::PcaProvenance, "features", "PCA components carry no channel identity");
    }
  }
  for (auto i : selected) {
    if (i >= provenance.size()) throw Error(ErrorCode::DimensionMismatch, "features", "column index out of range");
    const auto& p = provenance[i];
    if (seen.insert(p.channel).second) out.push_back(p.channel);
  }
  return out;
}

inline nlohmann::json to_json(const ImportanceReport& r) {
  return {{"kind", "importance"}, {"version", 1}, {"gains", r.gains}, {"selected", r.selected},
          {"threshold", r.threshold}};
}

inline ImportanceReport importance_from_json(const nlohmann::json& j) {
  ImportanceReport r;
  r.gains = j.at("gains").get<std::vector<double>>();
  r.selected = j.at("selected").get<IndexSet>();
  r.threshold = j.at("threshold").get<double>();
  for (auto i : r.selected) {
    if (i >= r.gains.size()) throw Error(ErrorCode::DimensionMismatch, "features", "selected index out of range");
  }
  return r;
}

/// CSV rows (column_index, channel, band, gain) for the selected columns,
/// ordered by decreasing gain.
inline std::string selected_features_csv(const ImportanceReport& r, std::span<const Provenance> provenance) {
  std::vector<std::size_t> order = r.selected;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return r.gains[a] > r.gains[b]; });
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(6);
  os << "column_index,channel,band,gain\n";
  for (auto i : order) {
    const auto& p = provenance[i];
    os << i << ',' << p.channel << ',' << p.band << ',' << r.gains[i] << '\n';
  }
  return os.str();
}

inline std::string feature_matrix_csv(const FeatureMatrix& fm) {
  std::ostringstream os;
  os.precision(10);
  os << "label";
  for (const auto& p : fm.provenance) os << ',' << p.label();
  os << '\n';
  for (Eigen::Index r = 0; r < fm.values.rows(); ++r) {
    os << fm.labels[static_cast<std::size_t>(r)];
    for (Eigen::Index c = 0; c < fm.values.cols(); ++c) os << ',' << fm.values(r, c);
    os << '\n';
  }
  return os.str();
}

}  // namespace innerspeech::features
