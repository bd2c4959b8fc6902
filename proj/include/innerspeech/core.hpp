#pragma once

// Domain data model: channels, epochs, epoch sets and the canonical on-disk
// format (JSON header + little-endian float32 tensor).

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "innerspeech/error.hpp"

namespace innerspeech {

enum class Hemisphere { Left, Right, Midline, Unknown };

inline const char* to_string(Hemisphere h) {
  switch (h) {
    case Hemisphere::Left: return "L";
    case Hemisphere::Right: return "R";
    case Hemisphere::Midline: return "Z";
    case Hemisphere::Unknown: return "U";
  }
  return "U";
}

inline Hemisphere hemisphere_from_string(const std::string& s) {
  if (s == "L" || s == "Left" || s == "left") return Hemisphere::Left;
  if (s == "R" || s == "Right" || s == "right") return Hemisphere::Right;
  if (s == "Z" || s == "Midline" || s == "midline") return Hemisphere::Midline;
  if (s == "U" || s == "Unknown" || s == "unknown") return Hemisphere::Unknown;
  throw Error(ErrorCode::MalformedHeader, "core", "unknown hemisphere tag '" + s + "'");
}

/// 10-20 convention: trailing odd digit is left, even digit is right, 'z' is midline.
inline Hemisphere hemisphere_from_label(const std::string& name) {
  if (name.empty()) return Hemisphere::Unknown;
  const char last = name.back();
  if (last == 'z' || last == 'Z') return Hemisphere::Midline;
  if (std::isdigit(static_cast<unsigned char>(last))) {
    return ((last - '0') % 2 == 1) ? Hemisphere::Left : Hemisphere::Right;
  }
  return Hemisphere::Unknown;
}

struct ChannelInfo {
  std::string name;
  Hemisphere hemisphere = Hemisphere::Unknown;
  std::size_t index = 0;

  bool operator==(const ChannelInfo&) const = default;
};

/// Builds a montage from labels, tagging hemispheres from the label digits.
inline std::vector<ChannelInfo> make_montage(const std::vector<std::string>& names) {
  std::vector<ChannelInfo> out;
  out.reserve(names.size());
  for (std::size_t i = 0; i < names.size(); ++i) {
    out.push_back({names[i], hemisphere_from_label(names[i]), i});
  }
  return out;
}

/// Overrides hemisphere tags from a montage JSON object {"F3": "L", ...}.
inline void apply_montage_overrides(std::vector<ChannelInfo>& channels,
                                    const nlohmann::json& overrides) {
  for (auto& ch : channels) {
    if (auto it = overrides.find(ch.name); it != overrides.end()) {
      ch.hemisphere = hemisphere_from_string(it->get<std::string>());
    }
  }
}

enum class IntervalKind { Rest, Action, Window };

struct Interval {
  IntervalKind kind = IntervalKind::Action;
  double start_s = 0.0;
  double end_s = 0.0;

  bool operator==(const Interval&) const = default;
};

/// A labeled trial: n_channels x n_timesteps samples in microvolts, row-major.
struct Epoch {
  std::size_t n_channels = 0;
  std::size_t n_timesteps = 0;
  std::vector<float> data;
  int label = 0;
  Interval interval;
  std::string subject_id;

  Epoch() = default;
  Epoch(std::size_t channels, std::size_t timesteps, int lbl = 0)
      : n_channels(channels), n_timesteps(timesteps), data(channels * timesteps, 0.0f), label(lbl) {}

  std::span<float> channel(std::size_t c) {
    return {data.data() + c * n_timesteps, n_timesteps};
  }
  std::span<const float> channel(std::size_t c) const {
    return {data.data() + c * n_timesteps, n_timesteps};
  }
  float& at(std::size_t c, std::size_t t) { return data[c * n_timesteps + t]; }
  float at(std::size_t c, std::size_t t) const { return data[c * n_timesteps + t]; }

  bool operator==(const Epoch&) const = default;
};

struct EpochSet {
  std::vector<Epoch> epochs;
  double sampling_rate_hz = 0.0;
  std::vector<std::string> class_names;
  std::vector<ChannelInfo> channels;
  std::string subject_id;
  std::string condition;

  std::size_t size() const { return epochs.size(); }
  bool empty() const { return epochs.empty(); }
  std::size_t n_channels() const { return channels.size(); }
  std::size_t n_timesteps() const { return epochs.empty() ? 0 : epochs.front().n_timesteps; }
  bool is_rectangular() const {
    return std::all_of(epochs.begin(), epochs.end(),
                       [&](const Epoch& e) { return e.n_timesteps == n_timesteps(); });
  }
  std::size_t n_classes() const { return class_names.size(); }

  std::vector<int> labels() const {
    std::vector<int> y;
    y.reserve(epochs.size());
    for (const auto& e : epochs) y.push_back(e.label);
    return y;
  }

  /// Subset by epoch indices, in the given order.
  EpochSet subset(std::span<const std::size_t> indices) const {
    EpochSet out = with_metadata_only();
    out.epochs.reserve(indices.size());
    for (auto i : indices) out.epochs.push_back(epochs.at(i));
    return out;
  }

  EpochSet with_metadata_only() const {
    EpochSet out;
    out.sampling_rate_hz = sampling_rate_hz;
    out.class_names = class_names;
    out.channels = channels;
    out.subject_id = subject_id;
    out.condition = condition;
    return out;
  }

  /// Throws on any broken type invariant.
  void validate() const {
    if (!(sampling_rate_hz > 0.0) || !std::isfinite(sampling_rate_hz)) {
      throw Error(ErrorCode::MalformedHeader, "core", "sampling_rate_hz must be positive");
    }
    std::set<std::string> names;
    for (std::size_t i = 0; i < channels.size(); ++i) {
      if (channels[i].index != i) {
        throw Error(ErrorCode::MalformedHeader, "core", "channel index out of order: " + channels[i].name);
      }
      if (!names.insert(channels[i].name).second) {
        throw Error(ErrorCode::MalformedHeader, "core", "duplicate channel name " + channels[i].name);
      }
    }
    for (const auto& e : epochs) {
      if (e.n_channels != channels.size() || e.data.size() != e.n_channels * e.n_timesteps) {
        throw Error(ErrorCode::ShapeMismatch, "core", "epoch channel count differs from montage");
      }
      if (e.label < 0 || static_cast<std::size_t>(e.label) >= class_names.size()) {
        throw Error(ErrorCode::MalformedHeader, "core",
                    "label " + std::to_string(e.label) + " outside class table");
      }
      for (float v : e.data) {
        if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteSample, "core", "non-finite sample");
      }
    }
  }

  bool operator==(const EpochSet&) const = default;
};

/// Per-class epoch counts, indexed by label.
inline std::vector<std::size_t> class_counts(const EpochSet& set) {
  std::vector<std::size_t> counts(set.n_classes(), 0);
  for (const auto& e : set.epochs) counts.at(static_cast<std::size_t>(e.label)) += 1;
  return counts;
}

inline const std::vector<std::string>& word_class_names() {
  static const std::vector<std::string> names{"up", "down", "right", "left"};
  return names;
}

// ---------------------------------------------------------------------------
// Canonical format

namespace detail {

inline std::filesystem::path header_path(const std::filesystem::path& base) {
  auto p = base;
  if (p.extension() == ".json" || p.extension() == ".f32") p.replace_extension();
  p += ".json";
  return p;
}

inline std::filesystem::path tensor_path(const std::filesystem::path& base) {
  auto p = base;
  if (p.extension() == ".json" || p.extension() == ".f32") p.replace_extension();
  p += ".f32";
  return p;
}

inline const char* interval_name(IntervalKind k) {
  switch (k) {
    case IntervalKind::Rest: return "rest";
    case IntervalKind::Action: return "action";
    case IntervalKind::Window: return "window";
  }
  return "action";
}

inline IntervalKind interval_from_name(const std::string& s) {
  if (s == "rest") return IntervalKind::Rest;
  if (s == "action") return IntervalKind::Action;
  if (s == "window") return IntervalKind::Window;
  throw Error(ErrorCode::MalformedHeader, "core", "unknown interval kind '" + s + "'");
}

inline void write_f32_le(std::ostream& os, std::span<const float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(values.data()),
             static_cast<std::streamsize>(values.size() * sizeof(float)));
  } else {
    for (float v : values) {
      auto bits = std::bit_cast<std::uint32_t>(v);
      char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                       static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
      os.write(bytes, 4);
    }
  }
}

inline void read_f32_le(std::istream& is, std::span<float> out) {
  is.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size() * sizeof(float)));
  if constexpr (std::endian::native != std::endian::little) {
    for (auto& v : out) {
      auto bits = std::bit_cast<std::uint32_t>(v);
      bits = ((bits & 0xff) << 24) | ((bits & 0xff00) << 8) | ((bits >> 8) & 0xff00) | (bits >> 24);
      v = std::bit_cast<float>(bits);
    }
  }
}

template <typename T>
T require_field(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) {
    throw Error(ErrorCode::MalformedHeader, "core", std::string("missing field '") + key + "'");
  }
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedHeader, "core", std::string("bad field '") + key + "': " + e.what());
  }
}

}  // namespace detail

inline nlohmann::json epochset_header(const EpochSet& set) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["n_epochs"] = set.size();
  j["n_channels"] = set.n_channels();
  j["n_timesteps"] = set.n_timesteps();
  j["sampling_rate_hz"] = set.sampling_rate_hz;
  j["class_names"] = set.class_names;
  std::vector<int> labels = set.labels();
  j["labels"] = labels;
  auto chans = nlohmann::json::array();
  for (const auto& c : set.channels) {
    chans.push_back({{"name", c.name}, {"hemisphere", to_string(c.hemisphere)}, {"index", c.index}});
  }
  j["channels"] = chans;
  j["subject_id"] = set.subject_id;
  j["condition"] = set.condition;
  // Interval annotations are optional; omitted when every epoch is a plain action epoch.
  const bool plain = std::all_of(set.epochs.begin(), set.epochs.end(), [](const Epoch& e) {
    return e.interval == Interval{};
  });
  if (!plain) {
    auto iv = nlohmann::json::array();
    for (const auto& e : set.epochs) {
      iv.push_back({{"kind", detail::interval_name(e.interval.kind)},
                    {"start_s", e.interval.start_s},
                    {"end_s", e.interval.end_s}});
    }
    j["intervals"] = iv;
  }
  return j;
}

/// Writes `<base>.json` and `<base>.f32`.
inline void save_epochset(const EpochSet& set, const std::filesystem::path& base) {
  set.validate();
  if (!set.is_rectangular()) {
    throw Error(ErrorCode::ShapeMismatch, "core", "epochs of unequal length cannot share one tensor");
  }
  const auto hp = detail::header_path(base);
  const auto tp = detail::tensor_path(base);
  if (hp.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(hp.parent_path(), ec);
  }
  std::ofstream hs(hp, std::ios::binary | std::ios::trunc);
  if (!hs) throw Error(ErrorCode::IoFailure, "core", "cannot write " + hp.string());
  hs << epochset_header(set).dump(2) << '\n';
  std::ofstream ts(tp, std::ios::binary | std::ios::trunc);
  if (!ts) throw Error(ErrorCode::IoFailure, "core", "cannot write " + tp.string());
  for (const auto& e : set.epochs) detail::write_f32_le(ts, e.data);
  if (!hs || !ts) throw Error(ErrorCode::IoFailure, "core", "write failed for " + base.string());
}

inline EpochSet load_epochset(const std::filesystem::path& base) {
  const auto hp = detail::header_path(base);
  const auto tp = detail::tensor_path(base);
  std::ifstream hs(hp, std::ios::binary);
  if (!hs) throw Error(ErrorCode::IoFailure, "core", "cannot open " + hp.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedHeader, "core", std::string("invalid JSON: ") + e.what());
  }
  if (detail::require_field<int>(j, "format_version") != 1) {
    throw Error(ErrorCode::MalformedHeader, "core", "unsupported format_version");
  }
  const auto n_epochs = detail::require_field<std::size_t>(j, "n_epochs");
  const auto n_channels = detail::require_field<std::size_t>(j, "n_channels");
  const auto n_timesteps = detail::require_field<std::size_t>(j, "n_timesteps");

  EpochSet set;
  set.sampling_rate_hz = detail::require_field<double>(j, "sampling_rate_hz");
  set.class_names = detail::require_field<std::vector<std::string>>(j, "class_names");
  const auto labels = detail::require_field<std::vector<int>>(j, "labels");
  set.subject_id = detail::require_field<std::string>(j, "subject_id");
  set.condition = detail::require_field<std::string>(j, "condition");
  const auto chans = detail::require_field<nlohmann::json>(j, "channels");
  if (!chans.is_array() || chans.size() != n_channels) {
    throw Error(ErrorCode::MalformedHeader, "core", "channels array does not match n_channels");
  }
  for (const auto& c : chans) {
    set.channels.push_back({detail::require_field<std::string>(c, "name"),
                            hemisphere_from_string(detail::require_field<std::string>(c, "hemisphere")),
                            detail::require_field<std::size_t>(c, "index")});
  }
  if (labels.size() != n_epochs) {
    throw Error(ErrorCode::MalformedHeader, "core", "labels length does not match n_epochs");
  }
  std::vector<Interval> intervals(n_epochs);
  if (auto it = j.find("intervals"); it != j.end()) {
    if (!it->is_array() || it->size() != n_epochs) {
      throw Error(ErrorCode::MalformedHeader, "core", "intervals length does not match n_epochs");
    }
    for (std::size_t i = 0; i < n_epochs; ++i) {
      const auto& iv = (*it)[i];
      intervals[i] = {detail::interval_from_name(detail::require_field<std::string>(iv, "kind")),
                      detail::require_field<double>(iv, "start_s"),
                      detail::require_field<double>(iv, "end_s")};
    }
  }

  const std::uintmax_t expected = static_cast<std::uintmax_t>(n_epochs) * n_channels * n_timesteps * 4u;
  std::error_code ec;
  const auto actual = std::filesystem::file_size(tp, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "core", "cannot stat " + tp.string());
  if (actual != expected) {
    throw Error(ErrorCode::ShapeMismatch, "core",
                "tensor has " + std::to_string(actual) + " bytes, expected " + std::to_string(expected));
  }
  std::ifstream ts(tp, std::ios::binary);
  if (!ts) throw Error(ErrorCode::IoFailure, "core", "cannot open " + tp.string());
  set.epochs.reserve(n_epochs);
  for (std::size_t i = 0; i < n_epochs; ++i) {
    Epoch e(n_channels, n_timesteps, labels[i]);
    detail::read_f32_le(ts, e.data);
    e.interval = intervals[i];
    e.subject_id = set.subject_id;
    set.epochs.push_back(std::move(e));
  }
  if (!ts) throw Error(ErrorCode::IoFailure, "core", "short read on " + tp.string());
  set.validate();
  return set;
}

// ---------------------------------------------------------------------------
// Channel selection

using ChannelPredicate = std::function<bool(const ChannelInfo&)>;

inline ChannelPredicate all_channels() {
  return [](const ChannelInfo&) { return true; };
}

inline ChannelPredicate hemisphere_is(Hemisphere h) {
  return [h](const ChannelInfo& c) { return c.hemisphere == h; };
}

inline ChannelPredicate channel_named(std::set<std::string> names) {
  return [names = std::move(names)](const ChannelInfo& c) { return names.count(c.name) > 0; };
}

inline EpochSet select_channels(const EpochSet& set, const ChannelPredicate& keep) {
  std::vector<std::size_t> rows;
  for (const auto& c : set.channels) {
    if (keep(c)) rows.push_back(c.index);
  }
  if (rows.empty()) throw Error(ErrorCode::EmptySelection, "core", "channel predicate kept nothing");

  EpochSet out = set.with_metadata_only();
  out.channels.clear();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    ChannelInfo c = set.channels[rows[i]];
    c.index = i;
    out.channels.push_back(std::move(c));
  }
  out.epochs.reserve(set.size());
  for (const auto& e : set.epochs) {
    Epoch r(rows.size(), e.n_timesteps, e.label);
    r.interval = e.interval;
    r.subject_id = e.subject_id;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto src = e.channel(rows[i]);
      std::copy(src.begin(), src.end(), r.channel(i).begin());
    }
    out.epochs.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Full trials with rest/action annotations

struct Trial {
  std::size_t n_channels = 0;
  std::size_t n_samples = 0;
  std::vector<float> data;  // n_channels x n_samples, row-major
  int word_label = 0;
  Interval rest{IntervalKind::Rest, 0.0, 0.0};
  Interval action{IntervalKind::Action, 0.0, 0.0};
};

struct TrialSet {
  std::vector<Trial> trials;
  double sampling_rate_hz = 0.0;
  std::vector<ChannelInfo> channels;
  std::vector<std::string> word_names;
  std::string subject_id;
  std::string condition;
};

inline std::size_t samples_for(double seconds, double fs) {
  return static_cast<std::size_t>(std::llround(seconds * fs));
}

namespace detail {

inline Epoch cut_epoch(const Trial& t, double fs, const Interval& iv, double duration_s, int label) {
  const std::size_t start = samples_for(iv.start_s, fs);
  const std::size_t len = samples_for(duration_s, fs);
  const double available_s = iv.end_s - iv.start_s;
  if (duration_s > available_s + 1e-9 || start + len > t.n_samples) {
    throw Error(ErrorCode::IntervalTooShort, "core",
                "requested " + std::to_string(duration_s) + " s from a " + std::to_string(available_s) +
                    " s interval");
  }
  Epoch e(t.n_channels, len, label);
  for (std::size_t c = 0; c < t.n_channels; ++c) {
    const float* src = t.data.data() + c * t.n_samples + start;
    std::copy(src, src + len, e.channel(c).begin());
  }
  e.interval = {iv.kind, iv.start_s, iv.start_s + duration_s};
  return e;
}

}  // namespace detail

/// Two epochs per trial: the first `rest_s` of the rest interval (label 0) and
/// the first `action_s` of the action interval (label 1).
inline EpochSet split_rest_action(const TrialSet& trials, double rest_s = 1.5, double action_s = 2.5) {
  EpochSet out;
  out.sampling_rate_hz = trials.sampling_rate_hz;
  out.class_names = {"rest", "action"};
  out.channels = trials.channels;
  out.subject_id = trials.subject_id;
  out.condition = trials.condition;
  out.epochs.reserve(2 * trials.trials.size());
  std::vector<Epoch> actions;
  for (const auto& t : trials.trials) {
    auto r = detail::cut_epoch(t, trials.sampling_rate_hz, t.rest, rest_s, 0);
    auto a = detail::cut_epoch(t, trials.sampling_rate_hz, t.action, action_s, 1);
    r.subject_id = a.subject_id = trials.subject_id;
    out.epochs.push_back(std::move(r));
    actions.push_back(std::move(a));
  }
  // Rest epochs first, then action epochs in trial order.
  for (auto& a : actions) out.epochs.push_back(std::move(a));
  return out;
}

/// Rest and action epochs differ in length; this keeps each group rectangular.
struct RestActionSets {
  EpochSet rest;
  EpochSet action;
};

inline RestActionSets split_rest_action_sets(const TrialSet& trials, double rest_s = 1.5,
                                             double action_s = 2.5) {
  auto mixed = split_rest_action(trials, rest_s, action_s);
  RestActionSets out{mixed.with_metadata_only(), mixed.with_metadata_only()};
  for (auto& e : mixed.epochs) {
    (e.label == 0 ? out.rest : out.action).epochs.push_back(std::move(e));
  }
  return out;
}

/// Word-labeled action epochs (multiclass task) from full trials.
inline EpochSet action_epochs(const TrialSet& trials, double action_s = 2.5) {
  EpochSet out;
  out.sampling_rate_hz = trials.sampling_rate_hz;
  out.class_names = trials.word_names;
  out.channels = trials.channels;
  out.subject_id = trials.subject_id;
  out.condition = trials.condition;
  for (const auto& t : trials.trials) {
    auto e = detail::cut_epoch(t, trials.sampling_rate_hz, t.action, action_s, t.word_label);
    e.subject_id = trials.subject_id;
    out.epochs.push_back(std::move(e));
  }
  return out;
}

}  // namespace innerspeech
