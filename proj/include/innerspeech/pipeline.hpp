#pragma once

// Experiment runner: one JSON config drives data loading, preprocessing,
// feature extraction, per-fold scaling/reduction, model fitting and reports.

#include <bit>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "innerspeech/core.hpp"
#include "innerspeech/dsp.hpp"
#include "innerspeech/error.hpp"
#include "innerspeech/eval.hpp"
#include "innerspeech/features.hpp"
#include "innerspeech/gbt.hpp"
#include "innerspeech/hash.hpp"
#include "innerspeech/neural.hpp"
#include "innerspeech/svm.hpp"
#include "innerspeech/synth.hpp"

namespace innerspeech::pipeline {

enum class Task { BinaryRestAction, MulticlassWords };
enum class Classifier { Svm, Gbt, Lstm, BiLstm };
enum class ChannelSet { All, LeftHemisphere };
enum class Reduction { None, Pca, Gain, GainIntersect };
enum class Scheme { KFold, Nested };

namespace detail {

template <typename E>
struct Names {
  static const std::vector<std::pair<E, const char*>>& table();
};

template <>
inline const std::vector<std::pair<Task, const char*>>& Names<Task>::table() {
  static const std::vector<std::pair<Task, const char*>> t{{Task::BinaryRestAction, "binary_rest_action"},
                                                           {Task::MulticlassWords, "multiclass_words"}};
  return t;
}
template <>
inline const std::vector<std::pair<Classifier, const char*>>& Names<Classifier>::table() {
  static const std::vector<std::pair<Classifier, const char*>> t{
      {Classifier::Svm, "svm"}, {Classifier::Gbt, "gbt"}, {Classifier::Lstm, "lstm"}, {Classifier::BiLstm, "bilstm"}};
  return t;
}
template <>
inline const std::vector<std::pair<ChannelSet, const char*>>& Names<ChannelSet>::table() {
  static const std::vector<std::pair<ChannelSet, const char*>> t{{ChannelSet::All, "all"},
                                                                 {ChannelSet::LeftHemisphere, "left_hemisphere"}};
  return t;
}
template <>
inline const std::vector<std::pair<Reduction, const char*>>& Names<Reduction>::table() {
  static const std::vector<std::pair<Reduction, const char*>> t{{Reduction::None, "none"},
                                                                {Reduction::Pca, "pca"},
                                                                {Reduction::Gain, "gain"},
                                                                {Reduction::GainIntersect, "gain_intersect"}};
  return t;
}
template <>
inline const std::vector<std::pair<Scheme, const char*>>& Names<Scheme>::table() {
  static const std::vector<std::pair<Scheme, const char*>> t{{Scheme::KFold, "kfold"}, {Scheme::Nested, "nested"}};
  return t;
}

}  // namespace detail

template <typename E>
const char* to_string(E e) {
  for (const auto& [v, n] : detail::Names<E>::table()) {
    if (v == e) return n;
  }
  return "?";
}

template <typename E>
E parse_enum(const std::string& s, const char* what) {
  for (const auto& [v, n] : detail::Names<E>::table()) {
    if (s == n) return v;
  }
  std::string opts;
  for (const auto& [v, n] : detail::Names<E>::table()) opts += std::string(opts.empty() ? "" : ", ") + n;
  throw Error(ErrorCode::ConfigInvalid, "cli", "unknown " + std::string(what) + " '" + s + "' (expected " + opts + ")");
}

inline bool is_neural(Classifier c) { return c == Classifier::Lstm || c == Classifier::BiLstm; }

// ---------------------------------------------------------------------------
// Config

struct SubjectSource {
  std::string id;
  std::filesystem::path epochs;  // action epochs (word labels)
  std::filesystem::path rest;    // rest epochs, binary task only

  bool operator==(const SubjectSource&) const = default;
};

struct SynthSource {
  double snr = 10.0;
  std::uint64_t seed = 0;
  std::size_t n_trials_per_class = 100;
  std::size_t n_subjects = 1;
  double rest_s = 1.5;

  bool operator==(const SynthSource&) const = default;
};

struct NetworkSettings {
  std::size_t hidden = 64;
  std::size_t dense1 = 64;
  std::size_t dense2 = 32;
  double dropout1 = 0.4;
  double dropout2 = 0.4;
};

struct ModelSettings {
  svm::SvmParams svm;
  gbt::GbtParams gbt;
  gbt::GbtParams importance;  // booster used only to rank features for gain selection
  NetworkSettings network;
  neural::TrainConfig train;
  double val_fraction = 0.2;  // held out of each training split for early stopping
};

struct WindowSettings {
  bool enabled = false;
  double width_s = 0.5;
  double overlap = 0.5;
};

struct PipelineConfig {
  std::string preset;  // informational
  std::vector<SubjectSource> subjects;
  std::optional<SynthSource> synth;
  std::string preprocess = "none";
  Task task = Task::MulticlassWords;
  neural::InputKind input = neural::InputKind::PsdFeatures;
  Classifier classifier = Classifier::Svm;
  ChannelSet channels = ChannelSet::All;
  Reduction reduction = Reduction::None;
  double pca_variance = 0.99;
  double gain_threshold = 0.95;
  Scheme scheme = Scheme::KFold;
  std::size_t outer_k = 4;
  std::size_t inner_k = 3;
  bool stratified = true;
  double rest_s = 1.5;
  double action_s = 2.5;
  ModelSettings model;
  std::vector<nlohmann::json> grid;  // merge patches over the "model" object
  WindowSettings windows;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "out";
  std::size_t jobs = 1;

  std::size_t grid_size() const { return grid.empty() ? 1 : grid.size(); }
};

inline nlohmann::json to_json(const svm::SvmParams& p) {
  nlohmann::json j{{"C", p.C},
                   {"kernel", svm::to_string(p.kernel)},
                   {"tolerance", p.tolerance},
                   {"max_iterations", p.max_iterations}};
  j["gamma"] = p.gamma ? nlohmann::json(*p.gamma) : nlohmann::json();
  return j;
}

inline nlohmann::json to_json(const gbt::GbtParams& p) {
  return {{"n_rounds", p.n_rounds},
          {"max_depth", p.max_depth},
          {"learning_rate", p.learning_rate},
          {"lambda", p.lambda},
          {"min_child_weight", p.min_child_weight}};
}

inline nlohmann::json to_json(const neural::TrainConfig& t) {
  return {{"learning_rate", t.learning_rate}, {"momentum", t.momentum}, {"batch_size", t.batch_size},
          {"max_epochs", t.max_epochs},       {"patience", t.patience}, {"clip_norm", t.clip_norm}};
}

inline nlohmann::json to_json(const ModelSettings& m) {
  return {{"svm", to_json(m.svm)},
          {"gbt", to_json(m.gbt)},
          {"importance", to_json(m.importance)},
          {"network",
           {{"hidden", m.network.hidden},
            {"dense1", m.network.dense1},
            {"dense2", m.network.dense2},
            {"dropout1", m.network.dropout1},
            {"dropout2", m.network.dropout2}}},
          {"train", to_json(m.train)},
          {"val_fraction", m.val_fraction}};
}

namespace detail {

// Reads only the keys present, so partial documents override defaults.
template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorCode::ConfigInvalid, "cli", where + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (std::find_if(keys.begin(), keys.end(), [&](const char* s) { return k == s; }) == keys.end()) {
      throw Error(ErrorCode::ConfigInvalid, "cli", "unknown key '" + k + "' in " + where);
    }
  }
}

inline void read_gbt(const nlohmann::json& j, gbt::GbtParams& p, const std::string& where) {
  reject_unknown(j, {"n_rounds", "max_depth", "learning_rate", "lambda", "min_child_weight"}, where);
  read(j, "n_rounds", p.n_rounds);
  read(j, "max_depth", p.max_depth);
  read(j, "learning_rate", p.learning_rate);
  read(j, "lambda", p.lambda);
  read(j, "min_child_weight", p.min_child_weight);
}

}  // namespace detail

inline ModelSettings model_from_json(const nlohmann::json& j, ModelSettings m = {}) {
  using detail::read;
  detail::reject_unknown(j, {"svm", "gbt", "importance", "network", "train", "val_fraction"}, "model");
  if (j.contains("svm")) {
    const auto& s = j["svm"];
    detail::reject_unknown(s, {"C", "kernel", "gamma", "tolerance", "max_iterations"}, "model.svm");
    read(s, "C", m.svm.C);
    if (s.contains("kernel")) m.svm.kernel = svm::kernel_from_string(s["kernel"].get<std::string>());
    if (s.contains("gamma")) {
      m.svm.gamma = s["gamma"].is_null() ? std::nullopt : std::optional<double>(s["gamma"].get<double>());
    }
    read(s, "tolerance", m.svm.tolerance);
    read(s, "max_iterations", m.svm.max_iterations);
  }
  if (j.contains("gbt")) detail::read_gbt(j["gbt"], m.gbt, "model.gbt");
  if (j.contains("importance")) detail::read_gbt(j["importance"], m.importance, "model.importance");
  if (j.contains("network")) {
    const auto& n = j["network"];
    detail::reject_unknown(n, {"hidden", "dense1", "dense2", "dropout1", "dropout2"}, "model.network");
    read(n, "hidden", m.network.hidden);
    read(n, "dense1", m.network.dense1);
    read(n, "dense2", m.network.dense2);
    read(n, "dropout1", m.network.dropout1);
    read(n, "dropout2", m.network.dropout2);
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    detail::reject_unknown(t, {"learning_rate", "momentum", "batch_size", "max_epochs", "patience", "clip_norm"},
                           "model.train");
    read(t, "learning_rate", m.train.learning_rate);
    read(t, "momentum", m.train.momentum);
    read(t, "batch_size", m.train.batch_size);
    read(t, "max_epochs", m.train.max_epochs);
    read(t, "patience", m.train.patience);
    read(t, "clip_norm", m.train.clip_norm);
  }
  read(j, "val_fraction", m.val_fraction);
  return m;
}

inline nlohmann::json to_json(const PipelineConfig& c) {
  nlohmann::json subjects = nlohmann::json::array();
  for (const auto& s : c.subjects) {
    nlohmann::json js{{"id", s.id}, {"epochs", s.epochs.string()}};
    if (!s.rest.empty()) js["rest"] = s.rest.string();
    subjects.push_back(js);
  }
  nlohmann::json data{{"subjects", subjects}};
  if (c.synth) {
    data["synth"] = {{"snr", c.synth->snr},
                     {"seed", c.synth->seed},
                     {"n_trials_per_class", c.synth->n_trials_per_class},
                     {"n_subjects", c.synth->n_subjects},
                     {"rest_s", c.synth->rest_s}};
  }
  nlohmann::json reduction{{"kind", to_string(c.reduction)}};
  if (c.reduction == Reduction::Pca) reduction["variance"] = c.pca_variance;
  if (c.reduction == Reduction::Gain || c.reduction == Reduction::GainIntersect) reduction["threshold"] = c.gain_threshold;
  return {{"preset", c.preset},
          {"data", data},
          {"preprocess", c.preprocess},
          {"task", to_string(c.task)},
          {"input", neural::to_string(c.input)},
          {"classifier", to_string(c.classifier)},
          {"channels", to_string(c.channels)},
          {"reduction", reduction},
          {"eval",
           {{"scheme", to_string(c.scheme)},
            {"outer_k", c.outer_k},
            {"inner_k", c.inner_k},
            {"stratified", c.stratified}}},
          {"intervals", {{"rest_s", c.rest_s}, {"action_s", c.action_s}}},
          {"model", to_json(c.model)},
          {"grid", c.grid},
          {"windows", {{"enabled", c.windows.enabled}, {"width_s", c.windows.width_s}, {"overlap", c.windows.overlap}}},
          {"seed", c.seed},
          {"output_dir", c.output_dir.string()},
          {"jobs", c.jobs}};
}

/// Applies the keys present in `j` on top of `base`.
inline PipelineConfig config_from_json(const nlohmann::json& j, PipelineConfig c = {}) {
  using detail::read;
  try {
    detail::reject_unknown(j,
                           {"preset", "data", "preprocess", "task", "input", "classifier", "channels", "reduction", "eval",
                            "intervals", "model", "grid", "windows", "seed", "output_dir", "jobs"},
                           "config");
    read(j, "preset", c.preset);
    if (j.contains("data")) {
      const auto& d = j["data"];
      detail::reject_unknown(d, {"subjects", "synth"}, "data");
      if (d.contains("subjects")) {
        c.subjects.clear();
        for (const auto& js : d["subjects"]) {
          detail::reject_unknown(js, {"id", "epochs", "rest"}, "data.subjects[]");
          SubjectSource s;
          s.id = js.at("id").get<std::string>();
          s.epochs = js.at("epochs").get<std::string>();
          if (js.contains("rest")) s.rest = js["rest"].get<std::string>();
          c.subjects.push_back(std::move(s));
        }
      }
      if (d.contains("synth")) {
        if (d["synth"].is_null()) {
          c.synth.reset();
        } else {
          const auto& s = d["synth"];
          detail::reject_unknown(s, {"snr", "seed", "n_trials_per_class", "n_subjects", "rest_s"}, "data.synth");
          SynthSource src = c.synth.value_or(SynthSource{});
          read(s, "snr", src.snr);
          read(s, "seed", src.seed);
          read(s, "n_trials_per_class", src.n_trials_per_class);
          read(s, "n_subjects", src.n_subjects);
          read(s, "rest_s", src.rest_s);
          c.synth = src;
        }
      }
    }
    read(j, "preprocess", c.preprocess);
    if (j.contains("task")) c.task = parse_enum<Task>(j["task"].get<std::string>(), "task");
    if (j.contains("input")) c.input = neural::input_kind_from_string(j["input"].get<std::string>());
    if (j.contains("classifier")) c.classifier = parse_enum<Classifier>(j["classifier"].get<std::string>(), "classifier");
    if (j.contains("channels")) c.channels = parse_enum<ChannelSet>(j["channels"].get<std::string>(), "channel set");
    if (j.contains("reduction")) {
      const auto& r = j["reduction"];
      detail::reject_unknown(r, {"kind", "variance", "threshold"}, "reduction");
      if (r.contains("kind")) c.reduction = parse_enum<Reduction>(r["kind"].get<std::string>(), "reduction");
      read(r, "variance", c.pca_variance);
      read(r, "threshold", c.gain_threshold);
    }
    if (j.contains("eval")) {
      const auto& e = j["eval"];
      detail::reject_unknown(e, {"scheme", "outer_k", "inner_k", "stratified"}, "eval");
      if (e.contains("scheme")) c.scheme = parse_enum<Scheme>(e["scheme"].get<std::string>(), "eval scheme");
      read(e, "outer_k", c.outer_k);
      read(e, "inner_k", c.inner_k);
      read(e, "stratified", c.stratified);
    }
    if (j.contains("intervals")) {
      detail::reject_unknown(j["intervals"], {"rest_s", "action_s"}, "intervals");
      read(j["intervals"], "rest_s", c.rest_s);
      read(j["intervals"], "action_s", c.action_s);
    }
    if (j.contains("model")) c.model = model_from_json(j["model"], c.model);
    if (j.contains("grid")) c.grid = j["grid"].get<std::vector<nlohmann::json>>();
    if (j.contains("windows")) {
      const auto& w = j["windows"];
      detail::reject_unknown(w, {"enabled", "width_s", "overlap"}, "windows");
      read(w, "enabled", c.windows.enabled);
      read(w, "width_s", c.windows.width_s);
      read(w, "overlap", c.windows.overlap);
    }
    read(j, "seed", c.seed);
    if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
    read(j, "jobs", c.jobs);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, "cli", std::string("bad config: ") + e.what());
  }
  return c;
}

/// Model settings for one grid point.
inline ModelSettings model_at(const PipelineConfig& c, std::size_t grid_index) {
  if (c.grid.empty()) return c.model;
  auto j = to_json(c.model);
  j.merge_patch(c.grid.at(grid_index));
  try {
    return model_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, "cli", std::string("bad grid point: ") + e.what());
  }
}

/// Hash of every field that can change results; preset name, output
/// directory and job count are excluded.
inline std::string fingerprint(const PipelineConfig& c) {
  auto j = to_json(c);
  j.erase("preset");
  j.erase("output_dir");
  j.erase("jobs");
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a(j.dump());
  return os.str();
}

/// Structural checks that need no data; file existence included so a bad
/// path fails before any compute.
inline void validate(const PipelineConfig& c) {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::ConfigInvalid, "cli", what); };
  if (c.subjects.empty() && !c.synth) bad("no data: give data.subjects or data.synth");
  if (!c.subjects.empty() && c.synth) bad("data.subjects and data.synth are mutually exclusive");
  const bool raw = c.input != neural::InputKind::PsdFeatures;
  if (raw && !is_neural(c.classifier)) bad(std::string(neural::to_string(c.input)) + " input needs an lstm or bilstm classifier");
  if (c.input == neural::InputKind::RawAll && c.reduction != Reduction::None) bad("raw_all takes no feature reduction");
  if (c.input == neural::InputKind::RawSelected && c.reduction != Reduction::Gain && c.reduction != Reduction::GainIntersect) {
    bad("raw_selected picks channels by gain; set reduction to gain or gain_intersect");
  }
  if (raw && c.task == Task::BinaryRestAction) bad("rest and action epochs differ in length; raw inputs need the multiclass task");
  if (c.windows.enabled && c.task != Task::BinaryRestAction) bad("windowed analysis belongs to the binary task");
  if (!(c.pca_variance > 0.0 && c.pca_variance <= 1.0)) bad("reduction.variance must lie in (0, 1]");
  if (!(c.gain_threshold > 0.0 && c.gain_threshold <= 1.0)) bad("reduction.threshold must lie in (0, 1]");
  if (c.outer_k < 2 || (c.scheme == Scheme::Nested && c.inner_k < 2)) bad("fold counts must be at least 2");
  if (c.scheme == Scheme::KFold && c.grid.size() > 1) bad("a hyper-parameter grid needs the nested scheme");
  if (!(c.model.val_fraction > 0.0 && c.model.val_fraction < 1.0)) bad("model.val_fraction must lie in (0, 1)");
  if (c.jobs == 0) bad("jobs must be at least 1");
  if (c.preprocess != "none") dsp::profile_by_name(c.preprocess);
  for (std::size_t g = 0; g < c.grid_size(); ++g) {
    const auto m = model_at(c, g);
    m.train.validate();
    if (m.svm.C <= 0) bad("svm C must be positive");
  }
  if (c.synth) {
    if (c.synth->n_subjects == 0 || c.synth->n_trials_per_class == 0) bad("synthetic source is empty");
    if (!(c.synth->snr >= 0)) bad("synth snr must be >= 0");
  }
  for (const auto& s : c.subjects) {
    auto need = [&](const std::filesystem::path& base, const char* role) {
      for (const auto& p : {innerspeech::detail::header_path(base), innerspeech::detail::tensor_path(base)}) {
        if (!std::filesystem::exists(p)) bad("subject " + s.id + ": " + role + " file missing: " + p.string());
      }
    };
    need(s.epochs, "epochs");
    if (c.task == Task::BinaryRestAction) {
      if (s.rest.empty()) bad("subject " + s.id + ": binary task needs a rest set");
      need(s.rest, "rest");
    }
  }
}

// ---------------------------------------------------------------------------
// Presets

/// Named configs for the comparison table rows, the binary analyses and the
/// synthetic end-to-end run. Data sources are left for the caller to fill in.
inline std::map<std::string, PipelineConfig> presets() {
  std::map<std::string, PipelineConfig> out;
  auto base = [](const std::string& name) {
    PipelineConfig c;
    c.preset = name;
    c.preprocess = "thinking-out-loud";
    return c;
  };
  {
    auto c = base("svm-psd-left-pca");
    c.classifier = Classifier::Svm;
    c.channels = ChannelSet::LeftHemisphere;
    c.reduction = Reduction::Pca;
    out[c.preset] = c;
  }
  {
    auto c = base("gbt-psd-pca");
    c.classifier = Classifier::Gbt;
    c.reduction = Reduction::Pca;
    out[c.preset] = c;
  }
  for (auto front : {Classifier::Lstm, Classifier::BiLstm}) {
    const std::string f = to_string(front);
    auto neural_base = [&](const std::string& suffix) {
      auto c = base(f + suffix);
      c.classifier = front;
      c.scheme = Scheme::Nested;
      c.grid = {nlohmann::json{{"train", {{"learning_rate", 0.01}}}}, nlohmann::json{{"train", {{"learning_rate", 0.1}}}}};
      return c;
    };
    auto feat = neural_base("-psd-gain");
    feat.input = neural::InputKind::PsdFeatures;
    feat.reduction = Reduction::Gain;
    out[feat.preset] = feat;
    auto all = neural_base("-raw-all");
    all.input = neural::InputKind::RawAll;
    out[all.preset] = all;
    auto sel = neural_base("-raw-selected");
    sel.input = neural::InputKind::RawSelected;
    sel.reduction = Reduction::Gain;
    out[sel.preset] = sel;
  }
  {
    auto c = base("binary-svm-gain");
    c.task = Task::BinaryRestAction;
    c.classifier = Classifier::Svm;
    c.reduction = Reduction::Gain;
    c.gain_threshold = 0.90;
    out[c.preset] = c;
  }
  {
    auto c = base("binary-gbt-pca");
    c.task = Task::BinaryRestAction;
    c.classifier = Classifier::Gbt;
    c.reduction = Reduction::Pca;
    out[c.preset] = c;
  }
  {
    auto c = base("binary-windows");
    c.task = Task::BinaryRestAction;
    c.classifier = Classifier::Svm;
    c.reduction = Reduction::Gain;
    c.gain_threshold = 0.90;
    c.windows.enabled = true;
    out[c.preset] = c;
  }
  {
    // Small BiLSTM sized for the synthetic 4-class set on one CPU.
    auto c = base("synth-bilstm-raw-all");
    c.preprocess = "none";
    c.synth = SynthSource{};
    c.classifier = Classifier::BiLstm;
    c.input = neural::InputKind::RawAll;
    c.model.network = {16, 32, 16, 0.4, 0.4};
    c.model.train.learning_rate = 0.05;
    c.model.train.max_epochs = 20;
    c.model.train.patience = 6;
    out[c.preset] = c;
  }
  return out;
}

inline PipelineConfig preset(const std::string& name) {
  const auto all = presets();
  auto it = all.find(name);
  if (it == all.end()) throw Error(ErrorCode::ConfigInvalid, "cli", "unknown preset '" + name + "'");
  return it->second;
}

// ---------------------------------------------------------------------------
// Data

struct SubjectData {
  std::string id;
  EpochSet set;                              // task labels; binary sets hold rest then action epochs
  std::optional<RestActionSets> rest_action;  // binary task only
};

namespace detail {

inline EpochSet prepare(EpochSet set, const PipelineConfig& c) {
  if (c.preprocess != "none") set = dsp::preprocess(set, dsp::profile_by_name(c.preprocess));
  if (c.channels == ChannelSet::LeftHemisphere) set = select_channels(set, hemisphere_is(Hemisphere::Left));
  return set;
}

inline EpochSet crop(EpochSet set, double seconds) {
  const auto n = samples_for(seconds, set.sampling_rate_hz);
  for (auto& e : set.epochs) {
    if (e.n_timesteps < n) {
      throw Error(ErrorCode::IntervalTooShort, "cli",
                  "epoch of " + std::to_string(e.n_timesteps) + " samples, need " + std::to_string(n));
    }
    if (e.n_timesteps == n) continue;
    Epoch r(e.n_channels, n, e.label);
    r.interval = e.interval;
    r.subject_id = e.subject_id;
    for (std::size_t ch = 0; ch < e.n_channels; ++ch) {
      auto src = e.channel(ch);
      std::copy(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(n), r.channel(ch).begin());
    }
    e = std::move(r);
  }
  return set;
}

inline SubjectData binary_subject(std::string id, RestActionSets sets) {
  SubjectData d;
  d.id = std::move(id);
  for (auto& e : sets.rest.epochs) e.label = 0;
  for (auto& e : sets.action.epochs) e.label = 1;
  sets.rest.class_names = sets.action.class_names = {"rest", "action"};
  d.set = sets.rest.with_metadata_only();
  for (const auto& e : sets.rest.epochs) d.set.epochs.push_back(e);
  for (const auto& e : sets.action.epochs) d.set.epochs.push_back(e);
  d.rest_action = std::move(sets);
  return d;
}

}  // namespace detail

inline std::vector<SubjectData> load_subjects(const PipelineConfig& c) {
  std::vector<SubjectData> out;
  if (c.synth) {
    for (std::size_t s = 0; s < c.synth->n_subjects; ++s) {
      auto spec = synth::default_4class_spec(c.synth->snr, c.synth->seed + s);
      spec.n_trials_per_class = c.synth->n_trials_per_class;
      spec.subject_id = "synth-" + std::to_string(s + 1);
      if (c.task == Task::MulticlassWords) {
        out.push_back({spec.subject_id, detail::prepare(synth::generate(spec), c), std::nullopt});
      } else {
        auto sets = split_rest_action_sets(synth::generate_trials(spec, c.synth->rest_s), c.rest_s, c.action_s);
        sets.rest = detail::prepare(sets.rest, c);
        sets.action = detail::prepare(sets.action, c);
        out.push_back(detail::binary_subject(spec.subject_id, std::move(sets)));
      }
    }
    return out;
  }
  for (const auto& src : c.subjects) {
    auto action = detail::crop(load_epochset(src.epochs), c.action_s);
    action.subject_id = src.id;
    if (c.task == Task::MulticlassWords) {
      out.push_back({src.id, detail::prepare(std::move(action), c), std::nullopt});
    } else {
      RestActionSets sets{detail::crop(load_epochset(src.rest), c.rest_s), std::move(action)};
      sets.rest.subject_id = src.id;
      sets.rest = detail::prepare(sets.rest, c);
      sets.action = detail::prepare(sets.action, c);
      out.push_back(detail::binary_subject(src.id, std::move(sets)));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Feature cache (INNERSPEECH_CACHE), keyed by data content and feature settings

namespace detail {

inline std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

inline std::string feature_key(const EpochSet& set, std::span<const dsp::BandDef> bands, const dsp::WelchParams& w) {
  Fnv1a h;
  for (const auto& e : set.epochs) {
    h.add(std::span<const float>(e.data));
    h.add(&e.label, sizeof e.label);
    h.add(&e.n_timesteps, sizeof e.n_timesteps);
  }
  nlohmann::json meta{{"fs", set.sampling_rate_hz}, {"seg_s", w.seg_s}, {"overlap", w.overlap_frac},
                      {"taper", static_cast<int>(w.taper)}, {"detrend", static_cast<int>(w.detrend)},
                      {"reference", static_cast<int>(w.reference)}};
  for (const auto& c : set.channels) meta["channels"].push_back(c.name);
  for (const auto& b : bands) meta["bands"].push_back({b.name, b.low_hz, b.high_hz, b.truncated});
  h.add(meta.dump());
  return hex(h.value());
}

inline std::optional<features::FeatureMatrix> cache_read(const std::filesystem::path& dir, const std::string& key) {
  std::ifstream js(dir / ("features-" + key + ".json"));
  std::ifstream bs(dir / ("features-" + key + ".f64"), std::ios::binary);
  if (!js || !bs) return std::nullopt;
  try {
    const auto j = nlohmann::json::parse(js);
    features::FeatureMatrix fm;
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    fm.labels = j.at("labels").get<std::vector<int>>();
    for (const auto& p : j.at("provenance")) {
      fm.provenance.push_back({p.at(0).get<std::string>(), p.at(1).get<std::string>(), -1, p.at(2).get<bool>()});
    }
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
    bs.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double)));
    if (!bs) return std::nullopt;
    fm.values = rm;
    fm.validate();
    return fm;
  } catch (const std::exception&) {
    return std::nullopt;  // unreadable entries are recomputed
  }
}

inline void cache_write(const std::filesystem::path& dir, const std::string& key, const features::FeatureMatrix& fm) {
  static_assert(std::endian::native == std::endian::little, "cache files are little-endian");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) return;
  nlohmann::json j{{"rows", fm.values.rows()}, {"cols", fm.values.cols()}, {"labels", fm.labels}};
  for (const auto& p : fm.provenance) j["provenance"].push_back({p.channel, p.band, p.truncated_band});
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = fm.values;
  const auto tmp = dir / ("features-" + key + ".f64.tmp");
  {
    std::ofstream bs(tmp, std::ios::binary);
    bs.write(reinterpret_cast<const char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double)));
    if (!bs) return;
  }
  std::filesystem::rename(tmp, dir / ("features-" + key + ".f64"), ec);
  std::ofstream(dir / ("features-" + key + ".json")) << j.dump() << '\n';
}

}  // namespace detail

inline std::optional<std::filesystem::path> cache_dir() {
  const char* v = std::getenv("INNERSPEECH_CACHE");
  if (!v || !*v) return std::nullopt;
  return std::filesystem::path(v);
}

inline features::FeatureMatrix subject_features(const SubjectData& d, const PipelineConfig& c) {
  const auto bands = dsp::bands_for_profile(c.preprocess);
  const dsp::WelchParams welch;
  const auto dir = cache_dir();
  std::string key;
  if (dir) {
    key = detail::feature_key(d.set, bands, welch);
    if (auto hit = detail::cache_read(*dir, key)) return *hit;
  }
  auto fm = features::build_feature_matrix(d.set, bands, welch);
  if (dir) detail::cache_write(*dir, key, fm);
  return fm;
}

// ---------------------------------------------------------------------------
// One fitted pipeline: scaling -> reduction -> classifier, all from training rows

struct Fitted {
  std::optional<features::Standardizer> scaler;  // PSD inputs
  std::optional<features::PcaModel> pca;
  features::IndexSet columns;                    // kept after gain selection (empty: all)
  std::vector<std::string> channels;             // raw_selected
  std::variant<std::monostate, svm::SvmModel, gbt::GbtModel, neural::NeuralArtifact> model;
  std::vector<neural::EpochRecord> history;
  std::vector<std::string> warnings;
};

/// Shared per-subject inputs for fitting.
struct SubjectContext {
  const SubjectData* data = nullptr;
  const features::FeatureMatrix* features = nullptr;
  std::vector<features::IndexSet> other_selections;  // gain_intersect: full-data picks of the other subjects
};

namespace detail {

inline features::Matrix rows_of(const features::Matrix& x, std::span<const std::size_t> idx) {
  features::Matrix out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = x.row(static_cast<Eigen::Index>(idx[r]));
  return out;
}

inline features::Matrix cols_of(const features::Matrix& x, std::span<const std::size_t> cols) {
  features::Matrix out(x.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) out.col(static_cast<Eigen::Index>(c)) = x.col(static_cast<Eigen::Index>(cols[c]));
  return out;
}

inline std::vector<int> labels_of(const std::vector<int>& y, std::span<const std::size_t> idx) {
  std::vector<int> out;
  for (auto i : idx) out.push_back(y[i]);
  return out;
}

inline features::IndexSet gain_pick(const features::Matrix& x, std::span<const int> y, const gbt::GbtParams& p, double threshold) {
  return gbt::gbt_importances(gbt::gbt_train(x, y, p), threshold).selected;
}

inline std::uint64_t split_seed(std::uint64_t seed, std::span<const std::size_t> train, std::size_t grid_index) {
  Fnv1a h;
  h.add(&seed, sizeof seed);
  h.add(&grid_index, sizeof grid_index);
  h.add(train);
  return h.value();
}

/// PSD rows through the fitted scaler/PCA/column selection.
inline features::Matrix transform_psd(const Fitted& f, const features::FeatureMatrix& fm, std::span<const std::size_t> idx) {
  auto x = f.scaler->apply(rows_of(fm.values, idx));
  if (f.pca) {
    features::FeatureMatrix tmp;
    tmp.values = x;
    x = features::pca_transform(*f.pca, tmp).values;
  }
  if (!f.columns.empty()) x = cols_of(x, f.columns);
  return x;
}

inline neural::SequenceSet sequences(const Fitted& f, const PipelineConfig& c, const SubjectContext& ctx,
                                     std::span<const std::size_t> idx) {
  const auto& set = ctx.data->set;
  if (c.input == neural::InputKind::PsdFeatures) {
    features::FeatureMatrix fm;
    fm.values = transform_psd(f, *ctx.features, idx);
    fm.labels = labels_of(ctx.features->labels, idx);
    return neural::shape_input(neural::InputKind::PsdFeatures, fm, set.n_classes());
  }
  auto sub = set.subset(idx);
  if (c.input == neural::InputKind::RawSelected) {
    sub = select_channels(sub, channel_named({f.channels.begin(), f.channels.end()}));
  }
  return neural::shape_input(c.input, sub);
}

}  // namespace detail

inline Fitted fit(const PipelineConfig& c, const ModelSettings& m, const SubjectContext& ctx,
                  std::span<const std::size_t> train, std::uint64_t seed) {
  Fitted f;
  const auto& fm = *ctx.features;
  const auto ytr = detail::labels_of(fm.labels, train);
  const bool need_psd = c.input != neural::InputKind::RawAll;
  if (need_psd) {
    const auto raw = detail::rows_of(fm.values, train);
    f.scaler = features::Standardizer::fit(raw);
    auto x = f.scaler->apply(raw);
    if (c.reduction == Reduction::Pca) {
      features::FeatureMatrix tmp;
      tmp.values = x;
      f.pca = features::pca_fit(tmp, c.pca_variance);
    } else if (c.reduction == Reduction::Gain || c.reduction == Reduction::GainIntersect) {
      f.columns = detail::gain_pick(x, ytr, m.importance, c.gain_threshold);
      if (c.reduction == Reduction::GainIntersect && !ctx.other_selections.empty()) {
        std::vector<features::IndexSet> all = ctx.other_selections;
        all.push_back(f.columns);
        auto common = features::intersect_selected(all);
        if (common.empty()) {
          f.warnings.push_back("empty cross-subject intersection; using this subject's own selection");
        } else {
          f.columns = std::move(common);
        }
      }
    }
    if (c.input == neural::InputKind::RawSelected) {
      f.channels = features::columns_to_channels(f.columns, fm.provenance);
      f.columns.clear();
    }
  }

  if (!is_neural(c.classifier)) {
    const auto x = detail::transform_psd(f, fm, train);
    if (c.classifier == Classifier::Svm) {
      f.model = svm::svm_train(x, ytr, m.svm);
    } else {
      f.model = gbt::gbt_train(x, ytr, m.gbt);
    }
    return f;
  }

  // Hold out a stratified slice of the training rows for early stopping.
  const auto n_hold = static_cast<std::size_t>(std::max(2.0, std::round(1.0 / m.val_fraction)));
  const auto hold = eval::kfold(train.size(), ytr, n_hold, true, seed);
  const auto fit_idx = eval::detail::pick(train, hold.train_indices(0));
  const auto val_idx = eval::detail::pick(train, hold.test_indices(0));
  auto tr = detail::sequences(f, c, ctx, fit_idx);
  auto va = detail::sequences(f, c, ctx, val_idx);

  neural::NeuralArtifact a;
  a.input = c.input;
  a.class_names = ctx.data->set.class_names;
  a.scaler = neural::Scaler::fit(tr);
  a.scaler.apply(tr);
  a.scaler.apply(va);
  a.spec.front = c.classifier == Classifier::Lstm ? neural::FrontKind::Lstm : neural::FrontKind::BiLstm;
  a.spec.input_size = tr.features;
  a.spec.hidden = m.network.hidden;
  a.spec.dense1 = m.network.dense1;
  a.spec.dense2 = m.network.dense2;
  a.spec.dropout1 = m.network.dropout1;
  a.spec.dropout2 = m.network.dropout2;
  a.spec.n_classes = ctx.data->set.n_classes();
  auto cfg = m.train;
  cfg.seed = seed;
  auto res = neural::train<float>(a.spec, tr, va, cfg);
  a.params = std::move(res.params);
  f.history = std::move(res.history);
  f.model = std::move(a);
  return f;
}

inline std::vector<int> predict(const Fitted& f, const PipelineConfig& c, const SubjectContext& ctx,
                                std::span<const std::size_t> test) {
  if (const auto* m = std::get_if<svm::SvmModel>(&f.model)) {
    return svm::svm_predict(*m, detail::transform_psd(f, *ctx.features, test)).labels;
  }
  if (const auto* m = std::get_if<gbt::GbtModel>(&f.model)) {
    return gbt::gbt_predict(*m, detail::transform_psd(f, *ctx.features, test)).labels;
  }
  if (const auto* a = std::get_if<neural::NeuralArtifact>(&f.model)) {
    auto te = detail::sequences(f, c, ctx, test);
    a->scaler.apply(te);
    return neural::evaluate<float>(a->spec, a->params, te).predictions;
  }
  throw Error(ErrorCode::UntrainedModel, "cli", "pipeline has no fitted model");
}

// ---------------------------------------------------------------------------
// Runs

struct SubjectRun {
  eval::SubjectResult result;
  eval::CvResult cv;
  std::vector<eval::WindowResult> windows;
  std::vector<std::string> warnings;
};

struct RunResult {
  eval::EvalReport report;
  std::vector<SubjectRun> subjects;
};

inline std::string describe_input(const PipelineConfig& c) {
  std::string s = neural::to_string(c.input);
  if (c.channels == ChannelSet::LeftHemisphere) s += " (left hemisphere)";
  std::ostringstream r;
  switch (c.reduction) {
    case Reduction::None: break;
    case Reduction::Pca: r << " + pca(" << c.pca_variance << ")"; break;
    case Reduction::Gain: r << " + gain(" << c.gain_threshold << ")"; break;
    case Reduction::GainIntersect: r << " + gain_intersect(" << c.gain_threshold << ")"; break;
  }
  return s + r.str();
}

namespace detail {

inline std::vector<std::vector<features::IndexSet>> other_selections(const PipelineConfig& c,
                                                                   const std::vector<SubjectData>& subjects,
                                                                   const std::vector<features::FeatureMatrix>& fms) {
  std::vector<std::vector<features::IndexSet>> out(subjects.size());
  if (c.reduction != Reduction::GainIntersect) return out;
  std::vector<features::IndexSet> own;
  for (const auto& fm : fms) {
    const auto s = features::Standardizer::fit(fm.values);
    own.push_back(gain_pick(s.apply(fm.values), fm.labels, c.model.importance, c.gain_threshold));
  }
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    for (std::size_t j = 0; j < subjects.size(); ++j) {
      if (j != i) out[i].push_back(own[j]);
    }
  }
  return out;
}

}  // namespace detail

/// Nested (or plain) k-fold evaluation of every subject, plus the windowed
/// analysis when enabled.
inline RunResult run_eval(const PipelineConfig& c) {
  validate(c);
  const auto subjects = load_subjects(c);
  std::vector<features::FeatureMatrix> fms;
  for (const auto& s : subjects) fms.push_back(subject_features(s, c));
  const auto others = detail::other_selections(c, subjects, fms);

  RunResult rr;
  rr.subjects.resize(subjects.size());
  const std::size_t subject_jobs = std::min(c.jobs, subjects.size());
  const std::size_t fold_jobs = std::max<std::size_t>(1, c.jobs / std::max<std::size_t>(1, subject_jobs));
  eval::detail::parallel_for(subjects.size(), subject_jobs, [&](std::size_t si) {
    SubjectContext ctx{&subjects[si], &fms[si], others[si]};
    std::mutex mu;
    std::set<std::string> warnings;
    auto fit_predict = [&](std::span<const std::size_t> tr, std::span<const std::size_t> te, std::size_t g) {
      const auto f = fit(c, model_at(c, g), ctx, tr, detail::split_seed(c.seed, tr, g));
      if (!f.warnings.empty()) {
        std::lock_guard lock(mu);
        warnings.insert(f.warnings.begin(), f.warnings.end());
      }
      return predict(f, c, ctx, te);
    };
    eval::CvOptions opt;
    opt.outer_k = c.outer_k;
    opt.inner_k = c.inner_k;
    opt.stratified = c.stratified;
    opt.seed = c.seed;
    opt.jobs = fold_jobs;
    const auto labels = subjects[si].set.labels();
    const auto hashes = eval::content_hashes(subjects[si].set);
    const std::size_t grid = c.scheme == Scheme::Nested ? c.grid_size() : 1;
    auto& out = rr.subjects[si];
    out.cv = eval::nested_cv(labels, subjects[si].set.n_classes(), grid, fit_predict, opt, hashes);
    out.result = {subjects[si].id, out.cv.mean};
    if (c.windows.enabled) {
      eval::WindowedOptions w;
      w.width_s = c.windows.width_s;
      w.overlap = c.windows.overlap;
      w.rest_s = c.rest_s;
      w.action_s = c.action_s;
      w.bands = dsp::bands_for_profile(c.preprocess);
      w.svm = c.model.svm;
      w.cv = opt;
      w.cv.jobs = 1;
      if (c.reduction == Reduction::Gain || c.reduction == Reduction::GainIntersect) w.gain_threshold = c.gain_threshold;
      w.gbt = c.model.importance;
      out.windows = eval::windowed_rest_action(*subjects[si].rest_action, w);
    }
    out.warnings.assign(warnings.begin(), warnings.end());
  });

  std::vector<eval::SubjectResult> results;
  for (const auto& s : rr.subjects) results.push_back(s.result);
  rr.report = eval::make_report(results, subjects.front().set.n_classes(), fingerprint(c));
  rr.report.config = to_json(c);
  rr.report.config.erase("output_dir");
  rr.report.config.erase("jobs");
  rr.report.comparison.push_back({to_string(c.classifier), describe_input(c), rr.report.average.accuracy});
  if (c.windows.enabled) {
    const auto& first = rr.subjects.front().windows;
    for (std::size_t k = 0; k < first.size(); ++k) {
      double acc = 0.0;
      for (const auto& s : rr.subjects) acc += s.windows.at(k).accuracy / static_cast<double>(rr.subjects.size());
      rr.report.windows.push_back({first[k].window_start_s, acc});
    }
  }
  return rr;
}

/// Fits grid point `grid_index` on all of each subject's epochs and writes
/// `<out>/<subject>/model.json` (plus the network blob and history for LSTMs).
inline std::vector<std::filesystem::path> train_all(const PipelineConfig& c, std::size_t grid_index = 0) {
  validate(c);
  if (grid_index >= c.grid_size()) throw Error(ErrorCode::ConfigInvalid, "cli", "grid index out of range");
  const auto subjects = load_subjects(c);
  std::vector<features::FeatureMatrix> fms;
  for (const auto& s : subjects) fms.push_back(subject_features(s, c));
  const auto others = detail::other_selections(c, subjects, fms);
  const auto fp = fingerprint(c);
  std::vector<std::filesystem::path> written(subjects.size());
  eval::detail::parallel_for(subjects.size(), c.jobs, [&](std::size_t si) {
    SubjectContext ctx{&subjects[si], &fms[si], others[si]};
    std::vector<std::size_t> all(subjects[si].set.size());
    std::iota(all.begin(), all.end(), 0);
    const auto f = fit(c, model_at(c, grid_index), ctx, all, detail::split_seed(c.seed, all, grid_index));
    const auto dir = c.output_dir / subjects[si].id;
    std::filesystem::create_directories(dir);
    nlohmann::json j{{"kind", "pipeline"},
                     {"version", 1},
                     {"fingerprint", fp},
                     {"seed", c.seed},
                     {"subject", subjects[si].id},
                     {"classifier", to_string(c.classifier)},
                     {"input", neural::to_string(c.input)},
                     {"class_names", subjects[si].set.class_names},
                     {"columns", f.columns},
                     {"channels", f.channels},
                     {"warnings", f.warnings}};
    if (f.scaler) {
      j["standardizer"] = {{"mean", std::vector<double>(f.scaler->mean.begin(), f.scaler->mean.end())},
                           {"scale", std::vector<double>(f.scaler->scale.begin(), f.scaler->scale.end())}};
    }
    if (f.pca) j["pca"] = features::to_json(*f.pca);
    if (const auto* m = std::get_if<svm::SvmModel>(&f.model)) j["model"] = svm::to_json(*m);
    if (const auto* m = std::get_if<gbt::GbtModel>(&f.model)) j["model"] = gbt::to_json(*m);
    if (const auto* a = std::get_if<neural::NeuralArtifact>(&f.model)) {
      neural::save_artifact(*a, dir / "network");
      j["model"] = {{"artifact", "network"}};
      std::ofstream(dir / "history.csv") << neural::history_csv(f.history);
    }
    std::ofstream os(dir / "model.json");
    os << j.dump(2) << '\n';
    if (!os) throw Error(ErrorCode::IoFailure, "cli", "cannot write " + (dir / "model.json").string());
    written[si] = dir / "model.json";
  });
  return written;
}

// ---------------------------------------------------------------------------
// Dataset diagnostics

struct Diagnostics {
  bool ok = true;
  std::vector<std::string> lines;
};

/// Header/tensor consistency, class balance and per-channel variance outliers.
/// Never throws for data problems; they become diagnostic lines.
inline Diagnostics diagnose(const std::filesystem::path& base) {
  Diagnostics d;
  auto fail = [&](const std::string& s) {
    d.ok = false;
    d.lines.push_back("FAIL " + s);
  };
  const auto hp = innerspeech::detail::header_path(base);
  const auto tp = innerspeech::detail::tensor_path(base);
  nlohmann::json h;
  {
    std::ifstream hs(hp);
    if (!hs) {
      fail("cannot open header " + hp.string());
      return d;
    }
    try {
      h = nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
      fail(std::string("header is not valid JSON: ") + e.what());
      return d;
    }
  }
  try {
    const auto n = h.at("n_epochs").get<std::uint64_t>();
    const auto ch = h.at("n_channels").get<std::uint64_t>();
    const auto t = h.at("n_timesteps").get<std::uint64_t>();
    const std::uint64_t expected = n * ch * t * 4;
    std::error_code ec;
    const auto actual = std::filesystem::file_size(tp, ec);
    if (ec) {
      fail("cannot stat tensor " + tp.string());
      return d;
    }
    if (actual != expected) {
      fail("tensor size mismatch: expected " + std::to_string(expected) + " bytes (" + std::to_string(n) + " x " +
           std::to_string(ch) + " x " + std::to_string(t) + " x 4), found " + std::to_string(actual));
      return d;
    }
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("header missing shape fields: ") + e.what());
    return d;
  }
  EpochSet set;
  try {
    set = load_epochset(base);
  } catch (const Error& e) {
    fail(e.what());
    return d;
  }
  d.lines.push_back("OK " + std::to_string(set.size()) + " epochs x " + std::to_string(set.n_channels()) + " channels x " +
                    std::to_string(set.n_timesteps()) + " samples @ " + eval::detail::fixed(set.sampling_rate_hz, 1) + " Hz");
  const auto counts = class_counts(set);
  std::string cc = "class counts:";
  for (std::size_t k = 0; k < counts.size(); ++k) cc += " " + set.class_names[k] + "=" + std::to_string(counts[k]);
  d.lines.push_back(cc);
  if (!counts.empty() && *std::min_element(counts.begin(), counts.end()) != *std::max_element(counts.begin(), counts.end())) {
    d.lines.push_back("WARN classes are unbalanced");
  }
  std::vector<double> var(set.n_channels(), 0.0);
  for (std::size_t c = 0; c < set.n_channels(); ++c) {
    double s = 0, sq = 0;
    std::size_t m = 0;
    for (const auto& e : set.epochs) {
      for (float v : e.channel(c)) {
        s += v;
        sq += static_cast<double>(v) * v;
        ++m;
      }
    }
    if (m > 0) var[c] = std::max(0.0, sq / static_cast<double>(m) - (s / static_cast<double>(m)) * (s / static_cast<double>(m)));
  }
  auto sorted = var;
  std::sort(sorted.begin(), sorted.end());
  const double median = sorted.empty() ? 0.0 : sorted[sorted.size() / 2];
  for (std::size_t c = 0; c < var.size(); ++c) {
    const auto& name = set.channels[c].name;
    if (var[c] <= 1e-12 || (median > 0 && var[c] < 1e-6 * median)) {
      d.lines.push_back("WARN dead channel " + name + " (variance " + eval::detail::fixed(var[c], 6) + ")");
    } else if (median > 0 && var[c] > 100.0 * median) {
      d.lines.push_back("WARN channel " + name + " variance " + eval::detail::fixed(var[c], 3) + " is over 100x the median");
    }
  }
  return d;
}

}  // namespace innerspeech::pipeline
