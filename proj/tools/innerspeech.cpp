// innerspeech: command-line runner for the EEG inner-speech pipeline.
//
// Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure.

#include <chrono>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "innerspeech/pipeline.hpp"

namespace is = innerspeech;
namespace pl = innerspeech::pipeline;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

int exit_code(is::ErrorKind k) {
  switch (k) {
    case is::ErrorKind::Config: return kExitConfig;
    case is::ErrorKind::Numeric: return kExitNumeric;
    case is::ErrorKind::Data: return kExitData;
  }
  return kExitData;
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw is::Error(is::ErrorCode::ConfigInvalid, "cli", "cannot open " + path);
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw is::Error(is::ErrorCode::ConfigInvalid, "cli", path + ": " + e.what());
  }
}

std::pair<std::string, std::string> split_pair(const std::string& s, const char* flag) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw is::Error(is::ErrorCode::ConfigInvalid, "cli", std::string(flag) + " expects KEY=VALUE, got '" + s + "'");
  }
  return {s.substr(0, eq), s.substr(eq + 1)};
}

// "model.train.patience=5" -> {"model":{"train":{"patience":5}}}; values that
// do not parse as JSON are taken as strings.
nlohmann::json dotted_patch(const std::string& assignment) {
  auto [key, raw] = split_pair(assignment, "--set");
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    value = raw;
  }
  std::vector<std::string> parts;
  std::stringstream ss(key);
  for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) value = nlohmann::json{{*it, value}};
  return value;
}

// Options shared by `train` and `eval`; applied as preset -> config file -> flags.
struct ConfigFlags {
  std::string preset;
  std::string config_file;
  std::vector<std::string> data, rest, sets;
  std::optional<double> synth_snr;
  std::optional<std::uint64_t> synth_seed;
  std::optional<std::size_t> synth_trials, synth_subjects;
  std::string task, input, classifier, channels, reduction, scheme, preprocess;
  std::optional<double> pca_variance, gain_threshold, lr;
  std::optional<std::size_t> outer_k, inner_k, hidden, epochs, jobs;
  std::optional<std::uint64_t> seed;
  bool plain_folds = false;
  std::string out;
  bool print_config = false;
  bool list_presets = false;

  void attach(CLI::App* app) {
    app->add_option("--preset", preset, "start from a named preset (see --list-presets)");
    app->add_option("--config", config_file, "JSON config document");
    app->add_option("--data", data, "subject epochs as ID=BASE (repeatable)");
    app->add_option("--rest", rest, "subject rest epochs as ID=BASE, binary task (repeatable)");
    app->add_option("--synth-snr", synth_snr, "use the synthetic 4-class set at this snr");
    app->add_option("--synth-seed", synth_seed);
    app->add_option("--synth-trials", synth_trials, "synthetic trials per class");
    app->add_option("--synth-subjects", synth_subjects);
    app->add_option("--task", task, "binary_rest_action | multiclass_words");
    app->add_option("--input", input, "psd_features | raw_all | raw_selected");
    app->add_option("--classifier", classifier, "svm | gbt | lstm | bilstm");
    app->add_option("--channels", channels, "all | left_hemisphere");
    app->add_option("--reduction", reduction, "none | pca | gain | gain_intersect");
    app->add_option("--pca-variance", pca_variance);
    app->add_option("--gain-threshold", gain_threshold);
    app->add_option("--scheme", scheme, "kfold | nested");
    app->add_option("--outer-k", outer_k);
    app->add_option("--inner-k", inner_k);
    app->add_flag("--plain-folds", plain_folds, "unstratified folds");
    app->add_option("--preprocess", preprocess, "thinking-out-loud | imagined-speech | none");
    app->add_option("--hidden", hidden, "recurrent units per direction");
    app->add_option("--epochs", epochs, "maximum training epochs");
    app->add_option("--lr", lr, "learning rate");
    app->add_option("--seed", seed);
    app->add_option("--set", sets, "override any config field, e.g. model.train.patience=5 (repeatable)");
    app->add_option("--out,-o", out, "output directory");
    app->add_option("--jobs,-j", jobs, "parallel subjects/outer folds");
    app->add_flag("--print-config", print_config, "print the resolved config and exit");
    app->add_flag("--list-presets", list_presets, "list preset names and exit");
  }

  pl::PipelineConfig resolve() const {
    pl::PipelineConfig c;
    if (!preset.empty()) c = pl::preset(preset);
    if (!config_file.empty()) c = pl::config_from_json(read_json_file(config_file), c);
    nlohmann::json patch = nlohmann::json::object();
    if (!data.empty()) {
      std::map<std::string, std::string> rests;
      for (const auto& r : rest) rests.insert(split_pair(r, "--rest"));
      auto subjects = nlohmann::json::array();
      for (const auto& d : data) {
        auto [id, base] = split_pair(d, "--data");
        nlohmann::json s{{"id", id}, {"epochs", base}};
        if (auto it = rests.find(id); it != rests.end()) s["rest"] = it->second;
        subjects.push_back(s);
      }
      patch["data"]["subjects"] = subjects;
      patch["data"]["synth"] = nullptr;
    }
    if (synth_snr || synth_seed || synth_trials || synth_subjects) {
      nlohmann::json s = nlohmann::json::object();
      if (synth_snr) s["snr"] = *synth_snr;
      if (synth_seed) s["seed"] = *synth_seed;
      if (synth_trials) s["n_trials_per_class"] = *synth_trials;
      if (synth_subjects) s["n_subjects"] = *synth_subjects;
      patch["data"]["synth"] = s;
      patch["data"]["subjects"] = nlohmann::json::array();
    }
    if (!task.empty()) patch["task"] = task;
    if (!input.empty()) patch["input"] = input;
    if (!classifier.empty()) patch["classifier"] = classifier;
    if (!channels.empty()) patch["channels"] = channels;
    if (!reduction.empty()) patch["reduction"]["kind"] = reduction;
    if (pca_variance) patch["reduction"]["variance"] = *pca_variance;
    if (gain_threshold) patch["reduction"]["threshold"] = *gain_threshold;
    if (!scheme.empty()) patch["eval"]["scheme"] = scheme;
    if (outer_k) patch["eval"]["outer_k"] = *outer_k;
    if (inner_k) patch["eval"]["inner_k"] = *inner_k;
    if (plain_folds) patch["eval"]["stratified"] = false;
    if (!preprocess.empty()) patch["preprocess"] = preprocess;
    if (hidden) patch["model"]["network"]["hidden"] = *hidden;
    if (epochs) patch["model"]["train"]["max_epochs"] = *epochs;
    if (lr) patch["model"]["train"]["learning_rate"] = *lr;
    if (seed) patch["seed"] = *seed;
    if (!out.empty()) patch["output_dir"] = out;
    if (jobs) patch["jobs"] = *jobs;
    c = pl::config_from_json(patch, c);
    for (const auto& s : sets) c = pl::config_from_json(dotted_patch(s), c);
    return c;
  }
};

void print_presets() {
  for (const auto& [name, c] : pl::presets()) {
    std::cout << name << "  " << pl::to_string(c.task) << ", " << pl::to_string(c.classifier) << ", "
              << pl::describe_input(c) << ", " << pl::to_string(c.scheme) << "\n";
  }
}

void write_config(const pl::PipelineConfig& c, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto j = pl::to_json(c);
  j["fingerprint"] = pl::fingerprint(c);
  std::ofstream(dir / "config.json") << j.dump(2) << '\n';
}

int cmd_validate(const std::vector<std::string>& bases) {
  bool ok = true;
  for (const auto& b : bases) {
    const auto d = pl::diagnose(b);
    std::cout << b << "\n";
    for (const auto& line : d.lines) std::cout << "  " << line << "\n";
    ok = ok && d.ok;
  }
  return ok ? 0 : kExitData;
}

int cmd_preprocess(const std::string& in, const std::string& out, const std::string& profile, const std::string& profile_json) {
  const auto p = profile_json.empty() ? is::dsp::profile_by_name(profile) : is::dsp::profile_from_json(read_json_file(profile_json));
  const auto set = is::load_epochset(in);
  const auto res = is::dsp::preprocess(set, p);
  is::save_epochset(res, out);
  std::cout << "wrote " << out << " (" << res.size() << " epochs, " << res.n_timesteps() << " samples @ "
            << res.sampling_rate_hz << " Hz)\n";
  return 0;
}

int cmd_featurize(const std::string& in, const std::string& out, const std::string& profile, std::optional<double> select,
                  std::uint64_t seed) {
  const auto set = is::load_epochset(in);
  const auto bands = is::dsp::bands_for_profile(profile);
  const auto fm = is::features::build_feature_matrix(set, bands, is::dsp::WelchParams{});
  std::ofstream(out + ".features.csv") << is::features::feature_matrix_csv(fm);
  std::cout << "wrote " << out << ".features.csv (" << fm.n_rows() << " x " << fm.n_features() << ")\n";
  if (select) {
    const auto scaler = is::features::Standardizer::fit(fm.values);
    const auto model = is::gbt::gbt_train(scaler.apply(fm.values), fm.labels, {});
    auto report = is::gbt::gbt_importances(model, *select);
    auto j = is::features::to_json(report);
    j["seed"] = seed;
    std::ofstream(out + ".importance.json") << j.dump(2) << '\n';
    std::ofstream(out + ".selected.csv") << is::features::selected_features_csv(report, fm.provenance);
    std::cout << "selected " << report.selected.size() << " of " << fm.n_features() << " features at gain "
              << *select << "\n";
  }
  return 0;
}

int cmd_train(const ConfigFlags& f, std::size_t grid_index) {
  const auto c = f.resolve();
  if (f.print_config) {
    std::cout << pl::to_json(c).dump(2) << "\n";
    return 0;
  }
  const auto paths = pl::train_all(c, grid_index);
  write_config(c, c.output_dir);
  for (const auto& p : paths) std::cout << "wrote " << p.string() << "\n";
  return 0;
}

int cmd_eval(const ConfigFlags& f) {
  const auto c = f.resolve();
  if (f.print_config) {
    std::cout << pl::to_json(c).dump(2) << "\n";
    return 0;
  }
  const auto t0 = std::chrono::steady_clock::now();
  const auto rr = pl::run_eval(c);
  is::eval::emit_report(rr.report, c.output_dir);
  write_config(c, c.output_dir);
  for (const auto& s : rr.subjects) {
    std::cout << s.result.subject << "  accuracy " << is::eval::detail::fixed(s.result.metrics.accuracy, 4) << "  f1 "
              << is::eval::detail::fixed(s.result.metrics.macro_f1, 4);
    if (c.scheme == pl::Scheme::Nested && c.grid_size() > 1) {
      std::cout << "  grid";
      for (auto g : s.cv.chosen) std::cout << ' ' << g;
    }
    std::cout << "\n";
    for (const auto& w : s.warnings) std::cerr << "warning: " << s.result.subject << ": " << w << "\n";
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "average accuracy " << is::eval::detail::fixed(rr.report.average.accuracy, 4) << " (chance "
            << is::eval::detail::fixed(rr.report.chance, 4) << "), fingerprint " << rr.report.fingerprint << ", "
            << is::eval::detail::fixed(secs, 1) << " s\n";
  std::cout << "report in " << c.output_dir.string() << "\n";
  return 0;
}

// Merges the comparison rows of several eval outputs; subject table and chart
// come from the first one.
int cmd_report(const std::vector<std::string>& from, const std::string& out) {
  is::eval::EvalReport merged;
  for (std::size_t i = 0; i < from.size(); ++i) {
    const auto r = is::eval::report_from_json(read_json_file((std::filesystem::path(from[i]) / "report.json").string()));
    if (i == 0) {
      merged = r;
      merged.comparison.clear();
    }
    merged.comparison.insert(merged.comparison.end(), r.comparison.begin(), r.comparison.end());
  }
  is::eval::emit_report(merged, out);
  std::cout << "wrote report for " << from.size() << " run(s) to " << out << "\n";
  return 0;
}

int cmd_synth(const std::string& out, double snr, std::uint64_t seed, std::optional<std::size_t> trials,
              const std::string& spec_file, bool binary, double rest_s) {
  auto spec = spec_file.empty() ? is::synth::default_4class_spec(snr, seed)
                                : is::synth::synth_spec_from_json(read_json_file(spec_file));
  if (trials) spec.n_trials_per_class = *trials;
  if (!binary) {
    const auto set = is::synth::generate(spec);
    is::save_epochset(set, out);
    std::cout << "wrote " << out << " (" << set.size() << " x " << set.n_channels() << " x " << set.n_timesteps() << ")\n";
  } else {
    const auto sets = is::split_rest_action_sets(is::synth::generate_trials(spec, rest_s), rest_s, spec.duration_s);
    is::save_epochset(sets.action, out + "-action");
    is::save_epochset(sets.rest, out + "-rest");
    std::cout << "wrote " << out << "-action and " << out << "-rest (" << sets.action.size() << " trials)\n";
  }
  std::ofstream(out + ".spec.json") << is::synth::to_json(spec).dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EEG inner-speech classification pipeline"};
  app.require_subcommand(1);

  std::vector<std::string> validate_paths;
  auto* validate = app.add_subcommand("validate", "check canonical EpochSet files");
  validate->add_option("paths", validate_paths, "dataset base paths (without .json/.f32)")->required();

  std::string pre_in, pre_out, pre_profile = "thinking-out-loud", pre_profile_json;
  auto* preprocess = app.add_subcommand("preprocess", "bandpass, notch and resample an EpochSet");
  preprocess->add_option("--in", pre_in)->required();
  preprocess->add_option("--out", pre_out)->required();
  preprocess->add_option("--profile", pre_profile, "thinking-out-loud | imagined-speech");
  preprocess->add_option("--profile-json", pre_profile_json, "profile JSON file");

  std::string feat_in, feat_out, feat_profile = "thinking-out-loud";
  std::optional<double> feat_select;
  std::uint64_t feat_seed = 0;
  auto* featurize = app.add_subcommand("featurize", "relative band-power features, optional gain selection");
  featurize->add_option("--in", feat_in)->required();
  featurize->add_option("--out", feat_out, "output prefix")->required();
  featurize->add_option("--profile", feat_profile, "band table: thinking-out-loud | imagined-speech");
  featurize->add_option("--select", feat_select, "cumulative gain threshold for GBT feature selection");
  featurize->add_option("--seed", feat_seed);

  ConfigFlags train_flags;
  std::size_t grid_index = 0;
  auto* train = app.add_subcommand("train", "fit one config on all epochs of each subject and save models");
  train_flags.attach(train);
  train->add_option("--grid-index", grid_index, "grid point to fit");

  ConfigFlags eval_flags;
  auto* evaluate = app.add_subcommand("eval", "cross-validate one config and write a report");
  eval_flags.attach(evaluate);

  std::vector<std::string> report_from;
  std::string report_out;
  auto* report = app.add_subcommand("report", "merge eval outputs into one comparison report");
  report->add_option("--from", report_from, "eval output directory (repeatable)")->required();
  report->add_option("--out", report_out)->required();

  std::string synth_out, synth_spec;
  double synth_snr = 10.0, synth_rest = 1.5;
  std::uint64_t synth_seed = 0;
  std::optional<std::size_t> synth_trials;
  bool synth_binary = false;
  auto* synth = app.add_subcommand("synth", "generate a synthetic EpochSet");
  synth->add_option("--out", synth_out, "output base path")->required();
  synth->add_option("--snr", synth_snr);
  synth->add_option("--seed", synth_seed);
  synth->add_option("--trials-per-class", synth_trials);
  synth->add_option("--spec", synth_spec, "SynthSpec JSON instead of the 4-class default");
  synth->add_flag("--binary", synth_binary, "write <out>-action and <out>-rest sets");
  synth->add_option("--rest-s", synth_rest, "rest interval length for --binary");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*validate) return cmd_validate(validate_paths);
    if (*preprocess) return cmd_preprocess(pre_in, pre_out, pre_profile, pre_profile_json);
    if (*featurize) return cmd_featurize(feat_in, feat_out, feat_profile, feat_select, feat_seed);
    if (*train) {
      if (train_flags.list_presets) return print_presets(), 0;
      return cmd_train(train_flags, grid_index);
    }
    if (*evaluate) {
      if (eval_flags.list_presets) return print_presets(), 0;
      return cmd_eval(eval_flags);
    }
    if (*report) return cmd_report(report_from, report_out);
    if (*synth) return cmd_synth(synth_out, synth_snr, synth_seed, synth_trials, synth_spec, synth_binary, synth_rest);
  } catch (const is::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}
