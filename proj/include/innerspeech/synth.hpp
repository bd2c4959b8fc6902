#pragma once

// Synthetic EEG with known class structure: pink+white noise plus per-class
// sinusoidal injections at a random in-band frequency and phase per trial.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "json.hpp"

#include "innerspeech/core.hpp"
#include "innerspeech/dsp.hpp"
#include "innerspeech/error.hpp"
#include "innerspeech/fft.hpp"
#include "innerspeech/rng.hpp"

namespace innerspeech::synth {

struct Injection {
  std::size_t channel = 0;
  double low_hz = 10.0;  // frequency drawn from the central 60% of [low, high]
  double high_hz = 10.0;
  double amplitude = 1.0;

  bool operator==(const Injection&) const = default;
};

struct SynthSpec {
  std::size_t n_classes = 4;
  std::size_t n_trials_per_class = 100;
  std::size_t n_channels = 8;
  double sampling_rate_hz = 254.0;
  double duration_s = 2.5;
  std::vector<std::vector<Injection>> signatures;  // one list per class
  double noise_sigma = 1.0;
  std::uint64_t seed = 0;
  std::vector<std::string> class_names;
  std::vector<std::string> channel_names;
  std::string subject_id = "synth";

  std::size_t n_samples() const { return samples_for(duration_s, sampling_rate_hz); }

  void validate() const {
    if (n_classes < 1 || n_channels < 1 || !(sampling_rate_hz > 0) || !(duration_s > 0)) {
      throw Error(ErrorCode::ConfigInvalid, "synth", "empty geometry");
    }
    if (signatures.size() != n_classes) {
      throw Error(ErrorCode::ConfigInvalid, "synth", "need one signature list per class");
    }
    if (!(noise_sigma >= 0)) throw Error(ErrorCode::ConfigInvalid, "synth", "noise_sigma must be >= 0");
    for (const auto& sig : signatures) {
      for (const auto& inj : sig) {
        if (inj.channel >= n_channels) throw Error(ErrorCode::ConfigInvalid, "synth", "injection channel out of range");
        if (!(inj.amplitude >= 0)) throw Error(ErrorCode::ConfigInvalid, "synth", "amplitude must be >= 0");
        if (!(inj.low_hz > 0) || inj.high_hz < inj.low_hz) {
          throw Error(ErrorCode::ConfigInvalid, "synth", "injection band must satisfy 0 < low <= high");
        }
        if (inj.high_hz >= sampling_rate_hz / 2.0) {
          throw Error(ErrorCode::NyquistViolation, "synth",
                      "injection up to " + std::to_string(inj.high_hz) + " Hz at fs " +
                          std::to_string(sampling_rate_hz) + " Hz");
        }
      }
    }
  }

  std::vector<std::string> resolved_class_names() const {
    if (!class_names.empty()) return class_names;
    std::vector<std::string> out;
    for (std::size_t k = 0; k < n_classes; ++k) out.push_back("class" + std::to_string(k));
    return out;
  }

  std::vector<std::string> resolved_channel_names() const {
    if (!channel_names.empty()) return channel_names;
    std::vector<std::string> out;
    for (std::size_t c = 0; c < n_channels; ++c) out.push_back("E" + std::to_string(c + 1));
    return out;
  }
};

inline nlohmann::json to_json(const SynthSpec& s) {
  nlohmann::json sigs = nlohmann::json::array();
  for (const auto& sig : s.signatures) {
    auto list = nlohmann::json::array();
    for (const auto& inj : sig) {
      list.push_back({{"channel", inj.channel}, {"low_hz", inj.low_hz}, {"high_hz", inj.high_hz}, {"amplitude", inj.amplitude}});
    }
    sigs.push_back(list);
  }
  return {{"n_classes", s.n_classes},
          {"n_trials_per_class", s.n_trials_per_class},
          {"n_channels", s.n_channels},
          {"sampling_rate_hz", s.sampling_rate_hz},
          {"duration_s", s.duration_s},
          {"signatures", sigs},
          {"noise_sigma", s.noise_sigma},
          {"seed", s.seed},
          {"class_names", s.class_names},
          {"channel_names", s.channel_names},
          {"subject_id", s.subject_id}};
}

inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  SynthSpec s;
  s.n_classes = j.at("n_classes").get<std::size_t>();
  s.n_trials_per_class = j.at("n_trials_per_class").get<std::size_t>();
  s.n_channels = j.at("n_channels").get<std::size_t>();
  s.sampling_rate_hz = j.at("sampling_rate_hz").get<double>();
  s.duration_s = j.at("duration_s").get<double>();
  for (const auto& list : j.at("signatures")) {
    std::vector<Injection> sig;
    for (const auto& ji : list) {
      sig.push_back({ji.at("channel").get<std::size_t>(), ji.at("low_hz").get<double>(), ji.at("high_hz").get<double>(),
                     ji.at("amplitude").get<double>()});
    }
    s.signatures.push_back(std::move(sig));
  }
  s.noise_sigma = j.at("noise_sigma").get<double>();
  s.seed = j.value("seed", std::uint64_t{0});
  s.class_names = j.value("class_names", std::vector<std::string>{});
  s.channel_names = j.value("channel_names", std::vector<std::string>{});
  s.subject_id = j.value("subject_id", std::string("synth"));
  return s;
}

namespace detail {

/// Unit-variance noise with a 1/f power spectrum (FFT-shaped white noise).
inline std::vector<double> pink_noise(std::size_t n, Rng& rng) {
  std::vector<double> white(n);
  for (auto& v : white) v = rng.normal();
  if (n < 4) return white;
  auto bins = fft::rfft(white);
  bins[0] = 0.0;
  for (std::size_t k = 1; k < bins.size(); ++k) bins[k] /= std::sqrt(static_cast<double>(k));
  auto pink = fft::irfft(bins, n);
  double mean = 0.0, sq = 0.0;
  for (double v : pink) mean += v;
  mean /= static_cast<double>(n);
  for (double v : pink) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / static_cast<double>(n));
  for (auto& v : pink) v = sd > 0 ? (v - mean) / sd : 0.0;
  return pink;
}

/// n_channels x n_samples of noise + the given injections, row-major.
inline std::vector<float> render(const SynthSpec& s, std::size_t n_samples, const std::vector<Injection>& injections,
                                 std::size_t signal_samples, Rng& rng) {
  const std::size_t n_ch = s.n_channels;
  std::vector<double> x(n_ch * n_samples, 0.0);
  // Noise first so its stream does not depend on the injections.
  const double half = std::sqrt(0.5) * s.noise_sigma;
  for (std::size_t c = 0; c < n_ch; ++c) {
    const auto pink = pink_noise(n_samples, rng);
    for (std::size_t t = 0; t < n_samples; ++t) x[c * n_samples + t] = half * (rng.normal() + pink[t]);
  }
  for (const auto& inj : injections) {
    const double span = inj.high_hz - inj.low_hz;
    const double f = rng.uniform(inj.low_hz + 0.2 * span, inj.high_hz - 0.2 * span);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (std::size_t t = 0; t < signal_samples; ++t) {
      x[inj.channel * n_samples + t] +=
          inj.amplitude * std::sin(2.0 * std::numbers::pi * f * static_cast<double>(t) / s.sampling_rate_hz + phase);
    }
  }
  return {x.begin(), x.end()};
}

inline std::vector<int> balanced_labels(const SynthSpec& s) {
  std::vector<int> labels;
  for (std::size_t i = 0; i < s.n_classes * s.n_trials_per_class; ++i) labels.push_back(static_cast<int>(i % s.n_classes));
  return labels;
}

}  // namespace detail

/// Trials interleave classes (label = index mod n_classes); each trial draws from its own stream.
inline EpochSet generate(const SynthSpec& s) {
  s.validate();
  EpochSet set;
  set.sampling_rate_hz = s.sampling_rate_hz;
  set.class_names = s.resolved_class_names();
  set.channels = make_montage(s.resolved_channel_names());
  set.subject_id = s.subject_id;
  set.condition = "synthetic";
  const std::size_t n = s.n_samples();
  const auto labels = detail::balanced_labels(s);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    Rng rng = Rng::derive(s.seed, i);
    Epoch e(s.n_channels, n, labels[i]);
    e.data = detail::render(s, n, s.signatures[static_cast<std::size_t>(labels[i])], n, rng);
    e.interval = {IntervalKind::Action, 0.0, s.duration_s};
    e.subject_id = s.subject_id;
    set.epochs.push_back(std::move(e));
  }
  return set;
}

/// Continuous trials: an action interval of duration_s carrying the class
/// signature, followed by rest_s of noise only.
inline TrialSet generate_trials(const SynthSpec& s, double rest_s = 1.5) {
  s.validate();
  TrialSet ts;
  ts.sampling_rate_hz = s.sampling_rate_hz;
  ts.channels = make_montage(s.resolved_channel_names());
  ts.word_names = s.resolved_class_names();
  ts.subject_id = s.subject_id;
  ts.condition = "synthetic";
  const std::size_t action_n = s.n_samples();
  const std::size_t total_n = samples_for(s.duration_s + rest_s, s.sampling_rate_hz);
  const auto labels = detail::balanced_labels(s);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    Rng rng = Rng::derive(s.seed, i);
    Trial t;
    t.n_channels = s.n_channels;
    t.n_samples = total_n;
    t.word_label = labels[i];
    t.data = detail::render(s, total_n, s.signatures[static_cast<std::size_t>(labels[i])], action_n, rng);
    t.action = {IntervalKind::Action, 0.0, s.duration_s};
    t.rest = {IntervalKind::Rest, s.duration_s, s.duration_s + rest_s};
    ts.trials.push_back(std::move(t));
  }
  return ts;
}

/// 4 word classes x 100 trials, 8 channels, 2.5 s at 254 Hz. Class k injects
/// alpha, beta, gamma or alpha+beta on channels {2k, 2k+1}; snr is the ratio of
/// injected to noise power on those channels.
inline SynthSpec default_4class_spec(double snr, std::uint64_t seed) {
  if (!(snr >= 0)) throw Error(ErrorCode::ConfigInvalid, "synth", "snr must be >= 0");
  SynthSpec s;
  s.seed = seed;
  s.class_names = word_class_names();
  s.channel_names = {"F3", "F4", "C3", "C4", "P3", "P4", "O1", "O2"};
  const std::vector<std::vector<dsp::BandDef>> bands{{dsp::make_band("alpha", 8, 13)},
                                                     {dsp::make_band("beta", 13, 30)},
                                                     {dsp::make_band("gamma", 30, 100)},
                                                     {dsp::make_band("alpha", 8, 13), dsp::make_band("beta", 13, 30)}};
  for (std::size_t k = 0; k < 4; ++k) {
    std::vector<Injection> sig;
    const double amp = std::sqrt(2.0 * snr / static_cast<double>(bands[k].size())) * s.noise_sigma;
    for (std::size_t ch : {2 * k, 2 * k + 1}) {
      for (const auto& b : bands[k]) sig.push_back({ch, b.low_hz, b.high_hz, amp});
    }
    s.signatures.push_back(std::move(sig));
  }
  return s;
}

inline EpochSet default_4class(double snr, std::uint64_t seed = 0) { return generate(default_4class_spec(snr, seed)); }

}  // namespace innerspeech::synth
