#include <gtest/gtest.h>

#include <cstring>

#include "innerspeech/eval.hpp"
#include "innerspeech/features.hpp"
#include "innerspeech/gbt.hpp"
#include "innerspeech/svm.hpp"
#include "innerspeech/synth.hpp"
#include "test_util.hpp"

using namespace innerspeech;

namespace {

double channel_power(const EpochSet& set, std::size_t ch) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& e : set.epochs) {
    for (std::size_t t = 0; t < e.n_timesteps; ++t) {
      const double v = e.data[ch * e.n_timesteps + t];
      s += v * v;
      ++n;
    }
  }
  return s / static_cast<double>(n);
}

double cv_accuracy(const EpochSet& set, bool use_gbt) {
  const auto fm = features::build_feature_matrix(set, dsp::canonical_bands(), dsp::WelchParams{});
  const auto labels = set.labels();
  auto fit = [&](std::span<const std::size_t> tr, std::span<const std::size_t> te) {
    auto rows = [&](std::span<const std::size_t> idx) {
      Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), fm.values.cols());
      for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = fm.values.row(static_cast<Eigen::Index>(idx[r]));
      return out;
    };
    std::vector<int> ytr;
    for (auto i : tr) ytr.push_back(labels[i]);
    auto std = features::Standardizer::fit(rows(tr));
    const auto Xtr = std.apply(rows(tr));
    const auto Xte = std.apply(rows(te));
    if (use_gbt) {
      gbt::GbtParams p;
      p.n_rounds = 30;
      return gbt::gbt_predict(gbt::gbt_train(Xtr, ytr, p), Xte).labels;
    }
    return svm::svm_predict(svm::svm_train(Xtr, ytr, {}), Xte).labels;
  };
  return eval::cross_validate(labels, set.class_names.size(), fit).mean.accuracy;
}

}  // namespace

TEST(Synth, DefaultShape) {
  auto set = synth::default_4class(1.0, 0);
  ASSERT_EQ(set.size(), 400u);
  EXPECT_EQ(set.n_channels(), 8u);
  EXPECT_EQ(set.n_timesteps(), 635u);
  EXPECT_EQ(set.sampling_rate_hz, 254.0);
  EXPECT_EQ(set.class_names, word_class_names());
  std::vector<int> count(4, 0);
  for (int y : set.labels()) count[static_cast<std::size_t>(y)] += 1;
  EXPECT_EQ(count, (std::vector<int>{100, 100, 100, 100}));
}

TEST(Synth, NoiselessAlphaInjectionLandsInAlpha) {
  synth::SynthSpec s;
  s.n_classes = 1;
  s.n_trials_per_class = 3;
  s.n_channels = 4;
  s.noise_sigma = 0.0;
  s.signatures = {{{2, 10.0, 10.0, 1.0}}};
  auto set = synth::generate(s);
  const auto bands = dsp::canonical_bands();
  // silent channels have no power to normalise by, so featurize the injected one
  const auto fm = features::build_feature_matrix(select_channels(set, channel_named({"E3"})), bands, dsp::WelchParams{});
  std::size_t alpha = bands.size();
  for (std::size_t b = 0; b < bands.size(); ++b) {
    if (bands[b].name == "alpha") alpha = b;
  }
  ASSERT_LT(alpha, bands.size());
  for (std::size_t e = 0; e < set.size(); ++e) {
    EXPECT_GT(fm.values(static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(alpha)), 0.95);
    const auto& ep = set.epochs[e];
    for (std::size_t c : {0u, 1u, 3u}) {
      for (float v : ep.channel(c)) ASSERT_EQ(v, 0.0f);
    }
  }
}

TEST(Synth, SameSeedSameBytes) {
  auto a = synth::default_4class(2.0, 11);
  auto b = synth::default_4class(2.0, 11);
  auto c = synth::default_4class(2.0, 12);
  ASSERT_EQ(a.size(), b.size());
  bool all_equal = true, any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    all_equal &= std::memcmp(a.epochs[i].data.data(), b.epochs[i].data.data(), a.epochs[i].data.size() * sizeof(float)) == 0;
    any_diff |= a.epochs[i].data != c.epochs[i].data;
  }
  EXPECT_TRUE(all_equal);
  EXPECT_TRUE(any_diff);
}

TEST(Synth, SignatureChannelPowerGrowsWithSnr) {
  double prev = 0.0;
  for (double snr : {0.0, 1.0, 3.0, 10.0}) {
    auto spec = synth::default_4class_spec(snr, 5);
    spec.n_trials_per_class = 10;
    auto set = synth::generate(spec);
    double p = 0.0;
    for (std::size_t ch = 0; ch < 8; ++ch) p += channel_power(set, ch);
    EXPECT_GT(p, prev) << snr;
    // noise power ~ sigma^2 per channel, each class lights up 2 of 8 channels
    EXPECT_NEAR(p / 8.0, 1.0 + snr / 4.0, 0.15 * (1.0 + snr / 4.0)) << snr;
    prev = p;
  }
}

TEST(Synth, RejectsBadSpecs) {
  auto s = synth::default_4class_spec(1.0, 0);
  s.signatures[0][0].high_hz = 127.0;
  test_util::expect_error(ErrorCode::NyquistViolation, [&] { synth::generate(s); });
  s = synth::default_4class_spec(1.0, 0);
  s.signatures[0][0].channel = 8;
  test_util::expect_error(ErrorCode::ConfigInvalid, [&] { synth::generate(s); });
  test_util::expect_error(ErrorCode::ConfigInvalid, [] { synth::default_4class_spec(-1.0, 0); });
}

TEST(Synth, HighSnrIsLearnable) {
  auto set = synth::default_4class(10.0, 1);
  EXPECT_GE(cv_accuracy(set, true), 0.9);
  EXPECT_GE(cv_accuracy(set, false), 0.9);
}

TEST(Synth, ZeroSnrStaysNearChance) {
  auto set = synth::default_4class(0.0, 2);
  for (bool use_gbt : {false, true}) {
    const double acc = cv_accuracy(set, use_gbt);
    EXPECT_GE(acc, 0.185) << use_gbt;
    EXPECT_LE(acc, 0.315) << use_gbt;
  }
}

TEST(Synth, TrialsCarrySignalOnlyInAction) {
  auto spec = synth::default_4class_spec(10.0, 3);
  spec.n_trials_per_class = 5;
  auto ts = synth::generate_trials(spec, 1.5);
  ASSERT_EQ(ts.trials.size(), 20u);
  const auto& t = ts.trials[0];  // class 0 on channels 0,1
  EXPECT_EQ(t.n_samples, samples_for(4.0, 254.0));
  const std::size_t a = samples_for(2.5, 254.0);
  double act = 0, rest = 0;
  for (std::size_t i = 0; i < a; ++i) act += t.data[i] * t.data[i];
  for (std::size_t i = a; i < t.n_samples; ++i) rest += t.data[i] * t.data[i];
  EXPECT_GT(act / a, 3.0 * rest / (t.n_samples - a));
}

TEST(Synth, SaveLoadAndSpecRoundTrip) {
  test_util::TempDir dir;
  auto spec = synth::default_4class_spec(1.0, 7);
  spec.n_trials_per_class = 10;
  auto set = synth::generate(spec);
  ASSERT_EQ(set.size(), 40u);
  save_epochset(set, dir.path() / "s");
  auto back = load_epochset(dir.path() / "s");
  ASSERT_EQ(back.size(), 40u);
  EXPECT_EQ(back.n_channels(), 8u);
  EXPECT_EQ(back.n_timesteps(), 635u);
  for (std::size_t i = 0; i < set.size(); ++i) EXPECT_EQ(back.epochs[i].data, set.epochs[i].data);
  auto spec2 = synth::synth_spec_from_json(nlohmann::json::parse(synth::to_json(spec).dump()));
  EXPECT_EQ(synth::to_json(spec2), synth::to_json(spec));
}
