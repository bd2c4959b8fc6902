#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>

#include "innerspeech/core.hpp"
#include "test_util.hpp"

using namespace innerspeech;

namespace {

EpochSet random_set(std::size_t n_epochs, std::size_t n_channels, std::size_t n_steps, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> noise(0.0f, 10.0f);
  EpochSet set;
  set.sampling_rate_hz = 254.0;
  set.class_names = word_class_names();
  auto montage = make_montage({"F3", "F4", "C3", "C4", "P3", "P4", "Oz", "T7"});
  montage.resize(n_channels);
  set.channels = montage;
  set.subject_id = "sub-01";
  set.condition = "inner";
  for (std::size_t i = 0; i < n_epochs; ++i) {
    Epoch e(n_channels, n_steps, static_cast<int>(i % 4));
    for (auto& v : e.data) v = noise(rng);
    e.subject_id = set.subject_id;
    set.epochs.push_back(std::move(e));
  }
  return set;
}

std::vector<char> slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

}  // namespace

TEST(Hemisphere, TenTwentyParity) {
  EXPECT_EQ(hemisphere_from_label("F3"), Hemisphere::Left);
  EXPECT_EQ(hemisphere_from_label("C4"), Hemisphere::Right);
  EXPECT_EQ(hemisphere_from_label("Cz"), Hemisphere::Midline);
  EXPECT_EQ(hemisphere_from_label("A1"), Hemisphere::Left);
  EXPECT_EQ(hemisphere_from_label("EXG"), Hemisphere::Unknown);
}

TEST(Montage, OverridesReplaceDerivedTags) {
  auto m = make_montage({"A1", "B2"});
  apply_montage_overrides(m, nlohmann::json{{"A1", "R"}});
  EXPECT_EQ(m[0].hemisphere, Hemisphere::Right);
  EXPECT_EQ(m[1].hemisphere, Hemisphere::Right);
}

TEST(EpochSetIo, RoundTripIsExact) {
  test_util::TempDir dir;
  for (unsigned seed : {1u, 2u, 3u}) {
    auto set = random_set(7, 5, 33, seed);
    save_epochset(set, dir.path() / "x");
    EXPECT_EQ(load_epochset(dir.path() / "x"), set);
  }
}

TEST(EpochSetIo, IntervalsSurviveRoundTrip) {
  test_util::TempDir dir;
  auto set = random_set(3, 2, 10, 9);
  set.epochs[1].interval = {IntervalKind::Window, 0.25, 0.75};
  save_epochset(set, dir.path() / "w.json");
  EXPECT_EQ(load_epochset(dir.path() / "w"), set);
}

TEST(EpochSetIo, EmptySetWritesZeroLengthTensor) {
  test_util::TempDir dir;
  auto set = random_set(0, 4, 0, 1);
  save_epochset(set, dir.path() / "empty");
  EXPECT_EQ(std::filesystem::file_size(dir.path() / "empty.f32"), 0u);
  auto header = nlohmann::json::parse(std::ifstream(dir.path() / "empty.json"));
  EXPECT_EQ(header["n_epochs"], 0);
  EXPECT_EQ(load_epochset(dir.path() / "empty").size(), 0u);
}

TEST(EpochSetIo, DeterministicBytes) {
  test_util::TempDir dir;
  auto set = random_set(5, 3, 20, 4);
  save_epochset(set, dir.path() / "a");
  save_epochset(set, dir.path() / "b");
  EXPECT_EQ(slurp(dir.path() / "a.json"), slurp(dir.path() / "b.json"));
  EXPECT_EQ(slurp(dir.path() / "a.f32"), slurp(dir.path() / "b.f32"));
}

TEST(EpochSetIo, TruncatedTensorIsShapeMismatch) {
  test_util::TempDir dir;
  auto set = random_set(4, 3, 16, 5);
  save_epochset(set, dir.path() / "t");
  const auto tp = dir.path() / "t.f32";
  std::filesystem::resize_file(tp, std::filesystem::file_size(tp) - 4);
  test_util::expect_error(ErrorCode::ShapeMismatch, [&] { load_epochset(dir.path() / "t"); });
}

TEST(EpochSetIo, MalformedHeaderAndNonFinite) {
  test_util::TempDir dir;
  auto set = random_set(2, 2, 8, 6);
  save_epochset(set, dir.path() / "h");
  auto header = nlohmann::json::parse(std::ifstream(dir.path() / "h.json"));
  header.erase("labels");
  std::ofstream(dir.path() / "h.json") << header.dump();
  test_util::expect_error(ErrorCode::MalformedHeader, [&] { load_epochset(dir.path() / "h"); });

  // save validates, so poke the NaN into the tensor file directly.
  auto good = random_set(2, 2, 8, 6);
  save_epochset(good, dir.path() / "n");
  {
    std::fstream ts(dir.path() / "n.f32", std::ios::binary | std::ios::in | std::ios::out);
    const float nan = std::numeric_limits<float>::quiet_NaN();
    ts.seekp(8);
    ts.write(reinterpret_cast<const char*>(&nan), 4);
  }
  test_util::expect_error(ErrorCode::NonFiniteSample, [&] { load_epochset(dir.path() / "n"); });
}

TEST(SelectChannels, IdentityFilter) {
  auto set = random_set(3, 6, 12, 7);
  EXPECT_EQ(select_channels(set, all_channels()), set);
}

TEST(SelectChannels, LeftHemisphereOfSixChannelMontage) {
  auto set = random_set(3, 6, 12, 8);
  auto left = select_channels(set, hemisphere_is(Hemisphere::Left));
  ASSERT_EQ(left.n_channels(), 3u);
  EXPECT_EQ(left.channels[0].name, "F3");
  EXPECT_EQ(left.channels[1].name, "C3");
  EXPECT_EQ(left.channels[2].name, "P3");
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(left.channels[i].index, i);
  // Rows follow their channel; labels and order are preserved.
  for (std::size_t e = 0; e < set.size(); ++e) {
    EXPECT_EQ(left.epochs[e].label, set.epochs[e].label);
    const auto src = set.epochs[e].channel(2);
    const auto dst = left.epochs[e].channel(1);
    EXPECT_TRUE(std::equal(src.begin(), src.end(), dst.begin()));
  }
}

TEST(SelectChannels, NothingKeptIsEmptySelection) {
  auto set = random_set(2, 4, 8, 9);
  test_util::expect_error(ErrorCode::EmptySelection,
                          [&] { select_channels(set, [](const ChannelInfo&) { return false; }); });
}

TEST(SelectChannels, ComposesAsIntersection) {
  auto set = random_set(2, 8, 8, 10);
  std::mt19937 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::set<std::string> s, t;
    for (const auto& c : set.channels) {
      if (rng() % 2) s.insert(c.name);
      if (rng() % 2) t.insert(c.name);
    }
    std::set<std::string> both;
    std::set_intersection(s.begin(), s.end(), t.begin(), t.end(), std::inserter(both, both.end()));
    if (both.empty()) continue;
    const auto before = set;
    auto two_step = select_channels(select_channels(set, channel_named(s)), channel_named(t));
    auto one_step = select_channels(set, channel_named(both));
    EXPECT_EQ(two_step, one_step);
    EXPECT_EQ(set, before);  // input untouched
  }
}

namespace {

TrialSet make_trials(std::size_t n_trials, double fs, double rest_len_s, double action_len_s) {
  TrialSet ts;
  ts.sampling_rate_hz = fs;
  ts.channels = make_montage({"C3", "C4"});
  ts.word_names = word_class_names();
  ts.subject_id = "s";
  const double total_s = rest_len_s + action_len_s;
  for (std::size_t i = 0; i < n_trials; ++i) {
    Trial t;
    t.n_channels = 2;
    t.n_samples = samples_for(total_s, fs);
    t.data.assign(t.n_channels * t.n_samples, static_cast<float>(i));
    t.word_label = static_cast<int>(i % 4);
    t.action = {IntervalKind::Action, 0.0, action_len_s};
    t.rest = {IntervalKind::Rest, action_len_s, total_s};
    ts.trials.push_back(std::move(t));
  }
  return ts;
}

}  // namespace

TEST(SplitRestAction, DurationsAt254Hz) {
  auto ts = make_trials(3, 254.0, 2.0, 2.5);
  auto sets = split_rest_action_sets(ts);
  ASSERT_EQ(sets.rest.size(), 3u);
  EXPECT_EQ(sets.rest.n_timesteps(), 381u);
  EXPECT_EQ(sets.action.n_timesteps(), 635u);
  for (const auto& e : sets.rest.epochs) EXPECT_EQ(e.label, 0);
  for (const auto& e : sets.action.epochs) EXPECT_EQ(e.label, 1);
}

TEST(SplitRestAction, TooShortInterval) {
  auto ts = make_trials(2, 254.0, 2.0, 2.5);
  test_util::expect_error(ErrorCode::IntervalTooShort, [&] { split_rest_action(ts, 1.5, 3.0); });
}

TEST(SplitRestAction, TwoHundredTrialsGiveBalancedFourHundred) {
  auto ts = make_trials(200, 254.0, 1.5, 2.5);
  auto set = split_rest_action(ts);
  std::size_t rest = 0, action = 0;
  for (const auto& e : set.epochs) (e.label == 0 ? rest : action) += 1;
  EXPECT_EQ(set.size(), 400u);
  EXPECT_EQ(rest, 200u);
  EXPECT_EQ(action, 200u);
}
