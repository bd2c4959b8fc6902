#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "innerspeech/gbt.hpp"
#include "test_util.hpp"

using namespace innerspeech;
using gbt::Matrix;

namespace {

struct Data {
  Matrix x;
  std::vector<int> y;
};

Data noise_labels(std::size_t n, std::size_t p, int k, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_int_distribution<int> lab(0, k - 1);
  Data d;
  d.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  for (Eigen::Index i = 0; i < d.x.rows(); ++i) {
    for (Eigen::Index j = 0; j < d.x.cols(); ++j) d.x(i, j) = g(rng);
    d.y.push_back(lab(rng));
  }
  return d;
}

// Binary labels; column 0 carries ~90% of the label variance, column 1 ~10%.
Data ninety_ten(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Data d;
  d.x.resize(static_cast<Eigen::Index>(n), 2);
  for (Eigen::Index i = 0; i < d.x.rows(); ++i) {
    const int c = static_cast<int>(i % 2);
    d.x(i, 0) = c + std::sqrt(0.25 / 9.0) * g(rng);
    d.x(i, 1) = c + 1.5 * g(rng);
    d.y.push_back(c);
  }
  return d;
}

// Best depth-1 split gain of one column for the first round of a K-class
// softmax booster, enumerating every cut between distinct sorted values.
double best_stump_gain(const Data& d, Eigen::Index col, int n_classes, double lambda, double min_child) {
  const std::size_t n = d.y.size();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) {
    return d.x(static_cast<Eigen::Index>(a), col) < d.x(static_cast<Eigen::Index>(b), col);
  });
  const double p = 1.0 / n_classes;
  const double h = 2.0 * p * (1.0 - p);
  double total = 0.0;
  for (int k = 0; k < n_classes; ++k) {
    double best = 0.0;
    for (std::size_t cut = 1; cut < n; ++cut) {
      const double lo = d.x(static_cast<Eigen::Index>(idx[cut - 1]), col);
      const double hi = d.x(static_cast<Eigen::Index>(idx[cut]), col);
      if (!(hi > lo)) continue;
      double gl = 0, gr = 0;
      for (std::size_t r = 0; r < n; ++r) {
        const double gi = p - (d.y[idx[r]] == k ? 1.0 : 0.0);
        (r < cut ? gl : gr) += gi;
      }
      const double hl = h * static_cast<double>(cut);
      const double hr = h * static_cast<double>(n - cut);
      if (hl < min_child || hr < min_child) continue;
      const double g = gl + gr;
      const double gain =
          0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - g * g / (hl + hr + lambda));
      best = std::max(best, gain);
    }
    total += best;
  }
  return total;
}

double accuracy(const std::vector<int>& a, const std::vector<int>& b) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < a.size(); ++i) hit += a[i] == b[i];
  return static_cast<double>(hit) / static_cast<double>(a.size());
}

}  // namespace

TEST(GbtTrain, ForcedSplitOneRoundDepthOne) {
  Data d;
  std::mt19937 rng(1);
  std::normal_distribution<double> g(0.0, 1.0);
  d.x.resize(40, 2);
  for (Eigen::Index i = 0; i < 40; ++i) {
    const int c = static_cast<int>(i % 2);
    d.x(i, 0) = c ? 1.0 + std::abs(g(rng)) : -1.0 - std::abs(g(rng));
    d.x(i, 1) = g(rng);
    d.y.push_back(c);
  }
  gbt::GbtParams p;
  p.n_rounds = 1;
  p.max_depth = 1;
  auto m = gbt::gbt_train(d.x, d.y, p);
  auto pred = gbt::gbt_predict(m, d.x);
  EXPECT_DOUBLE_EQ(accuracy(pred.labels, d.y), 1.0);
  auto imp = gbt::gbt_importances(m);
  EXPECT_DOUBLE_EQ(imp.gains[0], 1.0);
  EXPECT_DOUBLE_EQ(imp.gains[1], 0.0);

  // Walk the stored stump by hand: one cut, class decided by which side.
  const auto& root = m.rounds[0][0].nodes[0];
  ASSERT_EQ(root.feature, 0);
  const auto& left = m.rounds[0][0].nodes[static_cast<std::size_t>(root.left)];
  for (Eigen::Index i = 0; i < 40; ++i) {
    const bool goes_left = d.x(i, 0) < root.threshold;
    const int side_class = (goes_left == (left.leaf_value > 0)) ? 0 : 1;
    EXPECT_EQ(pred.labels[static_cast<std::size_t>(i)], side_class);
  }
}

TEST(GbtTrain, NoiseLabelsNeverWorseThanUniform) {
  for (int k : {2, 4}) {
    auto d = noise_labels(120, 5, k, 7u + static_cast<unsigned>(k));
    gbt::GbtParams p;
    p.n_rounds = 1;
    auto m = gbt::gbt_train(d.x, d.y, p);
    EXPECT_NEAR(m.train_loss[0], std::log(k), 1e-12);
    EXPECT_LE(m.train_loss[1], std::log(k));
  }
}

TEST(GbtTrain, TrainingLossMonotone) {
  for (unsigned seed : {1u, 2u, 3u}) {
    auto d = noise_labels(150, 6, 4, seed);
    auto m = gbt::gbt_train(d.x, d.y);
    ASSERT_EQ(m.train_loss.size(), 101u);
    for (std::size_t r = 1; r < m.train_loss.size(); ++r) EXPECT_LE(m.train_loss[r], m.train_loss[r - 1] + 1e-9);
  }
}

TEST(GbtTrain, NinetyTenGainOrderingMatchesStumpOracle) {
  auto d = ninety_ten(200, 13);
  const double o0 = best_stump_gain(d, 0, 2, 1.0, 1.0);
  const double o1 = best_stump_gain(d, 1, 2, 1.0, 1.0);
  ASSERT_GT(o0, o1);

  // A single stump per class reproduces the oracle's best gain exactly.
  gbt::GbtParams stump;
  stump.n_rounds = 1;
  stump.max_depth = 1;
  auto m1 = gbt::gbt_train(d.x, d.y, stump);
  EXPECT_NEAR(m1.feature_gain[0], o0, 1e-9 * o0);

  auto full = gbt::gbt_importances(gbt::gbt_train(d.x, d.y));
  EXPECT_GT(full.gains[0], full.gains[1]);
  EXPECT_NEAR(full.gains[0] + full.gains[1], 1.0, 1e-9);
}

TEST(GbtImportance, OneHotWhenOnlyOneFeatureVaries) {
  Data d;
  d.x = Matrix::Constant(60, 5, 2.0);
  for (Eigen::Index i = 0; i < 60; ++i) {
    d.x(i, 3) = static_cast<double>(i);
    d.y.push_back(static_cast<int>(i / 20));
  }
  auto imp = gbt::gbt_importances(gbt::gbt_train(d.x, d.y));
  for (std::size_t f = 0; f < 5; ++f) EXPECT_DOUBLE_EQ(imp.gains[f], f == 3 ? 1.0 : 0.0);
  EXPECT_EQ(imp.selected, (features::IndexSet{3}));
}

TEST(GbtImportance, SumsToOneAndUntrainedRejected) {
  auto d = noise_labels(80, 7, 3, 9);
  auto imp = gbt::gbt_importances(gbt::gbt_train(d.x, d.y));
  double s = 0;
  for (double g : imp.gains) s += g;
  EXPECT_NEAR(s, 1.0, 1e-9);
  gbt::GbtParams zero;
  zero.n_rounds = 0;
  auto m0 = gbt::gbt_train(d.x, d.y, zero);
  test_util::expect_error(ErrorCode::UntrainedModel, [&] { gbt::gbt_importances(m0); });
}

TEST(GbtPredict, ZeroRoundsGiveUniformProbabilities) {
  auto d = noise_labels(30, 3, 4, 4);
  gbt::GbtParams zero;
  zero.n_rounds = 0;
  auto pred = gbt::gbt_predict(gbt::gbt_train(d.x, d.y, zero), d.x);
  EXPECT_LT((pred.probabilities.array() - 0.25).abs().maxCoeff(), 1e-15);
}

TEST(GbtPredict, ProbabilitiesOnSimplex) {
  auto d = noise_labels(100, 4, 3, 5);
  auto m = gbt::gbt_train(d.x, d.y);
  auto probe = noise_labels(300, 4, 3, 6).x * 3.0;
  auto pred = gbt::gbt_predict(m, probe);
  for (Eigen::Index i = 0; i < probe.rows(); ++i) {
    EXPECT_NEAR(pred.probabilities.row(i).sum(), 1.0, 1e-9);
    EXPECT_GE(pred.probabilities.row(i).minCoeff(), 0.0);
  }
  Matrix wrong(1, 5);
  wrong.setZero();
  test_util::expect_error(ErrorCode::DimensionMismatch, [&] { gbt::gbt_predict(m, wrong); });
}

TEST(GbtProperty, MonotoneTransformInvarianceAtDepthOne) {
  auto d = noise_labels(90, 3, 3, 17);
  Data t = d;
  for (Eigen::Index i = 0; i < t.x.rows(); ++i) {
    t.x(i, 0) = std::exp(d.x(i, 0));
    t.x(i, 1) = std::pow(d.x(i, 1), 3) + 5.0;
    t.x(i, 2) = 2.0 * d.x(i, 2) - 1.0;
  }
  gbt::GbtParams p;
  p.max_depth = 1;
  p.n_rounds = 20;
  auto a = gbt::gbt_predict(gbt::gbt_train(d.x, d.y, p), d.x);
  auto b = gbt::gbt_predict(gbt::gbt_train(t.x, t.y, p), t.x);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_LT((a.probabilities - b.probabilities).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(GbtProperty, DeterministicJsonRoundTripAndValidNodes) {
  auto d = noise_labels(70, 4, 3, 23);
  auto a = gbt::gbt_train(d.x, d.y);
  auto b = gbt::gbt_train(d.x, d.y);
  const auto ja = gbt::to_json(a).dump();
  EXPECT_EQ(ja, gbt::to_json(b).dump());
  auto back = gbt::gbt_from_json(nlohmann::json::parse(ja));
  EXPECT_EQ(gbt::gbt_predict(back, d.x).probabilities, gbt::gbt_predict(a, d.x).probabilities);
  for (const auto& round : a.rounds) {
    for (const auto& tree : round) {
      for (const auto& n : tree.nodes) {
        if (n.is_leaf()) {
          EXPECT_TRUE(std::isfinite(n.leaf_value));
        } else {
          EXPECT_LT(static_cast<std::size_t>(n.feature), a.n_features);
        }
      }
    }
  }
  auto node = nlohmann::json::parse(ja)["rounds"][0][0];
  if (!node.contains("leaf_value")) {
    EXPECT_TRUE(node.contains("feature") && node.contains("threshold") && node.contains("left") &&
                node.contains("right"));
  }
}

TEST(GbtTrain, Errors) {
  Matrix x(4, 2);
  x.setRandom();
  std::vector<int> one(4, 2);
  test_util::expect_error(ErrorCode::SingleClassData, [&] { gbt::gbt_train(x, one); });
}
