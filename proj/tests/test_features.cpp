#include <gtest/gtest.h>

#include <random>

#include "innerspeech/features.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace innerspeech;
using namespace innerspeech::features;

namespace {

EpochSet noise_set(std::size_t n_epochs, std::size_t n_channels, std::size_t n_steps, unsigned seed,
                   float sigma = 1.0f) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> d(0.0f, sigma);
  EpochSet set;
  set.sampling_rate_hz = 254.0;
  set.class_names = {"a", "b"};
  std::vector<std::string> names;
  for (std::size_t c = 0; c < n_channels; ++c) names.push_back("E" + std::to_string(c + 1));
  set.channels = make_montage(names);
  for (std::size_t i = 0; i < n_epochs; ++i) {
    Epoch e(n_channels, n_steps, static_cast<int>(i % 2));
    for (auto& v : e.data) v = d(rng);
    set.epochs.push_back(std::move(e));
  }
  return set;
}

FeatureMatrix random_matrix(int rows, int cols, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> d;
  FeatureMatrix fm;
  fm.values.resize(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) fm.values(r, c) = d(rng) * (1.0 + c);
  fm.labels.assign(static_cast<std::size_t>(rows), 0);
  for (int c = 0; c < cols; ++c) fm.provenance.push_back({"E" + std::to_string(c), "alpha"});
  return fm;
}

}  // namespace

TEST(BuildFeatureMatrix, ColumnCounts) {
  auto bands = dsp::canonical_bands();
  EXPECT_EQ(build_feature_matrix(noise_set(2, 128, 254, 1), bands).n_features(), 384u);
  auto six = noise_set(3, 6, 635, 2);
  auto fm = build_feature_matrix(six, bands);
  EXPECT_EQ(fm.n_features(), 18u);
  EXPECT_EQ(fm.provenance[0], (Provenance{"E1", "alpha"}));
  EXPECT_EQ(fm.provenance[4], (Provenance{"E2", "beta"}));
  fm.validate();
}

TEST(BuildFeatureMatrix, ToneOnChannelZeroDominates) {
  auto set = noise_set(1, 4, 635, 3, 1e-3f);
  auto tone = oracle::sine(635, 10.0, 254.0);
  for (std::size_t t = 0; t < 635; ++t) set.epochs[0].at(0, t) = static_cast<float>(tone[t]);
  auto fm = build_feature_matrix(set, dsp::canonical_bands());
  Eigen::Index arg = 0;
  fm.values.row(0).maxCoeff(&arg);
  EXPECT_EQ(arg, 0);
  EXPECT_GT(fm.values(0, 0), 0.95);
}

TEST(BuildFeatureMatrix, PermutationEquivariant) {
  auto set = noise_set(6, 3, 300, 4);
  auto fm = build_feature_matrix(set, dsp::canonical_bands());
  std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  auto fp = build_feature_matrix(set.subset(perm), dsp::canonical_bands());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    EXPECT_EQ(fp.values.row(static_cast<Eigen::Index>(i)), fm.values.row(static_cast<Eigen::Index>(perm[i])));
    EXPECT_EQ(fp.labels[i], fm.labels[perm[i]]);
  }
}

TEST(BuildFeatureMatrix, EmptySetRejected) {
  auto set = noise_set(0, 3, 0, 1);
  test_util::expect_error(ErrorCode::DimensionMismatch, [&] { build_feature_matrix(set, dsp::canonical_bands()); });
}

TEST(Standardizer, TrainStatisticsOnly) {
  auto fm = random_matrix(30, 4, 9);
  auto s = Standardizer::fit(fm.values);
  Matrix z = s.apply(fm.values);
  for (int c = 0; c < 4; ++c) {
    EXPECT_NEAR(z.col(c).mean(), 0.0, 1e-12);
    EXPECT_NEAR(std::sqrt(z.col(c).array().square().mean()), 1.0, 1e-12);
  }
  Matrix constant = Matrix::Constant(5, 2, 3.0);
  EXPECT_TRUE(Standardizer::fit(constant).apply(constant).isZero());
}

// --- PCA --------------------------------------------------------------------

TEST(Pca, FullTargetKeepsRank) {
  auto tall = random_matrix(10, 5, 1);
  EXPECT_EQ(pca_fit(tall, 1.0).n_components(), 5u);
  auto wide = random_matrix(5, 10, 2);
  EXPECT_EQ(pca_fit(wide, 1.0).n_components(), 4u);
}

TEST(Pca, PlaneInTenDimensions) {
  std::mt19937 rng(5);
  std::normal_distribution<double> d;
  Eigen::VectorXd u = Eigen::VectorXd::NullaryExpr(10, [&] { return d(rng); });
  Eigen::VectorXd v = Eigen::VectorXd::NullaryExpr(10, [&] { return d(rng); });
  FeatureMatrix fm;
  fm.values.resize(40, 10);
  for (int r = 0; r < 40; ++r) fm.values.row(r) = (d(rng) * u + d(rng) * v).transpose();
  fm.labels.assign(40, 0);
  fm.provenance.resize(10);
  EXPECT_EQ(pca_fit(fm, 0.99).n_components(), 2u);
}

TEST(Pca, ReconstructionAndSvdAgreement) {
  auto fm = random_matrix(50, 20, 7);
  auto m = pca_fit(fm, 1.0);
  ASSERT_EQ(m.n_components(), 20u);
  auto scores = pca_transform(m, fm);
  Matrix back = pca_inverse_transform(m, scores.values);
  EXPECT_LT((back - fm.values).cwiseAbs().maxCoeff(), 1e-8);

  // Independent route: thin SVD of the centered data.
  Matrix centered = fm.values.rowwise() - fm.values.colwise().mean();
  Eigen::JacobiSVD<Matrix> svd(centered, Eigen::ComputeThinV);
  for (int i = 0; i < 20; ++i) {
    const double sv_var = svd.singularValues()(i) * svd.singularValues()(i) / 49.0;
    EXPECT_NEAR(m.explained_variance(i), sv_var, 1e-8 * sv_var);
    const double align = std::abs(m.components.row(i).dot(svd.matrixV().col(i)));
    EXPECT_NEAR(align, 1.0, 1e-8);
  }
}

TEST(Pca, Invariants) {
  auto fm = random_matrix(30, 8, 11);
  auto m = pca_fit(fm, 0.9);
  const Matrix gram = m.components * m.components.transpose();
  EXPECT_LT((gram - Matrix::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LE(m.explained_variance_ratio.sum(), 1.0 + 1e-12);
  EXPECT_GE(m.explained_variance_ratio.sum(), 0.9 - 1e-12);
  for (int i = 0; i < m.explained_variance_ratio.size(); ++i) {
    EXPECT_GT(m.explained_variance_ratio(i), 0.0);
    if (i > 0) {
      EXPECT_LE(m.explained_variance_ratio(i), m.explained_variance_ratio(i - 1));
    }
  }
  // k is minimal: dropping the last component falls short of the target.
  EXPECT_LT(m.explained_variance_ratio.head(m.explained_variance_ratio.size() - 1).sum(), 0.9);
}

TEST(Pca, TransformProperties) {
  auto fm = random_matrix(25, 6, 13);
  auto m = pca_fit(fm, 1.0);
  FeatureMatrix mean_row;
  mean_row.values = m.mean.transpose();
  mean_row.labels = {0};
  mean_row.provenance = fm.provenance;
  EXPECT_LT(pca_transform(m, mean_row).values.cwiseAbs().maxCoeff(), 1e-12);

  auto scores = pca_transform(m, fm);
  EXPECT_EQ(scores.provenance[0].label(), "component-0");
  // Covariance oracle: explicit double loop and a generic eigensolver.
  Matrix cov = Matrix::Zero(6, 6);
  Eigen::VectorXd mu = fm.values.colwise().mean();
  for (int r = 0; r < 25; ++r)
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j) cov(i, j) += (fm.values(r, i) - mu(i)) * (fm.values(r, j) - mu(j)) / 24.0;
  Eigen::EigenSolver<Matrix> es(cov);
  const double largest = es.eigenvalues().real().maxCoeff();
  const Eigen::VectorXd s0 = scores.values.col(0);
  const double var0 = (s0.array() - s0.mean()).square().sum() / 24.0;
  EXPECT_NEAR(var0, largest, 1e-6);
}

TEST(Pca, Errors) {
  FeatureMatrix flat;
  flat.values = Matrix::Constant(5, 3, 2.0);
  flat.labels.assign(5, 0);
  flat.provenance.resize(3);
  test_util::expect_error(ErrorCode::DegenerateData, [&] { pca_fit(flat); });
  auto fm = random_matrix(10, 4, 1);
  auto m = pca_fit(fm);
  auto other = random_matrix(3, 5, 2);
  test_util::expect_error(ErrorCode::DimensionMismatch, [&] { pca_transform(m, other); });
}

TEST(Pca, JsonRoundTrip) {
  auto fm = random_matrix(12, 4, 3);
  auto m = pca_fit(fm);
  auto back = pca_from_json(nlohmann::json::parse(to_json(m).dump()));
  EXPECT_EQ(back.components, m.components);
  EXPECT_EQ(back.mean, m.mean);
}

// --- gain selection -------------------------------------------------------------

TEST(SelectByGain, Examples) {
  std::vector<double> g{0.9, 0.05, 0.03, 0.02};
  EXPECT_EQ(select_by_gain(g, 0.95), (IndexSet{0, 1}));
  std::vector<double> some_zero{0.0, 0.3, 0.0, 0.5, 0.2};
  EXPECT_EQ(select_by_gain(some_zero, 1.0), (IndexSet{1, 3, 4}));
  std::vector<double> uniform(20, 1.0);
  EXPECT_EQ(select_by_gain(uniform, 0.95).size(), 19u);
  EXPECT_EQ(select_by_gain(uniform, 0.95).back(), 18u);  // ties favour lower indices
}

TEST(SelectByGain, AllZero) {
  std::vector<double> g(5, 0.0);
  test_util::expect_error(ErrorCode::AllZeroGains, [&] { select_by_gain(g, 0.9); });
}

TEST(SelectByGain, InvariantToUniformScaling) {
  std::mt19937 rng(21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> g(15);
    for (auto& v : g) v = u(rng) < 0.2 ? 0.0 : u(rng);
    if (std::all_of(g.begin(), g.end(), [](double v) { return v == 0.0; })) continue;
    const double thr = 0.5 + 0.5 * u(rng);
    const double scale = std::exp(6.0 * (u(rng) - 0.5));
    std::vector<double> scaled(g);
    for (auto& v : scaled) v *= scale;
    EXPECT_EQ(select_by_gain(g, thr), select_by_gain(scaled, thr));
  }
}

TEST(IntersectSelected, Examples) {
  std::vector<IndexSet> one{{4, 1, 2}};
  std::sort(one[0].begin(), one[0].end());
  EXPECT_EQ(intersect_selected(one), (IndexSet{1, 2, 4}));
  std::vector<IndexSet> disjoint{{1, 2}, {3, 4}};
  EXPECT_TRUE(intersect_selected(disjoint).empty());
  std::vector<IndexSet> three{{1, 2, 3}, {2, 3, 4}, {2, 3, 9}};
  EXPECT_EQ(intersect_selected(three), (IndexSet{2, 3}));
}

TEST(ColumnsToChannels, Examples) {
  std::vector<Provenance> prov{{"C3", "alpha"}, {"C3", "beta"}, {"C4", "alpha"}, {"C4", "beta"}};
  IndexSet sel{0, 1};
  EXPECT_EQ(columns_to_channels(sel, prov), (std::vector<std::string>{"C3"}));
  EXPECT_TRUE(columns_to_channels(IndexSet{}, prov).empty());
  IndexSet all{0, 1, 2, 3};
  EXPECT_EQ(columns_to_channels(all, prov), (std::vector<std::string>{"C3", "C4"}));
  std::vector<Provenance> pca{{"", "", 0}, {"", "", 1}};
  test_util::expect_error(ErrorCode::PcaProvenance, [&] { columns_to_channels(IndexSet{0}, pca); });
}

TEST(ImportanceReport, JsonAndCsv) {
  ImportanceReport r{{0.1, 0.6, 0.3}, {1, 2}, 0.9};
  auto back = importance_from_json(nlohmann::json::parse(to_json(r).dump()));
  EXPECT_EQ(back.selected, r.selected);
  std::vector<Provenance> prov{{"C3", "alpha"}, {"C3", "beta"}, {"C4", "alpha"}};
  EXPECT_EQ(selected_features_csv(r, prov),
            "column_index,channel,band,gain\n1,C3,beta,0.600000\n2,C4,alpha,0.300000\n");
}
