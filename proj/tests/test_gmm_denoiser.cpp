#include <gtest/gtest.h>

#include <memory>
#include <random>

#include "dense_oracles.hpp"
#include "pnp/gmm_denoiser.hpp"

using namespace pnp;

namespace {

std::shared_ptr<const GMMModel> scalar_model(double c, Index np) {
  return std::make_shared<GMMModel>(Eigen::VectorXd::Ones(1),
                                    std::vector<Eigen::MatrixXd>{c * Eigen::MatrixXd::Identity(np, np)});
}

FixedWeightPlan random_plan(Index w, Index h, Index side, Index K, std::mt19937_64& rng, bool means = false) {
  auto model = std::make_shared<GMMModel>(oracle::random_model(K, side * side, rng));
  const BandImage train = oracle::random_image(w, h, rng, 2.0);
  return freeze_weights(model, train, 0.3, PatchGeometry(w, h, side), means);
}

// (1/n_p) sum_i P_i^T (m_i 1): the local box mean over the patches covering a pixel.
Eigen::VectorXd aggregated_means(const BandImage& img, Index s) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(img.size());
  for (Index r = 0; r < img.height; ++r)
    for (Index c = 0; c < img.width; ++c) {
      double m = 0.0;
      for (Index dr = 0; dr < s; ++dr)
        for (Index dc = 0; dc < s; ++dc) m += img.at((r + dr) % img.height, (c + dc) % img.width);
      m /= static_cast<double>(s * s);
      for (Index dr = 0; dr < s; ++dr)
        for (Index dc = 0; dc < s; ++dc) out[((r + dr) % img.height) * img.width + (c + dc) % img.width] += m;
    }
  return out / static_cast<double>(s * s);
}

}  // namespace

TEST(DenoiseMmse, ScalarCovarianceShrinksTowardPatchMean) {
  std::mt19937_64 rng(1);
  const double c = 0.7, sigma = 0.5;
  const BandImage img = oracle::random_image(6, 5, rng);
  const BandImage out = denoise_mmse(*scalar_model(c, 4), img, sigma, PatchGeometry(6, 5, 2));
  const double f = c / (c + sigma * sigma);
  const Eigen::VectorXd expected = f * img.values + (1.0 - f) * aggregated_means(img, 2);
  EXPECT_LE((out.values - expected).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(DenoiseMmse, VanishingNoiseIsIdentity) {
  std::mt19937_64 rng(2);
  const GMMModel m = oracle::random_model(3, 9, rng, 1e-2);
  const BandImage img = oracle::random_image(8, 8, rng);
  const BandImage out = denoise_mmse(m, img, 1e-7, PatchGeometry(8, 8, 3));
  EXPECT_LE((out.values - img.values).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(DenoiseMmse, MatchesDenseBruteForce) {
  std::mt19937_64 rng(3);
  const GMMModel m = oracle::random_model(2, 4, rng);
  for (bool means : {true, false}) {
    const BandImage img = oracle::random_image(8, 8, rng);
    const BandImage out = denoise_mmse(m, img, 0.4, PatchGeometry(8, 8, 2), means);
    const Eigen::VectorXd expected = oracle::mmse_denoise(m, img, 0.4, 2, means);
    EXPECT_LE((out.values - expected).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(DenoiseMmse, RejectsBadInput) {
  std::mt19937_64 rng(4);
  const GMMModel m = oracle::random_model(1, 4, rng);
  BandImage img = oracle::random_image(4, 4, rng);
  EXPECT_THROW(denoise_mmse(m, img, 0.0, PatchGeometry(4, 4, 2)), InvalidArgument);
  img.values[3] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(denoise_mmse(m, img, 0.1, PatchGeometry(4, 4, 2)), DataError);
}

TEST(FreezeWeights, SingleComponentGivesUnitWeights) {
  std::mt19937_64 rng(5);
  const FixedWeightPlan plan = freeze_weights(scalar_model(1.0, 4), oracle::random_image(5, 5, rng), 0.2, PatchGeometry(5, 5, 2));
  EXPECT_TRUE((plan.beta().beta.array() == 1.0).all());
}

TEST(FreezeWeights, DeterministicAndEqualToResponsibilities) {
  std::mt19937_64 rng(6);
  auto model = std::make_shared<GMMModel>(oracle::random_model(3, 4, rng));
  const BandImage train = oracle::random_image(6, 6, rng);
  const PatchGeometry g(6, 6, 2);
  const FixedWeightPlan a = freeze_weights(model, train, 0.25, g), b = freeze_weights(model, train, 0.25, g);
  EXPECT_EQ(a.beta().beta, b.beta().beta);
  const Responsibilities direct = responsibilities(*model, extract_patches(train, g, true), 0.25);
  EXPECT_EQ(a.beta().beta, direct.beta);
}

TEST(ApplyFixed, IsLinear) {
  std::mt19937_64 rng(7);
  for (bool means : {false, true}) {
    const FixedWeightPlan plan = random_plan(8, 8, 2, 3, rng, means);
    const BandImage y1 = oracle::random_image(8, 8, rng), y2 = oracle::random_image(8, 8, rng);
    const double a = 1.7, b = -0.6;
    BandImage mix(8, 8, a * y1.values + b * y2.values);
    const Eigen::VectorXd lhs = apply_fixed(plan, mix, 0.5).values;
    const Eigen::VectorXd rhs = a * apply_fixed(plan, y1, 0.5).values + b * apply_fixed(plan, y2, 0.5).values;
    EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-10 * (1.0 + rhs.cwiseAbs().maxCoeff()));
  }
}

TEST(ApplyFixed, VanishingNoiseIsIdentity) {
  std::mt19937_64 rng(8);
  const FixedWeightPlan plan = random_plan(8, 8, 3, 2, rng, true);
  const BandImage y = oracle::random_image(8, 8, rng);
  EXPECT_LE((apply_fixed(plan, y, 1e-7).values - y.values).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(ApplyFixed, MatchesDenseOperator) {
  std::mt19937_64 rng(9);
  for (bool means : {false, true}) {
    const FixedWeightPlan plan = random_plan(8, 8, 2, 2, rng, means);
    const BandImage y = oracle::random_image(8, 8, rng);
    const Eigen::MatrixXd W = oracle::fixed_W(plan.model(), plan.beta().beta, 0.6, 8, 8, 2, means);
    EXPECT_LE((apply_fixed(plan, y, 0.6).values - W * y.values).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LE((materialize_W(plan, 0.6) - W).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(ApplyFixed, ShapeMismatchThrows) {
  std::mt19937_64 rng(10);
  const FixedWeightPlan plan = random_plan(6, 6, 2, 2, rng);
  EXPECT_THROW(apply_fixed(plan, BandImage(6, 5), 0.5), InvalidArgument);
  EXPECT_THROW(apply_fixed(plan, BandImage(6, 6), 0.0), InvalidArgument);
}

TEST(ApplyFixed, IsAStrictContraction) {
  std::mt19937_64 rng(11);
  const FixedWeightPlan plan = random_plan(8, 8, 2, 3, rng);
  const double norm = analyze_operator(plan, 0.5).spectral_norm;
  ASSERT_LT(norm, 1.0);
  for (int t = 0; t < 5; ++t) {
    const BandImage y1 = oracle::random_image(8, 8, rng), y2 = oracle::random_image(8, 8, rng);
    const double lhs = (apply_fixed(plan, y1, 0.5).values - apply_fixed(plan, y2, 0.5).values).norm();
    const double d = (y1.values - y2.values).norm();
    EXPECT_LE(lhs, norm * d * (1.0 + 1e-12));
    EXPECT_LT(lhs, d);
  }
}

TEST(MaterializeW, UnitPatchesScalarCovariance) {
  const double c = 0.8, sigma = 0.3;
  const FixedWeightPlan plan(scalar_model(c, 1), Responsibilities{Eigen::MatrixXd::Ones(20, 1)}, PatchGeometry(5, 4, 1), false);
  const Eigen::MatrixXd W = materialize_W(plan, sigma);
  EXPECT_LE((W - c / (c + sigma * sigma) * Eigen::MatrixXd::Identity(20, 20)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(MaterializeW, ColumnsMatchUnitProbes) {
  std::mt19937_64 rng(12);
  for (bool means : {false, true}) {
    const FixedWeightPlan plan = random_plan(6, 6, 3, 2, rng, means);
    const Eigen::MatrixXd W = materialize_W(plan, 0.4);
    for (Index j = 0; j < 36; ++j) {
      BandImage e(6, 6);
      e.values[j] = 1.0;
      EXPECT_LE((W.col(j) - apply_fixed(plan, e, 0.4).values).cwiseAbs().maxCoeff(), 1e-13);
    }
  }
}

TEST(MaterializeW, PartitionAssemblyMatchesDirect) {
  std::mt19937_64 rng(13);
  const FixedWeightPlan plan = random_plan(8, 8, 2, 3, rng);
  const PatchPartition part = build_partition(plan.geometry());
  const auto blocks = partition_blocks(plan, 0.5, part);
  ASSERT_EQ(blocks.size(), 4u);
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(64, 64);
  for (const auto& a : blocks) sum += a;
  EXPECT_LE((sum / 4.0 - materialize_W(plan, 0.5)).cwiseAbs().maxCoeff(), 1e-12);

  // Each A_j is block diagonal under the permutation grouping pixels by patch,
  // and its spectrum is the union of the spectra of its F_k.
  const auto filters = component_filters(plan.model(), 0.5);
  const PatchGeometry& g = plan.geometry();
  for (std::size_t j = 0; j < blocks.size(); ++j) {
    std::vector<Index> perm;
    for (Index k : part.subsets[j])
      for (Index s = 0; s < 4; ++s) perm.push_back(g.pixel_of(k, s));
    const Eigen::MatrixXd pa = blocks[j](perm, perm);
    std::vector<double> expected;
    for (std::size_t b = 0; b < part.subsets[j].size(); ++b) {
      const Index k = part.subsets[j][b];
      const Eigen::MatrixXd fk = detail::patch_operator(plan, filters, k, false);
      EXPECT_LE((pa.block(4 * b, 4 * b, 4, 4) - fk).cwiseAbs().maxCoeff(), 1e-15);
      Eigen::MatrixXd off = pa.middleRows(4 * b, 4);
      off.middleCols(4 * b, 4).setZero();
      EXPECT_EQ(off.cwiseAbs().maxCoeff(), 0.0);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(fk, Eigen::EigenvaluesOnly);
      for (Index q = 0; q < 4; ++q) expected.push_back(es.eigenvalues()[q]);
    }
    std::sort(expected.begin(), expected.end());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> as(blocks[j], Eigen::EigenvaluesOnly);
    for (Index q = 0; q < 64; ++q) EXPECT_NEAR(as.eigenvalues()[q], expected[static_cast<std::size_t>(q)], 1e-12);
  }
}

TEST(MaterializeW, RespectsCap) {
  std::mt19937_64 rng(14);
  const FixedWeightPlan plan = random_plan(8, 8, 2, 1, rng);
  EXPECT_THROW(materialize_W(plan, 0.5, 32), InvalidArgument);
}

TEST(SpectrumCheck, RandomPlansHaveSpectrumInsideUnitInterval) {
  std::mt19937_64 rng(15);
  for (int t = 0; t < 4; ++t) {
    const FixedWeightPlan plan = random_plan(8, 8, 2, 3, rng);
    const DenoiserReport rep = verify_lemma1(plan, 0.5, true);
    EXPECT_GT(rep.w_range.min, 0.0);
    EXPECT_LT(rep.w_range.max, 1.0);
    EXPECT_LE(rep.symmetry_defect_relative, 1e-12);
    EXPECT_TRUE(rep.within_analytic_hull);
    EXPECT_GE(rep.patch_filter_range.min, rep.analytic_hull.min - 1e-12);
    EXPECT_LE(rep.patch_filter_range.max, rep.analytic_hull.max + 1e-12);
    ASSERT_EQ(rep.subset_ranges.size(), 4u);
    for (const auto& r : rep.subset_ranges) {
      EXPECT_GT(r.min, 0.0);
      EXPECT_LT(r.max, 1.0);
    }
    EXPECT_NE(rep.to_text().find("lambda_max:"), std::string::npos);
  }
}

TEST(SpectrumCheck, ScalarCovarianceGivesSingleEigenvalue) {
  const double c = 1.5, sigma = 0.5;
  const FixedWeightPlan plan(scalar_model(c, 4), Responsibilities{Eigen::MatrixXd::Ones(36, 1)}, PatchGeometry(6, 6, 2), false);
  const DenoiserReport rep = verify_lemma1(plan, sigma);
  EXPECT_NEAR(rep.w_range.min, c / (c + sigma * sigma), 1e-13);
  EXPECT_NEAR(rep.w_range.max, c / (c + sigma * sigma), 1e-13);
}

TEST(ProxCheck, ZeroInputGivesZeroDefect) {
  std::mt19937_64 rng(16);
  const FixedWeightPlan plan = random_plan(6, 6, 2, 2, rng);
  EXPECT_EQ(prox_check(plan, 0.5, BandImage(6, 6)), 0.0);
}

TEST(ProxCheck, RandomInputsSatisfyProxIdentity) {
  std::mt19937_64 rng(17);
  for (int t = 0; t < 3; ++t) {
    const FixedWeightPlan plan = random_plan(8, 8, 2, 3, rng);
    EXPECT_LE(prox_check(plan, 0.5, oracle::random_image(8, 8, rng)), 1e-8);
  }
}

TEST(ProxCheck, ScalarCase) {
  // prox of g(x) = 1/2 x^2 sigma^2 / c at y is y c / (c + sigma^2).
  const double c = 2.0, sigma = 0.7, y = 1.3;
  const FixedWeightPlan plan(scalar_model(c, 1), Responsibilities{Eigen::MatrixXd::Ones(1, 1)}, PatchGeometry(1, 1, 1), false);
  BandImage img(1, 1);
  img.values[0] = y;
  EXPECT_NEAR(apply_fixed(plan, img, sigma).values[0], y * c / (c + sigma * sigma), 1e-15);
  EXPECT_LE(prox_check(plan, sigma, img), 1e-14);
}

TEST(ScalarMap, EqualVariancesGiveALine) {
  std::vector<double> grid;
  for (int i = -50; i <= 50; ++i) grid.push_back(0.1 * i);
  const auto x = scalar_mmse_map({0.3, 0.7}, {2.0, 2.0}, 1.0, grid);
  for (std::size_t i = 0; i < grid.size(); ++i) EXPECT_NEAR(x[i], grid[i] * 2.0 / 3.0, 1e-14);
}

TEST(ScalarMap, SeparatedVariancesAreExpansiveSomewhere) {
  std::vector<double> grid;
  for (int i = -4000; i <= 4000; ++i) grid.push_back(i * 0.0025);
  const auto x = scalar_mmse_map({0.5, 0.5}, {0.1, 10.0}, 1.0, grid);
  double max_slope = 0.0;
  for (std::size_t i = 1; i < grid.size(); ++i) max_slope = std::max(max_slope, (x[i] - x[i - 1]) / (grid[i] - grid[i - 1]));
  EXPECT_GT(max_slope, 1.0);
}

TEST(ScalarMap, FixedWeightsGiveConstantSlopeBelowOne) {
  std::vector<double> grid;
  for (int i = -100; i <= 100; ++i) grid.push_back(0.05 * i);
  for (double b : {0.0, 0.2, 0.5, 0.9, 1.0}) {
    const auto x = scalar_fixed_map({b, 1.0 - b}, {0.1, 10.0}, 1.0, grid);
    const double slope0 = (x[1] - x[0]) / (grid[1] - grid[0]);
    EXPECT_GT(slope0, 0.0);
    EXPECT_LT(slope0, 1.0);
    for (std::size_t i = 1; i < grid.size(); ++i) EXPECT_NEAR((x[i] - x[i - 1]) / (grid[i] - grid[i - 1]), slope0, 1e-12);
  }
}
