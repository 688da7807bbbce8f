#include <gtest/gtest.h>

#include <random>

#include "relaylab/representations.hpp"

using namespace relaylab;

namespace {

std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> normal;
  std::vector<double> v(n);
  for (double& x : v) x = normal(rng);
  return v;
}

Eigen::MatrixXd random_samples(std::size_t n, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd x(n, dim);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = normal(rng) * (1.0 + 3.0 / (1.0 + j));
  }
  return x;
}

double orthonormality_defect(const Eigen::MatrixXd& rows) {
  const Eigen::MatrixXd gram = rows * rows.transpose();
  return (gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff();
}

double reconstruction_error(const PcaModel& m, const Eigen::MatrixXd& x) {
  double err = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Eigen::VectorXd row = x.row(i).transpose();
    const std::vector<double> z = m.project({row.data(), static_cast<std::size_t>(row.size())});
    const std::vector<double> back = m.reconstruct(z);
    for (Eigen::Index j = 0; j < x.cols(); ++j) err += std::pow(back[j] - row(j), 2);
  }
  return std::sqrt(err);
}

}  // namespace

TEST(CosineDistance, NamedCases) {
  const std::vector<double> v{0.3, -1.2, 2.0};
  EXPECT_NEAR(cosine_distance(v, v), 0.0, 1e-15);
  EXPECT_DOUBLE_EQ(cosine_distance(std::vector<double>{1, 0}, std::vector<double>{0, 1}), 1.0);
  EXPECT_DOUBLE_EQ(cosine_distance(std::vector<double>{1, 2}, std::vector<double>{-1, -2}), 2.0);
}

TEST(CosineDistance, ZeroNormNamesTheArgument) {
  const std::vector<double> z{0, 0}, v{1, 0};
  try {
    (void)cosine_distance(v, z);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("second"), std::string::npos);
  }
  try {
    (void)cosine_distance(z, v);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("first"), std::string::npos);
  }
  EXPECT_THROW((void)cosine_distance(v, std::vector<double>{1, 0, 0}), DimensionError);
}

TEST(CosineDistance, SymmetricAndScaleInvariant) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = random_vector(rng, 17);
    const auto b = random_vector(rng, 17);
    const double c = scale(rng);
    std::vector<double> ca = a;
    for (double& x : ca) x *= c;
    EXPECT_NEAR(cosine_distance(a, ca), 0.0, 1e-14);
    EXPECT_DOUBLE_EQ(cosine_distance(a, b), cosine_distance(b, a));
    EXPECT_NEAR(cosine_distance(ca, b), cosine_distance(a, b), 1e-14);
    const double d = cosine_distance(a, b);
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 2.0);
  }
}

TEST(CosineDistance, ArgminInvariantToQueryScale) {
  std::mt19937_64 rng(2);
  std::vector<std::vector<double>> set;
  for (int i = 0; i < 300; ++i) set.push_back(random_vector(rng, 8));
  const auto argmin = [&](const std::vector<double>& q) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < set.size(); ++i) {
      if (cosine_distance(q, set[i]) < cosine_distance(q, set[best])) best = i;
    }
    return best;
  };
  for (int trial = 0; trial < 50; ++trial) {
    auto q = random_vector(rng, 8);
    const std::size_t k = argmin(q);
    for (double& x : q) x *= 37.5;
    EXPECT_EQ(argmin(q), k);
  }
}

TEST(FitPca, AllVarianceOnOneAxis) {
  Eigen::MatrixXd x(3, 2);
  x << 0, 0, 2, 0, 4, 0;
  const PcaModel m = fit_pca(x, 1);
  EXPECT_NEAR(std::abs(m.components(0, 0)), 1.0, 1e-12);
  EXPECT_NEAR(m.components(0, 1), 0.0, 1e-12);
  EXPECT_NEAR(m.explained_variance_ratio(), 1.0, 1e-12);
  EXPECT_NEAR(m.explained_variance(0), 4.0, 1e-12);
  EXPECT_NEAR(m.mean(0), 2.0, 1e-15);
}

TEST(FitPca, CompleteBasisReconstructsExactly) {
  // 12 centred samples in 40 dims have rank 11 (Gram route); 30 samples in
  // 8 dims have rank 8 (covariance route).
  const std::pair<std::size_t, std::size_t> cases[] = {{12, 40}, {30, 8}};
  for (const auto& [n, dim] : cases) {
    const Eigen::MatrixXd x = random_samples(n, dim, 3);
    const PcaModel m = fit_pca(x, std::min(n - 1, dim));
    EXPECT_FALSE(m.rank_deficient.has_value());
    EXPECT_LT(reconstruction_error(m, x), 1e-8 * x.norm()) << "dim " << dim;
  }
}

TEST(FitPca, MatchesDenseEigendecomposition) {
  const Eigen::MatrixXd x = random_samples(60, 20, 4);
  const PcaModel m = fit_pca(x, 5);
  const Eigen::MatrixXd c = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd cov = c.transpose() * c / 59.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  for (int i = 0; i < 5; ++i) {
    EXPECT_NEAR(m.explained_variance(i), es.eigenvalues()(19 - i), 1e-10);
    EXPECT_NEAR(std::abs(m.components.row(i).dot(es.eigenvectors().col(19 - i))), 1.0, 1e-8);
  }
  EXPECT_NEAR(m.total_variance, cov.trace(), 1e-10);
}

TEST(FitPca, GramAndCovarianceRoutesAgree) {
  // More samples than dims uses the covariance; fewer uses the Gram matrix.
  const Eigen::MatrixXd x = random_samples(30, 30, 5);
  const Eigen::MatrixXd wide = x.topRows(20);
  const PcaModel gram = fit_pca(wide, 6);
  const Eigen::MatrixXd c = wide.rowwise() - wide.colwise().mean();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c.transpose() * c / 19.0);
  for (int i = 0; i < 6; ++i) {
    EXPECT_NEAR(gram.explained_variance(i), es.eigenvalues()(29 - i), 1e-10);
    EXPECT_NEAR(std::abs(gram.components.row(i).dot(es.eigenvectors().col(29 - i))), 1.0, 1e-8);
  }
}

TEST(FitPca, OrthonormalNonincreasingAndMonotoneReconstruction) {
  const Eigen::MatrixXd x = random_samples(80, 25, 6);
  double previous = std::numeric_limits<double>::infinity();
  for (std::size_t n : {1u, 3u, 6u, 12u, 20u, 25u}) {
    const PcaModel m = fit_pca(x, n);
    EXPECT_LT(orthonormality_defect(m.components), 1e-8);
    for (Eigen::Index i = 1; i < m.explained_variance.size(); ++i) {
      EXPECT_LE(m.explained_variance(i), m.explained_variance(i - 1));
    }
    const double err = reconstruction_error(m, x);
    EXPECT_LE(err, previous * (1 + 1e-12));
    previous = err;
  }
}

TEST(FitPca, RankDeficiencyIsCompletedAndFlagged) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> normal;
  const Eigen::MatrixXd basis = random_samples(3, 30, 8);
  Eigen::MatrixXd x(20, 30);
  for (Eigen::Index i = 0; i < 20; ++i) {
    x.row(i) = normal(rng) * basis.row(0) + normal(rng) * basis.row(1) + normal(rng) * basis.row(2);
  }
  const PcaModel m = fit_pca(x, 7);
  ASSERT_TRUE(m.rank_deficient.has_value());
  EXPECT_EQ(*m.rank_deficient, 3u);
  EXPECT_LT(orthonormality_defect(m.components), 1e-8);
  for (int i = 3; i < 7; ++i) EXPECT_EQ(m.explained_variance(i), 0.0);
  EXPECT_NEAR(m.explained_variance_ratio(), 1.0, 1e-10);
}

TEST(FitPca, RejectsTooFewSamples) {
  EXPECT_THROW((void)fit_pca(random_samples(5, 10, 1), 5), std::invalid_argument);
  EXPECT_THROW((void)fit_pca(random_samples(5, 10, 1), 0), std::invalid_argument);
  EXPECT_NO_THROW((void)fit_pca(random_samples(6, 10, 1), 5));
}

TEST(Encode, RawOfZeroIsZero) {
  const LatentVector z = encode(EncoderSpec::raw(), Field(Grid{}));
  ASSERT_EQ(z.size(), 4096u);
  for (double v : z) EXPECT_EQ(v, 0.0);
}

TEST(Encode, RawIsRowMajorFlattening) {
  const Grid g{4, 4, 1.0};
  const Field f = Field::from_function(g, [](double x, double y) { return x + 10 * y; });
  const LatentVector z = encode(EncoderSpec::raw(), f);
  EXPECT_DOUBLE_EQ(z[1], 0.25);
  EXPECT_DOUBLE_EQ(z[4], 2.5);
}

TEST(Encode, PcaOfMeanFieldIsZero) {
  const Grid g{8, 8, 1.0};
  std::vector<Field> samples;
  std::mt19937_64 rng(9);
  std::normal_distribution<double> normal;
  for (int i = 0; i < 30; ++i) {
    Field f(g);
    for (double& v : f.values()) v = normal(rng);
    samples.push_back(std::move(f));
  }
  auto model = std::make_shared<PcaModel>(fit_pca(samples, 4));
  const Field mean_field(g, std::vector<double>(model->mean.data(), model->mean.data() + model->mean.size()));
  const LatentVector z = encode(EncoderSpec::pca(model), mean_field);
  ASSERT_EQ(z.size(), 4u);
  for (double v : z) EXPECT_NEAR(v, 0.0, 1e-14);
  EXPECT_THROW((void)encode(EncoderSpec::pca(model), Field(Grid{})), DimensionError);
}

TEST(Encode, ExternalLooksUpTheStoredVector) {
  auto table = std::make_shared<LatentTable>(3);
  table->insert(FrameKey{3, 12}, {0.5, -1.0, 2.0});
  const EncoderSpec spec = EncoderSpec::external(table);
  const Field ignored(Grid{});
  EXPECT_EQ(encode(spec, ignored, FrameKey{3, 12}), (LatentVector{0.5, -1.0, 2.0}));
  EXPECT_THROW((void)encode(spec, ignored, FrameKey{3, 13}), MissingKeyError);
  EXPECT_THROW((void)encode(spec, ignored), std::invalid_argument);
}

TEST(Encode, SpecInvariants) {
  EncoderSpec pca;
  pca.kind = EncoderKind::pca;
  EXPECT_THROW(pca.validate(), std::invalid_argument);
  EncoderSpec ext;
  ext.kind = EncoderKind::external;
  EXPECT_THROW(ext.validate(), std::invalid_argument);
}

TEST(Encode, PureFunction) {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> normal;
  Field f(Grid{8, 8, 1.0});
  for (double& v : f.values()) v = normal(rng);
  const LatentVector a = encode(EncoderSpec::raw(), f);
  const LatentVector b = encode(EncoderSpec::raw(), f);
  EXPECT_EQ(a, b);
}
