#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "lebm/diagnostics.hpp"
#include "lebm/error.hpp"
#include "lebm/eval.hpp"
#include "lebm/sampler.hpp"
#include "support.hpp"

namespace lebm {
namespace {

using test::random_prior;

EbmPrior identity_prior() {
  EbmPrior p{Mlp({1, 1}, Activation::Tanh)};
  p.f.layers()[0].weight(0, 0) = 1.0;
  return p;
}

Model collapsed_model(std::uint64_t seed) {
  ModelSpec spec = test::small_spec(2, 2, 3);
  Model m = Model::create(spec, seed);
  Layer& out = m.posterior.encoder.layers().back();
  out.weight.bottomRows(2).setZero();
  out.bias.bottomRows(2).setConstant(-1000.0);
  return m;
}

TEST(Classify, CollapsedEncoderMatchesPosteriorAtMean) {
  const Model m = collapsed_model(1);
  Rng rng(2);
  const Matrix x = rng.normal_matrix(20, 2);
  const Classification c = classify(m.prior, m.posterior, x, 50, 3);
  const Matrix at_mu = class_posterior(m.prior, encode(m.posterior, x).mu);
  // The clamp keeps exp(logvar / 2) at e^-5, so the limit is approached, not hit.
  EXPECT_LE((c.probs - at_mu).cwiseAbs().maxCoeff(), 1e-2);
  for (Eigen::Index r = 0; r < x.rows(); ++r) EXPECT_NEAR(c.probs.row(r).sum(), 1.0, 1e-12);
}

TEST(Classify, ZeroPriorIsUniform) {
  Model m = Model::create(test::small_spec(2, 2, 4), 4);
  for (Matrix* p : m.prior.f.parameters()) p->setZero();
  Rng rng(5);
  for (int n_mc : {1, 7}) {
    const Classification c = classify(m.prior, m.posterior, rng.normal_matrix(6, 2), n_mc, 0);
    EXPECT_TRUE(c.probs.isApprox(Matrix::Constant(6, 4, 0.25), 1e-15));
  }
}

TEST(Classify, ManyDrawsMatchQuadrature) {
  ModelSpec spec = test::small_spec(2, 1, 3);
  spec.net_activation = Activation::Tanh;
  const Model m = Model::create(spec, 6);
  const Matrix x = Matrix::Constant(1, 2, -0.3);
  const Encoded q = encode(m.posterior, x);
  const double mu = q.mu(0, 0), sd = std::exp(0.5 * q.logvar(0, 0));
  Matrix nodes(2001, 1);
  Vector w(2001);
  for (int i = 0; i < 2001; ++i) {
    nodes(i, 0) = mu + sd * (-8.0 + 16.0 * i / 2000.0);
    w(i) = std::exp(-0.5 * std::pow((nodes(i, 0) - mu) / sd, 2));
  }
  const Matrix post = class_posterior(m.prior, nodes);
  const Eigen::RowVectorXd expected = (post.array().colwise() * w.array()).colwise().sum() / w.sum();
  const Classification c = classify(m.prior, m.posterior, x, 2000, 7);
  EXPECT_LE((c.probs.row(0) - expected).cwiseAbs().maxCoeff(), 0.01);
}

TEST(Classify, InvariantToLogitShift) {
  Model m = Model::create(test::small_spec(2, 2, 3), 8);
  Rng rng(9);
  const Matrix x = rng.normal_matrix(10, 2);
  const Classification a = classify(m.prior, m.posterior, x, 20, 1);
  m.prior.f.layers().back().bias.array() += 7.5;
  const Classification b = classify(m.prior, m.posterior, x, 20, 1);
  EXPECT_LE((a.probs - b.probs).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(a.labels, b.labels);
}

TEST(Classify, Errors) {
  const Model m = Model::create(test::small_spec(), 1);
  EXPECT_THROW(classify(m.prior, m.posterior, Matrix::Zero(1, 2), 0, 0), Error);
  Matrix x = Matrix::Zero(1, 2);
  x(0, 0) = NAN;
  try {
    classify(m.prior, m.posterior, x, 1, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteInput);
  }
}

TEST(Accuracy, TrivialCases) {
  EXPECT_EQ(accuracy({0, 1, 2}, {0, 1, 2}), 1.0);
  EXPECT_EQ(accuracy({1, 0}, {0, 1}), 0.0);
  EXPECT_EQ(accuracy({1, 1, 0, 0}, {1, 0, 1, 0}), 0.5);
  try {
    accuracy({}, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidInput);
  }
}

TEST(QuadratureLogZ, ConstantEnergyGivesLogK) {
  for (int k : {1, 2, 5}) {
    const EbmPrior p{Mlp({1, 4, k}, Activation::Tanh)};
    EXPECT_NEAR(quadrature_log_Z(p, QuadratureGrid::default_for(1)), std::log(k), 1e-6);
    const EbmPrior p2{Mlp({2, 4, k}, Activation::Tanh)};
    EXPECT_NEAR(quadrature_log_Z(p2, QuadratureGrid::default_for(2)), std::log(k), 1e-6);
  }
}

TEST(QuadratureLogZ, LinearEnergyIsGaussianMgf) {
  EXPECT_NEAR(quadrature_log_Z(identity_prior(), QuadratureGrid::default_for(1)), 0.5, 1e-6);
}

TEST(QuadratureLogZ, RefinementConverges) {
  for (const EbmPrior& p : {identity_prior(), random_prior(3, 1, 3, {8})}) {
    std::vector<double> values;
    for (int n : {256, 512, 1024}) values.push_back(quadrature_log_Z(p, QuadratureGrid(1, -6.0, 6.0, n)));
    EXPECT_LT(std::abs(values[2] - values[1]), std::abs(values[1] - values[0]));
  }
}

TEST(QuadratureLogZ, RejectsHighDimensions) {
  try {
    quadrature_log_Z(random_prior(1, 3, 2), QuadratureGrid::default_for(2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnsupportedDimension);
  }
  EXPECT_THROW(QuadratureGrid(3, -6, 6, 64), Error);
}

TEST(QuadraturePrior, NormalizedDensityIntegratesToOne) {
  for (int d : {1, 2}) {
    const EbmPrior p = random_prior(10 + d, d, 3);
    const QuadratureGrid grid = QuadratureGrid::default_for(d);
    const GridDensity g = quadrature_prior(p, grid);
    EXPECT_NEAR(g.mass.sum(), 1.0, 1e-12);
    const double integral = (g.log_density + grid.log_weights()).array().exp().sum();
    EXPECT_NEAR(integral, 1.0, 1e-6);
  }
}

TEST(FiniteDiffCheck, QuadraticIsNearlyExact) {
  Matrix w(2, 3);
  w << 0.3, -1.2, 2.0, 0.7, 0.1, -0.4;
  const LossAndGrad fn = [&] { return std::make_pair(0.5 * w.squaredNorm() + w.sum(), ParamGrads{w.array() + 1.0}); };
  EXPECT_LE(finite_diff_check(fn, {&w}), 1e-9);
  const Matrix before = w;
  finite_diff_check(fn, {&w});
  EXPECT_EQ(w, before);
}

TEST(FiniteDiffCheck, DetectsNonDeterminism) {
  Matrix w = Matrix::Ones(1, 1);
  int calls = 0;
  const LossAndGrad fn = [&] { return std::make_pair(w(0, 0) + 1e-3 * ++calls, ParamGrads{Matrix::Ones(1, 1)}); };
  try {
    finite_diff_check(fn, {&w});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonDeterministicLoss);
  }
}

TEST(FiniteDiffCheck, FlagsAWrongGradient) {
  Matrix w = Matrix::Constant(1, 2, 0.5);
  const LossAndGrad fn = [&] { return std::make_pair(w.squaredNorm(), ParamGrads{2.01 * w}); };
  EXPECT_GT(finite_diff_check(fn, {&w}), 1e-3);
}

TEST(DivergencePerturbation, VanishesAtExactSamplers) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Model m = toy_model_1d(seed);
    const QuadratureGrid grid = QuadratureGrid::default_for(1);
    const DivergenceTerms t = divergence_perturbation(m.prior, m.decoder, exact_posterior_sampler(m.prior, m.decoder),
                                                      exact_prior_sampler(m.prior), toy_data_1d(), grid);
    EXPECT_LE(std::abs(t.positive_kl), 1e-6);
    EXPECT_LE(std::abs(t.negative_kl), 1e-6);
    EXPECT_NEAR(t.delta, t.data_kl, 1e-6);
  }
}

TEST(DivergencePerturbation, BiasedNegativeSamplerSignStructure) {
  const Model m = toy_model_1d(4);
  const QuadratureGrid grid = QuadratureGrid::default_for(1);
  // A standard normal offset by one: a deliberately wrong prior sampler.
  const LogDensity biased = [](const Matrix& nodes) {
    return Vector((-0.5 * (nodes.col(0).array() - 1.0).square()).matrix());
  };
  const Model other = toy_model_1d(5);
  const DivergenceTerms t = divergence_perturbation(m.prior, m.decoder, exact_posterior_sampler(other.prior, other.decoder),
                                                    biased, toy_data_1d(), grid);
  EXPECT_GT(t.negative_kl, 0.0);
  EXPECT_GE(t.positive_kl, -1e-9);
  EXPECT_LT(t.delta, t.data_kl + t.positive_kl);
}

TEST(DivergencePerturbation, GradientEqualsMaximumLikelihoodGradient) {
  const std::vector<DiagnosticRecord> r = check_divergence_perturbation(6);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_TRUE(r[0].pass) << r[0].value;
  EXPECT_TRUE(r[1].pass) << r[1].value;
}

TEST(DivergencePerturbation, RejectsHighDimensions) {
  const Model m = Model::create(test::small_spec(3, 1), 1);
  EXPECT_THROW(divergence_perturbation(m.prior, m.decoder, exact_posterior_sampler(m.prior, m.decoder),
                                       exact_prior_sampler(m.prior), Matrix::Zero(2, 3), QuadratureGrid::default_for(1)),
               Error);
}

TEST(HistogramTv, ExactSamplesScoreLow) {
  // Draws from the constant-energy prior are exact N(0, I) samples.
  const EbmPrior p{Mlp({2, 4, 3}, Activation::Tanh)};
  Rng rng(7);
  EXPECT_LE(histogram_tv_distance(rng.normal_matrix(200000, 2), p, 20, -4.0, 4.0), 0.02);
  EXPECT_GE(histogram_tv_distance(rng.normal_matrix(200000, 2).array() + 1.0, p, 20, -4.0, 4.0), 0.3);
}

TEST(DiagnosticRecords, JsonLines) {
  const std::string text = to_json_lines({{"a.b", 1e-7, 1e-5, true}, {"c", 2.0, 1.0, false}});
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("check") && j.contains("value") && j.contains("tolerance") && j.contains("pass"));
    ++n;
  }
  EXPECT_EQ(n, 2);
}

TEST(Diagnostics, FreshModelPassesGradientChecksAndFaultIsCaught) {
  const Model m = Model::create(test::small_spec(2, 3, 3), 11);
  EXPECT_TRUE(check_psi_gradient(m, 1).pass);
  EXPECT_TRUE(check_supervised_gradient(m, 1).pass);
  EXPECT_TRUE(check_prior_energy_gradient(m, 1).pass);
  EXPECT_TRUE(check_score(m, 1).pass);
  EXPECT_FALSE(check_psi_gradient(m, 1, true).pass);
  EXPECT_TRUE(check_ula_stationarity(m, 0.6, 0.05, 1, 1).pass);
}

}  // namespace
}  // namespace lebm
