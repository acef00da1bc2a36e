#include <gtest/gtest.h>

#include <cmath>

#include "lebm/error.hpp"
#include "lebm/eval.hpp"
#include "lebm/kernels.hpp"
#include "lebm/nets.hpp"
#include "support.hpp"

namespace lebm {
namespace {

using test::random_prior;

EbmPrior linear_prior(Matrix w, Matrix b) {
  EbmPrior p{Mlp({static_cast<int>(w.cols()), static_cast<int>(w.rows())}, Activation::Tanh)};
  p.f.layers()[0].weight = std::move(w);
  p.f.layers()[0].bias = std::move(b);
  return p;
}

TEST(EbmLogits, ZeroFinalLayerGivesZero) {
  EbmPrior p = random_prior(1, 3, 4);
  p.f.layers().back().weight.setZero();
  p.f.layers().back().bias.setZero();
  Rng rng(2);
  EXPECT_TRUE(ebm_logits(p, rng.normal_matrix(5, 3)).isZero(0.0));
}

TEST(EbmLogits, HandSetLinearLayer) {
  Matrix w(2, 1);
  w << 1.0, -1.0;
  const EbmPrior p = linear_prior(w, Matrix::Zero(2, 1));
  const Matrix out = ebm_logits(p, Matrix::Constant(1, 1, 0.5));
  EXPECT_EQ(out(0, 0), 0.5);
  EXPECT_EQ(out(0, 1), -0.5);
}

TEST(EbmLogits, WrongLatentWidth) {
  const EbmPrior p = random_prior(1, 3, 2);
  EXPECT_THROW(ebm_logits(p, Matrix::Zero(1, 2)), Error);
}

TEST(EbmLogits, LatentGradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    EbmPrior p = random_prior(seed, 3, 4);
    Rng rng(seed + 50);
    const Matrix z = rng.normal_matrix(4, 3);
    const double err = test::tape_gradient_error(
        [&](Tape& t, const std::vector<Tensor>& v) {
          Rng w(9);
          return ad::sum(ebm_logits(p.f.bind(t, false), v[0]) * t.constant(w.normal_matrix(4, 4)));
        },
        {z});
    EXPECT_LE(err, 1e-5);
  }
}

TEST(ClassPosterior, UniformWhenLogitsEqual) {
  const EbmPrior p = linear_prior(Matrix::Zero(5, 2), Matrix::Constant(5, 1, 1.3));
  const Matrix post = class_posterior(p, Matrix::Ones(3, 2));
  for (Eigen::Index i = 0; i < post.size(); ++i) EXPECT_DOUBLE_EQ(post.data()[i], 0.2);
}

TEST(ClassPosterior, ExactSoftmaxArithmetic) {
  Matrix b(2, 1);
  b << std::log(3.0), 0.0;
  const Matrix post = class_posterior(linear_prior(Matrix::Zero(2, 1), b), Matrix::Zero(1, 1));
  EXPECT_NEAR(post(0, 0), 0.75, 1e-15);
  EXPECT_NEAR(post(0, 1), 0.25, 1e-15);
}

TEST(ClassPosterior, ArgmaxMatchesLogits) {
  const EbmPrior p = random_prior(3, 2, 5);
  Rng rng(4);
  const Matrix z = 2.0 * rng.normal_matrix(200, 2);
  const Matrix logits = ebm_logits(p, z);
  const Matrix post = class_posterior(p, z);
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    Eigen::Index a = 0, b = 0;
    logits.row(r).maxCoeff(&a);
    post.row(r).maxCoeff(&b);
    EXPECT_EQ(a, b);
    EXPECT_NEAR(post.row(r).sum(), 1.0, 1e-12);
  }
}

TEST(MarginalEnergy, ZeroLogitsGiveLogK) {
  const EbmPrior p = linear_prior(Matrix::Zero(10, 2), Matrix::Zero(10, 1));
  EXPECT_NEAR(marginal_energy(p, Matrix::Zero(1, 2))(0), 2.302585093, 1e-9);
}

TEST(MarginalEnergy, SingleClassIsTheLogit) {
  const EbmPrior p = random_prior(5, 3, 1);
  Rng rng(6);
  const Matrix z = rng.normal_matrix(10, 3);
  const Vector f = marginal_energy(p, z);
  const Matrix l = ebm_logits(p, z);
  for (Eigen::Index r = 0; r < z.rows(); ++r) EXPECT_EQ(f(r), l(r, 0));
}

TEST(MarginalEnergy, BoundedAboveMaxLogit) {
  Rng rng(7);
  for (int draw = 0; draw < 100; ++draw) {
    const EbmPrior p = random_prior(100 + draw, 2, 6);
    const Matrix z = rng.normal_matrix(1, 2);
    const double gap = marginal_energy(p, z)(0) - ebm_logits(p, z).maxCoeff();
    EXPECT_GE(gap, 0.0);
    EXPECT_LE(gap, std::log(6.0));
  }
}

TEST(MarginalEnergy, IsBitwiseLogsumexpOfLogits) {
  const EbmPrior p = random_prior(8, 3, 4);
  Rng rng(9);
  const Matrix z = rng.normal_matrix(30, 3);
  const Vector f = marginal_energy(p, z);
  const Matrix l = ebm_logits(p, z);
  for (Eigen::Index r = 0; r < z.rows(); ++r) EXPECT_EQ(f(r), logsumexp(l.row(r)));
}

TEST(MarginalEnergy, ExpIsSumOfExpLogits) {
  Rng rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix b(4, 1);
    for (int k = 0; k < 4; ++k) b(k) = -20.0 + 40.0 * rng.uniform();
    const EbmPrior p = linear_prior(Matrix::Zero(4, 1), b);
    const double lhs = std::exp(marginal_energy(p, Matrix::Zero(1, 1))(0));
    const double rhs = b.array().exp().sum();
    EXPECT_LE(std::abs(lhs - rhs) / rhs, 1e-12);
  }
}

TEST(MarginalEnergy, LatentGradientIsPosteriorWeightedLogitGradient) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const EbmPrior p = random_prior(seed, 3, 4);
    Rng rng(seed + 1);
    const Matrix z = rng.normal_matrix(1, 3);
    Tape tape;
    const Mlp::Bound f = p.f.bind(tape, false);
    const Tensor zv = tape.variable(z);
    tape.backward(ad::sum(marginal_energy(f, zv)));
    const Matrix direct = zv.grad();

    const Matrix post = class_posterior(p, z);
    Matrix expectation = Matrix::Zero(1, 3);
    for (int k = 0; k < 4; ++k) {
      Tape t;
      const Tensor zk = t.variable(z);
      t.backward(ad::slice_cols(ebm_logits(p.f.bind(t, false), zk), k, 1));
      expectation += post(0, k) * zk.grad();
    }
    EXPECT_LE((direct - expectation).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Encode, ZeroFinalLayerIsStandardNormal) {
  const ModelSpec spec = test::small_spec(3, 2);
  Model m = Model::create(spec, 1);
  m.posterior.encoder.layers().back().weight.setZero();
  Rng rng(2);
  const Encoded e = encode(m.posterior, rng.normal_matrix(4, 3));
  EXPECT_TRUE(e.mu.isZero(0.0));
  EXPECT_TRUE(e.logvar.isZero(0.0));
}

TEST(Encode, LogvarIsClamped) {
  Model m = Model::create(test::small_spec(2, 2), 3);
  m.posterior.encoder.layers().back().bias.bottomRows(2).setConstant(-50.0);
  m.posterior.encoder.layers().back().weight.setZero();
  const Encoded e = encode(m.posterior, Matrix::Ones(2, 2));
  EXPECT_TRUE((e.logvar.array() == AmortizedPosterior::kLogvarMin).all());
  m.posterior.encoder.layers().back().bias.bottomRows(2).setConstant(50.0);
  EXPECT_TRUE((encode(m.posterior, Matrix::Ones(2, 2)).logvar.array() == AmortizedPosterior::kLogvarMax).all());
}

TEST(Encode, RejectsBadInput) {
  const Model m = Model::create(test::small_spec(3, 2), 1);
  try {
    encode(m.posterior, Matrix::Zero(1, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidShape);
  }
  Matrix x = Matrix::Zero(1, 3);
  x(0, 1) = std::nan("");
  try {
    encode(m.posterior, x);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteInput);
  }
}

TEST(Reparam, CollapsesAtMinimumLogvar) {
  Rng rng(3);
  const Matrix mu = rng.normal_matrix(50, 2);
  const Matrix eps = rng.normal_matrix(50, 2);
  const Matrix z = reparam_sample(mu, Matrix::Constant(50, 2, -10.0), eps);
  EXPECT_LE(((z - mu).array().abs() - std::exp(-5.0) * eps.array().abs()).maxCoeff(), 1e-15);
}

TEST(Reparam, TrivialCases) {
  Rng rng(4);
  const Matrix mu = rng.normal_matrix(3, 2);
  const Matrix lv = rng.normal_matrix(3, 2);
  const Matrix eps = rng.normal_matrix(3, 2);
  EXPECT_EQ(reparam_sample(mu, lv, Matrix::Zero(3, 2)), mu);
  EXPECT_EQ(reparam_sample(Matrix::Zero(3, 2), Matrix::Zero(3, 2), eps), eps);
  EXPECT_THROW(reparam_sample(mu, lv, Matrix::Zero(2, 2)), Error);
}

TEST(Reparam, MonteCarloMoments) {
  Rng rng(5);
  const Matrix z = reparam_sample(Matrix::Ones(100000, 1), Matrix::Constant(100000, 1, std::log(4.0)),
                                  rng.normal_matrix(100000, 1));
  const double mean = z.mean();
  const double var = (z.array() - mean).square().sum() / (z.size() - 1);
  EXPECT_NEAR(mean, 1.0, 0.02);
  EXPECT_NEAR(var, 4.0, 0.1);
}

TEST(DecodeLogLikelihood, ZeroResidualGaussian) {
  const Model m = Model::create(test::small_spec(2, 2), 6);
  Rng rng(7);
  const Matrix z = rng.normal_matrix(3, 2);
  const Matrix x = decode_mean(m.decoder, z);
  const Vector ll = decode_log_likelihood(m.decoder, z, x);
  for (Eigen::Index r = 0; r < 3; ++r) EXPECT_NEAR(ll(r), -0.4515827053, 1e-10);
}

TEST(DecodeLogLikelihood, GaussianMaximizedAtMean) {
  const Model m = Model::create(test::small_spec(2, 2), 8);
  Rng rng(9);
  const Matrix z = rng.normal_matrix(1, 2);
  const Matrix mean = decode_mean(m.decoder, z);
  const double best = decode_log_likelihood(m.decoder, z, mean)(0);
  for (int trial = 0; trial < 50; ++trial)
    EXPECT_LT(decode_log_likelihood(m.decoder, z, mean + 0.1 * rng.normal_matrix(1, 2))(0), best);
}

TEST(DecodeLogLikelihood, UniformMultinomial) {
  ModelSpec spec = test::small_spec(6, 2);
  spec.decoder = DecoderKind::Multinomial;
  Model m = Model::zeros(spec);
  Matrix x(1, 6);
  x << 3, 0, 1, 4, 0, 2;
  EXPECT_NEAR(decode_log_likelihood(m.decoder, Matrix::Zero(1, 2), x)(0), 10.0 * std::log(1.0 / 6.0), 1e-12);
  x(0, 1) = -1.0;
  try {
    decode_log_likelihood(m.decoder, Matrix::Zero(1, 2), x);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidInput);
  }
  EXPECT_THROW(decode_log_likelihood(m.decoder, Matrix::Zero(1, 2), Matrix::Zero(1, 5)), Error);
}

TEST(DecodeLogLikelihood, GeneratorGradientMatchesFiniteDifferences) {
  for (DecoderKind kind : {DecoderKind::Gaussian, DecoderKind::Multinomial}) {
    ModelSpec spec = test::small_spec(4, 2);
    spec.decoder = kind;
    spec.net_activation = Activation::Tanh;
    Model m = Model::create(spec, 10);
    Rng rng(11);
    const Matrix z = rng.normal_matrix(5, 2);
    Matrix x = rng.normal_matrix(5, 4);
    if (kind == DecoderKind::Multinomial) x = x.cwiseAbs().array().round().matrix();
    const LossAndGrad fn = [&] {
      Tape tape;
      const Mlp::Bound g = m.decoder.generator.bind(tape, true);
      const Tensor loss = ad::sum(decode_log_likelihood(m.decoder, g, tape.constant(z), x));
      tape.backward(loss);
      return std::make_pair(loss.item(), g.gradients());
    };
    EXPECT_LE(finite_diff_check(fn, m.decoder.generator.parameters(), 1e-5, 200, 1), 1e-5);
  }
}

TEST(Xavier, EmpiricalStdAndZeroBias) {
  Rng rng(12);
  const Matrix w = xavier_normal(200, 200, rng);
  const double std = std::sqrt(w.array().square().mean());
  EXPECT_NEAR(std, std::sqrt(2.0 / 400.0), 0.1 * std::sqrt(2.0 / 400.0));
  const Model m = Model::create(ModelSpec{}, 3);
  for (const Layer& l : m.prior.f.layers()) EXPECT_TRUE(l.bias.isZero(0.0));
  for (const Layer& l : m.decoder.generator.layers()) EXPECT_TRUE(l.bias.isZero(0.0));
}

TEST(Xavier, SameSeedIsBitIdentical) {
  const Model a = Model::create(ModelSpec{}, 77);
  const Model b = Model::create(ModelSpec{}, 77);
  const auto pa = a.posterior.encoder.parameters();
  const auto pb = b.posterior.encoder.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(*pa[i], *pb[i]);
  EXPECT_NE(*Model::create(ModelSpec{}, 78).prior.f.parameters()[0], *a.prior.f.parameters()[0]);
}

TEST(Mlp, ParameterNamesFollowParameterOrder) {
  const Mlp net({3, 4, 2}, Activation::Relu);
  const auto names = net.parameter_names("prior");
  ASSERT_EQ(names.size(), net.parameters().size());
  EXPECT_EQ(names.size(), 4u);
}

}  // namespace
}  // namespace lebm
