#include "lebm/diagnostics.hpp"

#include <cmath>

#include "lebm/error.hpp"
#include "lebm/rng.hpp"
#include "lebm/sampler.hpp"
#include "lebm/tape.hpp"
#include "lebm/trainer.hpp"

namespace lebm {
namespace {

constexpr Eigen::Index kCheckRows = 4;
constexpr double kGradTolerance = 1e-5;

Matrix observations(const Model& model, Rng& rng) {
  if (model.spec.decoder == DecoderKind::Gaussian) return rng.normal_matrix(kCheckRows, model.spec.data_dim);
  Matrix counts(kCheckRows, model.spec.data_dim);
  for (Eigen::Index i = 0; i < counts.rows(); ++i)
    for (Eigen::Index j = 0; j < counts.cols(); ++j) counts(i, j) = static_cast<double>(rng.index(4));
  return counts;
}

ParamGrads concat(ParamGrads a, const ParamGrads& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

void zero(Mlp& net) {
  for (Matrix* p : net.parameters()) p->setZero();
}

/// Finite-difference gradient of `fn` over every coordinate of `params`.
Vector numeric_gradient(const std::function<double()>& fn, const std::vector<Matrix*>& params, double h) {
  Eigen::Index total = 0;
  for (const Matrix* p : params) total += p->size();
  Vector g(total);
  Eigen::Index k = 0;
  for (Matrix* p : params) {
    for (Eigen::Index i = 0; i < p->size(); ++i, ++k) {
      double& x = p->data()[i];
      const double orig = x;
      x = orig + h;
      const double up = fn();
      x = orig - h;
      const double down = fn();
      x = orig;
      g(k) = (up - down) / (2.0 * h);
    }
  }
  return g;
}

}  // namespace

Model toy_model_1d(std::uint64_t seed, int hidden) {
  ModelSpec spec;
  spec.data_dim = 1;
  spec.latent_dim = 1;
  spec.num_classes = 2;
  spec.prior_hidden = {hidden};
  spec.encoder_hidden = {hidden};
  spec.decoder_hidden = {hidden};
  spec.prior_activation = Activation::Tanh;
  spec.net_activation = Activation::Tanh;
  spec.sigma2 = 0.25;
  return Model::create(spec, seed);
}

Matrix toy_data_1d() {
  Matrix x(12, 1);
  x << -1.6, -1.2, -0.9, -0.7, -0.4, -0.1, 0.2, 0.5, 0.8, 1.1, 1.3, 1.7;
  return x;
}

EbmPrior toy_prior_2d(std::uint64_t seed, int num_classes, int hidden) {
  EbmPrior prior{Mlp({2, hidden, num_classes}, Activation::Tanh)};
  Rng rng(seed, Stream::Diagnostics, {0x2d});
  prior.f.xavier_init(rng);
  return prior;
}

DiagnosticRecord check_psi_gradient(const Model& model, std::uint64_t seed, bool corrupt) {
  Model m = model;
  Rng rng(seed, Stream::Diagnostics, {1});
  const Matrix x = observations(m, rng);
  const Matrix eps = rng.normal_matrix(kCheckRows, m.spec.latent_dim);
  const LossAndGrad fn = [&] {
    PsiObjective o = unsup_psi_objective(m.posterior, m.decoder, m.prior, x, eps);
    ParamGrads g = concat(std::move(o.encoder), o.decoder);
    if (corrupt)
      for (Matrix& t : g) t *= 1.001;
    return std::make_pair(o.value, std::move(g));
  };
  const double err = finite_diff_check(fn, psi_parameters(m), 1e-5, 200, seed);
  return {"gradient.psi_objective", err, kGradTolerance, err <= kGradTolerance};
}

DiagnosticRecord check_supervised_gradient(const Model& model, std::uint64_t seed) {
  Model m = model;
  Rng rng(seed, Stream::Diagnostics, {2});
  const Matrix x = observations(m, rng);
  std::vector<int> y;
  for (Eigen::Index i = 0; i < x.rows(); ++i) y.push_back(static_cast<int>(rng.index(m.spec.num_classes)));
  constexpr int n_mc = 2;
  const Matrix eps = rng.normal_matrix(n_mc * x.rows(), m.spec.latent_dim);
  const LossAndGrad fn = [&] {
    SupervisedObjective o = supervised_objective(m.prior, m.posterior, x, y, eps, n_mc);
    return std::make_pair(o.value, concat(std::move(o.prior), o.encoder));
  };
  const double err = finite_diff_check(fn, supervised_parameters(m), 1e-5, 200, seed);
  return {"gradient.supervised_objective", err, kGradTolerance, err <= kGradTolerance};
}

DiagnosticRecord check_prior_energy_gradient(const Model& model, std::uint64_t seed) {
  Model m = model;
  Rng rng(seed, Stream::Diagnostics, {3});
  const Matrix z = rng.normal_matrix(kCheckRows, m.spec.latent_dim);
  const LossAndGrad fn = [&] {
    Tape tape;
    const Mlp::Bound f = m.prior.f.bind(tape, true);
    const Tensor loss = ad::mean(marginal_energy(f, tape.constant(z)));
    tape.backward(loss);
    return std::make_pair(loss.item(), f.gradients());
  };
  const double err = finite_diff_check(fn, m.prior.f.parameters(), 1e-5, 200, seed);
  return {"gradient.prior_energy", err, kGradTolerance, err <= kGradTolerance};
}

DiagnosticRecord check_score(const Model& model, std::uint64_t seed) {
  Rng rng(seed, Stream::Diagnostics, {4});
  Matrix z = rng.normal_matrix(kCheckRows, model.spec.latent_dim);
  const LossAndGrad fn = [&] {
    const double value = marginal_energy(model.prior, z).sum() - 0.5 * z.squaredNorm();
    return std::make_pair(value, ParamGrads{prior_score(model.prior, z)});
  };
  const double err = finite_diff_check(fn, {&z}, 1e-5, 200, seed);
  return {"gradient.prior_score", err, kGradTolerance, err <= kGradTolerance};
}

DiagnosticRecord check_ula_stationarity(const Model& model, double step_size, double tolerance, std::uint64_t seed,
                                        int threads) {
  EbmPrior prior = model.prior;
  zero(prior.f);
  LongRunConfig lr;
  lr.chains = 250;
  lr.burn_in = 50;
  lr.samples_per_chain = 100;
  lr.thin = 10;
  lr.step_size = step_size;
  lr.seed = seed;
  lr.threads = threads;
  const Matrix z = sample_prior_long_run(prior, lr);
  const double target = 1.0 / (1.0 - step_size * step_size / 4.0);
  const Eigen::RowVectorXd mean = z.colwise().mean();
  const Eigen::RowVectorXd var = (z.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(z.rows() - 1);
  const double err = std::max((var.array() - target).abs().maxCoeff(), mean.array().abs().maxCoeff());
  return {"ula.stationarity", err, tolerance, err <= tolerance};
}

DiagnosticRecord check_log_z_constant(int num_classes) {
  EbmPrior prior{Mlp({2, 4, num_classes}, Activation::Tanh)};
  const double err = std::abs(quadrature_log_Z(prior, QuadratureGrid::default_for(2)) - std::log(num_classes));
  return {"quadrature.log_z_constant_energy", err, 1e-6, err <= 1e-6};
}

DiagnosticRecord check_tv_distance(std::uint64_t seed, int threads) {
  const EbmPrior prior = toy_prior_2d(seed);
  LongRunConfig lr;
  lr.chains = 4000;
  lr.burn_in = 2000;
  lr.samples_per_chain = 8;
  lr.thin = 400;
  lr.step_size = 0.05;
  lr.seed = seed;
  lr.threads = threads;
  const double tv = histogram_tv_distance(sample_prior_long_run(prior, lr), prior, 12, -6.0, 6.0);
  return {"quadrature.tv_distance", tv, 0.05, tv <= 0.05};
}

std::vector<DiagnosticRecord> check_divergence_perturbation(std::uint64_t seed) {
  Model m = toy_model_1d(seed);
  const Matrix data = toy_data_1d();
  const QuadratureGrid grid = QuadratureGrid::default_for(1);
  const ConditionalLogDensity q_plus = exact_posterior_sampler(m.prior, m.decoder);
  const LogDensity q_minus = exact_prior_sampler(m.prior);
  const DivergenceTerms at_truth = divergence_perturbation(m.prior, m.decoder, q_plus, q_minus, data, grid);
  const double kl = std::max(std::abs(at_truth.positive_kl), std::abs(at_truth.negative_kl));

  // Only p_theta moves; the phase samplers stay frozen at the current parameters.
  std::vector<Matrix*> theta = m.prior.f.parameters();
  for (Matrix* p : m.decoder.generator.parameters()) theta.push_back(p);
  const Vector g_delta = numeric_gradient(
      [&] { return divergence_perturbation(m.prior, m.decoder, q_plus, q_minus, data, grid).delta; }, theta, 1e-5);
  const Vector g_mle = numeric_gradient(
      [&] { return divergence_perturbation(m.prior, m.decoder, q_plus, q_minus, data, grid).data_kl; }, theta, 1e-5);
  const double rel = (g_delta - g_mle).lpNorm<Eigen::Infinity>() / std::max(g_mle.lpNorm<Eigen::Infinity>(), 1e-12);
  return {{"perturbation.kl_at_truth", kl, 1e-6, kl <= 1e-6},
          {"perturbation.mle_gradient", rel, 1e-3, rel <= 1e-3}};
}

std::vector<DiagnosticRecord> run_diagnostics(const Model& model, const DiagnosticOptions& options) {
  std::vector<DiagnosticRecord> out;
  out.push_back(check_psi_gradient(model, options.seed, options.corrupt_gradient));
  out.push_back(check_supervised_gradient(model, options.seed));
  out.push_back(check_prior_energy_gradient(model, options.seed));
  out.push_back(check_score(model, options.seed));
  out.push_back(check_ula_stationarity(model, 0.6, 0.05, options.seed, options.threads));
  out.push_back(check_log_z_constant(model.spec.num_classes));
  out.push_back(check_tv_distance(options.seed, options.threads));
  for (DiagnosticRecord& r : check_divergence_perturbation(options.seed)) out.push_back(std::move(r));
  return out;
}

}  // namespace lebm
