#include "lebm/trainer.hpp"

#include <cmath>

#include <spdlog/spdlog.h>

#include "lebm/error.hpp"
#include "lebm/rng.hpp"
#include "lebm/tape.hpp"

namespace lebm {

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::ConfigError, what); };
  if (iterations < 0) fail("iterations must be >= 0");
  if (!(eta0 >= 0.0 && eta1 >= 0.0 && eta2 >= 0.0)) fail("learning rates must be >= 0");
  if (batch_unlabeled < 1 || batch_labeled < 1) fail("batch sizes must be >= 1");
  if (chains < batch_unlabeled) fail("chain count must be >= unlabeled batch size");
  if (langevin_steps < 0) fail("langevin steps must be >= 0");
  if (!(step_size > 0.0)) fail("step size must be > 0");
  if (n_mc_label < 1) fail("n_mc_label must be >= 1");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) fail("adam betas must be in [0, 1)");
  if (!(adam_eps > 0.0)) fail("adam epsilon must be > 0");
  if (threads < 1) fail("threads must be >= 1");
}

AdamState AdamState::for_params(const std::vector<const Matrix*>& params, Scalar beta1, Scalar beta2, Scalar eps) {
  AdamState s;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.eps = eps;
  for (const Matrix* p : params) {
    s.m.push_back(Matrix::Zero(p->rows(), p->cols()));
    s.v.push_back(Matrix::Zero(p->rows(), p->cols()));
  }
  return s;
}

void adam_step(AdamState& opt, const std::vector<Matrix*>& params, const ParamGrads& grads, Scalar lr) {
  if (params.size() != grads.size() || params.size() != opt.m.size())
    throw Error(ErrorCode::InvalidShape, "adam: parameter/gradient/state count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].rows() != params[i]->rows() || grads[i].cols() != params[i]->cols())
      throw Error(ErrorCode::InvalidShape, "adam: gradient shape mismatch");
    if (!grads[i].allFinite()) {
      spdlog::warn("adam: non-finite gradient in tensor {}; step skipped", i);
      throw Error(ErrorCode::NonFiniteGradient, "non-finite gradient; step skipped");
    }
  }
  ++opt.step;
  const Scalar c1 = 1.0 - std::pow(opt.beta1, static_cast<Scalar>(opt.step));
  const Scalar c2 = 1.0 - std::pow(opt.beta2, static_cast<Scalar>(opt.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    opt.m[i] = opt.beta1 * opt.m[i] + (1.0 - opt.beta1) * grads[i];
    opt.v[i] = opt.beta2 * opt.v[i] + (1.0 - opt.beta2) * grads[i].cwiseAbs2();
    const auto m_hat = opt.m[i].array() / c1;
    const auto v_hat = opt.v[i].array() / c2;
    params[i]->array() -= lr * m_hat / (v_hat.sqrt() + opt.eps);
  }
}

namespace {

ParamGrads negated(ParamGrads g) {
  for (Matrix& m : g) m = -m;
  return g;
}

ParamGrads concat(ParamGrads a, const ParamGrads& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

bool all_finite(const ParamGrads& g) {
  for (const Matrix& m : g)
    if (!m.allFinite()) return false;
  return true;
}

std::vector<const Matrix*> const_view(const std::vector<Matrix*>& v) { return {v.begin(), v.end()}; }

}  // namespace

ParamGrads prior_grad(const EbmPrior& prior, const Matrix& z_pos, const Matrix& z_neg) {
  if (z_neg.rows() == 0) throw Error(ErrorCode::InvalidBatch, "prior_grad: empty negative batch");
  return prior_grad(prior, z_pos, z_neg, Vector::Constant(z_neg.rows(), 1.0 / static_cast<Scalar>(z_neg.rows())));
}

ParamGrads prior_grad(const EbmPrior& prior, const Matrix& z_pos, const Matrix& z_neg, const Vector& neg_weights) {
  if (z_pos.rows() == 0 || z_neg.rows() == 0) throw Error(ErrorCode::InvalidBatch, "prior_grad: empty batch");
  if (neg_weights.size() != z_neg.rows()) throw Error(ErrorCode::InvalidShape, "prior_grad: weight count mismatch");
  Tape tape;
  const Mlp::Bound f = prior.f.bind(tape, true);
  const Tensor positive = ad::mean(marginal_energy(f, tape.constant(z_pos)));
  const Tensor negative = ad::sum(marginal_energy(f, tape.constant(z_neg)) * tape.constant(neg_weights));
  tape.backward(positive - negative);
  return f.gradients();
}

PsiObjective unsup_psi_objective(const AmortizedPosterior& posterior, const Decoder& decoder,
                                 const EbmPrior& prior, const Matrix& x, const Matrix& eps) {
  if (x.rows() == 0) throw Error(ErrorCode::InvalidBatch, "psi objective: empty batch");
  Tape tape;
  const Mlp::Bound enc = posterior.encoder.bind(tape, true);
  const Mlp::Bound gen = decoder.generator.bind(tape, true);
  const Mlp::Bound f = prior.f.bind(tape, false);

  const BoundEncoded q = encode(enc, tape.constant(x));
  const Tensor z = ad::reparam(q.mu, q.logvar, eps);
  const Tensor recon = decode_log_likelihood(decoder, gen, z, x);
  const Tensor kl = ad::kl_diag_gaussian(q.mu, q.logvar);
  const Tensor energy = marginal_energy(f, z);
  const Tensor objective = ad::mean(recon - kl + energy);
  tape.backward(objective);

  PsiObjective out;
  out.value = objective.item();
  out.recon = recon.value().mean();
  out.kl = kl.value().mean();
  out.energy = energy.value().mean();
  out.z = z.value();
  out.encoder = enc.gradients();
  out.decoder = gen.gradients();
  return out;
}

SupervisedObjective supervised_objective(const EbmPrior& prior, const AmortizedPosterior& posterior,
                                         const Matrix& x, const std::vector<int>& labels, const Matrix& eps,
                                         int n_mc) {
  if (n_mc < 1) throw Error(ErrorCode::InvalidInput, "n_mc must be >= 1");
  const Eigen::Index n = x.rows();
  if (n == 0) throw Error(ErrorCode::InvalidBatch, "supervised objective: empty batch");
  if (static_cast<Eigen::Index>(labels.size()) != n) throw Error(ErrorCode::InvalidShape, "label count != rows");
  for (int l : labels)
    if (l < 0 || l >= prior.num_classes()) throw Error(ErrorCode::InvalidLabel, "label " + std::to_string(l) + " out of range");
  if (eps.rows() != n * n_mc) throw Error(ErrorCode::InvalidShape, "supervised objective: eps must have n_mc * n rows");

  Tape tape;
  const Mlp::Bound f = prior.f.bind(tape, true);
  const Mlp::Bound enc = posterior.encoder.bind(tape, true);
  const BoundEncoded q = encode(enc, tape.constant(x));
  const Tensor z = ad::reparam(ad::repeat_rows(q.mu, n_mc), ad::repeat_rows(q.logvar, n_mc), eps);

  std::vector<int> repeated;
  repeated.reserve(static_cast<std::size_t>(n * n_mc));
  for (int j = 0; j < n_mc; ++j) repeated.insert(repeated.end(), labels.begin(), labels.end());
  const Tensor log_p = ad::categorical_log_likelihood(ebm_logits(f, z), repeated);
  // (n_mc * n) x 1 -> n x n_mc, then log-mean-exp across draws.
  const Tensor per_example = ad::add_constant(ad::row_logsumexp(ad::reshape(log_p, n, n_mc)),
                                              -std::log(static_cast<Scalar>(n_mc)));
  const Tensor objective = ad::mean(per_example);
  tape.backward(objective);

  SupervisedObjective out;
  out.value = objective.item();
  out.prior = f.gradients();
  out.encoder = enc.gradients();
  return out;
}

std::vector<Matrix*> psi_parameters(Model& model) {
  std::vector<Matrix*> p = model.posterior.encoder.parameters();
  for (Matrix* m : model.decoder.generator.parameters()) p.push_back(m);
  return p;
}

std::vector<Matrix*> supervised_parameters(Model& model) {
  std::vector<Matrix*> p = model.prior.f.parameters();
  for (Matrix* m : model.posterior.encoder.parameters()) p.push_back(m);
  return p;
}

TrainState TrainState::create(const Model& model, const TrainConfig& config) {
  config.validate();
  TrainState s;
  s.model = model;
  s.chains = PersistentChains(config.chains, model.spec.latent_dim, config.seed, config.step_size,
                              config.langevin_steps);
  s.opt_prior = AdamState::for_params(const_view(s.model.prior.f.parameters()), config.adam_beta1,
                                      config.adam_beta2, config.adam_eps);
  s.opt_psi = AdamState::for_params(const_view(psi_parameters(s.model)), config.adam_beta1, config.adam_beta2,
                                    config.adam_eps);
  s.opt_supervised = AdamState::for_params(const_view(supervised_parameters(s.model)), config.adam_beta1,
                                           config.adam_beta2, config.adam_eps);
  return s;
}

std::vector<std::size_t> pick_chains(std::uint64_t seed, std::int64_t iteration, std::size_t chains, std::size_t m) {
  if (m > chains) throw Error(ErrorCode::InvalidBatch, "more unlabeled examples than persistent chains");
  std::vector<std::size_t> pool(chains);
  for (std::size_t i = 0; i < chains; ++i) pool[i] = i;
  Rng rng(seed, Stream::ChainPick, {static_cast<std::uint64_t>(iteration)});
  for (std::size_t i = 0; i < m; ++i) std::swap(pool[i], pool[i + rng.index(chains - i)]);
  pool.resize(m);
  return pool;
}

StepGradients compute_step_gradients(TrainState& state, const TrainConfig& config, const Matrix& x_unlabeled,
                                     const Matrix& x_labeled, const std::vector<int>& y_labeled) {
  const Model& model = state.model;
  const int d = model.spec.latent_dim;
  const auto it = static_cast<std::uint64_t>(state.iteration);
  StepGradients g;

  // Posterior samples z+ through the encoder.
  Rng eps_unlabeled(config.seed, Stream::PosteriorNoise, {it, 0});
  g.psi = unsup_psi_objective(model.posterior, model.decoder, model.prior, x_unlabeled,
                              eps_unlabeled.normal_matrix(x_unlabeled.rows(), d));

  // Negative phase from persistent chains, one chain per unlabeled example.
  g.chain_indices = pick_chains(config.seed, state.iteration, state.chains.size(),
                                static_cast<std::size_t>(x_unlabeled.rows()));
  ChainUpdate update = update_chains(state.chains, model.prior, g.chain_indices, state.iteration, config.threads);
  g.z_neg = std::move(update.samples);
  g.diverged = std::move(update.diverged);

  g.prior_unsup = prior_grad(model.prior, g.psi.z, g.z_neg);

  Rng eps_labeled(config.seed, Stream::PosteriorNoise, {it, 1});
  g.supervised = supervised_objective(model.prior, model.posterior, x_labeled, y_labeled,
                                      eps_labeled.normal_matrix(x_labeled.rows() * config.n_mc_label, d),
                                      config.n_mc_label);
  return g;
}

StepStats train_step(TrainState& state, const TrainConfig& config, const Matrix& x_unlabeled,
                     const Matrix& x_labeled, const std::vector<int>& y_labeled) {
  StepStats stats;
  stats.iteration = state.iteration;
  try {
    StepGradients g = compute_step_gradients(state, config, x_unlabeled, x_labeled, y_labeled);
    stats.recon = g.psi.recon;
    stats.kl = g.psi.kl;
    stats.f_alpha_mean = g.psi.energy;
    stats.elbo_est = g.psi.recon - g.psi.kl + g.psi.energy;
    stats.chain_energy_mean = marginal_energy(state.model.prior, g.z_neg).mean();
    stats.supervised = g.supervised.value;
    stats.diverged = g.diverged.size();

    const ParamGrads psi = concat(g.psi.encoder, g.psi.decoder);
    const ParamGrads sup = concat(g.supervised.prior, g.supervised.encoder);
    if (!all_finite(g.prior_unsup) || !all_finite(psi) || !all_finite(sup))
      throw Error(ErrorCode::NonFiniteGradient, "non-finite gradient at iteration " + std::to_string(state.iteration));

    // Ascent on each objective, all gradients taken at the same parameters.
    adam_step(state.opt_prior, state.model.prior.f.parameters(), negated(g.prior_unsup), config.eta0);
    adam_step(state.opt_psi, psi_parameters(state.model), negated(psi), config.eta1);
    adam_step(state.opt_supervised, supervised_parameters(state.model), negated(sup), config.eta2);
    state.consecutive_failures = 0;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NonFiniteGradient && e.code() != ErrorCode::NonFiniteInput) throw;
    stats.skipped = true;
    ++state.consecutive_failures;
    spdlog::warn("iteration {}: {}; update skipped ({} consecutive)", state.iteration, e.what(),
                 state.consecutive_failures);
    if (state.consecutive_failures > config.max_nonfinite_retries)
      throw Error(ErrorCode::NonFiniteGradient, "too many consecutive non-finite updates");
  }
  ++state.iteration;
  return stats;
}

}  // namespace lebm
