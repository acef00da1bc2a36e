#pragma once

// Joint learning of the latent EBM prior, generator, and inference network on
// unlabeled and labeled mini-batches.
//
// Each iteration evaluates three gradients at the current parameters:
//   prior (alpha):        mean grad F(z+) - mean grad F(z-), z- from persistent chains
//   generator/encoder:    grad of mean[log p(x|z+) - KL(q || p0) + F(z+)]
//   prior/encoder:        grad of mean log E_q[p(y|z)] on labeled examples
// and then applies one Adam ascent step per group with rates eta0, eta1, eta2.

#include <cstdint>
#include <vector>

#include "lebm/nets.hpp"
#include "lebm/sampler.hpp"
#include "lebm/types.hpp"

namespace lebm {

struct TrainConfig {
  std::int64_t iterations = 4000;
  Scalar eta0 = 2e-4;
  Scalar eta1 = 1e-4;
  Scalar eta2 = 1e-4;
  std::size_t batch_unlabeled = 100;  // m
  std::size_t batch_labeled = 100;    // n
  std::size_t chains = 1000;          // L
  int langevin_steps = 20;            // T_LD
  Scalar step_size = 0.6;             // s
  std::uint64_t seed = 0;
  int n_mc_label = 1;
  Scalar adam_beta1 = 0.9;
  Scalar adam_beta2 = 0.999;
  Scalar adam_eps = 1e-8;
  int threads = 1;
  int max_nonfinite_retries = 10;

  void validate() const;
};

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::int64_t step = 0;
  Scalar beta1 = 0.9;
  Scalar beta2 = 0.999;
  Scalar eps = 1e-8;

  static AdamState for_params(const std::vector<const Matrix*>& params, Scalar beta1, Scalar beta2, Scalar eps);
};

/// One bias-corrected Adam descent step. A non-finite gradient raises
/// NonFiniteGradient and leaves params and state untouched.
void adam_step(AdamState& opt, const std::vector<Matrix*>& params, const ParamGrads& grads, Scalar lr);

/// Gradient on alpha of mean F(z_pos) - mean F(z_neg).
ParamGrads prior_grad(const EbmPrior& prior, const Matrix& z_pos, const Matrix& z_neg);
/// Same with the negative phase replaced by a weighted expectation
/// sum_i w_i grad F(z_neg_i); weights must sum to one.
ParamGrads prior_grad(const EbmPrior& prior, const Matrix& z_pos, const Matrix& z_neg, const Vector& neg_weights);

struct PsiObjective {
  Scalar value = 0.0;   // mean[recon - kl + energy]
  Scalar recon = 0.0;   // mean log p(x | z+)
  Scalar kl = 0.0;      // mean KL(q(z|x) || p0)
  Scalar energy = 0.0;  // mean F_alpha(z+)
  Matrix z;             // the reparameterized samples z+
  ParamGrads encoder;
  ParamGrads decoder;
};

/// Single-sample reparameterized objective for psi = (beta, phi); the prior is
/// held constant. eps has one row per row of x.
PsiObjective unsup_psi_objective(const AmortizedPosterior& posterior, const Decoder& decoder,
                                 const EbmPrior& prior, const Matrix& x, const Matrix& eps);

struct SupervisedObjective {
  Scalar value = 0.0;  // mean log[(1/n_mc) sum_j p(y | z_j)]
  ParamGrads prior;
  ParamGrads encoder;
};

/// eps is (n_mc * n) x d; row j*n + i perturbs example i for draw j.
SupervisedObjective supervised_objective(const EbmPrior& prior, const AmortizedPosterior& posterior,
                                         const Matrix& x, const std::vector<int>& labels, const Matrix& eps,
                                         int n_mc);

struct TrainState {
  Model model;
  PersistentChains chains;
  AdamState opt_prior;       // eta0: alpha, unsupervised
  AdamState opt_psi;         // eta1: encoder then decoder
  AdamState opt_supervised;  // eta2: alpha then encoder
  std::int64_t iteration = 0;
  int consecutive_failures = 0;

  static TrainState create(const Model& model, const TrainConfig& config);
};

struct StepGradients {
  PsiObjective psi;
  SupervisedObjective supervised;
  ParamGrads prior_unsup;
  Matrix z_neg;
  std::vector<std::size_t> chain_indices;
  std::vector<std::size_t> diverged;
};

struct StepStats {
  std::int64_t iteration = 0;
  Scalar elbo_est = 0.0;  // recon - kl + mean F, without log Z
  Scalar recon = 0.0;
  Scalar kl = 0.0;
  Scalar f_alpha_mean = 0.0;
  Scalar chain_energy_mean = 0.0;
  Scalar supervised = 0.0;
  std::size_t diverged = 0;
  bool skipped = false;
};

/// Chain indices for one iteration: m distinct draws from [0, L).
std::vector<std::size_t> pick_chains(std::uint64_t seed, std::int64_t iteration, std::size_t chains, std::size_t m);

/// Samples chains and posterior noise for the current iteration and evaluates
/// all three gradients at the current parameters. Advances the chains.
StepGradients compute_step_gradients(TrainState& state, const TrainConfig& config, const Matrix& x_unlabeled,
                                     const Matrix& x_labeled, const std::vector<int>& y_labeled);

/// One full iteration. Non-finite gradients skip the parameter update; more
/// than max_nonfinite_retries consecutive skips raise NonFiniteGradient.
StepStats train_step(TrainState& state, const TrainConfig& config, const Matrix& x_unlabeled,
                     const Matrix& x_labeled, const std::vector<int>& y_labeled);

/// Parameter views in optimizer-group order.
std::vector<Matrix*> psi_parameters(Model& model);
std::vector<Matrix*> supervised_parameters(Model& model);

}  // namespace lebm
