#pragma once

// The diagnose battery: gradient checks on a model, ULA stationarity on its
// zeroed prior, and quadrature and divergence-perturbation checks on small
// built-in toy models.

#include <cstdint>
#include <vector>

#include "lebm/eval.hpp"
#include "lebm/nets.hpp"

namespace lebm {

struct DiagnosticOptions {
  std::uint64_t seed = 0;
  int threads = 1;
  /// Test hook: perturbs one analytic gradient before it is checked.
  bool corrupt_gradient = false;
};

/// d = 1, D = 1, K = 2 model with random tanh networks of width `hidden`.
Model toy_model_1d(std::uint64_t seed, int hidden = 8);
/// Observations for the 1-D toy model.
Matrix toy_data_1d();
/// Random prior on a 2-D latent space with K classes.
EbmPrior toy_prior_2d(std::uint64_t seed, int num_classes = 3, int hidden = 16);

/// Worst relative error of each gradient path on `model`.
DiagnosticRecord check_psi_gradient(const Model& model, std::uint64_t seed, bool corrupt = false);
DiagnosticRecord check_supervised_gradient(const Model& model, std::uint64_t seed);
DiagnosticRecord check_prior_energy_gradient(const Model& model, std::uint64_t seed);
DiagnosticRecord check_score(const Model& model, std::uint64_t seed);

/// Long-run ULA on the zeroed prior: per-coordinate variance against
/// 1 / (1 - s^2 / 4) and mean against zero.
DiagnosticRecord check_ula_stationarity(const Model& model, double step_size, double tolerance, std::uint64_t seed,
                                        int threads);
/// quadrature_log_Z of an all-zero prior against log K.
DiagnosticRecord check_log_z_constant(int num_classes);
/// Long-run histogram against the quadrature-normalized toy prior.
DiagnosticRecord check_tv_distance(std::uint64_t seed, int threads);
/// Exact q+ and q- on the 1-D toy: worst perturbation KL, and the worst
/// relative gap between finite-difference gradients of delta and data KL.
std::vector<DiagnosticRecord> check_divergence_perturbation(std::uint64_t seed);

std::vector<DiagnosticRecord> run_diagnostics(const Model& model, const DiagnosticOptions& options);

}  // namespace lebm
