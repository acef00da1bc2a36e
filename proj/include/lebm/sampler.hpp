#pragma once

// Unadjusted Langevin dynamics on the latent space.
//
//   z' = z + (s^2 / 2) * score(z) + s * noise,   noise ~ N(0, I)
//
// Prior sampling runs persistent chains whose states survive across training
// iterations. Chain noise for chain i at training iteration t is drawn from its
// own keyed stream, so serial, threaded, and resumed runs agree bit for bit.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "lebm/nets.hpp"
#include "lebm/types.hpp"

namespace lebm {

/// grad_z [F_alpha(z) - |z|^2 / 2] per row.
Matrix prior_score(const EbmPrior& prior, const Matrix& z);
/// grad_z [F_alpha(z) - |z|^2 / 2 + log p_beta(x | z)] per row.
Matrix posterior_score(const EbmPrior& prior, const Decoder& dec, const Matrix& z, const Matrix& x);

/// The update arithmetic alone, with no finiteness check.
Matrix langevin_update(const Matrix& z, const Matrix& score, Scalar step_size, const Matrix& noise);
/// langevin_update followed by a per-row finiteness check. Row r of a
/// non-finite result raises ChainDivergedError(chain_ids[r], iteration); when
/// chain_ids is empty the row index is reported.
Matrix langevin_step(const Matrix& z, const Matrix& score, Scalar step_size, const Matrix& noise,
                     const std::vector<std::size_t>& chain_ids = {}, std::int64_t iteration = 0);

class PersistentChains {
 public:
  /// Rows per batched work item in update_chains.
  static constexpr std::size_t kChunk = 64;

  PersistentChains() = default;
  /// `count` chains initialized i.i.d. from N(0, I).
  PersistentChains(std::size_t count, int latent_dim, std::uint64_t seed, Scalar step_size = 0.6,
                   int steps_per_update = 20);

  std::size_t size() const { return static_cast<std::size_t>(states_.rows()); }
  int latent_dim() const { return static_cast<int>(states_.cols()); }
  std::uint64_t seed() const { return seed_; }
  Scalar step_size() const { return step_size_; }
  int steps_per_update() const { return steps_per_update_; }
  void set_step_size(Scalar s);
  void set_steps_per_update(int steps);

  const Matrix& states() const { return states_; }
  Matrix& states() { return states_; }

  /// Fresh N(0, I) draw for one chain, keyed by (seed, chain, iteration).
  void reset(std::size_t chain, std::int64_t iteration);

 private:
  Matrix states_;
  std::uint64_t seed_ = 0;
  Scalar step_size_ = 0.6;
  int steps_per_update_ = 20;
};

struct ChainUpdate {
  Matrix samples;                      // one row per requested index, post-update
  std::vector<std::size_t> diverged;   // chains reset from p0 during this update
};

/// Advances each selected chain steps_per_update Langevin steps under the
/// prior score at `iteration`. Only the prior parameters are read. Diverged
/// chains are logged, reset from p0, and reported.
ChainUpdate update_chains(PersistentChains& chains, const EbmPrior& prior,
                          const std::vector<std::size_t>& indices, std::int64_t iteration, int threads = 1);

/// Pooled long-run prior samples: `chains` independent chains from p0, burn-in,
/// then `samples_per_chain` states recorded every `thin` steps.
struct LongRunConfig {
  std::size_t chains = 1000;
  int burn_in = 1000;
  int samples_per_chain = 100;
  int thin = 10;
  Scalar step_size = 0.6;
  std::uint64_t seed = 0;
  int threads = 1;
};
Matrix sample_prior_long_run(const EbmPrior& prior, const LongRunConfig& config);

/// Posterior Langevin for a single observation x (1 x D), from z0 (chains x d).
/// Returns pooled post-burn-in states.
Matrix sample_posterior_long_run(const EbmPrior& prior, const Decoder& dec, const Matrix& x,
                                 const LongRunConfig& config);

}  // namespace lebm
