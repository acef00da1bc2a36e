#include "lebm/sampler.hpp"

#include <algorithm>
#include <limits>

#include <spdlog/spdlog.h>

#include "lebm/error.hpp"
#include "lebm/parallel.hpp"
#include "lebm/rng.hpp"
#include "lebm/tape.hpp"

namespace lebm {

namespace {

constexpr std::uint64_t kInitialDraw = std::numeric_limits<std::uint64_t>::max();

void require_latent(const Matrix& z, int d, const char* what) {
  if (z.cols() != d)
    throw Error(ErrorCode::InvalidShape, std::string(what) + ": latent width " + std::to_string(z.cols()) +
                                             " != " + std::to_string(d));
  if (!z.allFinite()) throw Error(ErrorCode::NonFiniteInput, std::string(what) + ": non-finite latent");
}

bool row_finite(const Matrix& m, Eigen::Index r) { return m.row(r).allFinite(); }

/// prior_score, except that rows whose evaluation overflows come back as NaN
/// instead of failing the whole batch.
Matrix chain_scores(const EbmPrior& prior, const Matrix& z) {
  try {
    return prior_score(prior, z);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NonFiniteInput) throw;
  }
  Matrix out(z.rows(), z.cols());
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    try {
      out.row(r) = prior_score(prior, z.row(r));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NonFiniteInput) throw;
      out.row(r).setConstant(std::numeric_limits<Scalar>::quiet_NaN());
    }
  }
  return out;
}

}  // namespace

Matrix prior_score(const EbmPrior& prior, const Matrix& z) {
  require_latent(z, prior.latent_dim(), "prior_score");
  Tape tape;
  const Tensor zv = tape.variable(z);
  tape.backward(ad::sum(marginal_energy(prior.f.bind(tape, false), zv)));
  const Matrix& g = zv.grad();
  return (g.size() ? g : Matrix::Zero(z.rows(), z.cols())) - z;
}

Matrix posterior_score(const EbmPrior& prior, const Decoder& dec, const Matrix& z, const Matrix& x) {
  require_latent(z, prior.latent_dim(), "posterior_score");
  if (x.rows() != z.rows()) throw Error(ErrorCode::InvalidShape, "posterior_score: x/z row mismatch");
  Tape tape;
  const Tensor zv = tape.variable(z);
  const Tensor energy = marginal_energy(prior.f.bind(tape, false), zv);
  const Tensor loglik = decode_log_likelihood(dec, dec.generator.bind(tape, false), zv, x);
  tape.backward(ad::sum(energy + loglik));
  const Matrix& g = zv.grad();
  return (g.size() ? g : Matrix::Zero(z.rows(), z.cols())) - z;
}

Matrix langevin_update(const Matrix& z, const Matrix& score, Scalar step_size, const Matrix& noise) {
  if (score.rows() != z.rows() || score.cols() != z.cols() || noise.rows() != z.rows() ||
      noise.cols() != z.cols())
    throw Error(ErrorCode::InvalidShape, "langevin: z/score/noise shape mismatch");
  if (!(step_size > 0.0)) throw Error(ErrorCode::InvalidInput, "langevin: step size must be > 0");
  return z + (0.5 * step_size * step_size) * score + step_size * noise;
}

Matrix langevin_step(const Matrix& z, const Matrix& score, Scalar step_size, const Matrix& noise,
                     const std::vector<std::size_t>& chain_ids, std::int64_t iteration) {
  Matrix out = langevin_update(z, score, step_size, noise);
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    if (!row_finite(out, r))
      throw ChainDivergedError(chain_ids.empty() ? static_cast<std::size_t>(r) : chain_ids[r], iteration);
  }
  return out;
}

PersistentChains::PersistentChains(std::size_t count, int latent_dim, std::uint64_t seed, Scalar step_size,
                                   int steps_per_update)
    : states_(static_cast<Eigen::Index>(count), latent_dim), seed_(seed) {
  if (latent_dim < 1) throw Error(ErrorCode::InvalidShape, "chains need latent_dim >= 1");
  set_step_size(step_size);
  set_steps_per_update(steps_per_update);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(seed_, Stream::ChainReset, {i, kInitialDraw});
    for (int j = 0; j < latent_dim; ++j) states_(static_cast<Eigen::Index>(i), j) = rng.normal();
  }
}

void PersistentChains::set_step_size(Scalar s) {
  if (!(s > 0.0)) throw Error(ErrorCode::InvalidInput, "chain step size must be > 0");
  step_size_ = s;
}

void PersistentChains::set_steps_per_update(int steps) {
  if (steps < 0) throw Error(ErrorCode::InvalidInput, "steps per update must be >= 0");
  steps_per_update_ = steps;
}

void PersistentChains::reset(std::size_t chain, std::int64_t iteration) {
  Rng rng(seed_, Stream::ChainReset, {chain, static_cast<std::uint64_t>(iteration)});
  for (Eigen::Index j = 0; j < states_.cols(); ++j) states_(static_cast<Eigen::Index>(chain), j) = rng.normal();
}

ChainUpdate update_chains(PersistentChains& chains, const EbmPrior& prior,
                          const std::vector<std::size_t>& indices, std::int64_t iteration, int threads) {
  const int d = chains.latent_dim();
  if (d != prior.latent_dim()) throw Error(ErrorCode::InvalidShape, "chains/prior latent width mismatch");
  std::vector<bool> seen(chains.size(), false);
  for (std::size_t i : indices) {
    if (i >= chains.size()) throw Error(ErrorCode::InvalidBatch, "chain index out of range");
    if (seen[i]) throw Error(ErrorCode::InvalidBatch, "chain " + std::to_string(i) + " requested twice");
    seen[i] = true;
  }

  const std::size_t n = indices.size();
  const std::size_t n_chunks = (n + PersistentChains::kChunk - 1) / PersistentChains::kChunk;
  std::vector<std::vector<std::size_t>> diverged(n_chunks);
  const int steps = chains.steps_per_update();
  const Scalar s = chains.step_size();

  parallel_for(n_chunks, threads, [&](std::size_t chunk) {
    const std::size_t begin = chunk * PersistentChains::kChunk;
    const std::size_t end = std::min(n, begin + PersistentChains::kChunk);
    const auto rows = static_cast<Eigen::Index>(end - begin);
    std::vector<std::size_t> ids(indices.begin() + begin, indices.begin() + end);

    Matrix z(rows, d);
    std::vector<Matrix> noise(ids.size());
    for (Eigen::Index r = 0; r < rows; ++r) {
      z.row(r) = chains.states().row(static_cast<Eigen::Index>(ids[r]));
      Rng rng(chains.seed(), Stream::ChainNoise, {ids[r], static_cast<std::uint64_t>(iteration)});
      noise[r] = rng.normal_matrix(steps, d);
    }
    std::vector<bool> frozen(ids.size(), false);
    Matrix step_noise(rows, d);
    for (int t = 0; t < steps; ++t) {
      for (Eigen::Index r = 0; r < rows; ++r) step_noise.row(r) = noise[r].row(t);
      Matrix next = langevin_update(z, chain_scores(prior, z), s, step_noise);
      for (Eigen::Index r = 0; r < rows; ++r) {
        if (frozen[r]) {
          next.row(r) = z.row(r);
        } else if (!row_finite(next, r)) {
          spdlog::warn("{}; resetting chain from p0", ChainDivergedError(ids[r], iteration).what());
          chains.reset(ids[r], iteration);
          next.row(r) = chains.states().row(static_cast<Eigen::Index>(ids[r]));
          frozen[r] = true;
          diverged[chunk].push_back(ids[r]);
        }
      }
      z = std::move(next);
    }
    for (Eigen::Index r = 0; r < rows; ++r) chains.states().row(static_cast<Eigen::Index>(ids[r])) = z.row(r);
  });

  ChainUpdate out;
  out.samples.resize(static_cast<Eigen::Index>(n), d);
  for (std::size_t i = 0; i < n; ++i)
    out.samples.row(static_cast<Eigen::Index>(i)) = chains.states().row(static_cast<Eigen::Index>(indices[i]));
  for (const auto& v : diverged) out.diverged.insert(out.diverged.end(), v.begin(), v.end());
  return out;
}

namespace {

constexpr std::size_t kLongRunChunk = 1024;

template <typename ScoreFn>
Matrix long_run(int d, const LongRunConfig& config, ScoreFn&& score) {
  if (config.thin < 1 || config.burn_in < 0 || config.samples_per_chain < 0)
    throw Error(ErrorCode::InvalidInput, "long run: invalid schedule");
  if (!(config.step_size > 0.0)) throw Error(ErrorCode::InvalidInput, "long run: step size must be > 0");
  const std::size_t n_chunks = (config.chains + kLongRunChunk - 1) / kLongRunChunk;
  const auto per_chain = static_cast<Eigen::Index>(config.samples_per_chain);
  Matrix out(static_cast<Eigen::Index>(config.chains) * per_chain, d);

  parallel_for(n_chunks, config.threads, [&](std::size_t chunk) {
    const std::size_t begin = chunk * kLongRunChunk;
    const std::size_t end = std::min(config.chains, begin + kLongRunChunk);
    const auto rows = static_cast<Eigen::Index>(end - begin);
    std::vector<Rng> rngs;
    rngs.reserve(end - begin);
    Matrix z(rows, d);
    for (std::size_t c = begin; c < end; ++c) {
      rngs.emplace_back(config.seed, Stream::LongRun, std::initializer_list<std::uint64_t>{c});
      for (int j = 0; j < d; ++j) z(static_cast<Eigen::Index>(c - begin), j) = rngs.back().normal();
    }
    Matrix noise(rows, d);
    const long total = static_cast<long>(config.burn_in) + static_cast<long>(config.samples_per_chain) * config.thin;
    Eigen::Index recorded = 0;
    for (long t = 1; t <= total; ++t) {
      for (Eigen::Index r = 0; r < rows; ++r)
        for (int j = 0; j < d; ++j) noise(r, j) = rngs[r].normal();
      z = langevin_step(z, score(z), config.step_size, noise);
      if (t > config.burn_in && (t - config.burn_in) % config.thin == 0) {
        for (Eigen::Index r = 0; r < rows; ++r)
          out.row((static_cast<Eigen::Index>(begin) + r) * per_chain + recorded) = z.row(r);
        ++recorded;
      }
    }
  });
  return out;
}

}  // namespace

Matrix sample_prior_long_run(const EbmPrior& prior, const LongRunConfig& config) {
  return long_run(prior.latent_dim(), config, [&](const Matrix& z) { return prior_score(prior, z); });
}

Matrix sample_posterior_long_run(const EbmPrior& prior, const Decoder& dec, const Matrix& x,
                                 const LongRunConfig& config) {
  if (x.rows() != 1) throw Error(ErrorCode::InvalidShape, "posterior long run expects a single observation");
  return long_run(prior.latent_dim(), config, [&](const Matrix& z) {
    return posterior_score(prior, dec, z, x.replicate(z.rows(), 1));
  });
}

}  // namespace lebm
