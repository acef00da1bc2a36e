#include "lebm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "lebm/error.hpp"
#include "lebm/kernels.hpp"
#include "lebm/rng.hpp"

namespace lebm {

namespace {

constexpr Scalar kLog2Pi = 1.8378770664093454836;

Scalar log_std_normal(const Eigen::Ref<const Eigen::RowVectorXd>& z) {
  return -0.5 * static_cast<Scalar>(z.size()) * kLog2Pi - 0.5 * z.squaredNorm();
}

void require_grid_dim(int latent_dim, const QuadratureGrid& grid) {
  if (latent_dim > 2) throw Error(ErrorCode::UnsupportedDimension, "quadrature supports latent dimension <= 2");
  if (latent_dim != grid.dim()) throw Error(ErrorCode::InvalidShape, "grid dimension != latent dimension");
}

/// log p(x_i | z_j) for every observation/node pair.
Matrix log_likelihood_matrix(const Decoder& dec, const Matrix& nodes, const Matrix& data) {
  const Matrix mean = decode_mean(dec, nodes);
  if (data.cols() != mean.cols()) throw Error(ErrorCode::InvalidShape, "observation width mismatch");
  Matrix out(data.rows(), nodes.rows());
  if (dec.kind == DecoderKind::Gaussian) {
    const Scalar norm = -0.5 * static_cast<Scalar>(data.cols()) * std::log(2.0 * EIGEN_PI * dec.sigma2);
    for (Eigen::Index i = 0; i < data.rows(); ++i)
      out.row(i) = ((mean.rowwise() - data.row(i)).rowwise().squaredNorm() * (-0.5 / dec.sigma2)).array() + norm;
  } else {
    out = data * mean.array().log().matrix().transpose();
  }
  return out;
}

Vector normalize_on_grid(const Vector& log_density, const Vector& log_weights) {
  return log_density.array() - logsumexp(log_density + log_weights);
}

}  // namespace

Classification classify(const EbmPrior& prior, const AmortizedPosterior& posterior, const Matrix& x, int n_mc,
                        std::uint64_t seed) {
  if (n_mc < 1) throw Error(ErrorCode::InvalidInput, "classify: n_mc must be >= 1");
  if (!x.allFinite()) throw Error(ErrorCode::NonFiniteInput, "classify: non-finite input");
  const int d = prior.latent_dim();
  const int k = prior.num_classes();
  Classification out;
  out.probs.resize(x.rows(), k);
  out.labels.resize(static_cast<std::size_t>(x.rows()));
  constexpr Eigen::Index kChunk = 256;
  for (Eigen::Index begin = 0; begin < x.rows(); begin += kChunk) {
    const Eigen::Index rows = std::min(kChunk, x.rows() - begin);
    const Encoded q = encode(posterior, x.middleRows(begin, rows));
    Matrix z(rows * n_mc, d);
    for (Eigen::Index r = 0; r < rows; ++r) {
      Rng rng(seed, Stream::Evaluation, {static_cast<std::uint64_t>(begin + r)});
      const Matrix eps = rng.normal_matrix(n_mc, d);
      z.middleRows(r * n_mc, n_mc) =
          reparam_sample(q.mu.row(r).replicate(n_mc, 1), q.logvar.row(r).replicate(n_mc, 1), eps);
    }
    const Matrix p = class_posterior(prior, z);
    for (Eigen::Index r = 0; r < rows; ++r) {
      out.probs.row(begin + r) = p.middleRows(r * n_mc, n_mc).colwise().sum() / static_cast<Scalar>(n_mc);
      Eigen::Index best = 0;
      out.probs.row(begin + r).maxCoeff(&best);
      out.labels[static_cast<std::size_t>(begin + r)] = static_cast<int>(best);
    }
  }
  return out;
}

double accuracy(const std::vector<int>& preds, const std::vector<int>& labels) {
  if (preds.empty()) throw Error(ErrorCode::InvalidInput, "accuracy of an empty set");
  if (preds.size() != labels.size()) throw Error(ErrorCode::InvalidShape, "accuracy: length mismatch");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (labels[i] < 0) throw Error(ErrorCode::InvalidLabel, "accuracy: missing label");
    if (preds[i] == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

QuadratureGrid::QuadratureGrid(int dim, Scalar lo, Scalar hi, int points)
    : dim_(dim), lo_(lo), hi_(hi), points_(points) {
  if (dim < 1 || dim > 2) throw Error(ErrorCode::UnsupportedDimension, "quadrature grids are 1-D or 2-D");
  if (points < 64) throw Error(ErrorCode::InvalidInput, "quadrature grid needs >= 64 points per axis");
  if (!(lo <= -4.0 && hi >= 4.0)) throw Error(ErrorCode::InvalidInput, "quadrature grid must cover [-4, 4]");
  const Scalar h = (hi - lo) / static_cast<Scalar>(points - 1);
  Vector axis(points), log_w(points);
  for (int i = 0; i < points; ++i) {
    axis(i) = lo + h * i;
    log_w(i) = std::log((i == 0 || i == points - 1) ? 0.5 * h : h);
  }
  if (dim == 1) {
    nodes_ = axis;
    log_weights_ = log_w;
  } else {
    const Eigen::Index n = static_cast<Eigen::Index>(points) * points;
    nodes_.resize(n, 2);
    log_weights_.resize(n);
    for (int i = 0; i < points; ++i)
      for (int j = 0; j < points; ++j) {
        const Eigen::Index r = static_cast<Eigen::Index>(i) * points + j;
        nodes_(r, 0) = axis(i);
        nodes_(r, 1) = axis(j);
        log_weights_(r) = log_w(i) + log_w(j);
      }
  }
}

QuadratureGrid QuadratureGrid::default_for(int dim) { return QuadratureGrid(dim, -6.0, 6.0, dim == 1 ? 512 : 128); }

Vector prior_log_density_unnormalized(const EbmPrior& prior, const Matrix& nodes) {
  Vector out = marginal_energy(prior, nodes);
  for (Eigen::Index r = 0; r < nodes.rows(); ++r) out(r) += log_std_normal(nodes.row(r));
  return out;
}

Scalar quadrature_log_Z(const EbmPrior& prior, const QuadratureGrid& grid) {
  require_grid_dim(prior.latent_dim(), grid);
  return logsumexp(prior_log_density_unnormalized(prior, grid.nodes()) + grid.log_weights());
}

GridDensity quadrature_prior(const EbmPrior& prior, const QuadratureGrid& grid) {
  require_grid_dim(prior.latent_dim(), grid);
  GridDensity out;
  out.log_density = normalize_on_grid(prior_log_density_unnormalized(prior, grid.nodes()), grid.log_weights());
  out.mass = (out.log_density + grid.log_weights()).array().exp();
  return out;
}

GridDensity quadrature_posterior(const EbmPrior& prior, const Decoder& decoder, const Matrix& x,
                                 const QuadratureGrid& grid) {
  require_grid_dim(prior.latent_dim(), grid);
  if (x.rows() != 1) throw Error(ErrorCode::InvalidShape, "quadrature_posterior expects one observation");
  const Vector joint = prior_log_density_unnormalized(prior, grid.nodes()) +
                       log_likelihood_matrix(decoder, grid.nodes(), x).row(0).transpose();
  GridDensity out;
  out.log_density = normalize_on_grid(joint, grid.log_weights());
  out.mass = (out.log_density + grid.log_weights()).array().exp();
  return out;
}

Scalar finite_diff_check(const LossAndGrad& loss_fn, const std::vector<Matrix*>& params, Scalar step,
                         std::size_t max_coords, std::uint64_t seed) {
  if (!(step > 0.0)) throw Error(ErrorCode::InvalidInput, "finite_diff_check: step must be > 0");
  const auto [base, grads] = loss_fn();
  if (loss_fn().first != base) throw Error(ErrorCode::NonDeterministicLoss, "loss differs between evaluations");
  if (grads.size() != params.size()) throw Error(ErrorCode::InvalidShape, "finite_diff_check: gradient count mismatch");

  std::vector<std::pair<std::size_t, Eigen::Index>> coords;
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (grads[p].size() != params[p]->size()) throw Error(ErrorCode::InvalidShape, "finite_diff_check: gradient shape");
    for (Eigen::Index k = 0; k < params[p]->size(); ++k) coords.emplace_back(p, k);
  }
  if (coords.size() > max_coords) {
    Rng rng(seed, Stream::Diagnostics, {0xfdULL});
    for (std::size_t i = 0; i < max_coords; ++i) std::swap(coords[i], coords[i + rng.index(coords.size() - i)]);
    coords.resize(max_coords);
  }

  Scalar worst = 0.0;
  for (const auto& [p, k] : coords) {
    Scalar& x = params[p]->data()[k];
    const Scalar original = x;
    x = original + step;
    const Scalar up = loss_fn().first;
    x = original - step;
    const Scalar down = loss_fn().first;
    x = original;
    const Scalar numeric = (up - down) / (2.0 * step);
    const Scalar analytic = grads[p].data()[k];
    const Scalar denom = std::max({std::abs(numeric), std::abs(analytic), 1e-8});
    worst = std::max(worst, std::abs(numeric - analytic) / denom);
  }
  return worst;
}

DivergenceTerms divergence_perturbation(const EbmPrior& prior, const Decoder& decoder,
                                        const ConditionalLogDensity& q_plus, const LogDensity& q_minus,
                                        const Matrix& data, const QuadratureGrid& grid) {
  require_grid_dim(prior.latent_dim(), grid);
  if (data.cols() > 2) throw Error(ErrorCode::UnsupportedDimension, "divergence perturbation supports D <= 2");
  if (data.rows() == 0) throw Error(ErrorCode::InvalidInput, "divergence perturbation needs data");
  const Matrix& nodes = grid.nodes();
  const Vector& log_w = grid.log_weights();

  const Vector log_prior = normalize_on_grid(prior_log_density_unnormalized(prior, nodes), log_w);
  const Matrix log_lik = log_likelihood_matrix(decoder, nodes, data);
  const Matrix q_plus_raw = q_plus(data, nodes);
  const Vector log_q_minus = normalize_on_grid(q_minus(nodes), log_w);
  if (q_plus_raw.rows() != data.rows() || q_plus_raw.cols() != nodes.rows())
    throw Error(ErrorCode::InvalidShape, "q_plus returned the wrong shape");

  DivergenceTerms out;
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    const Vector joint = log_prior + log_lik.row(i).transpose();
    const Scalar log_evidence = logsumexp(joint + log_w);
    const Vector log_post = joint.array() - log_evidence;
    const Vector log_q = normalize_on_grid(q_plus_raw.row(i).transpose(), log_w);
    const Vector mass = (log_q + log_w).array().exp();
    out.data_kl -= log_evidence;
    out.positive_kl += mass.dot(log_q - log_post);
  }
  out.data_kl /= static_cast<Scalar>(data.rows());
  out.positive_kl /= static_cast<Scalar>(data.rows());
  const Vector mass_minus = (log_q_minus + log_w).array().exp();
  out.negative_kl = mass_minus.dot(log_q_minus - log_prior);
  out.delta = out.data_kl + out.positive_kl - out.negative_kl;
  return out;
}

ConditionalLogDensity exact_posterior_sampler(const EbmPrior& prior, const Decoder& decoder) {
  return [prior, decoder](const Matrix& x, const Matrix& nodes) {
    const Vector log_prior = prior_log_density_unnormalized(prior, nodes);
    Matrix out = log_likelihood_matrix(decoder, nodes, x);
    out.rowwise() += log_prior.transpose();
    return out;
  };
}

LogDensity exact_prior_sampler(const EbmPrior& prior) {
  return [prior](const Matrix& nodes) { return prior_log_density_unnormalized(prior, nodes); };
}

Scalar histogram_tv_distance(const Matrix& samples, const EbmPrior& prior, int bins, Scalar lo, Scalar hi) {
  if (prior.latent_dim() != 2 || samples.cols() != 2)
    throw Error(ErrorCode::UnsupportedDimension, "histogram TV is defined for 2-D latents");
  if (bins < 1 || !(hi > lo) || samples.rows() == 0) throw Error(ErrorCode::InvalidInput, "histogram TV: bad arguments");
  const Scalar width = (hi - lo) / bins;
  const auto cell_of = [&](Scalar v) { return static_cast<int>(std::floor((v - lo) / width)); };
  const Eigen::Index n_cells = static_cast<Eigen::Index>(bins) * bins;

  Vector empirical = Vector::Zero(n_cells + 1);
  for (Eigen::Index r = 0; r < samples.rows(); ++r) {
    const int a = cell_of(samples(r, 0)), b = cell_of(samples(r, 1));
    if (a < 0 || a >= bins || b < 0 || b >= bins) {
      empirical(n_cells) += 1.0;
    } else {
      empirical(static_cast<Eigen::Index>(a) * bins + b) += 1.0;
    }
  }
  empirical /= static_cast<Scalar>(samples.rows());

  // Midpoint rule on sub-cells over a window wide enough to hold the prior mass.
  constexpr int kSub = 4;
  const Scalar h = width / kSub;
  const Scalar reach = std::max({6.0, std::abs(lo), std::abs(hi)});
  const int lo_steps = static_cast<int>(std::ceil((lo + reach) / h));
  const int hi_steps = static_cast<int>(std::ceil((reach - hi) / h));
  const int axis_n = lo_steps + bins * kSub + hi_steps;
  Vector axis(axis_n);
  for (int i = 0; i < axis_n; ++i) axis(i) = lo + (i - lo_steps + 0.5) * h;
  Matrix nodes(static_cast<Eigen::Index>(axis_n) * axis_n, 2);
  for (int i = 0; i < axis_n; ++i)
    for (int j = 0; j < axis_n; ++j) {
      nodes(static_cast<Eigen::Index>(i) * axis_n + j, 0) = axis(i);
      nodes(static_cast<Eigen::Index>(i) * axis_n + j, 1) = axis(j);
    }
  const Vector log_p = prior_log_density_unnormalized(prior, nodes);
  const Vector mass = (log_p.array() - logsumexp(log_p)).exp();
  Vector model = Vector::Zero(n_cells + 1);
  for (int i = 0; i < axis_n; ++i)
    for (int j = 0; j < axis_n; ++j) {
      const Eigen::Index r = static_cast<Eigen::Index>(i) * axis_n + j;
      const int a = i - lo_steps, b = j - lo_steps;
      if (a < 0 || a >= bins * kSub || b < 0 || b >= bins * kSub) {
        model(n_cells) += mass(r);
      } else {
        model(static_cast<Eigen::Index>(a / kSub) * bins + b / kSub) += mass(r);
      }
    }
  return 0.5 * (empirical - model).cwiseAbs().sum();
}

std::string to_json_lines(const std::vector<DiagnosticRecord>& records) {
  std::string out;
  for (const DiagnosticRecord& r : records) {
    nlohmann::json j = {{"check", r.check}, {"value", r.value}, {"tolerance", r.tolerance}, {"pass", r.pass}};
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace lebm
