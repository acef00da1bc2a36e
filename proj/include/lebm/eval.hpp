#pragma once

// Test-time classification and the verification oracles: trapezoid quadrature
// over a 1-D or 2-D latent grid (partition function, normalized prior and
// posterior densities), finite-difference gradient checks, and the three-KL
// divergence perturbation on quadrature-tractable toy models.

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "lebm/nets.hpp"
#include "lebm/types.hpp"

namespace lebm {

struct Classification {
  Matrix probs;             // one row per example, rows sum to 1
  std::vector<int> labels;  // argmax per row
};

/// probs = (1/n_mc) sum_j softmax(f(z_j)), z_j ~ q(z|x). Row i uses its own
/// keyed noise stream (seed, i).
Classification classify(const EbmPrior& prior, const AmortizedPosterior& posterior, const Matrix& x, int n_mc,
                        std::uint64_t seed);

double accuracy(const std::vector<int>& preds, const std::vector<int>& labels);

/// Tensor-product trapezoid grid over [lo, hi]^dim.
class QuadratureGrid {
 public:
  QuadratureGrid(int dim, Scalar lo, Scalar hi, int points);
  /// [-6, 6] with 512 points (d = 1) or 128 per axis (d = 2).
  static QuadratureGrid default_for(int dim);

  int dim() const { return dim_; }
  Scalar lo() const { return lo_; }
  Scalar hi() const { return hi_; }
  int points() const { return points_; }
  /// (points^dim) x dim node coordinates; the last axis varies fastest.
  const Matrix& nodes() const { return nodes_; }
  const Vector& log_weights() const { return log_weights_; }

 private:
  int dim_;
  Scalar lo_;
  Scalar hi_;
  int points_;
  Matrix nodes_;
  Vector log_weights_;
};

/// log of the integral of exp(F(z)) N(z; 0, I) over the grid.
Scalar quadrature_log_Z(const EbmPrior& prior, const QuadratureGrid& grid);

/// Unnormalized log p_alpha(z) = F(z) + log N(z; 0, I) at each node.
Vector prior_log_density_unnormalized(const EbmPrior& prior, const Matrix& nodes);

/// Quadrature-normalized prior: log p(z_j) and cell masses w_j p(z_j) (sum to 1).
struct GridDensity {
  Vector log_density;
  Vector mass;
};
GridDensity quadrature_prior(const EbmPrior& prior, const QuadratureGrid& grid);
/// Quadrature-normalized posterior p(z | x) for a single observation x (1 x D).
GridDensity quadrature_posterior(const EbmPrior& prior, const Decoder& decoder, const Matrix& x,
                                 const QuadratureGrid& grid);

using LossAndGrad = std::function<std::pair<Scalar, ParamGrads>()>;

/// Central differences on up to max_coords randomly chosen coordinates of
/// params versus the gradient reported by loss_fn. Returns the worst
/// |a - b| / max(|a|, |b|, 1e-8). params are restored before returning.
Scalar finite_diff_check(const LossAndGrad& loss_fn, const std::vector<Matrix*>& params, Scalar step = 1e-5,
                         std::size_t max_coords = 200, std::uint64_t seed = 0);

/// log q+(z_j | x_i) as an (observations x nodes) matrix.
using ConditionalLogDensity = std::function<Matrix(const Matrix& x, const Matrix& nodes)>;
/// log q-(z_j) per node.
using LogDensity = std::function<Vector(const Matrix& nodes)>;

struct DivergenceTerms {
  Scalar delta = 0.0;
  /// -mean_i log p(x_i): KL(p_data || p_theta) up to the empirical data entropy.
  Scalar data_kl = 0.0;
  Scalar positive_kl = 0.0;  // mean_i KL(q+(z|x_i) || p(z|x_i))
  Scalar negative_kl = 0.0;  // KL(q-(z) || p_alpha(z))
};

/// Both sampler densities are renormalized on the grid before use.
DivergenceTerms divergence_perturbation(const EbmPrior& prior, const Decoder& decoder,
                                        const ConditionalLogDensity& q_plus, const LogDensity& q_minus,
                                        const Matrix& data, const QuadratureGrid& grid);

/// Exact samplers at the current parameters; each holds a copy of the networks.
ConditionalLogDensity exact_posterior_sampler(const EbmPrior& prior, const Decoder& decoder);
LogDensity exact_prior_sampler(const EbmPrior& prior);

/// Total variation between a 2-D sample histogram on bins x bins cells over
/// [lo, hi]^2 (plus one overflow cell) and the quadrature-normalized prior.
Scalar histogram_tv_distance(const Matrix& samples, const EbmPrior& prior, int bins, Scalar lo, Scalar hi);

struct DiagnosticRecord {
  std::string check;
  double value = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

/// {"check", "value", "tolerance", "pass"} per record, one JSON object per line.
std::string to_json_lines(const std::vector<DiagnosticRecord>& records);

}  // namespace lebm
