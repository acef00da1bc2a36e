#pragma once

// The three networks of the model: the latent energy-based prior f_alpha that
// scores K classes from a latent vector, the generator g_beta, and the amortized
// Gaussian posterior q_phi(z|x). Quantities derived in closed form from the prior
// logits (class posterior, marginal energy) live here too.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lebm/rng.hpp"
#include "lebm/tape.hpp"
#include "lebm/types.hpp"

namespace lebm {

enum class Activation { Tanh, Relu };
enum class DecoderKind { Gaussian, Multinomial };

std::string to_string(Activation a);
std::string to_string(DecoderKind k);
Activation parse_activation(const std::string& name);
DecoderKind parse_decoder_kind(const std::string& name);

/// Gradients for a parameter list, in the order reported by parameters().
using ParamGrads = std::vector<Matrix>;

/// Entries i.i.d. N(0, 2 / (fan_in + fan_out)); shape (fan_out, fan_in).
Matrix xavier_normal(Eigen::Index fan_out, Eigen::Index fan_in, Rng& rng);

struct Layer {
  Matrix weight;  // (out x in)
  Matrix bias;    // (out x 1)
};

class Mlp {
 public:
  /// Parameters bound to one tape; forward() builds the graph for a batch.
  struct Bound {
    std::vector<Tensor> params;
    Activation activation = Activation::Tanh;

    Tensor forward(const Tensor& x) const;
    ParamGrads gradients() const;
  };

  Mlp() = default;
  /// widths = {input, hidden..., output}; all parameters start at zero.
  Mlp(std::vector<int> widths, Activation activation);

  void xavier_init(Rng& rng);
  Bound bind(Tape& tape, bool requires_grad) const;

  const std::vector<int>& widths() const { return widths_; }
  int input_dim() const { return widths_.front(); }
  int output_dim() const { return widths_.back(); }
  Activation activation() const { return activation_; }

  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Matrix*> parameters();
  std::vector<const Matrix*> parameters() const;
  std::vector<std::string> parameter_names(const std::string& prefix) const;

 private:
  std::vector<int> widths_;
  Activation activation_ = Activation::Tanh;
  std::vector<Layer> layers_;
};

/// p_alpha(y, z) proportional to exp(<y, f_alpha(z)>) N(z; 0, I).
struct EbmPrior {
  Mlp f;

  int latent_dim() const { return f.input_dim(); }
  int num_classes() const { return f.output_dim(); }
};

struct AmortizedPosterior {
  static constexpr Scalar kLogvarMin = -10.0;
  static constexpr Scalar kLogvarMax = 10.0;

  Mlp encoder;  // D -> 2d, split as (mu, logvar)

  int latent_dim() const { return encoder.output_dim() / 2; }
};

struct Decoder {
  DecoderKind kind = DecoderKind::Gaussian;
  Mlp generator;  // d -> D (means) or d -> V (logits)
  Scalar sigma2 = 0.25;
};

// Batched evaluation; z holds one latent vector per row.
Matrix ebm_logits(const EbmPrior& prior, const Matrix& z);
Matrix class_posterior(const EbmPrior& prior, const Matrix& z);
/// F_alpha(z) = logsumexp_k f_alpha(z)_k, one entry per row.
Vector marginal_energy(const EbmPrior& prior, const Matrix& z);

struct Encoded {
  Matrix mu;
  Matrix logvar;
};
Encoded encode(const AmortizedPosterior& q, const Matrix& x);
/// mu + exp(logvar / 2) * eps.
Matrix reparam_sample(const Matrix& mu, const Matrix& logvar, const Matrix& eps);
/// log p_beta(x | z) per row. Multinomial drops the count coefficient.
Vector decode_log_likelihood(const Decoder& dec, const Matrix& z, const Matrix& x);
/// g_beta(z): Gaussian means, or multinomial word probabilities.
Matrix decode_mean(const Decoder& dec, const Matrix& z);

// Graph builders used by the objectives and the sampler.
struct BoundEncoded {
  Tensor mu;
  Tensor logvar;
};
Tensor ebm_logits(const Mlp::Bound& prior, const Tensor& z);
Tensor marginal_energy(const Mlp::Bound& prior, const Tensor& z);
BoundEncoded encode(const Mlp::Bound& encoder, const Tensor& x);
Tensor decode_log_likelihood(const Decoder& dec, const Mlp::Bound& generator, const Tensor& z,
                             const Matrix& x);

struct ModelSpec {
  int data_dim = 2;
  int latent_dim = 8;
  int num_classes = 2;
  std::vector<int> prior_hidden{200, 200};
  std::vector<int> encoder_hidden{200, 200};
  std::vector<int> decoder_hidden{200, 200};
  Activation prior_activation = Activation::Tanh;
  Activation net_activation = Activation::Relu;
  DecoderKind decoder = DecoderKind::Gaussian;
  Scalar sigma2 = 0.25;
};

struct Model {
  ModelSpec spec;
  EbmPrior prior;
  AmortizedPosterior posterior;
  Decoder decoder;

  /// Xavier-normal weights, zero biases, drawn from the Init stream of `seed`.
  static Model create(const ModelSpec& spec, std::uint64_t seed);
  /// Same architecture, every parameter zero.
  static Model zeros(const ModelSpec& spec);
};

}  // namespace lebm
