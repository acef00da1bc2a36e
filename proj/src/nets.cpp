#include "lebm/nets.hpp"

#include <cmath>

#include "lebm/error.hpp"
#include "lebm/kernels.hpp"

namespace lebm {

std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "relu"; }
std::string to_string(DecoderKind k) { return k == DecoderKind::Gaussian ? "gaussian" : "multinomial"; }

Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "relu") return Activation::Relu;
  throw Error(ErrorCode::UnknownKind, "unknown activation '" + name + "'");
}

DecoderKind parse_decoder_kind(const std::string& name) {
  if (name == "gaussian") return DecoderKind::Gaussian;
  if (name == "multinomial") return DecoderKind::Multinomial;
  throw Error(ErrorCode::UnknownKind, "unknown decoder '" + name + "'");
}

Matrix xavier_normal(Eigen::Index fan_out, Eigen::Index fan_in, Rng& rng) {
  const Scalar sd = std::sqrt(2.0 / static_cast<Scalar>(fan_in + fan_out));
  return rng.normal_matrix(fan_out, fan_in) * sd;
}

Mlp::Mlp(std::vector<int> widths, Activation activation)
    : widths_(std::move(widths)), activation_(activation) {
  if (widths_.size() < 2) throw Error(ErrorCode::InvalidShape, "an MLP needs at least input and output widths");
  for (int w : widths_)
    if (w < 1) throw Error(ErrorCode::InvalidShape, "MLP widths must be positive");
  for (std::size_t i = 0; i + 1 < widths_.size(); ++i) {
    layers_.push_back({Matrix::Zero(widths_[i + 1], widths_[i]), Matrix::Zero(widths_[i + 1], 1)});
  }
}

void Mlp::xavier_init(Rng& rng) {
  for (Layer& layer : layers_) {
    layer.weight = xavier_normal(layer.weight.rows(), layer.weight.cols(), rng);
    layer.bias.setZero();
  }
}

Mlp::Bound Mlp::bind(Tape& tape, bool requires_grad) const {
  Bound bound;
  bound.activation = activation_;
  for (const Layer& layer : layers_) {
    bound.params.push_back(tape.borrow(layer.weight, requires_grad));
    bound.params.push_back(tape.borrow(layer.bias, requires_grad));
  }
  return bound;
}

Tensor Mlp::Bound::forward(const Tensor& x) const {
  Tensor h = x;
  const std::size_t n_layers = params.size() / 2;
  for (std::size_t i = 0; i < n_layers; ++i) {
    h = ad::affine(h, params[2 * i], params[2 * i + 1]);
    if (i + 1 < n_layers) h = activation == Activation::Tanh ? ad::tanh(h) : ad::relu(h);
  }
  return h;
}

ParamGrads Mlp::Bound::gradients() const {
  ParamGrads out;
  out.reserve(params.size());
  for (const Tensor& p : params) {
    const Matrix& g = p.grad();
    out.push_back(g.size() ? g : Matrix::Zero(p.rows(), p.cols()));
  }
  return out;
}

std::vector<Matrix*> Mlp::parameters() {
  std::vector<Matrix*> out;
  for (Layer& layer : layers_) {
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
  }
  return out;
}

std::vector<const Matrix*> Mlp::parameters() const {
  std::vector<const Matrix*> out;
  for (const Layer& layer : layers_) {
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
  }
  return out;
}

std::vector<std::string> Mlp::parameter_names(const std::string& prefix) const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    out.push_back(prefix + ".layers." + std::to_string(i) + ".weight");
    out.push_back(prefix + ".layers." + std::to_string(i) + ".bias");
  }
  return out;
}

namespace {

void require_cols(const Matrix& m, int expected, const char* what) {
  if (m.cols() != expected)
    throw Error(ErrorCode::InvalidShape, std::string(what) + ": expected " + std::to_string(expected) +
                                             " columns, got " + std::to_string(m.cols()));
}

}  // namespace

Tensor ebm_logits(const Mlp::Bound& prior, const Tensor& z) { return prior.forward(z); }

Tensor marginal_energy(const Mlp::Bound& prior, const Tensor& z) {
  return ad::row_logsumexp(prior.forward(z));
}

BoundEncoded encode(const Mlp::Bound& encoder, const Tensor& x) {
  const Tensor out = encoder.forward(x);
  const Eigen::Index d = out.cols() / 2;
  return {ad::slice_cols(out, 0, d),
          ad::clamp(ad::slice_cols(out, d, d), AmortizedPosterior::kLogvarMin, AmortizedPosterior::kLogvarMax)};
}

Tensor decode_log_likelihood(const Decoder& dec, const Mlp::Bound& generator, const Tensor& z,
                             const Matrix& x) {
  const Tensor out = generator.forward(z);
  if (dec.kind == DecoderKind::Gaussian) return ad::gaussian_log_density(out, x, dec.sigma2);
  return ad::multinomial_log_likelihood(out, x);
}

Matrix ebm_logits(const EbmPrior& prior, const Matrix& z) {
  require_cols(z, prior.latent_dim(), "ebm_logits");
  Tape tape;
  return ebm_logits(prior.f.bind(tape, false), tape.constant(z)).value();
}

Matrix class_posterior(const EbmPrior& prior, const Matrix& z) {
  return rowwise_softmax(ebm_logits(prior, z));
}

Vector marginal_energy(const EbmPrior& prior, const Matrix& z) {
  return rowwise_logsumexp(ebm_logits(prior, z));
}

Encoded encode(const AmortizedPosterior& q, const Matrix& x) {
  require_cols(x, q.encoder.input_dim(), "encode");
  Tape tape;
  const BoundEncoded e = encode(q.encoder.bind(tape, false), tape.constant(x));
  return {e.mu.value(), e.logvar.value()};
}

Matrix reparam_sample(const Matrix& mu, const Matrix& logvar, const Matrix& eps) {
  if (mu.rows() != logvar.rows() || mu.cols() != logvar.cols() || eps.rows() != mu.rows() ||
      eps.cols() != mu.cols())
    throw Error(ErrorCode::InvalidShape, "reparam_sample: shape mismatch");
  return mu + (0.5 * logvar.array()).exp().matrix().cwiseProduct(eps);
}

Vector decode_log_likelihood(const Decoder& dec, const Matrix& z, const Matrix& x) {
  require_cols(z, dec.generator.input_dim(), "decode_log_likelihood");
  require_cols(x, dec.generator.output_dim(), "decode_log_likelihood");
  Tape tape;
  return decode_log_likelihood(dec, dec.generator.bind(tape, false), tape.constant(z), x).value();
}

Matrix decode_mean(const Decoder& dec, const Matrix& z) {
  require_cols(z, dec.generator.input_dim(), "decode_mean");
  Tape tape;
  const Matrix out = dec.generator.bind(tape, false).forward(tape.constant(z)).value();
  if (dec.kind == DecoderKind::Gaussian) return out;
  return rowwise_softmax(out);
}

namespace {

std::vector<int> widths(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> w{in};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(out);
  return w;
}

}  // namespace

Model Model::zeros(const ModelSpec& spec) {
  if (!(spec.sigma2 > 0.0)) throw Error(ErrorCode::InvalidInput, "sigma2 must be > 0");
  Model m;
  m.spec = spec;
  m.prior.f = Mlp(widths(spec.latent_dim, spec.prior_hidden, spec.num_classes), spec.prior_activation);
  m.posterior.encoder = Mlp(widths(spec.data_dim, spec.encoder_hidden, 2 * spec.latent_dim), spec.net_activation);
  m.decoder.kind = spec.decoder;
  m.decoder.sigma2 = spec.sigma2;
  m.decoder.generator = Mlp(widths(spec.latent_dim, spec.decoder_hidden, spec.data_dim), spec.net_activation);
  return m;
}

Model Model::create(const ModelSpec& spec, std::uint64_t seed) {
  Model m = zeros(spec);
  Rng rng(seed, Stream::Init);
  m.prior.f.xavier_init(rng);
  m.posterior.encoder.xavier_init(rng);
  m.decoder.generator.xavier_init(rng);
  return m;
}

}  // namespace lebm
