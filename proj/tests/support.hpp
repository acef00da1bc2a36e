#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "lebm/nets.hpp"
#include "lebm/rng.hpp"
#include "lebm/tape.hpp"

namespace lebm::test {

inline Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  return scale * rng.normal_matrix(rows, cols);
}

/// Random-weight prior R^d -> R^K with tanh hidden layers.
inline EbmPrior random_prior(std::uint64_t seed, int d, int k, std::vector<int> hidden = {16, 16}) {
  std::vector<int> widths{d};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(k);
  EbmPrior prior{Mlp(widths, Activation::Tanh)};
  Rng rng(seed);
  prior.f.xavier_init(rng);
  // Nonzero biases so no coordinate of the graph sits at a symmetric point.
  for (Layer& l : prior.f.layers()) l.bias = 0.1 * rng.normal_matrix(l.bias.rows(), 1);
  return prior;
}

inline ModelSpec small_spec(int data_dim = 2, int latent_dim = 2, int k = 2) {
  ModelSpec spec;
  spec.data_dim = data_dim;
  spec.latent_dim = latent_dim;
  spec.num_classes = k;
  spec.prior_hidden = {12, 12};
  spec.encoder_hidden = {12, 12};
  spec.decoder_hidden = {12, 12};
  return spec;
}

using Graph = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

/// Worst |a - b| / max(|a|, |b|, 1e-8) between tape gradients and central
/// differences of the scalar produced by `graph`, over every input coordinate.
inline double tape_gradient_error(const Graph& graph, std::vector<Matrix> inputs, double h = 1e-5) {
  Tape tape;
  std::vector<Tensor> leaves;
  for (const Matrix& m : inputs) leaves.push_back(tape.variable(m));
  const Tensor loss = graph(tape, leaves);
  tape.backward(loss);

  auto value_at = [&](const std::vector<Matrix>& xs) {
    Tape t;
    std::vector<Tensor> cs;
    for (const Matrix& m : xs) cs.push_back(t.constant(m));
    return graph(t, cs).item();
  };

  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Matrix analytic = leaves[i].grad().size() ? leaves[i].grad() : Matrix::Zero(inputs[i].rows(), inputs[i].cols());
    for (Eigen::Index k = 0; k < inputs[i].size(); ++k) {
      const double orig = inputs[i].data()[k];
      inputs[i].data()[k] = orig + h;
      const double up = value_at(inputs);
      inputs[i].data()[k] = orig - h;
      const double down = value_at(inputs);
      inputs[i].data()[k] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic.data()[k];
      worst = std::max(worst, std::abs(numeric - a) / std::max({std::abs(numeric), std::abs(a), 1e-8}));
    }
  }
  return worst;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("lebm_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace lebm::test
