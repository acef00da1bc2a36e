#pragma once

// Define-by-run reverse-mode differentiation over dense 2-D tensors.
//
// A Tape records every primitive as it executes. Tensors are lightweight handles
// into the tape that produced them; the tape owns values and gradients. Tensors
// are rows x cols; a batch of vectors is stored one example per row.

#include <array>
#include <cstddef>
#include <deque>
#include <functional>
#include <vector>

#include "lebm/types.hpp"

namespace lebm {

class Tape;

class Tensor {
 public:
  Tensor() = default;

  const Matrix& value() const;
  /// Accumulated gradient; zero-sized when backward never reached this tensor.
  const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  std::array<Eigen::Index, 2> shape() const { return {rows(), cols()}; }
  bool requires_grad() const;
  /// Convenience accessor for 1x1 tensors.
  Scalar item() const;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Tensor(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor constant(Matrix value);
  Tensor variable(Matrix value);
  /// Leaf that references external storage (typically a network parameter).
  /// The referenced matrix must outlive the tape and stay unchanged while it is used.
  Tensor borrow(const Matrix& value, bool requires_grad);

  /// Reverse sweep from a 1x1 loss. Leaf gradients accumulate across calls;
  /// interior gradients are recomputed each call.
  void backward(const Tensor& loss);
  void zero_grad();

  std::size_t size() const { return nodes_.size(); }

  // Primitive-author interface.
  Tensor record(Matrix value, std::initializer_list<Tensor> inputs, BackwardFn backward);
  const Matrix& value(int id) const;
  const Matrix& grad(int id) const { return nodes_[id].grad; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  /// Adds delta into the gradient of node id, when that node requires one.
  template <typename Expr>
  void accumulate(int id, const Expr& delta) {
    Node& node = nodes_[id];
    if (!node.requires_grad) return;
    if (node.grad.size() == 0) {
      node.grad = delta;
    } else {
      node.grad += delta;
    }
  }
  void check_owned(const Tensor& t) const;

 private:
  struct Node {
    Matrix owned;
    const Matrix* borrowed = nullptr;
    Matrix grad;
    bool requires_grad = false;
    bool leaf = true;
    BackwardFn backward;
  };

  Tensor push(Node node);

  std::deque<Node> nodes_;
};

/// Differentiable primitives. Shapes follow the one-example-per-row convention.
namespace ad {

/// x (B x in) -> x W^T + b^T, with W (out x in) and b (out x 1).
Tensor affine(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Scalar c);
Tensor add_constant(const Tensor& a, Scalar c);
Tensor clamp(const Tensor& x, Scalar lo, Scalar hi);

/// Sum of all entries, 1x1.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// (B x K) -> (B x 1).
Tensor row_sum(const Tensor& x);
Tensor row_logsumexp(const Tensor& x);
Tensor row_softmax(const Tensor& x);
/// log softmax(logits)[r, labels[r]] per row, (B x 1).
Tensor categorical_log_likelihood(const Tensor& logits, const std::vector<int>& labels);
/// sum_w counts[r,w] * log softmax(logits)[r,w] per row, (B x 1).
Tensor multinomial_log_likelihood(const Tensor& logits, const Matrix& counts);
/// log N(x_r; mean_r, sigma2 I) per row, (B x 1).
Tensor gaussian_log_density(const Tensor& mean, const Matrix& x, Scalar sigma2);
/// Sum of squared differences, 1x1.
Tensor squared_error(const Tensor& a, const Tensor& b);
/// KL(N(mu, exp(logvar)) || N(0, I)) per row, (B x 1).
Tensor kl_diag_gaussian(const Tensor& mu, const Tensor& logvar);
/// mu + exp(logvar / 2) * eps, elementwise.
Tensor reparam(const Tensor& mu, const Tensor& logvar, const Matrix& eps);

Tensor slice_cols(const Tensor& x, Eigen::Index start, Eigen::Index count);
/// Stacks x vertically `times` times: row j*B + i holds x row i.
Tensor repeat_rows(const Tensor& x, Eigen::Index times);
/// Column-major reinterpretation of the entries.
Tensor reshape(const Tensor& x, Eigen::Index rows, Eigen::Index cols);

}  // namespace ad

inline Tensor operator+(const Tensor& a, const Tensor& b) { return ad::add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return ad::sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return ad::mul(a, b); }
inline Tensor operator*(Scalar c, const Tensor& a) { return ad::scale(a, c); }

}  // namespace lebm
