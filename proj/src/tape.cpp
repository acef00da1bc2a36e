#include "lebm/tape.hpp"

#include <cmath>
#include <string>

#include "lebm/error.hpp"
#include "lebm/kernels.hpp"

namespace lebm {

const Matrix& Tensor::value() const {
  if (!tape_) throw Error(ErrorCode::DetachedTensor, "tensor is not attached to a tape");
  return tape_->value(id_);
}

const Matrix& Tensor::grad() const {
  if (!tape_) throw Error(ErrorCode::DetachedTensor, "tensor is not attached to a tape");
  return tape_->grad(id_);
}

bool Tensor::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

Scalar Tensor::item() const {
  const Matrix& v = value();
  if (v.size() != 1) throw Error(ErrorCode::InvalidShape, "item() on a non-scalar tensor");
  return v(0, 0);
}

const Matrix& Tape::value(int id) const {
  const Node& node = nodes_[id];
  return node.borrowed ? *node.borrowed : node.owned;
}

void Tape::check_owned(const Tensor& t) const {
  if (t.tape() != this || t.id() < 0 || static_cast<std::size_t>(t.id()) >= nodes_.size())
    throw Error(ErrorCode::DetachedTensor, "tensor was not recorded on this tape");
}

Tensor Tape::push(Node node) {
  const Matrix& v = node.borrowed ? *node.borrowed : node.owned;
  if (!v.allFinite()) throw Error(ErrorCode::NonFiniteInput, "non-finite value recorded on tape");
  nodes_.push_back(std::move(node));
  return Tensor(this, static_cast<int>(nodes_.size() - 1));
}

Tensor Tape::constant(Matrix value) {
  Node node;
  node.owned = std::move(value);
  return push(std::move(node));
}

Tensor Tape::variable(Matrix value) {
  Node node;
  node.owned = std::move(value);
  node.requires_grad = true;
  return push(std::move(node));
}

Tensor Tape::borrow(const Matrix& value, bool requires_grad) {
  Node node;
  node.borrowed = &value;
  node.requires_grad = requires_grad;
  return push(std::move(node));
}

Tensor Tape::record(Matrix value, std::initializer_list<Tensor> inputs, BackwardFn backward) {
  Node node;
  node.owned = std::move(value);
  node.leaf = false;
  for (const Tensor& in : inputs) {
    check_owned(in);
    node.requires_grad = node.requires_grad || requires_grad(in.id());
  }
  if (node.requires_grad) node.backward = std::move(backward);
  return push(std::move(node));
}

void Tape::zero_grad() {
  for (Node& node : nodes_) node.grad.resize(0, 0);
}

void Tape::backward(const Tensor& loss) {
  check_owned(loss);
  if (loss.value().size() != 1) throw Error(ErrorCode::InvalidShape, "backward requires a 1x1 loss");
  for (Node& node : nodes_) {
    if (!node.leaf) node.grad.resize(0, 0);
  }
  if (!nodes_[loss.id()].requires_grad) return;
  accumulate(loss.id(), Matrix::Ones(1, 1));
  for (int id = loss.id(); id >= 0; --id) {
    Node& node = nodes_[id];
    if (node.leaf || !node.requires_grad || node.grad.size() == 0) continue;
    node.backward(*this, id);
  }
}

namespace ad {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw Error(ErrorCode::InvalidShape, std::string(op) + ": shape mismatch");
}

void require_same_tape(const Tensor& a, const Tensor& b) {
  if (a.tape() != b.tape()) throw Error(ErrorCode::DetachedTensor, "operands live on different tapes");
}

}  // namespace

Tensor affine(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_same_tape(x, weight);
  require_same_tape(x, bias);
  const Matrix& w = weight.value();
  const Matrix& b = bias.value();
  if (x.cols() != w.cols() || b.rows() != w.rows() || b.cols() != 1)
    throw Error(ErrorCode::InvalidShape, "affine: incompatible shapes");
  Matrix out = x.value() * w.transpose();
  out.rowwise() += b.transpose().row(0);
  const int xi = x.id(), wi = weight.id(), bi = bias.id();
  return x.tape()->record(std::move(out), {x, weight, bias}, [xi, wi, bi](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(xi)) t.accumulate(xi, g * t.value(wi));
    if (t.requires_grad(wi)) t.accumulate(wi, g.transpose() * t.value(xi));
    if (t.requires_grad(bi)) t.accumulate(bi, g.colwise().sum().transpose());
  });
}

Tensor tanh(const Tensor& x) {
  // 1 - 2 / (exp(2x) + 1) vectorizes for doubles; std::tanh does not.
  Matrix out = (1.0 - 2.0 / ((2.0 * x.value().array()).exp() + 1.0)).matrix();
  const int xi = x.id();
  return x.tape()->record(std::move(out), {x}, [xi](Tape& t, int self) {
    const Matrix& y = t.value(self);
    t.accumulate(xi, (t.grad(self).array() * (1.0 - y.array().square())).matrix());
  });
}

Tensor relu(const Tensor& x) {
  Matrix out = x.value().cwiseMax(0.0);
  const int xi = x.id();
  return x.tape()->record(std::move(out), {x}, [xi](Tape& t, int self) {
    const Matrix mask = (t.value(xi).array() > 0.0).cast<Scalar>().matrix();
    t.accumulate(xi, t.grad(self).cwiseProduct(mask));
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "add");
  const int ai = a.id(), bi = b.id();
  return a.tape()->record(a.value() + b.value(), {a, b}, [ai, bi](Tape& t, int self) {
    t.accumulate(ai, t.grad(self));
    t.accumulate(bi, t.grad(self));
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "sub");
  const int ai = a.id(), bi = b.id();
  return a.tape()->record(a.value() - b.value(), {a, b}, [ai, bi](Tape& t, int self) {
    t.accumulate(ai, t.grad(self));
    t.accumulate(bi, -t.grad(self));
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "mul");
  const int ai = a.id(), bi = b.id();
  return a.tape()->record(a.value().cwiseProduct(b.value()), {a, b}, [ai, bi](Tape& t, int self) {
    t.accumulate(ai, t.grad(self).cwiseProduct(t.value(bi)));
    t.accumulate(bi, t.grad(self).cwiseProduct(t.value(ai)));
  });
}

Tensor scale(const Tensor& a, Scalar c) {
  const int ai = a.id();
  return a.tape()->record(a.value() * c, {a}, [ai, c](Tape& t, int self) {
    t.accumulate(ai, t.grad(self) * c);
  });
}

Tensor add_constant(const Tensor& a, Scalar c) {
  const int ai = a.id();
  return a.tape()->record((a.value().array() + c).matrix(), {a}, [ai](Tape& t, int self) {
    t.accumulate(ai, t.grad(self));
  });
}

Tensor clamp(const Tensor& x, Scalar lo, Scalar hi) {
  const int xi = x.id();
  return x.tape()->record(x.value().cwiseMax(lo).cwiseMin(hi), {x}, [xi, lo, hi](Tape& t, int self) {
    const auto& v = t.value(xi).array();
    const Matrix mask = ((v >= lo) && (v <= hi)).cast<Scalar>().matrix();
    t.accumulate(xi, t.grad(self).cwiseProduct(mask));
  });
}

Tensor sum(const Tensor& x) {
  const int xi = x.id();
  const Eigen::Index r = x.rows(), c = x.cols();
  return x.tape()->record(Matrix::Constant(1, 1, x.value().sum()), {x}, [xi, r, c](Tape& t, int self) {
    t.accumulate(xi, Matrix::Constant(r, c, t.grad(self)(0, 0)));
  });
}

Tensor mean(const Tensor& x) {
  if (x.value().size() == 0) throw Error(ErrorCode::InvalidShape, "mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<Scalar>(x.value().size()));
}

Tensor row_sum(const Tensor& x) {
  const int xi = x.id();
  const Eigen::Index c = x.cols();
  return x.tape()->record(x.value().rowwise().sum(), {x}, [xi, c](Tape& t, int self) {
    t.accumulate(xi, t.grad(self).replicate(1, c));
  });
}

Tensor row_logsumexp(const Tensor& x) {
  Matrix out = rowwise_logsumexp(x.value());
  const int xi = x.id();
  return x.tape()->record(std::move(out), {x}, [xi](Tape& t, int self) {
    const Matrix p = rowwise_softmax(t.value(xi));
    t.accumulate(xi, (p.array().colwise() * t.grad(self).col(0).array()).matrix());
  });
}

Tensor row_softmax(const Tensor& x) {
  Matrix out = rowwise_softmax(x.value());
  const int xi = x.id();
  return x.tape()->record(std::move(out), {x}, [xi](Tape& t, int self) {
    const Matrix& y = t.value(self);
    const Matrix& g = t.grad(self);
    const Vector inner = g.cwiseProduct(y).rowwise().sum();
    t.accumulate(xi, (y.array() * (g.colwise() - inner).array()).matrix());
  });
}

Tensor categorical_log_likelihood(const Tensor& logits, const std::vector<int>& labels) {
  const Matrix& z = logits.value();
  if (static_cast<Eigen::Index>(labels.size()) != z.rows())
    throw Error(ErrorCode::InvalidShape, "categorical_log_likelihood: label count != rows");
  const Vector lse = rowwise_logsumexp(z);
  Matrix out(z.rows(), 1);
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const int k = labels[r];
    if (k < 0 || k >= z.cols())
      throw Error(ErrorCode::InvalidLabel, "label " + std::to_string(k) + " out of range");
    out(r, 0) = z(r, k) - lse(r);
  }
  const int li = logits.id();
  return logits.tape()->record(std::move(out), {logits}, [li, labels](Tape& t, int self) {
    Matrix d = -rowwise_softmax(t.value(li));
    for (Eigen::Index r = 0; r < d.rows(); ++r) d(r, labels[r]) += 1.0;
    t.accumulate(li, (d.array().colwise() * t.grad(self).col(0).array()).matrix());
  });
}

Tensor multinomial_log_likelihood(const Tensor& logits, const Matrix& counts) {
  const Matrix& z = logits.value();
  if (counts.rows() != z.rows() || counts.cols() != z.cols())
    throw Error(ErrorCode::InvalidShape, "multinomial_log_likelihood: counts/logits shape mismatch");
  if ((counts.array() < 0.0).any())
    throw Error(ErrorCode::InvalidInput, "multinomial_log_likelihood: negative counts");
  const Vector lse = rowwise_logsumexp(z);
  const Vector totals = counts.rowwise().sum();
  Matrix out = (counts.cwiseProduct(z).rowwise().sum() - totals.cwiseProduct(lse));
  const int li = logits.id();
  return logits.tape()->record(std::move(out), {logits}, [li, counts, totals](Tape& t, int self) {
    Matrix p = rowwise_softmax(t.value(li));
    Matrix d = counts - (p.array().colwise() * totals.array()).matrix();
    t.accumulate(li, (d.array().colwise() * t.grad(self).col(0).array()).matrix());
  });
}

Tensor gaussian_log_density(const Tensor& mean, const Matrix& x, Scalar sigma2) {
  const Matrix& m = mean.value();
  if (x.rows() != m.rows() || x.cols() != m.cols())
    throw Error(ErrorCode::InvalidShape, "gaussian_log_density: observation shape mismatch");
  if (!(sigma2 > 0.0)) throw Error(ErrorCode::InvalidInput, "gaussian_log_density: sigma2 must be > 0");
  const Scalar dim = static_cast<Scalar>(m.cols());
  const Scalar norm = -0.5 * dim * std::log(2.0 * EIGEN_PI * sigma2);
  Matrix out = ((x - m).rowwise().squaredNorm() * (-0.5 / sigma2)).array() + norm;
  const int mi = mean.id();
  return mean.tape()->record(std::move(out), {mean}, [mi, x, sigma2](Tape& t, int self) {
    const Matrix resid = (x - t.value(mi)) / sigma2;
    t.accumulate(mi, (resid.array().colwise() * t.grad(self).col(0).array()).matrix());
  });
}

Tensor squared_error(const Tensor& a, const Tensor& b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "squared_error");
  const int ai = a.id(), bi = b.id();
  Matrix out = Matrix::Constant(1, 1, (a.value() - b.value()).squaredNorm());
  return a.tape()->record(std::move(out), {a, b}, [ai, bi](Tape& t, int self) {
    const Matrix d = 2.0 * t.grad(self)(0, 0) * (t.value(ai) - t.value(bi));
    t.accumulate(ai, d);
    t.accumulate(bi, -d);
  });
}

Tensor kl_diag_gaussian(const Tensor& mu, const Tensor& logvar) {
  require_same_tape(mu, logvar);
  require_same_shape(mu, logvar, "kl_diag_gaussian");
  const Matrix& m = mu.value();
  const Matrix& lv = logvar.value();
  Matrix out = 0.5 * (lv.array().exp() + m.array().square() - 1.0 - lv.array()).matrix().rowwise().sum();
  const int mi = mu.id(), li = logvar.id();
  return mu.tape()->record(std::move(out), {mu, logvar}, [mi, li](Tape& t, int self) {
    const auto g = t.grad(self).col(0).array();
    t.accumulate(mi, (t.value(mi).array().colwise() * g).matrix());
    t.accumulate(li, ((0.5 * (t.value(li).array().exp() - 1.0)).colwise() * g).matrix());
  });
}

Tensor reparam(const Tensor& mu, const Tensor& logvar, const Matrix& eps) {
  require_same_tape(mu, logvar);
  require_same_shape(mu, logvar, "reparam");
  if (eps.rows() != mu.rows() || eps.cols() != mu.cols())
    throw Error(ErrorCode::InvalidShape, "reparam: eps shape mismatch");
  const Matrix sd = (0.5 * logvar.value().array()).exp().matrix();
  Matrix out = mu.value() + sd.cwiseProduct(eps);
  const int mi = mu.id(), li = logvar.id();
  return mu.tape()->record(std::move(out), {mu, logvar}, [mi, li, sd, eps](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    t.accumulate(mi, g);
    t.accumulate(li, 0.5 * g.cwiseProduct(sd).cwiseProduct(eps));
  });
}

Tensor slice_cols(const Tensor& x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > x.cols())
    throw Error(ErrorCode::InvalidShape, "slice_cols: range out of bounds");
  const int xi = x.id();
  const Eigen::Index r = x.rows(), c = x.cols();
  return x.tape()->record(x.value().middleCols(start, count), {x},
                          [xi, r, c, start, count](Tape& t, int self) {
                            Matrix d = Matrix::Zero(r, c);
                            d.middleCols(start, count) = t.grad(self);
                            t.accumulate(xi, d);
                          });
}

Tensor repeat_rows(const Tensor& x, Eigen::Index times) {
  if (times < 1) throw Error(ErrorCode::InvalidShape, "repeat_rows: times must be >= 1");
  const int xi = x.id();
  const Eigen::Index r = x.rows();
  return x.tape()->record(x.value().replicate(times, 1), {x}, [xi, r, times](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Matrix d = g.topRows(r);
    for (Eigen::Index j = 1; j < times; ++j) d += g.middleRows(j * r, r);
    t.accumulate(xi, d);
  });
}

Tensor reshape(const Tensor& x, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != x.value().size()) throw Error(ErrorCode::InvalidShape, "reshape: size mismatch");
  const int xi = x.id();
  const Eigen::Index r = x.rows(), c = x.cols();
  Matrix out = x.value().reshaped(rows, cols);
  return x.tape()->record(std::move(out), {x}, [xi, r, c](Tape& t, int self) {
    t.accumulate(xi, t.grad(self).reshaped(r, c));
  });
}

}  // namespace ad
}  // namespace lebm
