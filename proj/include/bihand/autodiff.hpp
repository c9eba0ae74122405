#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace bihand {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

namespace ad {

// A node of the reverse-mode tape. Leaves (parameters, inputs) have no
// backward function; interior nodes propagate `grad` into their inputs.
struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Matrix& g);
  template <typename Expr>
  void accumulate_expr(const Expr& g) {
    if (grad.size() == 0) grad = Matrix::Zero(value.rows(), value.cols());
    grad += g;
  }
};

// Handle to a tape node. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(Matrix value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  // Zero-sized until something flows into it.
  const Matrix& grad() const { return node_->grad; }
  Matrix grad_or_zero() const;
  void zero_grad() { node_->grad.resize(0, 0); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double scalar() const { return node_->value(0, 0); }
  bool defined() const { return static_cast<bool>(node_); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Matrix value);
Var leaf(Matrix value);
// Same value, no gradient path back into the source.
Var detach(const Var& a);

// Seeds d(root)/d(root) = 1 for a 1x1 root and propagates to every node
// that requires a gradient.
void backward(const Var& root);

// Elementwise and linear algebra.
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_rowvec(const Var& a, const Var& row);
Var mul_rowvec(const Var& a, const Var& row);
Var mul_colvec(const Var& a, const Var& col);
Var transpose(const Var& a);

Var leaky_relu(const Var& a, double slope);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var log(const Var& a);
Var clamp(const Var& a, double lo, double hi);

// Reductions to 1x1.
Var sum(const Var& a);
Var mean(const Var& a);
Var mean_abs(const Var& a);
Var sum_squares(const Var& a);

Var softmax_rows(const Var& a);
Var row_mean(const Var& a);
// Mean over consecutive blocks of `segment` rows: (B*segment) x C -> B x C.
Var segment_mean(const Var& a, Eigen::Index segment);
// Row-major reinterpretation of the same buffer.
Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols);
Var concat_cols(std::span<const Var> parts);
Var concat_cols(const Var& a, const Var& b);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);

// Unit-normalizes each row; rows with norm below `eps` map to zero.
Var normalize_rows(const Var& a, double eps = 1e-12);
// Zero-mean unit-variance per row (no affine part).
Var layer_norm_rows(const Var& a, double eps = 1e-5);

// Scaled dot-product attention over stacked sequences. q is (B*tq) x C,
// k and v are (B*tk) x C, and C splits into `heads` contiguous blocks.
// If `weights` is non-null, one tq x tk matrix per (b, head) is appended.
Var attention_core(const Var& q, const Var& k, const Var& v, Eigen::Index tq, Eigen::Index tk,
                   int heads, std::vector<Matrix>* weights = nullptr);

// Batched spatial-residual mixing: for each row r with residual d and
// feature f, out = f + f * softmax_rows(d^T f).
Var srm_mix(const Var& residual, const Var& feature);

// Zero-padded temporal window gather for 1-D convolution over stacked
// sequences: (B*t) x C -> (B*t) x (k*C), window centered on each frame.
Var temporal_unfold(const Var& a, Eigen::Index t, Eigen::Index kernel);

}  // namespace ad
}  // namespace bihand
