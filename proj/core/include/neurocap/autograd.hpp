#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Every value is a 2-D double matrix; scalars are 1x1.
//
// Graphs are built eagerly: each op computes its value immediately and
// records a closure that propagates the output gradient to its inputs.
// `backward(loss)` walks the graph in reverse topological order.
// Parameter leaves accumulate gradients across calls until zero_grad().

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace neurocap::ag {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

struct Node {
  Matrix value;
  Matrix grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Matrix& g);
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool valid() const { return static_cast<bool>(node_); }
  double scalar() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// A trainable leaf. The wrapped node persists across graphs.
class Parameter {
 public:
  Parameter() = default;
  explicit Parameter(Matrix init);

  Var var() const { return Var(node_); }
  Matrix& value() { return node_->value; }
  const Matrix& value() const { return node_->value; }
  Matrix& grad() { return node_->grad; }
  const Matrix& grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() != 0; }
  void zero_grad();

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Matrix value);
Var scalar_constant(double v);

// Reverse pass from a 1x1 loss. Gradients add into parameter leaves.
void backward(const Var& loss);

// -- elementwise / linear algebra --
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // Hadamard
Var scale(const Var& a, double s);
Var add_row(const Var& a, const Var& row);  // broadcast a 1xC row over every row of a
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var gelu(const Var& a);  // tanh approximation

// -- shape --
Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var gather_rows(const Var& table, std::span<const int> ids);

// -- normalization / probability --
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);
Var softmax_rows(const Var& x, bool causal = false);
Var log_softmax_rows(const Var& x);
// Column vector (rows x 1) with out[i] = x[i, index[i]].
Var pick(const Var& x, std::span<const int> index);

// -- reductions --
Var sum(const Var& a);
Var mean(const Var& a);

}  // namespace neurocap::ag
