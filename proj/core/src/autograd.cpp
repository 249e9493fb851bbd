#include "neurocap/autograd.hpp"

#include "neurocap/error.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <unordered_set>

namespace neurocap::ag {

void Node::accumulate(const Matrix& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

double Var::scalar() const {
  if (!node_ || node_->value.size() != 1) {
    throw InternalError("Var::scalar on a non-scalar value");
  }
  return node_->value(0, 0);
}

Parameter::Parameter(Matrix init) : node_(std::make_shared<Node>()) {
  node_->value = std::move(init);
  node_->requires_grad = true;
}

void Parameter::zero_grad() { node_->grad.resize(0, 0); }

namespace {

using Backward = std::function<void(Node&)>;

Var make(Matrix value, std::vector<std::shared_ptr<Node>> parents, Backward fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool any = false;
  for (const auto& p : parents) any = any || p->requires_grad;
  if (any) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(fn);
  }
  return Var(std::move(node));
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw InternalError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                        std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                        std::to_string(b.cols()) + ")");
  }
}

constexpr double kGeluK = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC = 0.044715;

}  // namespace

Var constant(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var scalar_constant(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return constant(std::move(m));
}

void backward(const Var& loss) {
  if (!loss.valid() || loss.value().size() != 1) {
    throw InternalError("backward: loss must be a 1x1 value");
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.size() != 0) n->backward_fn(*n);
  }
  // Interior gradients are only needed during this pass.
  for (Node* n : order) {
    if (n->backward_fn) n->grad.resize(0, 0);
  }
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  auto pa = a.node(), pb = b.node();
  return make(a.value() + b.value(), {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad);
    if (pb->requires_grad) pb->accumulate(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  auto pa = a.node(), pb = b.node();
  return make(a.value() - b.value(), {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad);
    if (pb->requires_grad) pb->accumulate(-self.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  auto pa = a.node(), pb = b.node();
  return make(a.value().cwiseProduct(b.value()), {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad.cwiseProduct(pb->value));
    if (pb->requires_grad) pb->accumulate(self.grad.cwiseProduct(pa->value));
  });
}

Var scale(const Var& a, double s) {
  auto pa = a.node();
  return make(a.value() * s, {pa}, [pa, s](Node& self) { pa->accumulate(self.grad * s); });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw InternalError("add_row: row must be 1x" + std::to_string(a.cols()));
  }
  auto pa = a.node(), pr = row.node();
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return make(std::move(out), {pa, pr}, [pa, pr](Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad);
    if (pr->requires_grad) pr->accumulate(self.grad.colwise().sum());
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw InternalError("matmul: inner dimensions differ (" + std::to_string(a.cols()) + " vs " +
                        std::to_string(b.rows()) + ")");
  }
  auto pa = a.node(), pb = b.node();
  Matrix out = a.value() * b.value();
  return make(std::move(out), {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad * pb->value.transpose());
    if (pb->requires_grad) pb->accumulate(pa->value.transpose() * self.grad);
  });
}

Var transpose(const Var& a) {
  auto pa = a.node();
  Matrix out = a.value().transpose();
  return make(std::move(out), {pa}, [pa](Node& self) {
    Matrix g = self.grad.transpose();
    pa->accumulate(g);
  });
}

Var gelu(const Var& a) {
  auto pa = a.node();
  Matrix out = a.value().unaryExpr([](double x) {
    return 0.5 * x * (1.0 + std::tanh(kGeluK * (x + kGeluC * x * x * x)));
  });
  return make(std::move(out), {pa}, [pa](Node& self) {
    Matrix d = pa->value.unaryExpr([](double x) {
      const double t = std::tanh(kGeluK * (x + kGeluC * x * x * x));
      return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluK * (1.0 + 3.0 * kGeluC * x * x);
    });
    pa->accumulate(self.grad.cwiseProduct(d));
  });
}

Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != a.value().size()) {
    throw InternalError("reshape: element count mismatch");
  }
  auto pa = a.node();
  const Eigen::Index r0 = a.rows(), c0 = a.cols();
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  return make(std::move(out), {pa}, [pa, r0, c0](Node& self) {
    Matrix g = Eigen::Map<const Matrix>(self.grad.data(), r0, c0);
    pa->accumulate(g);
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw InternalError("concat_rows: no inputs");
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  std::vector<std::shared_ptr<Node>> parents;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw InternalError("concat_rows: column count mismatch");
    rows += p.rows();
    parents.push_back(p.node());
  }
  Matrix out(rows, cols);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  auto ps = parents;
  return make(std::move(out), std::move(parents), [ps](Node& self) {
    Eigen::Index r = 0;
    for (const auto& p : ps) {
      const Eigen::Index n = p->value.rows();
      if (p->requires_grad) p->accumulate(self.grad.middleRows(r, n));
      r += n;
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw InternalError("concat_cols: no inputs");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  std::vector<std::shared_ptr<Node>> parents;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw InternalError("concat_cols: row count mismatch");
    cols += p.cols();
    parents.push_back(p.node());
  }
  Matrix out(rows, cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  auto ps = parents;
  return make(std::move(out), std::move(parents), [ps](Node& self) {
    Eigen::Index c = 0;
    for (const auto& p : ps) {
      const Eigen::Index n = p->value.cols();
      if (p->requires_grad) p->accumulate(self.grad.middleCols(c, n));
      c += n;
    }
  });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw InternalError("slice_rows: range out of bounds");
  }
  auto pa = a.node();
  Matrix out = a.value().middleRows(start, count);
  return make(std::move(out), {pa}, [pa, start, count](Node& self) {
    Matrix g = Matrix::Zero(pa->value.rows(), pa->value.cols());
    g.middleRows(start, count) = self.grad;
    pa->accumulate(g);
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw InternalError("slice_cols: range out of bounds");
  }
  auto pa = a.node();
  Matrix out = a.value().middleCols(start, count);
  return make(std::move(out), {pa}, [pa, start, count](Node& self) {
    Matrix g = Matrix::Zero(pa->value.rows(), pa->value.cols());
    g.middleCols(start, count) = self.grad;
    pa->accumulate(g);
  });
}

Var gather_rows(const Var& table, std::span<const int> ids) {
  const Eigen::Index n = static_cast<Eigen::Index>(ids.size());
  Matrix out(n, table.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const int id = ids[static_cast<std::size_t>(i)];
    if (id < 0 || id >= table.rows()) {
      throw InternalError("gather_rows: index " + std::to_string(id) + " out of range");
    }
    out.row(i) = table.value().row(id);
  }
  auto pt = table.node();
  std::vector<int> idx(ids.begin(), ids.end());
  return make(std::move(out), {pt}, [pt, idx = std::move(idx)](Node& self) {
    Matrix g = Matrix::Zero(pt->value.rows(), pt->value.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      g.row(idx[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    }
    pt->accumulate(g);
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  const Eigen::Index rows = x.rows(), cols = x.cols();
  if (gain.rows() != 1 || gain.cols() != cols || bias.rows() != 1 || bias.cols() != cols) {
    throw InternalError("layer_norm: gain/bias must be 1x" + std::to_string(cols));
  }
  Matrix xhat(rows, cols);
  Eigen::VectorXd inv_std(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double mu = x.value().row(r).mean();
    const double var = (x.value().row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (x.value().row(r).array() - mu) * inv_std(r);
  }
  Matrix out = xhat;
  for (Eigen::Index r = 0; r < rows; ++r) {
    out.row(r) = xhat.row(r).cwiseProduct(gain.value().row(0)) + bias.value().row(0);
  }
  auto px = x.node(), pg = gain.node(), pb = bias.node();
  return make(std::move(out), {px, pg, pb},
              [px, pg, pb, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                const Matrix& dy = self.grad;
                if (pg->requires_grad) pg->accumulate(dy.cwiseProduct(xhat).colwise().sum());
                if (pb->requires_grad) pb->accumulate(dy.colwise().sum());
                if (px->requires_grad) {
                  Matrix dx(dy.rows(), dy.cols());
                  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
                    RowVector dxhat = dy.row(r).cwiseProduct(pg->value.row(0));
                    const double m1 = dxhat.mean();
                    const double m2 = dxhat.cwiseProduct(xhat.row(r)).mean();
                    dx.row(r) = (dxhat.array() - m1 - xhat.row(r).array() * m2) * inv_std(r);
                  }
                  px->accumulate(dx);
                }
              });
}

Var softmax_rows(const Var& x, bool causal) {
  const Eigen::Index rows = x.rows(), cols = x.cols();
  const Eigen::Index offset = cols - rows;  // query r may see keys [0, r + offset]
  Matrix out = Matrix::Zero(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Eigen::Index visible = causal ? std::min(cols, r + offset + 1) : cols;
    if (visible <= 0) continue;
    const auto row = x.value().row(r).head(visible);
    const double m = row.maxCoeff();
    RowVector e = (row.array() - m).exp();
    out.row(r).head(visible) = e / e.sum();
  }
  auto px = x.node();
  Matrix y = out;
  return make(std::move(out), {px}, [px, y = std::move(y)](Node& self) {
    Matrix dx(y.rows(), y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double dot = self.grad.row(r).dot(y.row(r));
      dx.row(r) = y.row(r).array() * (self.grad.row(r).array() - dot);
    }
    px->accumulate(dx);
  });
}

Var log_softmax_rows(const Var& x) {
  const Eigen::Index rows = x.rows();
  Matrix out(rows, x.cols());
  Matrix probs(rows, x.cols());
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double m = x.value().row(r).maxCoeff();
    const double lse = m + std::log((x.value().row(r).array() - m).exp().sum());
    out.row(r) = x.value().row(r).array() - lse;
    probs.row(r) = out.row(r).array().exp();
  }
  auto px = x.node();
  return make(std::move(out), {px}, [px, probs = std::move(probs)](Node& self) {
    Matrix dx(probs.rows(), probs.cols());
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
      const double s = self.grad.row(r).sum();
      dx.row(r) = self.grad.row(r) - probs.row(r) * s;
    }
    px->accumulate(dx);
  });
}

Var pick(const Var& x, std::span<const int> index) {
  if (static_cast<Eigen::Index>(index.size()) != x.rows()) {
    throw InternalError("pick: need one index per row");
  }
  Matrix out(x.rows(), 1);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const int c = index[static_cast<std::size_t>(r)];
    if (c < 0 || c >= x.cols()) throw InternalError("pick: column index out of range");
    out(r, 0) = x.value()(r, c);
  }
  auto px = x.node();
  std::vector<int> idx(index.begin(), index.end());
  return make(std::move(out), {px}, [px, idx = std::move(idx)](Node& self) {
    Matrix g = Matrix::Zero(px->value.rows(), px->value.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      g(static_cast<Eigen::Index>(r), idx[r]) = self.grad(static_cast<Eigen::Index>(r), 0);
    }
    px->accumulate(g);
  });
}

Var sum(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  auto pa = a.node();
  return make(std::move(out), {pa}, [pa](Node& self) {
    pa->accumulate(Matrix::Constant(pa->value.rows(), pa->value.cols(), self.grad(0, 0)));
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw InternalError("mean: empty input");
  return scale(sum(a), 1.0 / n);
}

}  // namespace neurocap::ag
