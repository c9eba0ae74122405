#include "bihand/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_set>

namespace bihand::ad {

void Node::accumulate(const Matrix& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

Var::Var(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Matrix Var::grad_or_zero() const {
  if (node_->grad.size() == 0) return Matrix::Zero(rows(), cols());
  return node_->grad;
}

Var constant(Matrix value) { return Var(std::move(value), false); }
Var leaf(Matrix value) { return Var(std::move(value), true); }
Var detach(const Var& a) { return constant(a.value()); }

namespace {

Var make_node(Matrix value, std::initializer_list<Var> inputs, std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  for (const auto& in : inputs) {
    if (in.requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->backward_fn = std::move(fn);
  }
  return Var(std::move(node));
}

Var make_node(Matrix value, const std::vector<Var>& inputs, std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  for (const auto& in : inputs) {
    if (in.requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->backward_fn = std::move(fn);
  }
  return Var(std::move(node));
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) +
                                "x" + std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

Matrix scalar_matrix(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return m;
}

}  // namespace

void backward(const Var& root) {
  if (root.rows() != 1 || root.cols() != 1) {
    throw std::invalid_argument("backward: root must be 1x1");
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->accumulate(scalar_matrix(1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && node->grad.size() != 0) node->backward_fn(*node);
  }
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimension mismatch " + std::to_string(a.cols()) +
                                " vs " + std::to_string(b.rows()));
  }
  return make_node(a.value() * b.value(), {a, b}, [](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    if (x.requires_grad) x.accumulate_expr(self.grad * y.value.transpose());
    if (y.requires_grad) y.accumulate_expr(x.value.transpose() * self.grad);
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  return make_node(a.value() + b.value(), {a, b}, [](Node& self) {
    for (auto& in : self.inputs) {
      if (in->requires_grad) in->accumulate(self.grad);
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  return make_node(a.value() - b.value(), {a, b}, [](Node& self) {
    if (self.inputs[0]->requires_grad) self.inputs[0]->accumulate(self.grad);
    if (self.inputs[1]->requires_grad) self.inputs[1]->accumulate_expr(-self.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  return make_node(a.value().cwiseProduct(b.value()), {a, b}, [](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    if (x.requires_grad) x.accumulate_expr(self.grad.cwiseProduct(y.value));
    if (y.requires_grad) y.accumulate_expr(self.grad.cwiseProduct(x.value));
  });
}

Var scale(const Var& a, double s) {
  return make_node(a.value() * s, {a}, [s](Node& self) {
    self.inputs[0]->accumulate_expr(self.grad * s);
  });
}

Var add_rowvec(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw std::invalid_argument("add_rowvec: row must be 1x" + std::to_string(a.cols()));
  }
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return make_node(std::move(out), {a, row}, [](Node& self) {
    if (self.inputs[0]->requires_grad) self.inputs[0]->accumulate(self.grad);
    if (self.inputs[1]->requires_grad) self.inputs[1]->accumulate_expr(self.grad.colwise().sum());
  });
}

Var mul_rowvec(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw std::invalid_argument("mul_rowvec: row must be 1x" + std::to_string(a.cols()));
  }
  Matrix out = a.value().array().rowwise() * row.value().row(0).array();
  return make_node(std::move(out), {a, row}, [](Node& self) {
    Node& x = *self.inputs[0];
    Node& r = *self.inputs[1];
    if (x.requires_grad) {
      Matrix g = self.grad.array().rowwise() * r.value.row(0).array();
      x.accumulate(g);
    }
    if (r.requires_grad) r.accumulate_expr(self.grad.cwiseProduct(x.value).colwise().sum());
  });
}

Var mul_colvec(const Var& a, const Var& col) {
  if (col.cols() != 1 || col.rows() != a.rows()) {
    throw std::invalid_argument("mul_colvec: column must be " + std::to_string(a.rows()) + "x1");
  }
  Matrix out = a.value().array().colwise() * col.value().col(0).array();
  return make_node(std::move(out), {a, col}, [](Node& self) {
    Node& x = *self.inputs[0];
    Node& c = *self.inputs[1];
    if (x.requires_grad) {
      Matrix g = self.grad.array().colwise() * c.value.col(0).array();
      x.accumulate(g);
    }
    if (c.requires_grad) c.accumulate_expr(self.grad.cwiseProduct(x.value).rowwise().sum());
  });
}

Var transpose(const Var& a) {
  return make_node(a.value().transpose(), {a}, [](Node& self) {
    self.inputs[0]->accumulate_expr(self.grad.transpose());
  });
}

Var leaky_relu(const Var& a, double slope) {
  Matrix out = a.value().unaryExpr([slope](double x) { return x > 0.0 ? x : slope * x; });
  return make_node(std::move(out), {a}, [slope](Node& self) {
    Node& x = *self.inputs[0];
    Matrix g = self.grad.binaryExpr(x.value, [slope](double gi, double xi) {
      return xi > 0.0 ? gi : slope * gi;
    });
    x.accumulate(g);
  });
}

Var tanh(const Var& a) {
  Matrix out = a.value().array().tanh().matrix();
  return make_node(out, {a}, [](Node& self) {
    Matrix g = self.grad.array() * (1.0 - self.value.array().square());
    self.inputs[0]->accumulate(g);
  });
}

Var sigmoid(const Var& a) {
  Matrix out = a.value().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  return make_node(std::move(out), {a}, [](Node& self) {
    Matrix g = self.grad.array() * self.value.array() * (1.0 - self.value.array());
    self.inputs[0]->accumulate(g);
  });
}

Var log(const Var& a) {
  Matrix out = a.value().array().log().matrix();
  return make_node(std::move(out), {a}, [](Node& self) {
    Node& x = *self.inputs[0];
    x.accumulate_expr(self.grad.cwiseQuotient(x.value));
  });
}

Var clamp(const Var& a, double lo, double hi) {
  Matrix out = a.value().cwiseMax(lo).cwiseMin(hi);
  return make_node(std::move(out), {a}, [lo, hi](Node& self) {
    Node& x = *self.inputs[0];
    Matrix g = self.grad.binaryExpr(x.value, [lo, hi](double gi, double xi) {
      return (xi >= lo && xi <= hi) ? gi : 0.0;
    });
    x.accumulate(g);
  });
}

Var sum(const Var& a) {
  return make_node(scalar_matrix(a.value().sum()), {a}, [](Node& self) {
    Node& x = *self.inputs[0];
    x.accumulate_expr(Matrix::Constant(x.value.rows(), x.value.cols(), self.grad(0, 0)));
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return make_node(scalar_matrix(a.value().sum() / n), {a}, [n](Node& self) {
    Node& x = *self.inputs[0];
    x.accumulate_expr(Matrix::Constant(x.value.rows(), x.value.cols(), self.grad(0, 0) / n));
  });
}

Var mean_abs(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return make_node(scalar_matrix(a.value().cwiseAbs().sum() / n), {a}, [n](Node& self) {
    Node& x = *self.inputs[0];
    const double g = self.grad(0, 0) / n;
    // Subgradient 0 at exact kinks.
    Matrix d = x.value.unaryExpr([g](double v) { return v > 0.0 ? g : (v < 0.0 ? -g : 0.0); });
    x.accumulate(d);
  });
}

Var sum_squares(const Var& a) {
  return make_node(scalar_matrix(a.value().squaredNorm()), {a}, [](Node& self) {
    Node& x = *self.inputs[0];
    x.accumulate_expr(x.value * (2.0 * self.grad(0, 0)));
  });
}

Var softmax_rows(const Var& a) {
  Matrix out(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double mx = a.value().row(r).maxCoeff();
    out.row(r) = (a.value().row(r).array() - mx).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return make_node(std::move(out), {a}, [](Node& self) {
    const Matrix& p = self.value;
    Matrix gp = self.grad.cwiseProduct(p);
    Vector dots = gp.rowwise().sum();
    Matrix g = gp - (p.array().colwise() * dots.array()).matrix();
    self.inputs[0]->accumulate(g);
  });
}

Var row_mean(const Var& a) {
  const double c = static_cast<double>(a.cols());
  Matrix out = a.value().rowwise().mean();
  return make_node(std::move(out), {a}, [c](Node& self) {
    Node& x = *self.inputs[0];
    Matrix g(x.value.rows(), x.value.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) g.row(r).setConstant(self.grad(r, 0) / c);
    x.accumulate(g);
  });
}

Var segment_mean(const Var& a, Eigen::Index segment) {
  if (segment <= 0 || a.rows() % segment != 0) {
    throw std::invalid_argument("segment_mean: rows not divisible by segment length");
  }
  const Eigen::Index blocks = a.rows() / segment;
  Matrix out(blocks, a.cols());
  for (Eigen::Index b = 0; b < blocks; ++b) {
    out.row(b) = a.value().middleRows(b * segment, segment).colwise().mean();
  }
  return make_node(std::move(out), {a}, [segment, blocks](Node& self) {
    Node& x = *self.inputs[0];
    Matrix g(x.value.rows(), x.value.cols());
    for (Eigen::Index b = 0; b < blocks; ++b) {
      g.middleRows(b * segment, segment).rowwise() =
          self.grad.row(b) / static_cast<double>(segment);
    }
    x.accumulate(g);
  });
}

Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != a.value().size()) {
    throw std::invalid_argument("reshape: element count mismatch");
  }
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  return make_node(std::move(out), {a}, [](Node& self) {
    Node& x = *self.inputs[0];
    x.accumulate_expr(Eigen::Map<const Matrix>(self.grad.data(), x.value.rows(), x.value.cols()));
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index total = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row count mismatch");
    total += p.cols();
  }
  Matrix out(rows, total);
  Eigen::Index offset = 0;
  for (const auto& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return make_node(std::move(out), inputs, [](Node& self) {
    Eigen::Index off = 0;
    for (auto& in : self.inputs) {
      const Eigen::Index c = in->value.cols();
      if (in->requires_grad) in->accumulate_expr(self.grad.middleCols(off, c));
      off += c;
    }
  });
}

Var concat_cols(const Var& a, const Var& b) {
  const Var parts[] = {a, b};
  return concat_cols(std::span<const Var>(parts));
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw std::out_of_range("slice_rows: range out of bounds");
  }
  return make_node(a.value().middleRows(start, count), {a}, [start, count](Node& self) {
    Node& x = *self.inputs[0];
    if (x.grad.size() == 0) x.grad = Matrix::Zero(x.value.rows(), x.value.cols());
    x.grad.middleRows(start, count) += self.grad;
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw std::out_of_range("slice_cols: range out of bounds");
  }
  return make_node(a.value().middleCols(start, count), {a}, [start, count](Node& self) {
    Node& x = *self.inputs[0];
    if (x.grad.size() == 0) x.grad = Matrix::Zero(x.value.rows(), x.value.cols());
    x.grad.middleCols(start, count) += self.grad;
  });
}

Var normalize_rows(const Var& a, double eps) {
  const Eigen::Index n = a.rows();
  Vector norms = a.value().rowwise().norm();
  Matrix out(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < n; ++r) {
    if (norms(r) < eps) {
      out.row(r).setZero();
    } else {
      out.row(r) = a.value().row(r) / norms(r);
    }
  }
  return make_node(std::move(out), {a}, [norms, eps](Node& self) {
    Node& x = *self.inputs[0];
    Matrix g = Matrix::Zero(x.value.rows(), x.value.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      if (norms(r) < eps) continue;
      const auto u = self.value.row(r);
      const double proj = self.grad.row(r).dot(u);
      g.row(r) = (self.grad.row(r) - proj * u) / norms(r);
    }
    x.accumulate(g);
  });
}

Var layer_norm_rows(const Var& a, double eps) {
  const Eigen::Index c = a.cols();
  Vector inv_std(a.rows());
  Matrix out(a.rows(), c);
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double mu = a.value().row(r).mean();
    const auto centered = (a.value().row(r).array() - mu).matrix();
    const double var = centered.squaredNorm() / static_cast<double>(c);
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    out.row(r) = centered * inv_std(r);
  }
  return make_node(std::move(out), {a}, [inv_std](Node& self) {
    Node& x = *self.inputs[0];
    const double c = static_cast<double>(self.value.cols());
    Matrix g(self.value.rows(), self.value.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      const auto y = self.value.row(r);
      const auto gy = self.grad.row(r);
      const double mean_g = gy.sum() / c;
      const double mean_gy = gy.dot(y) / c;
      g.row(r) = inv_std(r) * (gy.array() - mean_g - y.array() * mean_gy).matrix();
    }
    x.accumulate(g);
  });
}

Var attention_core(const Var& q, const Var& k, const Var& v, Eigen::Index tq, Eigen::Index tk,
                   int heads, std::vector<Matrix>* weights) {
  const Eigen::Index c = q.cols();
  if (heads <= 0 || c % heads != 0) {
    throw std::invalid_argument("attention: channels " + std::to_string(c) +
                                " not divisible by heads " + std::to_string(heads));
  }
  if (k.cols() != c || v.cols() != c || k.rows() != v.rows()) {
    throw std::invalid_argument("attention: key/value shape mismatch");
  }
  if (q.rows() % tq != 0 || k.rows() % tk != 0 || q.rows() / tq != k.rows() / tk) {
    throw std::invalid_argument("attention: sequence lengths do not tile the inputs");
  }
  const Eigen::Index batch = q.rows() / tq;
  const Eigen::Index d = c / heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  auto probs = std::make_shared<std::vector<Matrix>>();
  probs->reserve(static_cast<std::size_t>(batch * heads));
  Matrix out(q.rows(), c);
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      const auto qb = q.value().block(b * tq, h * d, tq, d);
      const auto kb = k.value().block(b * tk, h * d, tk, d);
      const auto vb = v.value().block(b * tk, h * d, tk, d);
      Matrix s = (qb * kb.transpose()) * inv_sqrt_d;
      for (Eigen::Index r = 0; r < s.rows(); ++r) {
        const double mx = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - mx).exp().matrix();
        s.row(r) /= s.row(r).sum();
      }
      out.block(b * tq, h * d, tq, d) = s * vb;
      probs->push_back(std::move(s));
    }
  }
  if (weights) weights->insert(weights->end(), probs->begin(), probs->end());

  return make_node(std::move(out), {q, k, v},
                   [probs, batch, heads, tq, tk, d, inv_sqrt_d](Node& self) {
    Node& qn = *self.inputs[0];
    Node& kn = *self.inputs[1];
    Node& vn = *self.inputs[2];
    Matrix gq = Matrix::Zero(qn.value.rows(), qn.value.cols());
    Matrix gk = Matrix::Zero(kn.value.rows(), kn.value.cols());
    Matrix gv = Matrix::Zero(vn.value.rows(), vn.value.cols());
    for (Eigen::Index b = 0; b < batch; ++b) {
      for (int h = 0; h < heads; ++h) {
        const Matrix& p = (*probs)[static_cast<std::size_t>(b * heads + h)];
        const auto go = self.grad.block(b * tq, h * d, tq, d);
        const auto qb = qn.value.block(b * tq, h * d, tq, d);
        const auto kb = kn.value.block(b * tk, h * d, tk, d);
        const auto vb = vn.value.block(b * tk, h * d, tk, d);
        gv.block(b * tk, h * d, tk, d) += p.transpose() * go;
        Matrix gp = go * vb.transpose();
        Vector dots = gp.cwiseProduct(p).rowwise().sum();
        Matrix gs = p.cwiseProduct((gp.colwise() - dots)) * inv_sqrt_d;
        gq.block(b * tq, h * d, tq, d) += gs * kb;
        gk.block(b * tk, h * d, tk, d) += gs.transpose() * qb;
      }
    }
    if (qn.requires_grad) qn.accumulate(gq);
    if (kn.requires_grad) kn.accumulate(gk);
    if (vn.requires_grad) vn.accumulate(gv);
  });
}

Var srm_mix(const Var& residual, const Var& feature) {
  require_same_shape(residual, feature, "srm_mix");
  const Eigen::Index n = feature.rows();
  const Eigen::Index c = feature.cols();
  Matrix out(n, c);
  Matrix p(c, c);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto d = residual.value().row(r);
    const auto f = feature.value().row(r);
    p.noalias() = d.transpose() * f;
    for (Eigen::Index i = 0; i < c; ++i) {
      const double mx = p.row(i).maxCoeff();
      p.row(i) = (p.row(i).array() - mx).exp().matrix();
      p.row(i) /= p.row(i).sum();
    }
    out.row(r) = f + f * p;
  }
  // The per-row softmax matrices are recomputed in backward to keep the
  // tape at O(n*c) memory.
  return make_node(std::move(out), {residual, feature}, [n, c](Node& self) {
    Node& dn = *self.inputs[0];
    Node& fn = *self.inputs[1];
    Matrix gd = Matrix::Zero(n, c);
    Matrix gf = Matrix::Zero(n, c);
    Matrix p(c, c);
    for (Eigen::Index r = 0; r < n; ++r) {
      const auto d = dn.value.row(r);
      const auto f = fn.value.row(r);
      const auto g = self.grad.row(r);
      p.noalias() = d.transpose() * f;
      for (Eigen::Index i = 0; i < c; ++i) {
        const double mx = p.row(i).maxCoeff();
        p.row(i) = (p.row(i).array() - mx).exp().matrix();
        p.row(i) /= p.row(i).sum();
      }
      // out_j = f_j + sum_i f_i P_ij
      Matrix gp = f.transpose() * g;
      RowVector gfr = g + (p * g.transpose()).transpose();
      Vector dots = gp.cwiseProduct(p).rowwise().sum();
      Matrix ga = p.cwiseProduct(gp.colwise() - dots);
      gd.row(r) = (ga * f.transpose()).transpose();
      gfr += d * ga;
      gf.row(r) = gfr;
    }
    if (dn.requires_grad) dn.accumulate(gd);
    if (fn.requires_grad) fn.accumulate(gf);
  });
}

Var temporal_unfold(const Var& a, Eigen::Index t, Eigen::Index kernel) {
  if (t <= 0 || a.rows() % t != 0) {
    throw std::invalid_argument("temporal_unfold: rows not divisible by sequence length");
  }
  if (kernel <= 0 || kernel % 2 == 0) {
    throw std::invalid_argument("temporal_unfold: kernel must be odd and positive");
  }
  const Eigen::Index batch = a.rows() / t;
  const Eigen::Index c = a.cols();
  const Eigen::Index half = kernel / 2;
  Matrix out = Matrix::Zero(a.rows(), kernel * c);
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (Eigen::Index i = 0; i < t; ++i) {
      for (Eigen::Index j = 0; j < kernel; ++j) {
        const Eigen::Index src = i + j - half;
        if (src < 0 || src >= t) continue;
        out.block(b * t + i, j * c, 1, c) = a.value().row(b * t + src);
      }
    }
  }
  return make_node(std::move(out), {a}, [batch, t, c, kernel, half](Node& self) {
    Node& x = *self.inputs[0];
    Matrix g = Matrix::Zero(x.value.rows(), c);
    for (Eigen::Index b = 0; b < batch; ++b) {
      for (Eigen::Index i = 0; i < t; ++i) {
        for (Eigen::Index j = 0; j < kernel; ++j) {
          const Eigen::Index src = i + j - half;
          if (src < 0 || src >= t) continue;
          g.row(b * t + src) += self.grad.block(b * t + i, j * c, 1, c);
        }
      }
    }
    x.accumulate(g);
  });
}

}  // namespace bihand::ad
