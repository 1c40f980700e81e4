#include "tempest/autograd.hpp"

#include <cmath>
#include <stdexcept>

namespace tempest::ag {

namespace {

const Matrix kEmpty;

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// Row-wise log-sum-exp, stable.
Eigen::VectorXd row_logsumexp(const Matrix& m) {
  const Eigen::VectorXd max = m.rowwise().maxCoeff();
  const Eigen::VectorXd s = (m.colwise() - max).array().exp().rowwise().sum();
  return max.array() + s.array().log();
}

Matrix row_softmax(const Matrix& m) {
  const Eigen::VectorXd lse = row_logsumexp(m);
  return (m.colwise() - lse).array().exp();
}

}  // namespace

const Matrix& Var::value() const { return graph->value(*this); }

Var Graph::parameter(const Matrix& value) {
  Node node;
  node.external = &value;
  node.requires_grad = recording_;
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::constant(Matrix value) {
  Node node;
  node.owned = std::move(value);
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

const Matrix& Graph::value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value(); }

const Matrix& Graph::grad(Var v) const {
  const auto& node = nodes_[static_cast<std::size_t>(v.id)];
  return node.requires_grad ? node.grad : kEmpty;
}

Var Graph::emit(Matrix value, std::initializer_list<Var> parents, BackwardFn backward) {
  return emit(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(backward));
}

Var Graph::emit(Matrix value, std::span<const Var> parents, BackwardFn backward) {
  Node node;
  node.owned = std::move(value);
  if (recording_) {
    for (const Var& p : parents) node.requires_grad = node.requires_grad || requires_grad(p);
    if (node.requires_grad) node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Matrix& Graph::grad_buffer(Var target) {
  auto& node = nodes_[static_cast<std::size_t>(target.id)];
  if (node.grad.size() == 0) node.grad = Matrix::Zero(node.value().rows(), node.value().cols());
  return node.grad;
}

void Graph::accumulate(Var target, const Matrix& delta) {
  if (!requires_grad(target)) return;
  grad_buffer(target) += delta;
}

void Graph::backward(Var root) {
  if (!recording_) throw std::logic_error("backward() on a non-recording graph");
  if (value(root).size() != 1) throw std::logic_error("backward() root must be 1x1");
  for (auto& node : nodes_) node.grad.resize(0, 0);
  if (!requires_grad(root)) return;
  grad_buffer(root).setOnes();
  for (int i = root.id; i >= 0; --i) {
    auto& node = nodes_[static_cast<std::size_t>(i)];
    if (!node.backward || node.grad.size() == 0) continue;
    // Copy: the closure may resize other nodes' buffers but never this node's.
    const Matrix out_grad = node.grad;
    node.backward(*this, out_grad, node.value());
  }
}

Var matmul(Var a, Var b) {
  Graph& g = *a.graph;
  return g.emit(a.value() * b.value(), {a, b}, [a, b](Graph& g, const Matrix& d, const Matrix& /*out*/) {
    if (g.requires_grad(a)) g.grad_buffer(a).noalias() += d * b.value().transpose();
    if (g.requires_grad(b)) g.grad_buffer(b).noalias() += a.value().transpose() * d;
  });
}

Var matmul_nt(Var a, Var b) {
  Graph& g = *a.graph;
  return g.emit(a.value() * b.value().transpose(), {a, b}, [a, b](Graph& g, const Matrix& d, const Matrix& /*out*/) {
    if (g.requires_grad(a)) g.grad_buffer(a).noalias() += d * b.value();
    if (g.requires_grad(b)) g.grad_buffer(b).noalias() += d.transpose() * a.value();
  });
}

Var add(Var a, Var b) {
  Graph& g = *a.graph;
  return g.emit(a.value() + b.value(), {a, b}, [a, b](Graph& g, const Matrix& d, const Matrix& /*out*/) {
    g.accumulate(a, d);
    g.accumulate(b, d);
  });
}

Var add_row(Var a, Var row) {
  Graph& g = *a.graph;
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return g.emit(std::move(out), {a, row}, [a, row](Graph& g, const Matrix& d, const Matrix& /*out*/) {
    g.accumulate(a, d);
    if (g.requires_grad(row)) g.grad_buffer(row) += d.colwise().sum();
  });
}

Var add_col(Var a, Var col) {
  Graph& g = *a.graph;
  Matrix out = a.value();
  out.colwise() += col.value().col(0);
  return g.emit(std::move(out), {a, col}, [a, col](Graph& g, const Matrix& d, const Matrix& /*out*/) {
    g.accumulate(a, d);
    if (g.requires_grad(col)) g.grad_buffer(col) += d.rowwise().sum();
  });
}

Var scale(Var a, double s) {
  Graph& g = *a.graph;
  return g.emit(a.value() * s, {a}, [a, s](Graph& g, const Matrix& d, const Matrix& /*out*/) { g.accumulate(a, d * s); });
}

Var gelu(Var a) {
  Graph& g = *a.graph;
  const Matrix& x = a.value();
  Matrix out = x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); });
  return g.emit(std::move(out), {a}, [a](Graph& g, const Matrix& d, const Matrix& /*out*/) {
    const Matrix slope = a.value().unaryExpr([](double v) {
      return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
    });
    g.accumulate(a, d.cwiseProduct(slope));
  });
}

Var softmax_rows(Var a) {
  Graph& g = *a.graph;
  return g.emit(row_softmax(a.value()), {a}, [a](Graph& g, const Matrix& d, const Matrix& y) {
    const Eigen::VectorXd dot = d.cwiseProduct(y).rowwise().sum();
    g.accumulate(a, y.cwiseProduct(d.colwise() - dot));
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  Graph& g = *x.graph;
  const Matrix& in = x.value();
  const Eigen::Index cols = in.cols();
  const Eigen::VectorXd mean = in.rowwise().mean();
  const Matrix centered = in.colwise() - mean;
  const Eigen::VectorXd inv_std =
      ((centered.array().square().rowwise().sum() / static_cast<double>(cols)) + eps).rsqrt();
  Matrix xhat = centered.array().colwise() * inv_std.array();
  Matrix out = xhat.array().rowwise() * gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);
  return g.emit(std::move(out), {x, gamma, beta},
                [x, gamma, beta, xhat = std::move(xhat), inv_std](Graph& g, const Matrix& d, const Matrix& /*out*/) {
                  if (g.requires_grad(gamma)) g.grad_buffer(gamma) += d.cwiseProduct(xhat).colwise().sum();
                  if (g.requires_grad(beta)) g.grad_buffer(beta) += d.colwise().sum();
                  if (!g.requires_grad(x)) return;
                  const Matrix dxhat = d.array().rowwise() * gamma.value().row(0).array();
                  const Eigen::VectorXd m1 = dxhat.rowwise().mean();
                  const Eigen::VectorXd m2 = dxhat.cwiseProduct(xhat).rowwise().mean();
                  Matrix dx = (dxhat.colwise() - m1) - (xhat.array().colwise() * m2.array()).matrix();
                  dx = dx.array().colwise() * inv_std.array();
                  g.accumulate(x, dx);
                });
}

Var gather_rows(Var table, std::span<const int> indices) {
  Graph& g = *table.graph;
  const Matrix& t = table.value();
  Matrix out(static_cast<Eigen::Index>(indices.size()), t.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = t.row(indices[i]);
  std::vector<int> idx(indices.begin(), indices.end());
  return g.emit(std::move(out), {table}, [table, idx = std::move(idx)](Graph& g, const Matrix& d, const Matrix& /*out*/) {
    Matrix& gt = g.grad_buffer(table);
    for (std::size_t i = 0; i < idx.size(); ++i) gt.row(idx[i]) += d.row(static_cast<Eigen::Index>(i));
  });
}

Var slice_rows(Var a, Eigen::Index first, Eigen::Index count) {
  Graph& g = *a.graph;
  return g.emit(a.value().middleRows(first, count), {a}, [a, first, count](Graph& g, const Matrix& d, const Matrix& /*out*/) {
    if (g.requires_grad(a)) g.grad_buffer(a).middleRows(first, count) += d;
  });
}

Var slice_cols(Var a, Eigen::Index first, Eigen::Index count) {
  Graph& g = *a.graph;
  return g.emit(a.value().middleCols(first, count), {a}, [a, first, count](Graph& g, const Matrix& d, const Matrix& /*out*/) {
    if (g.requires_grad(a)) g.grad_buffer(a).middleCols(first, count) += d;
  });
}

Var concat_rows(std::span<const Var> parts) {
  Graph& g = *parts.front().graph;
  Eigen::Index rows = 0;
  for (const Var& p : parts) rows += p.rows();
  Matrix out(rows, parts.front().cols());
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return g.emit(std::move(out), parts, [ps](Graph& g, const Matrix& d, const Matrix& /*out*/) {
    Eigen::Index at = 0;
    for (const Var& p : ps) {
      g.accumulate(p, d.middleRows(at, p.rows()));
      at += p.rows();
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  Graph& g = *parts.front().graph;
  Eigen::Index cols = 0;
  for (const Var& p : parts) cols += p.cols();
  Matrix out(parts.front().rows(), cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return g.emit(std::move(out), parts, [ps](Graph& g, const Matrix& d, const Matrix& /*out*/) {
    Eigen::Index at = 0;
    for (const Var& p : ps) {
      g.accumulate(p, d.middleCols(at, p.cols()));
      at += p.cols();
    }
  });
}

Var sum(std::span<const Var> scalars) {
  Graph& g = *scalars.front().graph;
  double total = 0.0;
  for (const Var& s : scalars) total += s.value()(0, 0);
  std::vector<Var> ps(scalars.begin(), scalars.end());
  return g.emit(Matrix::Constant(1, 1, total), scalars, [ps](Graph& g, const Matrix& d, const Matrix& /*out*/) {
    for (const Var& p : ps) g.accumulate(p, d);
  });
}

Var cross_entropy(Var logits, std::span<const int> targets) {
  Graph& g = *logits.graph;
  const Matrix& z = logits.value();
  const Eigen::VectorXd lse = row_logsumexp(z);
  double loss = 0.0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) loss += lse(r) - z(r, targets[static_cast<std::size_t>(r)]);
  std::vector<int> t(targets.begin(), targets.end());
  return g.emit(Matrix::Constant(1, 1, loss), {logits}, [logits, t = std::move(t)](Graph& g, const Matrix& d, const Matrix& /*out*/) {
    Matrix p = row_softmax(logits.value());
    for (std::size_t r = 0; r < t.size(); ++r) p(static_cast<Eigen::Index>(r), t[r]) -= 1.0;
    g.accumulate(logits, p * d(0, 0));
  });
}

Var soft_cross_entropy(Var logits, std::span<const double> target) {
  Graph& g = *logits.graph;
  const Matrix& z = logits.value();
  const double lse = row_logsumexp(z)(0);
  double loss = 0.0;
  double mass = 0.0;
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    const double y = target[static_cast<std::size_t>(c)];
    loss += y * (lse - z(0, c));
    mass += y;
  }
  std::vector<double> t(target.begin(), target.end());
  return g.emit(Matrix::Constant(1, 1, loss), {logits},
                [logits, t = std::move(t), mass](Graph& g, const Matrix& d, const Matrix& /*out*/) {
                  Matrix grad = row_softmax(logits.value()) * mass;
                  for (std::size_t c = 0; c < t.size(); ++c) grad(0, static_cast<Eigen::Index>(c)) -= t[c];
                  g.accumulate(logits, grad * d(0, 0));
                });
}

Var binary_cross_entropy(Var logits, std::span<const double> target) {
  Graph& g = *logits.graph;
  const Matrix& z = logits.value();
  const auto n = static_cast<double>(z.cols());
  double loss = 0.0;
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    const double v = z(0, c);
    // softplus(v) - y v, computed stably.
    loss += std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))) - target[static_cast<std::size_t>(c)] * v;
  }
  std::vector<double> t(target.begin(), target.end());
  return g.emit(Matrix::Constant(1, 1, loss / n), {logits},
                [logits, t = std::move(t), n](Graph& g, const Matrix& d, const Matrix& /*out*/) {
                  Matrix grad(1, logits.cols());
                  for (Eigen::Index c = 0; c < grad.cols(); ++c) {
                    const double sig = 1.0 / (1.0 + std::exp(-logits.value()(0, c)));
                    grad(0, c) = (sig - t[static_cast<std::size_t>(c)]) / n;
                  }
                  g.accumulate(logits, grad * d(0, 0));
                });
}

}  // namespace tempest::ag
