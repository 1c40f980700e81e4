#pragma once

#include <Eigen/Dense>
#include <functional>
#include <span>
#include <vector>

namespace tempest::ag {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

class Graph;

// Handle to a node on a Graph. Cheap to copy; only valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

// Tape of matrix operations. Nodes are appended in evaluation order, so a
// reverse sweep is a valid topological order for backpropagation.
// With recording disabled the graph only evaluates (no closures, no grads).
class Graph {
 public:
  explicit Graph(bool recording = true) : recording_(recording) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // A leaf whose value lives outside the graph (model parameters). The
  // referenced matrix must outlive the graph and stay unchanged.
  Var parameter(const Matrix& value);
  Var constant(Matrix value);

  const Matrix& value(Var v) const;
  // Gradient of the last backward() root; zero-sized if v did not require it.
  const Matrix& grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }
  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(root)/d(root) = 1 for a 1x1 root and sweeps the tape.
  void backward(Var root);

  // Op plumbing. backward receives the node's output gradient and value and
  // must accumulate into parents via accumulate() or grad_buffer().
  using BackwardFn = std::function<void(Graph&, const Matrix& out_grad, const Matrix& out_value)>;
  Var emit(Matrix value, std::initializer_list<Var> parents, BackwardFn backward);
  Var emit(Matrix value, std::span<const Var> parents, BackwardFn backward);
  void accumulate(Var target, const Matrix& delta);
  Matrix& grad_buffer(Var target);

 private:
  struct Node {
    Matrix owned;
    const Matrix* external = nullptr;
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;

    const Matrix& value() const { return external != nullptr ? *external : owned; }
  };
  std::vector<Node> nodes_;
  bool recording_;
};

// ---- operations ---------------------------------------------------------

Var matmul(Var a, Var b);              // a * b
Var matmul_nt(Var a, Var b);           // a * b^T
Var add(Var a, Var b);                 // same shape
Var add_row(Var a, Var row);           // row (1 x cols) broadcast over rows
Var add_col(Var a, Var col);           // col (rows x 1) broadcast over columns
Var scale(Var a, double s);
Var gelu(Var a);                       // exact, erf based
Var softmax_rows(Var a);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);  // per row
Var gather_rows(Var table, std::span<const int> indices);
Var slice_rows(Var a, Eigen::Index first, Eigen::Index count);
Var slice_cols(Var a, Eigen::Index first, Eigen::Index count);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var sum(std::span<const Var> scalars);

// Sum over rows of -log softmax(logits[r])[targets[r]]. Returns 1x1.
Var cross_entropy(Var logits, std::span<const int> targets);
// -sum_c target[c] * log softmax(logits)[c] for a 1 x C row. Returns 1x1.
Var soft_cross_entropy(Var logits, std::span<const double> target);
// Mean over classes of binary cross-entropy with logits. Returns 1x1.
Var binary_cross_entropy(Var logits, std::span<const double> target);

}  // namespace tempest::ag
