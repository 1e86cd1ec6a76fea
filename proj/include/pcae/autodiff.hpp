#pragma once

// Tape-based reverse-mode differentiation over dense double matrices.
//
// Every op evaluates eagerly and appends a node to the owning Graph. Calling
// Graph::backward on a 1x1 node walks the tape in reverse and accumulates
// gradients into the bound Parameters. Parameters marked frozen are bound as
// constants, so no gradient is ever computed for them.

#include <Eigen/Dense>

#include <functional>
#include <unordered_map>
#include <vector>

namespace pcae {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct Parameter {
  Matrix value;
  Matrix grad;
  bool frozen = false;

  Eigen::Index size() const { return value.size(); }
};

namespace ad {

class Graph;

struct Var {
  Graph* graph = nullptr;
  int id = -1;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Matrix& upstream)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Matrix value);
  // Binds a parameter; repeated calls within one graph return the same node.
  // The parameter must not be modified while the graph is in use.
  Var parameter(Parameter& p);

  // Appends a node computed from `inputs`. `fn` receives the node's upstream
  // gradient and must call accumulate() for each input.
  Var record(Matrix value, const std::vector<Var>& inputs, BackwardFn fn);

  void accumulate(Var v, const Matrix& g);
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  void backward(Var loss);

  const Matrix& value(Var v) const {
    const Node& n = nodes_[v.id];
    return n.param_value != nullptr ? *n.param_value : n.value;
  }
  // Empty matrix if no gradient reached the node.
  const Matrix& grad(Var v) const { return nodes_[v.id].grad; }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    BackwardFn backward;
    Parameter* param = nullptr;
    // Parameter nodes alias the parameter's storage instead of copying it.
    const Matrix* param_value = nullptr;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  std::unordered_map<Parameter*, int> bound_;
};

// Elementwise / shape ops.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var matmul(Var a, Var b);
// a (n x m) + row (1 x m) broadcast over rows.
Var add_row(Var a, Var row);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var gather_rows(Var table, const std::vector<int>& ids);
// Row r taken from `a` when take_a[r], else from `b`.
Var select_rows(Var a, Var b, const std::vector<bool>& take_a);

Var tanh(Var a);
Var sigmoid(Var a);
Var exp(Var a);
// log(1 + e^x), stable for large |x|.
Var softplus(Var a);

Var sum(Var a);
Var mean(Var a);

// Fused LSTM cell. gates: (B x 4H) pre-activations in (i, f, g, o) order;
// c_prev: (B x H). Returns (B x 2H) holding [h | c].
Var lstm_cell(Var gates, Var c_prev);

// Mean negative log-softmax of targets[r] in row r, skipping rows whose
// target equals `ignore`. Returns 1x1; 0 if every row is ignored.
Var softmax_cross_entropy(Var logits, const std::vector<int>& targets, int ignore);

// (Na x Nb) matrix of squared Euclidean distances between rows.
Var pairwise_sqdist(Var a, Var b);

}  // namespace ad
}  // namespace pcae
