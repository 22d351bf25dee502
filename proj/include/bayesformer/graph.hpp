#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bayesformer/tensor.hpp"

namespace bayesformer {

// Handle to a node of a Graph. Only meaningful for the graph that issued it.
struct Var {
  std::uint32_t id = 0;
};

enum class OpKind : std::uint8_t {
  Leaf,
  MatMul,
  MatMulBT,
  Add,
  Mul,
  Scale,
  MulConst,
  GatherRows,
  ConcatCols,
  SelectRow,
  SoftmaxRows,
  LayerNorm,
  Relu,
  Gelu,
  CrossEntropy,
  SumSquares,
  Sum,
};

// Tape of operations recorded during one forward pass. Nodes are appended in
// execution order, so the tape is topologically sorted by construction and
// backward is a single reverse sweep. Build a fresh graph per forward pass.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  Var matmul(Var a, Var b);
  Var matmul_bt(Var a, Var b);
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, float factor);
  // Multiplies by a constant factor with shape equal to a, [1 x cols] or [rows x 1].
  Var mul_const(Var a, Tensor factor);
  Var gather_rows(Var table, std::span<const int> ids);
  Var concat_cols(std::span<const Var> parts);
  Var select_row(Var a, std::size_t row);
  Var softmax_rows(Var a);
  Var layer_norm(Var x, Var gamma, Var beta, float eps = kLayerNormEps);
  Var relu(Var a);
  Var gelu(Var a);
  // -log softmax(logits)[label] for a [1 x C] row; returns [1 x 1].
  Var cross_entropy(Var logits, int label);
  Var sum_squares(Var a);
  // Sum of [1 x 1] scalars.
  Var sum(std::span<const Var> scalars);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  // Gradient of the last backward() target; zeros when the node received none.
  Tensor grad(Var v) const;
  OpKind op(Var v) const { return nodes_.at(v.id).op; }
  std::span<const std::uint32_t> inputs(Var v) const { return nodes_.at(v.id).inputs; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Reverse-mode sweep from a scalar node. Throws ContractError otherwise.
  void backward(Var loss);

  // Number of nodes whose backward rule ran in the last sweep.
  std::size_t last_backward_visits() const noexcept { return visits_; }

 private:
  struct Node {
    OpKind op = OpKind::Leaf;
    bool requires_grad = false;
    std::vector<std::uint32_t> inputs;
    Tensor value;
    Tensor grad;
    Tensor aux;                  // mask factor, layer-norm xhat, softmax probs
    std::vector<float> aux_vec;  // per-row rstd
    std::vector<int> ids;        // gather ids
    float scalar = 0.0f;
    int label = 0;
  };

  Var push(Node node);
  bool needs_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }
  Tensor& grad_slot(std::uint32_t id);
  void backward_node(const Node& node);

  std::vector<Node> nodes_;
  std::size_t visits_ = 0;
};

}  // namespace bayesformer
