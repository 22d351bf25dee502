#include "bayesformer/graph.hpp"

#include <algorithm>
#include <cmath>

#include "bayesformer/error.hpp"

namespace bayesformer {
namespace {

void accumulate(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// dst += a * b^T (dst: m x n, a: m x k, b: n x k)
void accumulate_matmul_bt(Tensor& dst, const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  for (std::size_t i = 0; i < m; ++i) {
    const float* arow = a.values().data() + i * k;
    float* drow = dst.values().data() + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const float* brow = b.values().data() + j * k;
      float acc = 0.0f;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      drow[j] += acc;
    }
  }
}

// dst += a^T * b (dst: k x n, a: m x k, b: m x n)
void accumulate_matmul_at(Tensor& dst, const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    const float* arow = a.values().data() + i * k;
    const float* brow = b.values().data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const float av = arow[p];
      if (av == 0.0f) continue;
      float* drow = dst.values().data() + p * n;
      for (std::size_t j = 0; j < n; ++j) drow[j] += av * brow[j];
    }
  }
}

// dst += a * b (dst: m x n, a: m x k, b: k x n)
void accumulate_matmul(Tensor& dst, const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    float* drow = dst.values().data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const float av = a.values()[i * k + p];
      if (av == 0.0f) continue;
      const float* brow = b.values().data() + p * n;
      for (std::size_t j = 0; j < n; ++j) drow[j] += av * brow[j];
    }
  }
}

}  // namespace

Var Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Tensor& Graph::grad_slot(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.grad.shape() != n.value.shape()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

Tensor Graph::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.shape() != n.value.shape()) return Tensor(n.value.shape());
  return n.grad;
}

Var Graph::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.op = OpKind::Leaf;
  n.requires_grad = requires_grad;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Graph::matmul(Var a, Var b) {
  Node n;
  n.op = OpKind::MatMul;
  n.inputs = {a.id, b.id};
  n.requires_grad = needs_grad(a.id) || needs_grad(b.id);
  n.value = bayesformer::matmul(value(a), value(b));
  return push(std::move(n));
}

Var Graph::matmul_bt(Var a, Var b) {
  Node n;
  n.op = OpKind::MatMulBT;
  n.inputs = {a.id, b.id};
  n.requires_grad = needs_grad(a.id) || needs_grad(b.id);
  n.value = bayesformer::matmul_bt(value(a), value(b));
  return push(std::move(n));
}

Var Graph::add(Var a, Var b) {
  Node n;
  n.op = OpKind::Add;
  n.inputs = {a.id, b.id};
  n.requires_grad = needs_grad(a.id) || needs_grad(b.id);
  n.value = bayesformer::add(value(a), value(b));
  return push(std::move(n));
}

Var Graph::mul(Var a, Var b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  if (x.shape() != y.shape()) {
    throw DimensionError("mul: shape mismatch " + shape_string(x.shape()) + " vs " +
                         shape_string(y.shape()));
  }
  Node n;
  n.op = OpKind::Mul;
  n.inputs = {a.id, b.id};
  n.requires_grad = needs_grad(a.id) || needs_grad(b.id);
  n.value = x;
  for (std::size_t i = 0; i < x.size(); ++i) n.value[i] *= y[i];
  return push(std::move(n));
}

Var Graph::scale(Var a, float factor) {
  Node n;
  n.op = OpKind::Scale;
  n.inputs = {a.id};
  n.requires_grad = needs_grad(a.id);
  n.scalar = factor;
  n.value = bayesformer::scale(value(a), factor);
  return push(std::move(n));
}

Var Graph::mul_const(Var a, Tensor factor) {
  const Tensor& x = value(a);
  const std::size_t rows = x.rows(), cols = x.cols();
  const bool full = factor.shape() == x.shape();
  const bool per_col = factor.rank() == 2 && factor.rows() == 1 && factor.cols() == cols;
  const bool per_row = factor.rank() == 2 && factor.rows() == rows && factor.cols() == 1;
  if (!full && !per_col && !per_row) {
    throw DimensionError("mul_const: factor " + shape_string(factor.shape()) +
                         " does not broadcast over " + shape_string(x.shape()));
  }
  Node n;
  n.op = OpKind::MulConst;
  n.inputs = {a.id};
  n.requires_grad = needs_grad(a.id);
  n.value = Tensor(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const float f = full ? factor(r, c) : per_col ? factor(0, c) : factor(r, 0);
      n.value(r, c) = x(r, c) * f;
    }
  }
  // Expand so backward is a plain elementwise product.
  if (full) {
    n.aux = std::move(factor);
  } else {
    n.aux = Tensor(x.shape());
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) n.aux(r, c) = per_col ? factor(0, c) : factor(r, 0);
  }
  return push(std::move(n));
}

Var Graph::gather_rows(Var table, std::span<const int> ids) {
  const Tensor& t = value(table);
  const std::size_t width = t.cols();
  Node n;
  n.op = OpKind::GatherRows;
  n.inputs = {table.id};
  n.requires_grad = needs_grad(table.id);
  n.ids.assign(ids.begin(), ids.end());
  n.value = Tensor({ids.size(), width});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= t.rows()) {
      throw ContractError("gather_rows: id " + std::to_string(ids[r]) + " outside table of " +
                          std::to_string(t.rows()) + " rows");
    }
    auto src = t.row_span(static_cast<std::size_t>(ids[r]));
    std::copy(src.begin(), src.end(), n.value.row_span(r).begin());
  }
  return push(std::move(n));
}

Var Graph::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t rows = value(parts[0]).rows();
  std::size_t total = 0;
  Node n;
  n.op = OpKind::ConcatCols;
  for (Var p : parts) {
    if (value(p).rows() != rows) {
      throw DimensionError("concat_cols: row mismatch " + shape_string(value(parts[0]).shape()) +
                           " vs " + shape_string(value(p).shape()));
    }
    total += value(p).cols();
    n.inputs.push_back(p.id);
    n.requires_grad = n.requires_grad || needs_grad(p.id);
  }
  n.value = Tensor({rows, total});
  std::size_t offset = 0;
  for (Var p : parts) {
    const Tensor& v = value(p);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < v.cols(); ++c) n.value(r, offset + c) = v(r, c);
    offset += v.cols();
  }
  return push(std::move(n));
}

Var Graph::select_row(Var a, std::size_t row) {
  const Tensor& x = value(a);
  if (row >= x.rows()) throw DimensionError("select_row: row out of range");
  Node n;
  n.op = OpKind::SelectRow;
  n.inputs = {a.id};
  n.requires_grad = needs_grad(a.id);
  n.label = static_cast<int>(row);
  auto src = x.row_span(row);
  n.value = Tensor({1, x.cols()}, std::vector<float>(src.begin(), src.end()));
  return push(std::move(n));
}

Var Graph::softmax_rows(Var a) {
  Node n;
  n.op = OpKind::SoftmaxRows;
  n.inputs = {a.id};
  n.requires_grad = needs_grad(a.id);
  n.value = bayesformer::softmax(value(a), 1);
  return push(std::move(n));
}

Var Graph::layer_norm(Var x, Var gamma, Var beta, float eps) {
  const Tensor& in = value(x);
  const Tensor& g = value(gamma);
  const Tensor& b = value(beta);
  const std::size_t rows = in.rows(), width = in.cols();
  if (g.size() != width || b.size() != width) {
    throw DimensionError("layer_norm: gamma " + shape_string(g.shape()) + " / beta " +
                         shape_string(b.shape()) + " do not match width of " +
                         shape_string(in.shape()));
  }
  Node n;
  n.op = OpKind::LayerNorm;
  n.inputs = {x.id, gamma.id, beta.id};
  n.requires_grad = needs_grad(x.id) || needs_grad(gamma.id) || needs_grad(beta.id);
  n.value = Tensor(in.shape());
  n.aux = Tensor(in.shape());
  n.aux_vec.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = in.row_span(r);
    float mean = 0.0f;
    for (float v : row) mean += v;
    mean /= static_cast<float>(width);
    float var = 0.0f;
    for (float v : row) var += (v - mean) * (v - mean);
    var /= static_cast<float>(width);
    const float rstd = 1.0f / std::sqrt(var + eps);
    n.aux_vec[r] = rstd;
    for (std::size_t c = 0; c < width; ++c) {
      const float xhat = (row[c] - mean) * rstd;
      n.aux(r, c) = xhat;
      n.value(r, c) = g[c] * xhat + b[c];
    }
  }
  return push(std::move(n));
}

Var Graph::relu(Var a) {
  Node n;
  n.op = OpKind::Relu;
  n.inputs = {a.id};
  n.requires_grad = needs_grad(a.id);
  n.value = value(a);
  for (float& v : n.value.values()) v = v > 0.0f ? v : 0.0f;
  return push(std::move(n));
}

Var Graph::gelu(Var a) {
  Node n;
  n.op = OpKind::Gelu;
  n.inputs = {a.id};
  n.requires_grad = needs_grad(a.id);
  n.value = value(a);
  for (float& v : n.value.values()) v = bayesformer::gelu(v);
  return push(std::move(n));
}

Var Graph::cross_entropy(Var logits, int label) {
  const Tensor& z = value(logits);
  if (z.rank() != 2 || z.rows() != 1) {
    throw DimensionError("cross_entropy: expected [1 x C] logits, got " + shape_string(z.shape()));
  }
  if (label < 0 || static_cast<std::size_t>(label) >= z.cols()) {
    throw ContractError("cross_entropy: label " + std::to_string(label) + " outside " +
                        std::to_string(z.cols()) + " classes");
  }
  Node n;
  n.op = OpKind::CrossEntropy;
  n.inputs = {logits.id};
  n.requires_grad = needs_grad(logits.id);
  n.label = label;
  n.aux = bayesformer::softmax(z, 1);
  float mx = -INFINITY;
  for (float v : z.values()) mx = std::max(mx, v);
  double sum = 0.0;
  for (float v : z.values()) sum += std::exp(static_cast<double>(v - mx));
  const double lse = static_cast<double>(mx) + std::log(sum);
  n.value = Tensor::scalar(static_cast<float>(lse - z[static_cast<std::size_t>(label)]));
  return push(std::move(n));
}

Var Graph::sum_squares(Var a) {
  Node n;
  n.op = OpKind::SumSquares;
  n.inputs = {a.id};
  n.requires_grad = needs_grad(a.id);
  double acc = 0.0;
  for (float v : value(a).values()) acc += static_cast<double>(v) * v;
  n.value = Tensor::scalar(static_cast<float>(acc));
  return push(std::move(n));
}

Var Graph::sum(std::span<const Var> scalars) {
  Node n;
  n.op = OpKind::Sum;
  double acc = 0.0;
  for (Var s : scalars) {
    acc += value(s).item();
    n.inputs.push_back(s.id);
    n.requires_grad = n.requires_grad || needs_grad(s.id);
  }
  n.value = Tensor::scalar(static_cast<float>(acc));
  return push(std::move(n));
}

void Graph::backward(Var loss) {
  if (loss.id >= nodes_.size()) throw ContractError("backward: unknown node");
  if (nodes_[loss.id].value.size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_string(nodes_[loss.id].value.shape()));
  }
  for (Node& n : nodes_) n.grad = Tensor();
  grad_slot(loss.id).fill(1.0f);
  visits_ = 0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (!n.requires_grad || n.op == OpKind::Leaf || n.grad.empty()) continue;
    ++visits_;
    backward_node(n);
  }
}

void Graph::backward_node(const Node& node) {
  const Tensor& dy = node.grad;
  auto in = [&](std::size_t k) -> const Tensor& { return nodes_[node.inputs[k]].value; };
  auto wants = [&](std::size_t k) { return needs_grad(node.inputs[k]); };
  auto slot = [&](std::size_t k) -> Tensor& { return grad_slot(node.inputs[k]); };

  switch (node.op) {
    case OpKind::Leaf:
      break;
    case OpKind::MatMul:
      if (wants(0)) accumulate_matmul_bt(slot(0), dy, in(1));
      if (wants(1)) accumulate_matmul_at(slot(1), in(0), dy);
      break;
    case OpKind::MatMulBT:
      // y = a b^T: da = dy b, db = dy^T a
      if (wants(0)) accumulate_matmul(slot(0), dy, in(1));
      if (wants(1)) accumulate_matmul_at(slot(1), dy, in(0));
      break;
    case OpKind::Add:
      if (wants(0)) accumulate(slot(0), dy);
      if (wants(1)) accumulate(slot(1), dy);
      break;
    case OpKind::Mul:
      for (std::size_t k = 0; k < 2; ++k) {
        if (!wants(k)) continue;
        const Tensor& other = in(1 - k);
        Tensor& g = slot(k);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * other[i];
      }
      break;
    case OpKind::Scale: {
      Tensor& g = slot(0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.scalar * dy[i];
      break;
    }
    case OpKind::MulConst: {
      Tensor& g = slot(0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.aux[i] * dy[i];
      break;
    }
    case OpKind::GatherRows: {
      Tensor& g = slot(0);
      for (std::size_t r = 0; r < node.ids.size(); ++r) {
        auto dst = g.row_span(static_cast<std::size_t>(node.ids[r]));
        auto src = dy.row_span(r);
        for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
      }
      break;
    }
    case OpKind::ConcatCols: {
      std::size_t offset = 0;
      for (std::size_t k = 0; k < node.inputs.size(); ++k) {
        const std::size_t width = in(k).cols();
        if (wants(k)) {
          Tensor& g = slot(k);
          for (std::size_t r = 0; r < dy.rows(); ++r)
            for (std::size_t c = 0; c < width; ++c) g(r, c) += dy(r, offset + c);
        }
        offset += width;
      }
      break;
    }
    case OpKind::SelectRow: {
      auto dst = slot(0).row_span(static_cast<std::size_t>(node.label));
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += dy[c];
      break;
    }
    case OpKind::SoftmaxRows: {
      const Tensor& y = node.value;
      Tensor& g = slot(0);
      for (std::size_t r = 0; r < y.rows(); ++r) {
        float dot = 0.0f;
        for (std::size_t c = 0; c < y.cols(); ++c) dot += dy(r, c) * y(r, c);
        for (std::size_t c = 0; c < y.cols(); ++c) g(r, c) += y(r, c) * (dy(r, c) - dot);
      }
      break;
    }
    case OpKind::LayerNorm: {
      const Tensor& xhat = node.aux;
      const Tensor& gamma = in(1);
      const std::size_t rows = xhat.rows(), width = xhat.cols();
      if (wants(1)) {
        Tensor& gg = slot(1);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < width; ++c) gg[c] += dy(r, c) * xhat(r, c);
      }
      if (wants(2)) {
        Tensor& gb = slot(2);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < width; ++c) gb[c] += dy(r, c);
      }
      if (wants(0)) {
        Tensor& gx = slot(0);
        const float inv_w = 1.0f / static_cast<float>(width);
        for (std::size_t r = 0; r < rows; ++r) {
          float mean_d = 0.0f, mean_dx = 0.0f;
          for (std::size_t c = 0; c < width; ++c) {
            const float d = dy(r, c) * gamma[c];
            mean_d += d;
            mean_dx += d * xhat(r, c);
          }
          mean_d *= inv_w;
          mean_dx *= inv_w;
          const float rstd = node.aux_vec[r];
          for (std::size_t c = 0; c < width; ++c) {
            const float d = dy(r, c) * gamma[c];
            gx(r, c) += rstd * (d - mean_d - xhat(r, c) * mean_dx);
          }
        }
      }
      break;
    }
    case OpKind::Relu: {
      const Tensor& x = in(0);
      Tensor& g = slot(0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += x[i] > 0.0f ? dy[i] : 0.0f;
      break;
    }
    case OpKind::Gelu: {
      const Tensor& x = in(0);
      Tensor& g = slot(0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * gelu_derivative(x[i]);
      break;
    }
    case OpKind::CrossEntropy: {
      Tensor& g = slot(0);
      const float up = dy[0];
      for (std::size_t c = 0; c < g.size(); ++c) {
        const float onehot = static_cast<int>(c) == node.label ? 1.0f : 0.0f;
        g[c] += up * (node.aux[c] - onehot);
      }
      break;
    }
    case OpKind::SumSquares: {
      const Tensor& x = in(0);
      Tensor& g = slot(0);
      const float up = dy[0];
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0f * x[i] * up;
      break;
    }
    case OpKind::Sum:
      for (std::size_t k = 0; k < node.inputs.size(); ++k)
        if (wants(k)) slot(k)[0] += dy[0];
      break;
  }
}

}  // namespace bayesformer
