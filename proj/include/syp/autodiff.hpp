#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "syp/tensor.hpp"

namespace syp {

class Tape;

// Handle to one recorded value: a tensor paired with its gradient
// accumulator inside a tape. Values created outside a tape are plain
// Tensors and never see a backward pass.
struct DiffValue {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor& value() const;
  const Tensor& grad() const;
  int rows() const { return value().rows(); }
  int cols() const { return value().cols(); }
};

// Reverse-mode tape. Nodes are appended in evaluation order, so the node
// list is already a topological order; backward walks it once in reverse.
// Gradients accumulate across backward calls until zero_grads().
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaves. `constant*` values are excluded from the backward pass;
  // `param` tracks a gradient for externally owned storage (the caller
  // keeps it alive for the tape's lifetime), `leaf` for an owned copy.
  DiffValue constant(Tensor v);
  DiffValue constant_ref(const Tensor* v);
  DiffValue param(const Tensor* v);
  DiffValue leaf(Tensor v);

  DiffValue matmul(DiffValue a, DiffValue b);
  DiffValue add(DiffValue a, DiffValue b);          // same shape
  DiffValue add_row(DiffValue a, DiffValue row);    // row [1 x c] over rows of a
  DiffValue mul(DiffValue a, DiffValue b);          // elementwise, same shape
  DiffValue mul_row(DiffValue a, DiffValue row);    // row broadcast
  DiffValue scale(DiffValue a, double s);
  DiffValue gelu(DiffValue a);
  DiffValue sigmoid(DiffValue a);
  DiffValue relu(DiffValue a);
  DiffValue layer_norm(DiffValue x, DiffValue gamma, DiffValue beta, double eps);
  DiffValue softmax_rows(DiffValue a);
  DiffValue transpose(DiffValue a);
  DiffValue slice_rows(DiffValue a, int r0, int r1);
  DiffValue slice_cols(DiffValue a, int c0, int c1);
  DiffValue concat_rows(DiffValue a, DiffValue b);
  DiffValue concat_cols(DiffValue a, DiffValue b);
  DiffValue gather_rows(DiffValue table, std::vector<int> idx);
  DiffValue sum(DiffValue a);  // -> [1 x 1]

  // Task losses as fused primitives: numerically stable forward, exact
  // analytic backward. Logits are [1 x C].
  DiffValue softmax_xent(DiffValue logits, int label);
  DiffValue bce_logits(DiffValue logits, const Tensor& targets);

  // Seeds d(loss)/d(loss) = 1 and accumulates d(loss)/d(node) into every
  // tracked node's grad. Running it twice without zeroing doubles them.
  void backward(DiffValue loss);
  void zero_grads();

  const Tensor& value(int id) const;
  const Tensor& grad(int id) const;
  size_t size() const { return nodes_.size(); }

 private:
  enum class Op : uint8_t {
    Constant, Param, MatMul, Add, AddRow, Mul, MulRow, Scale, Gelu, Sigmoid,
    Relu, LayerNorm, SoftmaxRows, Transpose, SliceRows, SliceCols, ConcatRows,
    ConcatCols, GatherRows, Sum, SoftmaxXent, BceLogits,
  };

  struct Node {
    Op op{};
    int a = -1, b = -1, c = -1;
    double scalar = 0.0;  // Scale factor / LayerNorm eps
    int i0 = 0, i1 = 0;   // slice bounds / class label
    Tensor val;           // owned value (unused when ext is set)
    const Tensor* ext = nullptr;
    Tensor grad;          // allocated iff needs_grad
    Tensor aux;           // saved forward stats for backward
    std::vector<int> idx; // gather indices
    bool needs_grad = false;
  };

  const Tensor& val_of(const Node& n) const { return n.ext ? *n.ext : n.val; }
  int push(Node n);
  bool tracked(int id) const { return nodes_[id].needs_grad; }
  DiffValue check_binary(DiffValue a, DiffValue b, const char* what);

  std::vector<Node> nodes_;
  friend struct DiffValue;
};

// Memoizing bridge from named weights to tape leaves: the first request for
// a name creates the node (a tracked param or a frozen constant), repeats
// return it, so each array appears on the tape exactly once.
class WeightBinder {
 public:
  WeightBinder(Tape& tape, bool trainable) : tape_(&tape), trainable_(trainable) {}

  DiffValue operator()(const std::string& name, const Tensor& t) {
    auto it = cache_.find(name);
    if (it != cache_.end()) return it->second;
    DiffValue v = trainable_ ? tape_->param(&t) : tape_->constant_ref(&t);
    cache_.emplace(name, v);
    return v;
  }

  bool trainable() const { return trainable_; }

 private:
  Tape* tape_;
  bool trainable_;
  std::map<std::string, DiffValue> cache_;
};

}  // namespace syp
