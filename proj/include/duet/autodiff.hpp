#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "duet/tensor.hpp"

namespace duet::ad {

class Tape;

/// Handle to a node recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  [[nodiscard]] const Tensor& value() const;
  [[nodiscard]] std::size_t rows() const { return value().rows(); }
  [[nodiscard]] std::size_t cols() const { return value().cols(); }
  [[nodiscard]] double item() const { return value().item(); }
  [[nodiscard]] bool requires_grad() const;
};

/// Result of a reverse sweep: one gradient per leaf. Leaves that did not
/// influence the differentiated output report zeros of their own shape.
class Gradients {
 public:
  [[nodiscard]] const Tensor& operator[](Var leaf) const;
  [[nodiscard]] bool contains(Var leaf) const { return grads_.contains(leaf.id); }

 private:
  friend class Tape;
  std::unordered_map<std::size_t, Tensor> grads_;
};

/// Gradient sink handed to a primitive's backward function.
class Accumulator {
 public:
  /// Whether the reverse sweep needs a gradient for this input at all.
  [[nodiscard]] bool wants(Var input) const;
  void add(Var input, Tensor grad);

 private:
  friend class Tape;
  Accumulator(Tape& tape, std::vector<Tensor>& grads, const std::vector<char>& relevant, const char* op)
      : tape_(tape), grads_(grads), relevant_(relevant), op_(op) {}
  Tape& tape_;
  std::vector<Tensor>& grads_;
  const std::vector<char>& relevant_;
  const char* op_;
};

using BackwardFn = std::function<void(const Tensor& grad_out, Accumulator& acc)>;

/// One output to differentiate, restricted to a subset of leaves.
struct Objective {
  Var output;
  std::vector<Var> wrt;  // empty: every leaf
};

/// Ordered record of primitive applications. Nodes are appended in evaluation
/// order, so the record is topologically sorted by construction. A tape can be
/// differentiated once; a second reverse sweep raises StaleTapeError.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf whose gradient is tracked iff value.requires_grad().
  Var leaf(Tensor value);
  Var parameter(Tensor value) { return leaf(std::move(value.set_requires_grad(true))); }
  Var constant(Tensor value) { return leaf(std::move(value.set_requires_grad(false))); }

  /// Appends a primitive. Throws NumericError naming `op` if the value is not
  /// finite. The backward function is dropped when no input needs gradients.
  Var record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

  [[nodiscard]] const Tensor& value(Var v) const { return nodes_[v.id].value; }
  [[nodiscard]] bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  [[nodiscard]] const char* op(Var v) const { return nodes_[v.id].op; }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }
  [[nodiscard]] bool consumed() const { return consumed_; }

  /// Reverse sweep from a scalar output with seed 1.
  Gradients backward(Var output);
  Gradients backward(Var output, const Tensor& seed);
  /// Independent reverse sweeps sharing this one forward record. Each output
  /// must be 1x1 and is seeded with 1.
  std::vector<Gradients> backward(std::span<const Objective> objectives);

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    const char* op = "leaf";
  };

  Gradients sweep(Var output, const Tensor& seed, std::span<const Var> wrt);
  void check_owner(Var v) const;

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Primitives. All operands are rank-2; binary elementwise ops broadcast their
// right operand when it is 1xN (per row), Mx1 (per column) or 1x1.

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);

Var relu(Var a);
Var gelu(Var a);
Var abs(Var a);
Var square(Var a);
Var sqrt(Var a);
Var reciprocal(Var a);
/// arccos(clamp(x, -1, 1))^2, i.e. the squared angle whose cosine is x. The
/// derivative -2*theta/sin(theta) is evaluated with its limit -2 near theta=0
/// and with sin(theta) floored at 1e-6 near theta=pi.
Var arccos_squared(Var a);

/// Row-wise softmax.
Var softmax(Var a);
/// Row-wise normalization to zero mean, unit variance (no affine part).
Var layer_norm(Var a, double eps = 1e-5);

Var sum(Var a);        // -> 1x1
Var mean(Var a);       // -> 1x1
Var sum_rows(Var a);   // reduce over rows -> 1xN
Var mean_rows(Var a);  // -> 1xN
Var sum_cols(Var a);   // reduce over columns -> Mx1

Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var reshape(Var a, std::size_t rows, std::size_t cols);

/// Layout of a batch of sequences stacked time-major: row r belongs to
/// sequence r % groups at time r / groups. Head h reads columns
/// [h*d/heads, (h+1)*d/heads).
struct AttentionLayout {
  std::size_t heads = 1;
  std::size_t groups = 1;
  bool causal = false;
  /// Time of the first query row; with causal masking a query at time t sees
  /// keys at times 0..t.
  std::size_t query_offset = 0;
};

/// Multi-head scaled dot-product attention softmax(q k^T / sqrt(d_head)) v,
/// evaluated independently per sequence and head.
Var attention(Var q, Var k, Var v, const AttentionLayout& layout);

/// Attention probabilities of the same computation, one (queries x keys)
/// matrix per sequence and head, ordered group-major. Masked entries are 0.
std::vector<Tensor> attention_weights(const Tensor& q, const Tensor& k, const AttentionLayout& layout);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator*(double s, Var a) { return scale(a, s); }

}  // namespace duet::ad
