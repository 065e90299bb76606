#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "padrec/tensor.hpp"

namespace padrec {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid until the tape
/// is cleared.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const;
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Define-by-run record of one forward pass. Nodes are appended in execution
/// order, so reverse id order is a valid reverse topological order.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  explicit Tape(bool training = false, std::uint64_t dropout_seed = 0)
      : training_(training), rng_(dropout_seed) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf bound to a persistent parameter; backward accumulates into p.grad.
  Var param(Parameter& p);

  void backward(Var loss);
  void clear();

  bool training() const { return training_; }
  void set_training(bool on) { training_ = on; }
  std::mt19937_64& rng() { return rng_; }
  std::size_t size() const { return nodes_.size(); }

  // Operator plumbing.
  Var record(std::string op, Tensor value, std::vector<std::size_t> inputs, BackwardFn fn);
  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  const Tensor& grad(std::size_t id) const;
  bool needs_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }
  /// Returns the gradient buffer of `id`, allocating zeros on first use.
  Tensor& grad_buffer(std::size_t id);

 private:
  struct Node {
    std::string op;
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };

  std::deque<Node> nodes_;
  bool training_;
  std::mt19937_64 rng_;
};

// ---------------------------------------------------------------------------
// Operators. Shapes are matrix views (see Tensor); errors name the op.

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// a (n x m) + row (1 x m), broadcast over rows.
Var add_row(Var a, Var row);
/// a (n x m) * row (1 x m), broadcast over rows.
Var mul_row(Var a, Var row);
/// a (n x m) * col (n x 1), broadcast over columns.
Var mul_col(Var a, Var col);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);

Var exp(Var a);
Var log(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);

Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
/// Zero-mean unit-variance per row (no affine part).
Var layernorm_rows(Var a, double eps = 1e-5);
/// Each row divided by its L2 norm; zero rows are an error.
Var normalize_rows(Var a);

/// out[i] = a[indices[i]]; gradients scatter-add back.
Var gather_rows(Var a, std::span<const std::size_t> indices);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t begin, std::size_t end);

Var sum(Var a);
Var mean(Var a);
/// Reduce over rows: (n x m) -> (1 x m).
Var sum_rows(Var a);
/// Reduce over columns: (n x m) -> (n x 1).
Var sum_cols(Var a);
Var mean_cols(Var a);
/// Mean of the first lengths[b] rows of each max_len-row block: -> batch x m.
Var segment_mean_rows(Var a, std::span<const std::size_t> lengths, std::size_t max_len);
Var squared_l2_norm(Var a);
Var l1_norm(Var a);

/// Inverted dropout; identity outside training mode or when rate == 0.
Var dropout(Var a, double rate);
/// Forward identity; blocks every gradient.
Var stop_gradient(Var a);

/// Mean binary cross-entropy of logits against 0/1 labels (same shape).
Var bce_with_logits(Var logits, const Tensor& labels);

/// ||x_i - y_j||^2 for every row pair.
Var pairwise_sq_dist(Var x, Var y);
/// ||x_i - y_j||_1 for every row pair.
Var pairwise_l1_dist(Var x, Var y);

/// Multi-head scaled dot-product attention over a batch of right-padded
/// sequences laid out as (batch * max_len) x dim rows. Query t of a sequence
/// attends to keys 0..t; rows at or beyond the sequence length produce zero.
Var causal_attention(Var q, Var k, Var v, std::size_t max_len, std::span<const std::size_t> lengths,
                     std::size_t heads);

}  // namespace padrec
