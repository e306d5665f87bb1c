#pragma once

// Dense rank-2 float64 tensors with a per-forward-pass reverse-mode tape.
//
// A Tensor is either a constant (no tape) or a node recorded on a Tape. Every
// operation below records itself on the tape of its operands when at least one
// operand is recorded, and otherwise computes a plain constant result. A tape
// supports exactly one backward pass.

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cdgpa {

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const noexcept { return rows * cols; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

namespace detail {
class TapeState;
}

class Tensor {
 public:
  Tensor();
  Tensor(std::size_t rows, std::size_t cols);
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor scalar(double value);
  static Tensor filled(std::size_t rows, std::size_t cols, double value);

  std::size_t rows() const noexcept { return shape_.rows; }
  std::size_t cols() const noexcept { return shape_.cols; }
  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return shape_.size(); }

  std::span<const double> data() const noexcept { return {data_->data(), data_->size()}; }
  std::vector<double> to_vector() const { return *data_; }
  double operator()(std::size_t r, std::size_t c) const { return (*data_)[r * shape_.cols + c]; }
  /// Value of a 1x1 tensor.
  double item() const;

  /// True when recorded on a live tape as a gradient-carrying node.
  bool requires_grad() const noexcept { return tape_ != nullptr; }
  std::optional<std::size_t> node_id() const;

  /// Constant view of the same values, cut from any tape.
  Tensor detach() const;

  /// Bitwise equality of shape and values.
  bool identical(const Tensor& other) const;

 private:
  friend class Tape;
  friend class Gradients;
  friend class detail::TapeState;

  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  std::shared_ptr<detail::TapeState> tape_;
  std::size_t node_ = 0;
};

class Gradients {
 public:
  /// Gradient of the loss with respect to a variable created by Tape::watch on
  /// the same tape. Variables the loss does not depend on get zeros.
  Tensor of(const Tensor& variable) const;
  /// Whether any gradient reached this node.
  bool reached(const Tensor& variable) const;

 private:
  friend class Tape;
  std::shared_ptr<const detail::TapeState> tape_;
  std::shared_ptr<const std::vector<std::vector<double>>> grads_;
};

class Tape {
 public:
  Tape();

  /// Records a leaf variable holding `value`. The result shares storage with
  /// `value`, so the forward value is bitwise the parameter value.
  Tensor watch(const Tensor& value);

  /// Runs reverse accumulation from a 1x1 loss recorded on this tape. The tape
  /// is consumed: its backward closures are released and any further recording
  /// or backward call throws std::logic_error.
  Gradients backward(const Tensor& loss);

  bool consumed() const;
  std::size_t node_count() const;

 private:
  std::shared_ptr<detail::TapeState> state_;
};

/// Counters for numerically guarded events. Process-wide and thread-safe.
struct NumericCounters {
  std::atomic<std::uint64_t> zero_norm_rows{0};
};
NumericCounters& numeric_counters();

// Operators. Shape mismatches throw DimensionError naming both shapes.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
/// m×n plus a 1×n row added to every row.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor scale(const Tensor& a, double factor);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
/// log(sigmoid(a)) evaluated without overflow.
Tensor log_sigmoid(const Tensor& a);
/// Row-wise softmax with per-row max subtraction. NaN input throws NumericError.
Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);
/// Row-wise unit normalization. Zero rows pass through unchanged and bump
/// numeric_counters().zero_norm_rows.
Tensor l2_normalize_rows(const Tensor& a);
/// Pairwise cosines: entry (i, j) is cos(a_i, b_j). Result is m×n.
Tensor cosine_similarity_rows(const Tensor& a, const Tensor& b);
/// x·W + b for x n×in, W in×out, b 1×out.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
/// Column means: 1×n.
Tensor mean_rows(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);

/// Gradient reversal: identity forward, upstream gradient multiplied by
/// -coefficient on the way back.
Tensor grl(const Tensor& x, double coefficient = 1.0);

/// Mean over rows of -log softmax(logits)[target]. K must be at least 2.
Tensor cross_entropy_rows(const Tensor& logits, std::span<const std::size_t> targets);
/// Soft-target variant: mean over rows of -Σ_k p_k log softmax(logits)_k.
Tensor cross_entropy_rows(const Tensor& logits, const Tensor& target_probs);

/// param -= lr * grad. lr == 0 leaves the parameter bitwise unchanged.
void sgd_step(Tensor& param, const Tensor& grad, double lr);
void sgd_step(std::span<Tensor* const> params, std::span<const Tensor> grads, double lr);

}  // namespace cdgpa
