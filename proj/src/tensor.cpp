#include "cdgpa/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>

#include "cdgpa/errors.hpp"

namespace cdgpa {

using Values = std::vector<double>;
using SharedValues = std::shared_ptr<const Values>;

std::string Shape::str() const { return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")"; }

namespace detail {

class TapeState {
 public:
  static constexpr std::size_t kConstant = std::numeric_limits<std::size_t>::max();
  // upstream gradient of the node, then one gradient buffer per input (null for
  // inputs that carry no gradient).
  using Backward = std::function<void(std::span<const double>, std::span<double* const>)>;

  struct Node {
    Shape shape;
    std::vector<std::size_t> inputs;
    Backward backward;
  };

  std::vector<Node> nodes;
  bool consumed = false;

  void check_live() const {
    if (consumed) throw std::logic_error("tape already consumed by backward(); record a new forward pass");
  }

  static Tensor make(Shape shape, SharedValues data, std::shared_ptr<TapeState> tape, std::size_t node) {
    Tensor t;
    t.shape_ = shape;
    t.data_ = std::move(data);
    t.tape_ = std::move(tape);
    t.node_ = node;
    return t;
  }

  static const SharedValues& values(const Tensor& t) { return t.data_; }
  static const std::shared_ptr<TapeState>& tape_of(const Tensor& t) { return t.tape_; }
  static std::size_t node_of(const Tensor& t) { return t.node_; }

  // Wraps a forward result. Records a node only when some input is on a tape.
  static Tensor record(Shape shape, Values value, std::initializer_list<const Tensor*> inputs, Backward backward) {
    std::shared_ptr<TapeState> tape;
    for (const Tensor* in : inputs) {
      if (!in->tape_) continue;
      if (tape && tape != in->tape_) throw std::logic_error("operands are recorded on different tapes");
      tape = in->tape_;
    }
    auto data = std::make_shared<const Values>(std::move(value));
    if (!tape) return make(shape, std::move(data), nullptr, 0);
    tape->check_live();
    Node node{shape, {}, std::move(backward)};
    node.inputs.reserve(inputs.size());
    for (const Tensor* in : inputs) node.inputs.push_back(in->tape_ ? in->node_ : kConstant);
    tape->nodes.push_back(std::move(node));
    return make(shape, std::move(data), tape, tape->nodes.size() - 1);
  }
};

}  // namespace detail

using detail::TapeState;

namespace {

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + a.str() + " and " + b.str());
}

void require_finite(const Tensor& a, const char* op) {
  for (double v : a.data()) {
    if (std::isnan(v)) throw NumericError(std::string(op) + ": NaN input");
  }
}

}  // namespace

// ---------------------------------------------------------------- Tensor

Tensor::Tensor() : data_(std::make_shared<const Values>()) {}

Tensor::Tensor(std::size_t rows, std::size_t cols)
    : shape_{rows, cols}, data_(std::make_shared<const Values>(rows * cols, 0.0)) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data) : shape_{rows, cols} {
  if (data.size() != rows * cols) {
    throw DimensionError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_.str());
  }
  data_ = std::make_shared<const Values>(std::move(data));
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  Values data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(r, c, std::move(data));
}

Tensor Tensor::scalar(double value) { return Tensor(1, 1, {value}); }

Tensor Tensor::filled(std::size_t rows, std::size_t cols, double value) {
  return Tensor(rows, cols, Values(rows * cols, value));
}

double Tensor::item() const {
  if (shape_.rows != 1 || shape_.cols != 1) throw DimensionError("item() needs a 1x1 tensor, got " + shape_.str());
  return (*data_)[0];
}

std::optional<std::size_t> Tensor::node_id() const {
  if (!tape_) return std::nullopt;
  return node_;
}

Tensor Tensor::detach() const { return TapeState::make(shape_, data_, nullptr, 0); }

bool Tensor::identical(const Tensor& other) const {
  if (shape_ != other.shape_) return false;
  const auto a = data();
  const auto b = other.data();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  }
  return true;
}

// ---------------------------------------------------------------- Tape

Tape::Tape() : state_(std::make_shared<TapeState>()) {}

Tensor Tape::watch(const Tensor& value) {
  state_->check_live();
  state_->nodes.push_back({value.shape(), {}, nullptr});
  return TapeState::make(value.shape(), TapeState::values(value), state_, state_->nodes.size() - 1);
}

Gradients Tape::backward(const Tensor& loss) {
  state_->check_live();
  if (TapeState::tape_of(loss) != state_) throw std::logic_error("backward: loss is not recorded on this tape");
  if (loss.rows() != 1 || loss.cols() != 1) throw DimensionError("backward: loss must be 1x1, got " + loss.shape().str());

  auto& nodes = state_->nodes;
  auto grads = std::make_shared<std::vector<Values>>(nodes.size());
  (*grads)[TapeState::node_of(loss)] = Values{1.0};

  std::vector<double*> buffers;
  for (std::size_t i = TapeState::node_of(loss) + 1; i-- > 0;) {
    auto& node = nodes[i];
    if ((*grads)[i].empty() || !node.backward) continue;
    buffers.assign(node.inputs.size(), nullptr);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const std::size_t p = node.inputs[k];
      if (p == TapeState::kConstant) continue;
      auto& g = (*grads)[p];
      if (g.empty()) g.assign(nodes[p].shape.size(), 0.0);
      buffers[k] = g.data();
    }
    node.backward((*grads)[i], buffers);
  }

  state_->consumed = true;
  for (auto& node : nodes) node.backward = nullptr;

  Gradients out;
  out.tape_ = state_;
  out.grads_ = std::move(grads);
  return out;
}

bool Tape::consumed() const { return state_->consumed; }
std::size_t Tape::node_count() const { return state_->nodes.size(); }

Tensor Gradients::of(const Tensor& variable) const {
  if (TapeState::tape_of(variable) != tape_) throw std::logic_error("gradient requested for a tensor of another tape");
  const auto& g = (*grads_)[TapeState::node_of(variable)];
  if (g.empty()) return Tensor(variable.rows(), variable.cols());
  return Tensor(variable.rows(), variable.cols(), g);
}

bool Gradients::reached(const Tensor& variable) const {
  if (TapeState::tape_of(variable) != tape_) return false;
  return !(*grads_)[TapeState::node_of(variable)].empty();
}

NumericCounters& numeric_counters() {
  static NumericCounters counters;
  return counters;
}

// ---------------------------------------------------------------- operators

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) shape_error("matmul", a.shape(), b.shape());
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Values out(m * n, 0.0);
  const auto A = a.data();
  const auto B = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * B[p * n + j];
    }
  }
  SharedValues av = TapeState::values(a), bv = TapeState::values(b);
  return TapeState::record({m, n}, std::move(out), {&a, &b}, [av, bv, m, k, n](auto g, auto in) {
    if (in[0]) {  // dA = G · Bᵀ
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * (*bv)[p * n + j];
          in[0][i * k + p] += s;
        }
    }
    if (in[1]) {  // dB = Aᵀ · G
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < n; ++j) {
          double s = 0.0;
          for (std::size_t i = 0; i < m; ++i) s += (*av)[i * k + p] * g[i * n + j];
          in[1][p * n + j] += s;
        }
    }
  });
}

Tensor transpose(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  Values out(m * n);
  const auto A = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = A[i * n + j];
  return TapeState::record({n, m}, std::move(out), {&a}, [m, n](auto g, auto in) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) in[0][i * n + j] += g[j * m + i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("add", a.shape(), b.shape());
  Values out(a.size());
  const auto A = a.data();
  const auto B = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] + B[i];
  return TapeState::record(a.shape(), std::move(out), {&a, &b}, [](auto g, auto in) {
    for (int s = 0; s < 2; ++s)
      if (in[s])
        for (std::size_t i = 0; i < g.size(); ++i) in[s][i] += g[i];
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) shape_error("add_row", a.shape(), row.shape());
  const std::size_t m = a.rows(), n = a.cols();
  Values out(m * n);
  const auto A = a.data();
  const auto R = row.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = A[i * n + j] + R[j];
  return TapeState::record(a.shape(), std::move(out), {&a, &row}, [m, n](auto g, auto in) {
    if (in[0])
      for (std::size_t i = 0; i < m * n; ++i) in[0][i] += g[i];
    if (in[1])
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) in[1][j] += g[i * n + j];
  });
}

Tensor scale(const Tensor& a, double factor) {
  Values out(a.size());
  const auto A = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * factor;
  return TapeState::record(a.shape(), std::move(out), {&a}, [factor](auto g, auto in) {
    for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += g[i] * factor;
  });
}

Tensor relu(const Tensor& a) {
  Values out(a.size());
  const auto A = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] > 0.0 ? A[i] : 0.0;
  SharedValues av = TapeState::values(a);
  return TapeState::record(a.shape(), std::move(out), {&a}, [av](auto g, auto in) {
    for (std::size_t i = 0; i < g.size(); ++i)
      if ((*av)[i] > 0.0) in[0][i] += g[i];
  });
}

namespace {
double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}
}  // namespace

Tensor sigmoid(const Tensor& a) {
  Values out(a.size());
  const auto A = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(A[i]);
  auto sv = std::make_shared<const Values>(out);
  return TapeState::record(a.shape(), std::move(out), {&a}, [sv](auto g, auto in) {
    for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += g[i] * (*sv)[i] * (1.0 - (*sv)[i]);
  });
}

Tensor log_sigmoid(const Tensor& a) {
  Values out(a.size());
  const auto A = a.data();
  // log σ(z) = min(z, 0) - log1p(exp(-|z|))
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(A[i], 0.0) - std::log1p(std::exp(-std::abs(A[i])));
  SharedValues av = TapeState::values(a);
  return TapeState::record(a.shape(), std::move(out), {&a}, [av](auto g, auto in) {
    for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += g[i] * stable_sigmoid(-(*av)[i]);
  });
}

Tensor softmax_rows(const Tensor& a) {
  require_finite(a, "softmax_rows");
  const std::size_t m = a.rows(), n = a.cols();
  Values out(m * n);
  const auto A = a.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = A.data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (out[i * n + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
  }
  auto sv = std::make_shared<const Values>(out);
  return TapeState::record(a.shape(), std::move(out), {&a}, [sv, m, n](auto g, auto in) {
    const Values& s = *sv;
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * s[i * n + j];
      for (std::size_t j = 0; j < n; ++j) in[0][i * n + j] += s[i * n + j] * (g[i * n + j] - dot);
    }
  });
}

Tensor log_softmax_rows(const Tensor& a) {
  require_finite(a, "log_softmax_rows");
  const std::size_t m = a.rows(), n = a.cols();
  Values out(m * n);
  const auto A = a.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = A.data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = row[j] - lse;
  }
  auto lv = std::make_shared<const Values>(out);
  return TapeState::record(a.shape(), std::move(out), {&a}, [lv, m, n](auto g, auto in) {
    const Values& l = *lv;
    for (std::size_t i = 0; i < m; ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < n; ++j) gs += g[i * n + j];
      for (std::size_t j = 0; j < n; ++j) in[0][i * n + j] += g[i * n + j] - std::exp(l[i * n + j]) * gs;
    }
  });
}

Tensor l2_normalize_rows(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  Values out(m * n);
  auto norms = std::make_shared<Values>(m);
  const auto A = a.data();
  for (std::size_t i = 0; i < m; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < n; ++j) ss += A[i * n + j] * A[i * n + j];
    const double nrm = std::sqrt(ss);
    (*norms)[i] = nrm;
    if (nrm == 0.0) {
      numeric_counters().zero_norm_rows.fetch_add(1, std::memory_order_relaxed);
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] = A[i * n + j];
    } else {
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] = A[i * n + j] / nrm;
    }
  }
  auto yv = std::make_shared<const Values>(out);
  return TapeState::record(a.shape(), std::move(out), {&a}, [yv, norms, m, n](auto g, auto in) {
    const Values& y = *yv;
    for (std::size_t i = 0; i < m; ++i) {
      const double nrm = (*norms)[i];
      if (nrm == 0.0) {
        for (std::size_t j = 0; j < n; ++j) in[0][i * n + j] += g[i * n + j];
        continue;
      }
      // d(x/|x|) = (g - y <y, g>) / |x|
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += y[i * n + j] * g[i * n + j];
      for (std::size_t j = 0; j < n; ++j) in[0][i * n + j] += (g[i * n + j] - y[i * n + j] * dot) / nrm;
    }
  });
}

Tensor cosine_similarity_rows(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) shape_error("cosine_similarity_rows", a.shape(), b.shape());
  return matmul(l2_normalize_rows(a), transpose(l2_normalize_rows(b)));
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.cols() != weight.rows()) shape_error("linear", x.shape(), weight.shape());
  return add_row(matmul(x, weight), bias);
}

Tensor mean_rows(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  if (m == 0) throw DimensionError("mean_rows: no rows");
  Values out(n, 0.0);
  const auto A = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += A[i * n + j];
  for (double& v : out) v /= static_cast<double>(m);
  return TapeState::record({1, n}, std::move(out), {&a}, [m, n](auto g, auto in) {
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) in[0][i * n + j] += g[j] * inv;
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  const std::size_t count = a.size();
  return TapeState::record({1, 1}, Values{s}, {&a}, [count](auto g, auto in) {
    for (std::size_t i = 0; i < count; ++i) in[0][i] += g[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw DimensionError("mean: empty tensor");
  // Shifted by the first element: exact when all elements are equal.
  const auto A = a.data();
  const double n = static_cast<double>(a.size());
  double dev = 0.0;
  for (double v : A) dev += v - A[0];
  return TapeState::record({1, 1}, Values{A[0] + dev / n}, {&a}, [count = a.size(), n](auto g, auto in) {
    for (std::size_t i = 0; i < count; ++i) in[0][i] += g[0] / n;
  });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  const std::size_t n = a.cols();
  Values out(rows.size() * n);
  const auto A = a.data();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= a.rows()) {
      throw IndexError("gather_rows: row " + std::to_string(rows[r]) + " out of range for " + a.shape().str());
    }
    std::copy_n(A.begin() + static_cast<std::ptrdiff_t>(rows[r] * n), n, out.begin() + static_cast<std::ptrdiff_t>(r * n));
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return TapeState::record({rows.size(), n}, std::move(out), {&a}, [idx = std::move(idx), n](auto g, auto in) {
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < n; ++j) in[0][idx[r] * n + j] += g[r * n + j];
  });
}

Tensor grl(const Tensor& x, double coefficient) {
  const double factor = -coefficient;
  return TapeState::record(x.shape(), x.to_vector(), {&x}, [factor](auto g, auto in) {
    for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += factor * g[i];
  });
}

Tensor cross_entropy_rows(const Tensor& logits, std::span<const std::size_t> targets) {
  const std::size_t m = logits.rows(), k = logits.cols();
  if (k < 2) throw DimensionError("cross_entropy_rows: need at least 2 classes, got " + logits.shape().str());
  if (targets.size() != m) {
    throw DimensionError("cross_entropy_rows: " + std::to_string(targets.size()) + " targets for logits " +
                         logits.shape().str());
  }
  if (m == 0) throw DimensionError("cross_entropy_rows: empty batch");
  for (std::size_t t : targets) {
    if (t >= k) throw IndexError("cross_entropy_rows: target " + std::to_string(t) + " outside [0, " + std::to_string(k) + ")");
  }
  Values onehot(m * k, 0.0);
  for (std::size_t i = 0; i < m; ++i) onehot[i * k + targets[i]] = 1.0;
  return cross_entropy_rows(logits, Tensor(m, k, std::move(onehot)));
}

Tensor cross_entropy_rows(const Tensor& logits, const Tensor& target_probs) {
  if (logits.shape() != target_probs.shape()) shape_error("cross_entropy_rows", logits.shape(), target_probs.shape());
  if (logits.cols() < 2) throw DimensionError("cross_entropy_rows: need at least 2 classes");
  if (logits.rows() == 0) throw DimensionError("cross_entropy_rows: empty batch");
  const std::size_t m = logits.rows(), k = logits.cols();
  const Tensor logp = log_softmax_rows(logits);
  const auto L = logp.data();
  const auto P = target_probs.data();
  // Row losses averaged in the shifted form used by mean().
  std::vector<double> row(m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j)
      if (P[i * k + j] != 0.0) row[i] -= P[i * k + j] * L[i * k + j];
  double dev = 0.0;
  for (double r : row) dev += r - row[0];
  SharedValues pv = TapeState::values(target_probs);
  return TapeState::record({1, 1}, Values{row[0] + dev / static_cast<double>(m)}, {&logp},
                           [pv, m, k](auto g, auto in) {
                             const double s = -g[0] / static_cast<double>(m);
                             for (std::size_t i = 0; i < m * k; ++i) in[0][i] += s * (*pv)[i];
                           });
}

void sgd_step(Tensor& param, const Tensor& grad, double lr) {
  if (param.shape() != grad.shape()) shape_error("sgd_step", param.shape(), grad.shape());
  if (lr == 0.0) return;
  Values next = param.to_vector();
  const auto G = grad.data();
  for (std::size_t i = 0; i < next.size(); ++i) next[i] -= lr * G[i];
  param = Tensor(param.rows(), param.cols(), std::move(next));
}

void sgd_step(std::span<Tensor* const> params, std::span<const Tensor> grads, double lr) {
  if (params.size() != grads.size()) throw DimensionError("sgd_step: parameter and gradient counts differ");
  for (std::size_t i = 0; i < params.size(); ++i) sgd_step(*params[i], grads[i], lr);
}

}  // namespace cdgpa
