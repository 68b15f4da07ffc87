#pragma once

#include <Eigen/Dense>

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "textpolicy/errors.hpp"
#include "textpolicy/rng.hpp"

namespace textpolicy {

// Everything is a dense row-major f32 matrix; vectors are 1 x n, scalars 1 x 1.
using Matrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// A trainable weight. Gradients accumulate into `grad` across tapes until
// zeroed, so one optimizer step can cover several forward passes.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)),
        grad(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(); }
};

// Handle into a Tape. Only meaningful together with the tape that made it.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Define-by-run graph. Ops append nodes in evaluation order; backward walks
// the node list once in reverse. Rebuilt per forward pass.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&)>;

  explicit Tape(bool grad_enabled = true, bool check_finite = true)
      : grad_enabled_(grad_enabled), check_finite_(check_finite) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Matrix value, bool requires_grad = false);
  Var constant(Matrix value) { return leaf(std::move(value), false); }
  Var param(Parameter& p);

  const Matrix& val(Var v) const;
  // Zeros if the node never received gradient.
  Matrix grad(Var v) const;
  void backward(Var loss);

  bool grad_enabled() const { return grad_enabled_; }
  int size() const { return static_cast<int>(nodes_.size()); }

  // Op plumbing.
  Var record(Matrix value, const std::vector<Var>& parents, BackwardFn fn,
             const char* op);
  bool wants_grad(Var v) const;
  Matrix& grad_buf(Var v);
  const Matrix* grad_if_any(Var v) const;

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Parameter* bound = nullptr;
    bool requires_grad = false;
    BackwardFn backward_fn;
  };

  void check_value(const Matrix& m, const char* op) const;
  const Node& node(Var v) const;

  std::vector<Node> nodes_;
  bool grad_enabled_;
  bool check_finite_;
};

float scalar_of(const Tape& t, Var v);

Var matmul(Tape& t, Var a, Var b);
// Same shape, or b a 1 x n row broadcast over a's rows.
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
// Elementwise.
Var mul(Tape& t, Var a, Var b);
// Elementwise product with a 1 x n row broadcast over a's rows.
Var mul_rowwise(Tape& t, Var a, Var row);
Var scale(Tape& t, Var a, float c);
Var relu(Tape& t, Var a);
// axis 1: each row sums to one; axis 0: each column.
Var softmax(Tape& t, Var a, int axis = 1);
// Per-row standardization, no affine part.
Var layernorm(Tape& t, Var a, float eps = 1e-5f);
Var transpose(Tape& t, Var a);
Var slice_rows(Tape& t, Var a, int start, int count);
Var slice_cols(Tape& t, Var a, int start, int count);
Var concat_rows(Tape& t, const std::vector<Var>& parts);
Var concat_cols(Tape& t, const std::vector<Var>& parts);
Var mean_rows(Tape& t, Var a);
Var sum_all(Tape& t, Var a);
Var gather_rows(Tape& t, Var table, const std::vector<int>& ids);
// Inverted dropout; identity when rate == 0.
Var dropout(Tape& t, Var a, float rate, SeededRng& rng);
// Mean over rows of -log softmax(logits)[target].
Var cross_entropy(Tape& t, Var logits, const std::vector<int>& targets);
Var cross_entropy(Tape& t, Var logits, int target);
// Soft targets, one distribution per row; optional per-row weights
// (loss = sum_i w_i ce_i / sum_i w_i).
Var cross_entropy_soft(Tape& t, Var logits, const Matrix& targets,
                       const std::vector<float>* row_weights = nullptr);

}  // namespace textpolicy
