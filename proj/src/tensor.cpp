#include "textpolicy/tensor.hpp"

#include <cmath>

namespace textpolicy {

namespace {

using Array = Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ColArray = Eigen::Array<float, Eigen::Dynamic, 1>;
using RowArray = Eigen::Array<float, 1, Eigen::Dynamic>;

std::string dims(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + dims(a) +
                       " and " + dims(b));
}

}  // namespace

void Tape::check_value(const Matrix& m, const char* op) const {
  if (check_finite_ && !m.allFinite()) {
    throw NumericError(std::string(op) + " produced non-finite values");
  }
}

const Tape::Node& Tape::node(Var v) const {
  if (v.id < 0 || v.id >= size()) throw Error("invalid Var handle");
  return nodes_[v.id];
}

Var Tape::leaf(Matrix value, bool requires_grad) {
  check_value(value, "leaf");
  Node n;
  n.value = std::move(value);
  n.requires_grad = grad_enabled_ && requires_grad;
  nodes_.push_back(std::move(n));
  return {size() - 1};
}

Var Tape::param(Parameter& p) {
  check_value(p.value, "param");
  if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) {
    if (p.grad.size() == 0) {
      p.grad = Matrix::Zero(p.value.rows(), p.value.cols());
    } else {
      throw DimensionError("param " + p.name + ": grad shape " + dims(p.grad) +
                           " does not match value " + dims(p.value));
    }
  }
  Node n;
  n.bound = &p;
  n.requires_grad = grad_enabled_;
  nodes_.push_back(std::move(n));
  return {size() - 1};
}

const Matrix& Tape::val(Var v) const {
  const Node& n = node(v);
  return n.bound ? n.bound->value : n.value;
}

Matrix Tape::grad(Var v) const {
  const Node& n = node(v);
  const Matrix& value = n.bound ? n.bound->value : n.value;
  const Matrix& g = n.bound ? n.bound->grad : n.grad;
  if (g.size() == 0) return Matrix::Zero(value.rows(), value.cols());
  return g;
}

bool Tape::wants_grad(Var v) const { return node(v).requires_grad; }

Matrix& Tape::grad_buf(Var v) {
  Node& n = nodes_[v.id];
  Matrix& g = n.bound ? n.bound->grad : n.grad;
  if (g.size() == 0) {
    const Matrix& value = n.bound ? n.bound->value : n.value;
    g = Matrix::Zero(value.rows(), value.cols());
  }
  return g;
}

const Matrix* Tape::grad_if_any(Var v) const {
  const Node& n = node(v);
  const Matrix& g = n.bound ? n.bound->grad : n.grad;
  return g.size() == 0 ? nullptr : &g;
}

Var Tape::record(Matrix value, const std::vector<Var>& parents, BackwardFn fn,
                 const char* op) {
  check_value(value, op);
  Node n;
  n.value = std::move(value);
  if (grad_enabled_) {
    for (Var p : parents) {
      if (node(p).requires_grad) {
        n.requires_grad = true;
        break;
      }
    }
  }
  if (n.requires_grad) n.backward_fn = std::move(fn);
  nodes_.push_back(std::move(n));
  return {size() - 1};
}

void Tape::backward(Var loss) {
  if (!grad_enabled_) throw Error("backward requires a grad-enabled tape");
  const Matrix& lv = val(loss);
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw DimensionError("backward expects a 1x1 loss, got " + dims(lv));
  }
  grad_buf(loss)(0, 0) += 1.0f;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.backward_fn) continue;
    const Matrix* g = grad_if_any({i});
    if (!g) continue;
    n.backward_fn(*this);
  }
}

float scalar_of(const Tape& t, Var v) {
  const Matrix& m = t.val(v);
  if (m.rows() != 1 || m.cols() != 1) {
    throw DimensionError("expected a 1x1 value, got " + dims(m));
  }
  return m(0, 0);
}

Var matmul(Tape& t, Var a, Var b) {
  const Matrix& av = t.val(a);
  const Matrix& bv = t.val(b);
  if (av.cols() != bv.rows()) shape_error("matmul", av, bv);
  Matrix y(av.rows(), bv.cols());
  y.noalias() = av * bv;
  int ia = a.id, ib = b.id;
  int self = t.size();
  return t.record(std::move(y), {a, b},
                  [ia, ib, self](Tape& tt) {
                    const Matrix& dy = *tt.grad_if_any({self});
                    if (tt.wants_grad({ia})) {
                      tt.grad_buf({ia}).noalias() += dy * tt.val({ib}).transpose();
                    }
                    if (tt.wants_grad({ib})) {
                      tt.grad_buf({ib}).noalias() += tt.val({ia}).transpose() * dy;
                    }
                  },
                  "matmul");
}

Var add(Tape& t, Var a, Var b) {
  const Matrix& av = t.val(a);
  const Matrix& bv = t.val(b);
  bool same = av.rows() == bv.rows() && av.cols() == bv.cols();
  bool bcast = !same && bv.rows() == 1 && bv.cols() == av.cols();
  if (!same && !bcast) shape_error("add", av, bv);
  Matrix y;
  if (same) {
    y = av + bv;
  } else {
    y = av;
    y.array().rowwise() += RowArray(bv.row(0).array());
  }
  int ia = a.id, ib = b.id;
  int self = t.size();
  return t.record(std::move(y), {a, b},
                  [ia, ib, self, bcast](Tape& tt) {
                    const Matrix& dy = *tt.grad_if_any({self});
                    if (tt.wants_grad({ia})) tt.grad_buf({ia}) += dy;
                    if (tt.wants_grad({ib})) {
                      if (bcast) {
                        tt.grad_buf({ib}) += dy.colwise().sum();
                      } else {
                        tt.grad_buf({ib}) += dy;
                      }
                    }
                  },
                  "add");
}

Var sub(Tape& t, Var a, Var b) {
  const Matrix& av = t.val(a);
  const Matrix& bv = t.val(b);
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) shape_error("sub", av, bv);
  Matrix y = av - bv;
  int ia = a.id, ib = b.id;
  int self = t.size();
  return t.record(std::move(y), {a, b},
                  [ia, ib, self](Tape& tt) {
                    const Matrix& dy = *tt.grad_if_any({self});
                    if (tt.wants_grad({ia})) tt.grad_buf({ia}) += dy;
                    if (tt.wants_grad({ib})) tt.grad_buf({ib}) -= dy;
                  },
                  "sub");
}

Var mul(Tape& t, Var a, Var b) {
  const Matrix& av = t.val(a);
  const Matrix& bv = t.val(b);
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) shape_error("mul", av, bv);
  Matrix y = av.cwiseProduct(bv);
  int ia = a.id, ib = b.id;
  int self = t.size();
  return t.record(std::move(y), {a, b},
                  [ia, ib, self](Tape& tt) {
                    const Matrix& dy = *tt.grad_if_any({self});
                    if (tt.wants_grad({ia})) {
                      tt.grad_buf({ia}) += dy.cwiseProduct(tt.val({ib}));
                    }
                    if (tt.wants_grad({ib})) {
                      tt.grad_buf({ib}) += dy.cwiseProduct(tt.val({ia}));
                    }
                  },
                  "mul");
}

Var mul_rowwise(Tape& t, Var a, Var row) {
  const Matrix& av = t.val(a);
  const Matrix& rv = t.val(row);
  if (rv.rows() != 1 || rv.cols() != av.cols()) shape_error("mul_rowwise", av, rv);
  Matrix y = av;
  y.array().rowwise() *= RowArray(rv.row(0).array());
  int ia = a.id, ir = row.id;
  int self = t.size();
  return t.record(std::move(y), {a, row},
                  [ia, ir, self](Tape& tt) {
                    const Matrix& dy = *tt.grad_if_any({self});
                    if (tt.wants_grad({ia})) {
                      Matrix da = dy;
                      da.array().rowwise() *= RowArray(tt.val({ir}).row(0).array());
                      tt.grad_buf({ia}) += da;
                    }
                    if (tt.wants_grad({ir})) {
                      tt.grad_buf({ir}) += dy.cwiseProduct(tt.val({ia})).colwise().sum();
                    }
                  },
                  "mul_rowwise");
}

Var scale(Tape& t, Var a, float c) {
  Matrix y = t.val(a) * c;
  int ia = a.id;
  int self = t.size();
  return t.record(std::move(y), {a},
                  [ia, self, c](Tape& tt) {
                    const Matrix& dy = *tt.grad_if_any({self});
                    if (tt.wants_grad({ia})) tt.grad_buf({ia}) += dy * c;
                  },
                  "scale");
}

Var relu(Tape& t, Var a) {
  Matrix y = t.val(a).cwiseMax(0.0f);
  int ia = a.id;
  int self = t.size();
  return t.record(std::move(y), {a},
                  [ia, self](Tape& tt) {
                    const Matrix& dy = *tt.grad_if_any({self});
                    if (!tt.wants_grad({ia})) return;
                    const Matrix& av = tt.val({ia});
                    tt.grad_buf({ia}).array() +=
                        dy.array() * (av.array() > 0.0f).cast<float>();
                  },
                  "relu");
}

Var softmax(Tape& t, Var a, int axis) {
  if (axis != 0 && axis != 1) throw DimensionError("softmax: axis must be 0 or 1");
  Array x = t.val(a).array();
  if (axis == 1) {
    ColArray m = x.rowwise().maxCoeff();
    x.colwise() -= m;
    x = x.exp();
    ColArray s = x.rowwise().sum();
    x.colwise() /= s;
  } else {
    RowArray m = x.colwise().maxCoeff();
    x.rowwise() -= m;
    x = x.exp();
    RowArray s = x.colwise().sum();
    x.rowwise() /= s;
  }
  int ia = a.id;
  int self = t.size();
  return t.record(Matrix(x.matrix()), {a},
                  [ia, self, axis](Tape& tt) {
                    if (!tt.wants_grad({ia})) return;
                    const Matrix& dy = *tt.grad_if_any({self});
                    Array y = tt.val({self}).array();
                    Array d = dy.array();
                    if (axis == 1) {
                      ColArray dot = (d * y).rowwise().sum();
                      tt.grad_buf({ia}).array() += y * (d.colwise() - dot);
                    } else {
                      RowArray dot = (d * y).colwise().sum();
                      tt.grad_buf({ia}).array() += y * (d.rowwise() - dot);
                    }
                  },
                  "softmax");
}

Var layernorm(Tape& t, Var a, float eps) {
  const Matrix& xv = t.val(a);
  if (xv.cols() < 1) throw DimensionError("layernorm: empty rows");
  Array x = xv.array();
  ColArray mu = x.rowwise().mean();
  Array centered = x.colwise() - mu;
  ColArray var = centered.square().rowwise().mean();
  ColArray inv = (var + eps).sqrt().inverse();
  Array xhat = centered.colwise() * inv;
  int ia = a.id;
  int self = t.size();
  return t.record(Matrix(xhat.matrix()), {a},
                  [ia, self, inv](Tape& tt) {
                    if (!tt.wants_grad({ia})) return;
                    const Matrix& dy = *tt.grad_if_any({self});
                    Array d = dy.array();
                    Array xh = tt.val({self}).array();
                    ColArray mdy = d.rowwise().mean();
                    ColArray mdyx = (d * xh).rowwise().mean();
                    Array dx = ((d.colwise() - mdy) - xh.colwise() * mdyx).colwise() * inv;
                    tt.grad_buf({ia}).array() += dx;
                  },
                  "layernorm");
}

Var transpose(Tape& t, Var a) {
  Matrix y = t.val(a).transpose();
  int ia = a.id;
  int self = t.size();
  return t.record(std::move(y), {a},
                  [ia, self](Tape& tt) {
                    const Matrix& dy = *tt.grad_if_any({self});
                    if (tt.wants_grad({ia})) tt.grad_buf({ia}) += dy.transpose();
                  },
                  "transpose");
}

Var slice_rows(Tape& t, Var a, int start, int count) {
  const Matrix& av = t.val(a);
  if (start < 0 || count < 1 || start + count > av.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of " +
                         std::to_string(av.rows()) + " rows");
  }
  Matrix y = av.middleRows(start, count);
  int ia = a.id;
  int self = t.size();
  return t.record(std::move(y), {a},
                  [ia, self, start, count](Tape& tt) {
                    const Matrix& dy = *tt.grad_if_any({self});
                    if (tt.wants_grad({ia})) {
                      tt.grad_buf({ia}).middleRows(start, count) += dy;
                    }
                  },
                  "slice_rows");
}

Var slice_cols(Tape& t, Var a, int start, int count) {
  const Matrix& av = t.val(a);
  if (start < 0 || count < 1 || start + count > av.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of " +
                         std::to_string(av.cols()) + " cols");
  }
  Matrix y = av.middleCols(start, count);
  int ia = a.id;
  int self = t.size();
  return t.record(std::move(y), {a},
                  [ia, self, start, count](Tape& tt) {
                    const Matrix& dy = *tt.grad_if_any({self});
                    if (tt.wants_grad({ia})) {
                      tt.grad_buf({ia}).middleCols(start, count) += dy;
                    }
                  },
                  "slice_cols");
}

Var concat_rows(Tape& t, const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no parts");
  int cols = static_cast<int>(t.val(parts[0]).cols());
  int rows = 0;
  for (Var p : parts) {
    const Matrix& v = t.val(p);
    if (v.cols() != cols) shape_error("concat_rows", t.val(parts[0]), v);
    rows += static_cast<int>(v.rows());
  }
  Matrix y(rows, cols);
  std::vector<int> offsets(parts.size());
  int at = 0;
  for (size_t i = 0; i < parts.size(); ++i) {
    const Matrix& v = t.val(parts[i]);
    offsets[i] = at;
    y.middleRows(at, v.rows()) = v;
    at += static_cast<int>(v.rows());
  }
  std::vector<int> ids(parts.size());
  for (size_t i = 0; i < parts.size(); ++i) ids[i] = parts[i].id;
  int self = t.size();
  return t.record(std::move(y), parts,
                  [ids, offsets, self](Tape& tt) {
                    const Matrix& dy = *tt.grad_if_any({self});
                    for (size_t i = 0; i < ids.size(); ++i) {
                      Var p{ids[i]};
                      if (!tt.wants_grad(p)) continue;
                      int n = static_cast<int>(tt.val(p).rows());
                      tt.grad_buf(p) += dy.middleRows(offsets[i], n);
                    }
                  },
                  "concat_rows");
}

Var concat_cols(Tape& t, const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no parts");
  int rows = static_cast<int>(t.val(parts[0]).rows());
  int cols = 0;
  for (Var p : parts) {
    const Matrix& v = t.val(p);
    if (v.rows() != rows) shape_error("concat_cols", t.val(parts[0]), v);
    cols += static_cast<int>(v.cols());
  }
  Matrix y(rows, cols);
  std::vector<int> offsets(parts.size());
  int at = 0;
  for (size_t i = 0; i < parts.size(); ++i) {
    const Matrix& v = t.val(parts[i]);
    offsets[i] = at;
    y.middleCols(at, v.cols()) = v;
    at += static_cast<int>(v.cols());
  }
  std::vector<int> ids(parts.size());
  for (size_t i = 0; i < parts.size(); ++i) ids[i] = parts[i].id;
  int self = t.size();
  return t.record(std::move(y), parts,
                  [ids, offsets, self](Tape& tt) {
                    const Matrix& dy = *tt.grad_if_any({self});
                    for (size_t i = 0; i < ids.size(); ++i) {
                      Var p{ids[i]};
                      if (!tt.wants_grad(p)) continue;
                      int n = static_cast<int>(tt.val(p).cols());
                      tt.grad_buf(p) += dy.middleCols(offsets[i], n);
                    }
                  },
                  "concat_cols");
}

Var mean_rows(Tape& t, Var a) {
  const Matrix& av = t.val(a);
  if (av.rows() < 1) throw DimensionError("mean_rows: no rows");
  Matrix y = av.colwise().mean();
  int ia = a.id;
  int self = t.size();
  int n = static_cast<int>(av.rows());
  return t.record(std::move(y), {a},
                  [ia, self, n](Tape& tt) {
                    const Matrix& dy = *tt.grad_if_any({self});
                    if (tt.wants_grad({ia})) {
                      tt.grad_buf({ia}).noalias() += (dy / static_cast<float>(n)).replicate(n, 1);
                    }
                  },
                  "mean_rows");
}

Var sum_all(Tape& t, Var a) {
  Matrix y(1, 1);
  y(0, 0) = t.val(a).sum();
  int ia = a.id;
  int self = t.size();
  return t.record(std::move(y), {a},
                  [ia, self](Tape& tt) {
                    float g = (*tt.grad_if_any({self}))(0, 0);
                    if (tt.wants_grad({ia})) tt.grad_buf({ia}).array() += g;
                  },
                  "sum_all");
}

Var gather_rows(Tape& t, Var table, const std::vector<int>& ids) {
  const Matrix& tv = t.val(table);
  if (ids.empty()) throw DimensionError("gather_rows: empty id list");
  Matrix y(static_cast<int>(ids.size()), tv.cols());
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows()) {
      throw DimensionError("gather_rows: id " + std::to_string(ids[i]) +
                           " out of " + std::to_string(tv.rows()) + " rows");
    }
    y.row(static_cast<int>(i)) = tv.row(ids[i]);
  }
  int it = table.id;
  int self = t.size();
  std::vector<int> saved = ids;
  return t.record(std::move(y), {table},
                  [it, self, saved](Tape& tt) {
                    const Matrix& dy = *tt.grad_if_any({self});
                    if (!tt.wants_grad({it})) return;
                    Matrix& g = tt.grad_buf({it});
                    for (size_t i = 0; i < saved.size(); ++i) {
                      g.row(saved[i]) += dy.row(static_cast<int>(i));
                    }
                  },
                  "gather_rows");
}

Var dropout(Tape& t, Var a, float rate, SeededRng& rng) {
  if (rate < 0.0f || rate >= 1.0f) {
    throw ConfigError("dropout rate must be in [0, 1)");
  }
  if (rate == 0.0f) return a;
  const Matrix& av = t.val(a);
  Matrix mask(av.rows(), av.cols());
  float keep = 1.0f / (1.0f - rate);
  for (int i = 0; i < mask.rows(); ++i) {
    for (int j = 0; j < mask.cols(); ++j) {
      mask(i, j) = rng.uniform() >= rate ? keep : 0.0f;
    }
  }
  Matrix y = av.cwiseProduct(mask);
  int ia = a.id;
  int self = t.size();
  return t.record(std::move(y), {a},
                  [ia, self, mask](Tape& tt) {
                    const Matrix& dy = *tt.grad_if_any({self});
                    if (tt.wants_grad({ia})) {
                      tt.grad_buf({ia}) += dy.cwiseProduct(mask);
                    }
                  },
                  "dropout");
}

namespace {

// Stable per-row log-sum-exp.
ColArray logsumexp_rows(const Array& x) {
  ColArray m = x.rowwise().maxCoeff();
  return m + (x.colwise() - m).exp().rowwise().sum().log();
}

}  // namespace

Var cross_entropy(Tape& t, Var logits, const std::vector<int>& targets) {
  const Matrix& xv = t.val(logits);
  int n = static_cast<int>(xv.rows());
  int c = static_cast<int>(xv.cols());
  if (static_cast<int>(targets.size()) != n) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(n) + " rows");
  }
  for (int i = 0; i < n; ++i) {
    if (targets[i] < 0 || targets[i] >= c) {
      throw DimensionError("cross_entropy: target " + std::to_string(targets[i]) +
                           " out of " + std::to_string(c) + " classes");
    }
  }
  Array x = xv.array();
  ColArray lse = logsumexp_rows(x);
  float loss = 0.0f;
  for (int i = 0; i < n; ++i) loss += lse(i) - x(i, targets[i]);
  Matrix y(1, 1);
  y(0, 0) = loss / static_cast<float>(n);
  int il = logits.id;
  int self = t.size();
  std::vector<int> saved = targets;
  return t.record(std::move(y), {logits},
                  [il, self, saved, lse](Tape& tt) {
                    if (!tt.wants_grad({il})) return;
                    float g = (*tt.grad_if_any({self}))(0, 0);
                    Array x2 = tt.val({il}).array();
                    Array p = (x2.colwise() - lse).exp();
                    for (size_t i = 0; i < saved.size(); ++i) {
                      p(static_cast<int>(i), saved[i]) -= 1.0f;
                    }
                    tt.grad_buf({il}).array() += p * (g / static_cast<float>(saved.size()));
                  },
                  "cross_entropy");
}

Var cross_entropy(Tape& t, Var logits, int target) {
  return cross_entropy(t, logits, std::vector<int>{target});
}

Var cross_entropy_soft(Tape& t, Var logits, const Matrix& targets,
                       const std::vector<float>* row_weights) {
  const Matrix& xv = t.val(logits);
  int n = static_cast<int>(xv.rows());
  if (targets.rows() != xv.rows() || targets.cols() != xv.cols()) {
    shape_error("cross_entropy_soft", xv, targets);
  }
  for (int i = 0; i < n; ++i) {
    float s = targets.row(i).sum();
    if (std::abs(s - 1.0f) > 1e-3f || targets.row(i).minCoeff() < 0.0f) {
      throw NumericError("cross_entropy_soft: row " + std::to_string(i) +
                         " is not a distribution");
    }
  }
  std::vector<float> w(n, 1.0f);
  if (row_weights) {
    if (static_cast<int>(row_weights->size()) != n) {
      throw DimensionError("cross_entropy_soft: weight count mismatch");
    }
    w = *row_weights;
  }
  float wsum = 0.0f;
  for (float x : w) {
    if (x < 0.0f) throw NumericError("cross_entropy_soft: negative row weight");
    wsum += x;
  }
  if (wsum <= 0.0f) throw NumericError("cross_entropy_soft: zero total weight");

  Array x = xv.array();
  ColArray lse = logsumexp_rows(x);
  float loss = 0.0f;
  for (int i = 0; i < n; ++i) {
    float ce = lse(i) - (targets.row(i).array() * xv.row(i).array()).sum();
    loss += w[static_cast<size_t>(i)] * ce;
  }
  Matrix y(1, 1);
  y(0, 0) = loss / wsum;
  int il = logits.id;
  int self = t.size();
  Matrix tgt = targets;
  return t.record(std::move(y), {logits},
                  [il, self, tgt, w, wsum, lse](Tape& tt) {
                    if (!tt.wants_grad({il})) return;
                    float g = (*tt.grad_if_any({self}))(0, 0);
                    Array x2 = tt.val({il}).array();
                    Array p = (x2.colwise() - lse).exp();
                    Array d = p - tgt.array();
                    for (int i = 0; i < d.rows(); ++i) {
                      d.row(i) *= w[static_cast<size_t>(i)] * g / wsum;
                    }
                    tt.grad_buf({il}).array() += d;
                  },
                  "cross_entropy_soft");
}

}  // namespace textpolicy
