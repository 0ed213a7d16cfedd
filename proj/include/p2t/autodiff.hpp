#pragma once

// Minimal reverse-mode differentiation over dense 1-D / 2-D double arrays.
//
// A Tape records every operation in creation order, so node ids already form
// a topological order and backward() is a single reverse sweep. Parameters are
// bound as external leaves: the tape reads their values in place and, after a
// backward sweep, adds their gradients into caller-owned buffers.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "p2t/error.hpp"

namespace p2t::ad {

/// Dense row-major array of rank 1 or 2.
class Tensor {
 public:
  Tensor() = default;

  static Tensor vector(std::size_t n, double fill = 0.0) { return Tensor(1, {n, 1}, fill); }
  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor(2, {rows, cols}, fill);
  }
  static Tensor from(std::vector<double> values) {
    Tensor t = vector(values.size());
    t.data_ = std::move(values);
    return t;
  }
  static Tensor from_shape(const std::vector<std::size_t>& shape, double fill = 0.0) {
    if (shape.size() == 1) return vector(shape[0], fill);
    if (shape.size() == 2) return matrix(shape[0], shape[1], fill);
    throw DimensionError("tensor rank must be 1 or 2, got " + std::to_string(shape.size()));
  }

  std::size_t rank() const noexcept { return rank_; }
  std::size_t rows() const noexcept { return rank_ == 2 ? dims_[0] : 1; }
  std::size_t cols() const noexcept { return rank_ == 2 ? dims_[1] : dims_[0]; }
  std::size_t size() const noexcept { return data_.size(); }
  std::vector<std::size_t> shape() const {
    return rank_ == 2 ? std::vector<std::size_t>{dims_[0], dims_[1]}
                      : std::vector<std::size_t>{dims_[0]};
  }
  bool same_shape(const Tensor& o) const noexcept {
    return rank_ == o.rank_ && dims_ == o.dims_;
  }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Tensor& o) const = default;

 private:
  Tensor(std::size_t rank, std::array<std::size_t, 2> dims, double fill)
      : rank_(rank), dims_(dims), data_(rank == 2 ? dims[0] * dims[1] : dims[0], fill) {}

  std::size_t rank_ = 1;
  std::array<std::size_t, 2> dims_{0, 1};
  std::vector<double> data_;
};

inline std::string shape_string(const Tensor& t) {
  if (t.rank() == 2) return "[" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + "]";
  return "[" + std::to_string(t.size()) + "]";
}

/// Handle to a node on a Tape.
struct Var {
  std::uint32_t id = 0;
};

class Tape {
 public:
  Tape() { nodes_.reserve(256); }

  Var constant(Tensor value) {
    Node n;
    n.op = Op::leaf;
    n.own = std::move(value);
    return push(std::move(n), "constant");
  }

  /// Binds an externally owned parameter. When `grad` is non-null, backward()
  /// accumulates into it (same shape as `value`).
  Var parameter(const Tensor& value, Tensor* grad = nullptr) {
    if (grad != nullptr && !grad->same_shape(value)) {
      throw DimensionError("parameter gradient buffer shape mismatch");
    }
    Node n;
    n.op = Op::leaf;
    n.ext = &value;
    n.ext_grad = grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  const Tensor& value(Var v) const { return val(v.id); }
  double scalar(Var v) const {
    const Tensor& t = val(v.id);
    if (t.size() != 1) throw ContractError("scalar() on non-scalar node " + shape_string(t));
    return t[0];
  }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient of the last backward() target w.r.t. `v` (empty if unreached).
  const std::vector<double>& grad(Var v) const { return grads_.at(v.id); }

  // ---- forward primitives -------------------------------------------------

  /// x·W + b for a vector x.
  Var affine(Var x, Var w, Var b) {
    const Tensor& W = val(w.id);
    const Tensor& B = val(b.id);
    Tensor y = vec_mat(val(x.id), W, "affine");
    if (B.size() != y.size()) throw DimensionError("affine: bias " + shape_string(B) + " vs out " + shape_string(y));
    for (std::size_t j = 0; j < y.size(); ++j) y[j] += B[j];
    return record(Op::affine, std::move(y), {x, w, b}, "affine");
  }

  /// x·W for a vector x.
  Var matmul(Var x, Var w) {
    Tensor y = vec_mat(val(x.id), val(w.id), "matmul");
    return record(Op::matmul, std::move(y), {x, w}, "matmul");
  }

  Var add(Var a, Var b) { return elementwise(Op::add, a, b, "add"); }
  Var sub(Var a, Var b) { return elementwise(Op::sub, a, b, "sub"); }
  Var mul(Var a, Var b) { return elementwise(Op::mul, a, b, "mul"); }

  Var scale(Var x, double c) {
    Tensor y = val(x.id);
    for (double& v : y.values()) v *= c;
    Node n = make(Op::scale, std::move(y), {x});
    n.scalar = c;
    return push(std::move(n), "scale");
  }

  Var sigmoid(Var x) {
    Tensor y = val(x.id);
    for (double& v : y.values()) v = 1.0 / (1.0 + std::exp(-v));
    return record(Op::sigmoid, std::move(y), {x}, "sigmoid");
  }

  Var tanh(Var x) {
    Tensor y = val(x.id);
    for (double& v : y.values()) v = std::tanh(v);
    return record(Op::tanh, std::move(y), {x}, "tanh");
  }

  Var relu(Var x) {
    Tensor y = val(x.id);
    for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
    return record(Op::relu, std::move(y), {x}, "relu");
  }

  /// Softmax over positions where mask is true; masked-out outputs are exactly 0.
  Var softmax_masked(Var x, const std::vector<bool>& mask) {
    const Tensor& X = val(x.id);
    if (X.rank() != 1 || mask.size() != X.size()) {
      throw DimensionError("softmax_masked: mask length " + std::to_string(mask.size()) +
                           " vs input " + shape_string(X));
    }
    double mx = -INFINITY;
    for (std::size_t i = 0; i < X.size(); ++i) {
      if (mask[i]) mx = std::max(mx, X[i]);
    }
    if (mx == -INFINITY) throw ContractError("softmax_masked: no valid positions");
    Tensor y = Tensor::vector(X.size());
    double z = 0.0;
    for (std::size_t i = 0; i < X.size(); ++i) {
      if (mask[i]) {
        y[i] = std::exp(X[i] - mx);
        z += y[i];
      }
    }
    for (double& v : y.values()) v /= z;
    Node n = make(Op::softmax_masked, std::move(y), {x});
    n.aux_begin = static_cast<std::uint32_t>(aux_.size());
    n.aux_count = static_cast<std::uint32_t>(mask.size());
    for (bool m : mask) aux_.push_back(m ? 1.0 : 0.0);
    return push(std::move(n), "softmax_masked");
  }

  /// Row `index` of matrix `table`.
  Var gather(Var table, std::size_t index) {
    const Tensor& E = val(table.id);
    if (E.rank() != 2) throw DimensionError("gather: table must be a matrix, got " + shape_string(E));
    if (index >= E.rows()) {
      throw DimensionError("gather: row " + std::to_string(index) + " out of " + std::to_string(E.rows()));
    }
    Tensor y = Tensor::vector(E.cols());
    std::copy_n(E.values().begin() + static_cast<std::ptrdiff_t>(index * E.cols()), E.cols(),
                y.values().begin());
    Node n = make(Op::gather, std::move(y), {table});
    n.scalar = static_cast<double>(index);
    return push(std::move(n), "gather");
  }

  Var concat(std::span<const Var> parts) {
    std::size_t total = 0;
    for (Var p : parts) {
      if (val(p.id).rank() != 1) throw DimensionError("concat: inputs must be vectors");
      total += val(p.id).size();
    }
    Tensor y = Tensor::vector(total);
    std::size_t off = 0;
    for (Var p : parts) {
      const Tensor& t = val(p.id);
      std::copy(t.values().begin(), t.values().end(), y.values().begin() + static_cast<std::ptrdiff_t>(off));
      off += t.size();
    }
    return record(Op::concat, std::move(y), parts, "concat");
  }
  Var concat(std::initializer_list<Var> parts) { return concat(std::span<const Var>(parts.begin(), parts.size())); }

  /// Stacks equal-length vectors as the rows of a matrix.
  Var stack(std::span<const Var> rows) {
    if (rows.empty()) throw ContractError("stack: no rows");
    const std::size_t c = val(rows[0].id).size();
    Tensor y = Tensor::matrix(rows.size(), c);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const Tensor& t = val(rows[r].id);
      if (t.rank() != 1 || t.size() != c) throw DimensionError("stack: ragged rows");
      std::copy(t.values().begin(), t.values().end(), y.values().begin() + static_cast<std::ptrdiff_t>(r * c));
    }
    return record(Op::stack, std::move(y), rows, "stack");
  }

  /// Column-wise mean of a matrix (average of its rows).
  Var mean_rows(Var m) {
    const Tensor& M = val(m.id);
    if (M.rank() != 2) throw DimensionError("mean_rows: expected matrix, got " + shape_string(M));
    Tensor y = Tensor::vector(M.cols());
    for (std::size_t r = 0; r < M.rows(); ++r)
      for (std::size_t c = 0; c < M.cols(); ++c) y[c] += M.at(r, c);
    for (double& v : y.values()) v /= static_cast<double>(M.rows());
    return record(Op::mean_rows, std::move(y), {m}, "mean_rows");
  }

  Var sum(Var x) {
    double s = 0.0;
    for (double v : val(x.id).values()) s += v;
    return record(Op::sum, Tensor::from({s}), {x}, "sum");
  }

  Var mean(Var x) {
    const Tensor& X = val(x.id);
    if (X.size() == 0) throw ContractError("mean: empty input");
    double s = 0.0;
    for (double v : X.values()) s += v;
    return record(Op::mean, Tensor::from({s / static_cast<double>(X.size())}), {x}, "mean");
  }

  /// −Σ [t·log p + (1−t)·log(1−p)] with p clamped to [eps, 1−eps]. Scalar output.
  Var binary_cross_entropy(Var p, std::span<const double> targets) {
    const Tensor& P = val(p.id);
    if (targets.size() != P.size()) {
      throw DimensionError("binary_cross_entropy: " + std::to_string(targets.size()) +
                           " targets vs " + shape_string(P));
    }
    double loss = 0.0;
    for (std::size_t i = 0; i < P.size(); ++i) {
      const double q = std::clamp(P[i], kProbEps, 1.0 - kProbEps);
      loss -= targets[i] * std::log(q) + (1.0 - targets[i]) * std::log(1.0 - q);
    }
    Node n = make(Op::bce, Tensor::from({loss}), {p});
    n.aux_begin = static_cast<std::uint32_t>(aux_.size());
    n.aux_count = static_cast<std::uint32_t>(targets.size());
    aux_.insert(aux_.end(), targets.begin(), targets.end());
    return push(std::move(n), "binary_cross_entropy");
  }

  // ---- reverse sweep ------------------------------------------------------

  void backward(Var loss) {
    if (val(loss.id).size() != 1) {
      throw ContractError("backward: loss must be scalar, got " + shape_string(val(loss.id)));
    }
    grads_.assign(nodes_.size(), {});
    grads_[loss.id].assign(1, 1.0);
    for (std::size_t k = loss.id + 1; k-- > 0;) {
      if (grads_[k].empty()) continue;
      propagate(static_cast<std::uint32_t>(k));
    }
    for (std::size_t k = 0; k < nodes_.size(); ++k) {
      const Node& n = nodes_[k];
      if (n.ext_grad == nullptr || grads_[k].empty()) continue;
      auto& dst = n.ext_grad->storage();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += grads_[k][i];
    }
  }

  static constexpr double kProbEps = 1e-12;

 private:
  enum class Op : std::uint8_t {
    leaf, affine, matmul, add, sub, mul, scale, sigmoid, tanh, relu,
    softmax_masked, gather, concat, stack, mean_rows, sum, mean, bce,
  };

  struct Node {
    Op op = Op::leaf;
    Tensor own;
    const Tensor* ext = nullptr;
    Tensor* ext_grad = nullptr;
    std::uint32_t in_begin = 0, in_count = 0;
    std::uint32_t aux_begin = 0, aux_count = 0;
    double scalar = 0.0;
  };

  const Tensor& val(std::uint32_t id) const {
    const Node& n = nodes_.at(id);
    return n.ext != nullptr ? *n.ext : n.own;
  }

  static Tensor vec_mat(const Tensor& x, const Tensor& w, const char* op) {
    if (x.rank() != 1 || w.rank() != 2 || x.size() != w.rows()) {
      throw DimensionError(std::string(op) + ": " + shape_string(x) + " x " + shape_string(w));
    }
    const std::size_t n = w.rows(), m = w.cols();
    Tensor y = Tensor::vector(m);
    const double* W = w.values().data();
    double* Y = y.values().data();
    for (std::size_t i = 0; i < n; ++i) {
      const double xi = x[i];
      const double* row = W + i * m;
      for (std::size_t j = 0; j < m; ++j) Y[j] += xi * row[j];
    }
    return y;
  }

  Var elementwise(Op op, Var a, Var b, const char* name) {
    const Tensor& A = val(a.id);
    const Tensor& B = val(b.id);
    if (!A.same_shape(B)) {
      throw DimensionError(std::string(name) + ": " + shape_string(A) + " vs " + shape_string(B));
    }
    Tensor y = A;
    auto out = y.values();
    auto rhs = B.values();
    switch (op) {
      case Op::add: for (std::size_t i = 0; i < out.size(); ++i) out[i] += rhs[i]; break;
      case Op::sub: for (std::size_t i = 0; i < out.size(); ++i) out[i] -= rhs[i]; break;
      default: for (std::size_t i = 0; i < out.size(); ++i) out[i] *= rhs[i]; break;
    }
    return record(op, std::move(y), {a, b}, name);
  }

  Node make(Op op, Tensor value, std::span<const Var> inputs) {
    Node n;
    n.op = op;
    n.own = std::move(value);
    n.in_begin = static_cast<std::uint32_t>(inputs_.size());
    n.in_count = static_cast<std::uint32_t>(inputs.size());
    for (Var v : inputs) inputs_.push_back(v.id);
    return n;
  }
  Node make(Op op, Tensor value, std::initializer_list<Var> inputs) {
    return make(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()));
  }

  Var record(Op op, Tensor value, std::span<const Var> inputs, const char* name) {
    return push(make(op, std::move(value), inputs), name);
  }
  Var record(Op op, Tensor value, std::initializer_list<Var> inputs, const char* name) {
    return push(make(op, std::move(value), inputs), name);
  }

  Var push(Node n, const char* name) {
    for (double v : n.own.values()) {
      if (!std::isfinite(v)) throw NumericError(std::string("non-finite output from ") + name);
    }
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  std::vector<double>& g(std::uint32_t id) {
    auto& buf = grads_[id];
    if (buf.empty()) buf.assign(val(id).size(), 0.0);
    return buf;
  }

  std::uint32_t input(const Node& n, std::uint32_t i) const { return inputs_[n.in_begin + i]; }

  void propagate(std::uint32_t k) {
    const Node& n = nodes_[k];
    const std::vector<double>& gy = grads_[k];
    const Tensor& y = n.own;
    switch (n.op) {
      case Op::leaf:
        break;
      case Op::affine:
      case Op::matmul: {
        const std::uint32_t xi = input(n, 0), wi = input(n, 1);
        const Tensor& x = val(xi);
        const Tensor& w = val(wi);
        const std::size_t rows = w.rows(), cols = w.cols();
        auto& gx = g(xi);
        auto& gw = g(wi);
        const double* W = w.values().data();
        for (std::size_t i = 0; i < rows; ++i) {
          const double* row = W + i * cols;
          double* grow = gw.data() + i * cols;
          const double xv = x[i];
          double acc = 0.0;
          for (std::size_t j = 0; j < cols; ++j) {
            acc += row[j] * gy[j];
            grow[j] += xv * gy[j];
          }
          gx[i] += acc;
        }
        if (n.op == Op::affine) {
          auto& gb = g(input(n, 2));
          for (std::size_t j = 0; j < cols; ++j) gb[j] += gy[j];
        }
        break;
      }
      case Op::add: {
        auto& ga = g(input(n, 0));
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
        auto& gb = g(input(n, 1));
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i];
        break;
      }
      case Op::sub: {
        auto& ga = g(input(n, 0));
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
        auto& gb = g(input(n, 1));
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] -= gy[i];
        break;
      }
      case Op::mul: {
        const std::uint32_t ai = input(n, 0), bi = input(n, 1);
        const Tensor& a = val(ai);
        const Tensor& b = val(bi);
        auto& ga = g(ai);
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * b[i];
        auto& gb = g(bi);
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * a[i];
        break;
      }
      case Op::scale: {
        auto& gx = g(input(n, 0));
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * n.scalar;
        break;
      }
      case Op::sigmoid: {
        auto& gx = g(input(n, 0));
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * y[i] * (1.0 - y[i]);
        break;
      }
      case Op::tanh: {
        auto& gx = g(input(n, 0));
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * (1.0 - y[i] * y[i]);
        break;
      }
      case Op::relu: {
        const std::uint32_t xi = input(n, 0);
        const Tensor& x = val(xi);
        auto& gx = g(xi);
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += x[i] > 0.0 ? gy[i] : 0.0;
        break;
      }
      case Op::softmax_masked: {
        auto& gx = g(input(n, 0));
        double dot = 0.0;
        for (std::size_t i = 0; i < gy.size(); ++i) dot += y[i] * gy[i];
        for (std::size_t i = 0; i < gy.size(); ++i) {
          if (aux_[n.aux_begin + i] != 0.0) gx[i] += y[i] * (gy[i] - dot);
        }
        break;
      }
      case Op::gather: {
        auto& gt = g(input(n, 0));
        const std::size_t off = static_cast<std::size_t>(n.scalar) * gy.size();
        for (std::size_t j = 0; j < gy.size(); ++j) gt[off + j] += gy[j];
        break;
      }
      case Op::concat:
      case Op::stack: {
        std::size_t off = 0;
        for (std::uint32_t p = 0; p < n.in_count; ++p) {
          auto& gp = g(input(n, p));
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += gy[off + i];
          off += gp.size();
        }
        break;
      }
      case Op::mean_rows: {
        const std::uint32_t mi = input(n, 0);
        const Tensor& m = val(mi);
        auto& gm = g(mi);
        const double inv = 1.0 / static_cast<double>(m.rows());
        for (std::size_t r = 0; r < m.rows(); ++r)
          for (std::size_t c = 0; c < m.cols(); ++c) gm[r * m.cols() + c] += gy[c] * inv;
        break;
      }
      case Op::sum: {
        auto& gx = g(input(n, 0));
        for (double& v : gx) v += gy[0];
        break;
      }
      case Op::mean: {
        auto& gx = g(input(n, 0));
        const double share = gy[0] / static_cast<double>(gx.size());
        for (double& v : gx) v += share;
        break;
      }
      case Op::bce: {
        const std::uint32_t pi = input(n, 0);
        const Tensor& p = val(pi);
        auto& gp = g(pi);
        for (std::size_t i = 0; i < gp.size(); ++i) {
          const double q = p[i];
          if (q < kProbEps || q > 1.0 - kProbEps) continue;
          const double t = aux_[n.aux_begin + i];
          gp[i] += gy[0] * (-t / q + (1.0 - t) / (1.0 - q));
        }
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  std::vector<std::uint32_t> inputs_;
  std::vector<double> aux_;
  std::vector<std::vector<double>> grads_;
};

/// Parameter handles of one gated recurrent unit, already bound to a tape.
struct GruWeights {
  Var w_z, u_z, b_z;
  Var w_r, u_r, b_r;
  Var w_h, u_h, b_h;
};

/// Standard GRU update:
///   z = σ(x W_z + h U_z + b_z),  r = σ(x W_r + h U_r + b_r)
///   h̃ = tanh(x W_h + (r ⊙ h) U_h + b_h),  h' = (1 − z) ⊙ h + z ⊙ h̃
inline Var gru_cell(Tape& tape, Var x, Var h, const GruWeights& g) {
  const Var z = tape.sigmoid(tape.add(tape.affine(x, g.w_z, g.b_z), tape.matmul(h, g.u_z)));
  const Var r = tape.sigmoid(tape.add(tape.affine(x, g.w_r, g.b_r), tape.matmul(h, g.u_r)));
  const Var cand = tape.tanh(tape.add(tape.affine(x, g.w_h, g.b_h), tape.matmul(tape.mul(r, h), g.u_h)));
  return tape.add(h, tape.mul(z, tape.sub(cand, h)));
}

}  // namespace p2t::ad
