#include "duet/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "duet/errors.hpp"

namespace duet::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

ConstMapMat view(const Tensor& t) { return {t.raw(), Eigen::Index(t.rows()), Eigen::Index(t.cols())}; }
MapMat view(Tensor& t) { return {t.raw(), Eigen::Index(t.rows()), Eigen::Index(t.cols())}; }

Tape& tape_of(Var a) {
  if (a.tape == nullptr) throw Error("variable is not bound to a tape");
  return *a.tape;
}

Tape& tape_of(Var a, Var b) {
  if (a.tape != b.tape) throw Error("operands recorded on different tapes");
  return tape_of(a);
}

[[noreturn]] void shape_fail(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " + b.shape_string());
}

void require_matrix(const char* op, const Tensor& t) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got shape " + t.shape_string());
}

enum class Broadcast { none, row, col, scalar };

Broadcast broadcast_kind(const char* op, const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), n = a.cols();
  if (b.rows() == m && b.cols() == n) return Broadcast::none;
  if (b.rows() == 1 && b.cols() == 1) return Broadcast::scalar;
  if (b.rows() == 1 && b.cols() == n) return Broadcast::row;
  if (b.rows() == m && b.cols() == 1) return Broadcast::col;
  shape_fail(op, a, b);
}

double bvalue(const Tensor& b, Broadcast kind, std::size_t r, std::size_t c) {
  switch (kind) {
    case Broadcast::none: return b(r, c);
    case Broadcast::row: return b(0, c);
    case Broadcast::col: return b(r, 0);
    case Broadcast::scalar: return b[0];
  }
  return 0.0;
}

/// Sums a full-size gradient down to the broadcast operand's shape.
Tensor reduce_to(const Tensor& g, Broadcast kind) {
  if (kind == Broadcast::none) return g;
  const std::size_t m = g.rows(), n = g.cols();
  Tensor out = kind == Broadcast::row   ? Tensor::matrix(1, n)
               : kind == Broadcast::col ? Tensor::matrix(m, 1)
                                        : Tensor::matrix(1, 1);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      const double v = g(r, c);
      switch (kind) {
        case Broadcast::row: out(0, c) += v; break;
        case Broadcast::col: out(r, 0) += v; break;
        default: out[0] += v; break;
      }
    }
  }
  return out;
}

template <typename F>
Tensor map_values(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

/// Elementwise primitive whose derivative depends only on the input value.
template <typename F, typename D>
Var unary(const char* op, Var a, F f, D dfdx) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  require_matrix(op, x);
  return tape.record(op, map_values(x, f), {a}, [a, dfdx](const Tensor& g, Accumulator& acc) {
    const Tensor& xv = a.value();
    Tensor ga(xv.shape());
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = g[i] * dfdx(xv[i]);
    acc.add(a, std::move(ga));
  });
}

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

// ---------------------------------------------------------------------------
// Var / Gradients / Accumulator

const Tensor& Var::value() const { return tape_of(*this).value(*this); }
bool Var::requires_grad() const { return tape_of(*this).requires_grad(*this); }

const Tensor& Gradients::operator[](Var leaf) const {
  auto it = grads_.find(leaf.id);
  if (it == grads_.end()) throw Error("no gradient slot for node " + std::to_string(leaf.id));
  return it->second;
}

bool Accumulator::wants(Var input) const { return relevant_[input.id] != 0; }

void Accumulator::add(Var input, Tensor grad) {
  if (!wants(input)) return;
  if (!grad.all_finite()) {
    throw NumericError(std::string(op_) + " backward produced a non-finite gradient");
  }
  Tensor& slot = grads_[input.id];
  if (slot.empty() && slot.rank() == 0) {
    slot = std::move(grad);
  } else {
    slot.accumulate(grad);
  }
}

// ---------------------------------------------------------------------------
// Tape

void Tape::check_owner(Var v) const {
  if (v.tape != this || v.id >= nodes_.size()) throw Error("variable does not belong to this tape");
}

Var Tape::leaf(Tensor value) {
  if (!value.all_finite()) throw NumericError("leaf holds a non-finite value");
  Node node;
  node.requires_grad = value.requires_grad();
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(op, std::move(value), std::vector<Var>(inputs), std::move(backward));
}

Var Tape::record(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  if (!value.all_finite()) throw NumericError(std::string(op) + " produced a non-finite value");
  Node node;
  node.op = op;
  node.value = std::move(value);
  node.value.set_requires_grad(false);
  node.inputs.reserve(inputs.size());
  for (Var in : inputs) {
    check_owner(in);
    node.inputs.push_back(in.id);
    node.requires_grad = node.requires_grad || nodes_[in.id].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Gradients Tape::backward(Var output) { return backward(output, Tensor::scalar(1.0)); }

Gradients Tape::backward(Var output, const Tensor& seed) {
  if (consumed_) throw StaleTapeError("tape has already been differentiated");
  check_owner(output);
  if (seed.shape() != value(output).shape()) {
    throw ShapeError("backward: seed shape " + seed.shape_string() + " does not match output " +
                     value(output).shape_string());
  }
  consumed_ = true;
  return sweep(output, seed, {});
}

std::vector<Gradients> Tape::backward(std::span<const Objective> objectives) {
  if (consumed_) throw StaleTapeError("tape has already been differentiated");
  for (const Objective& obj : objectives) {
    check_owner(obj.output);
    if (value(obj.output).size() != 1) throw ShapeError("backward: objective must be a scalar");
    for (Var w : obj.wrt) check_owner(w);
  }
  consumed_ = true;
  std::vector<Gradients> out;
  out.reserve(objectives.size());
  for (const Objective& obj : objectives) {
    out.push_back(sweep(obj.output, Tensor(value(obj.output).shape(), 1.0), obj.wrt));
  }
  return out;
}

Gradients Tape::sweep(Var output, const Tensor& seed, std::span<const Var> wrt) {
  const std::size_t n = output.id + 1;

  // relevant[i]: node i lies on a path from a selected leaf.
  std::vector<char> relevant(nodes_.size(), 0);
  if (wrt.empty()) {
    for (std::size_t i = 0; i < n; ++i) relevant[i] = nodes_[i].requires_grad ? 1 : 0;
  } else {
    for (Var w : wrt) relevant[w.id] = nodes_[w.id].requires_grad ? 1 : 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (relevant[i]) continue;
      for (std::size_t in : nodes_[i].inputs) {
        if (relevant[in]) {
          relevant[i] = 1;
          break;
        }
      }
    }
  }

  std::vector<Tensor> grads(nodes_.size());
  grads[output.id] = seed;
  for (std::size_t i = n; i-- > 0;) {
    Node& node = nodes_[i];
    if (!relevant[i] || grads[i].rank() == 0) continue;
    if (node.inputs.empty()) continue;  // leaf: keep the gradient
    if (node.backward) {
      Accumulator acc(*this, grads, relevant, node.op);
      node.backward(grads[i], acc);
    }
    grads[i] = Tensor();
  }

  Gradients result;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!nodes_[i].inputs.empty()) continue;
    if (grads[i].rank() != 0) {
      result.grads_.emplace(i, std::move(grads[i]));
    } else {
      result.grads_.emplace(i, Tensor(nodes_[i].value.shape()));
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.cols() != y.rows()) shape_fail("matmul", x, y);
  Tensor out = Tensor::matrix(x.rows(), y.cols());
  view(out).noalias() = view(x) * view(y);
  return tape.record("matmul", std::move(out), {a, b}, [a, b](const Tensor& g, Accumulator& acc) {
    const Tensor& xv = a.value();
    const Tensor& yv = b.value();
    if (acc.wants(a)) {
      Tensor ga = Tensor::matrix(xv.rows(), xv.cols());
      view(ga).noalias() = view(g) * view(yv).transpose();
      acc.add(a, std::move(ga));
    }
    if (acc.wants(b)) {
      Tensor gb = Tensor::matrix(yv.rows(), yv.cols());
      view(gb).noalias() = view(xv).transpose() * view(g);
      acc.add(b, std::move(gb));
    }
  });
}

Var transpose(Var a) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  Tensor out = Tensor::matrix(x.cols(), x.rows());
  view(out) = view(x).transpose();
  return tape.record("transpose", std::move(out), {a}, [a](const Tensor& g, Accumulator& acc) {
    Tensor ga = Tensor::matrix(g.cols(), g.rows());
    view(ga) = view(g).transpose();
    acc.add(a, std::move(ga));
  });
}

// ---------------------------------------------------------------------------
// Elementwise binary

Var add(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const Broadcast kind = broadcast_kind("add", x, y);
  Tensor out = x;
  out.set_requires_grad(false);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) += bvalue(y, kind, r, c);
  return tape.record("add", std::move(out), {a, b}, [a, b, kind](const Tensor& g, Accumulator& acc) {
    acc.add(a, g);
    if (acc.wants(b)) acc.add(b, reduce_to(g, kind));
  });
}

Var sub(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const Broadcast kind = broadcast_kind("sub", x, y);
  Tensor out = x;
  out.set_requires_grad(false);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) -= bvalue(y, kind, r, c);
  return tape.record("sub", std::move(out), {a, b}, [a, b, kind](const Tensor& g, Accumulator& acc) {
    acc.add(a, g);
    if (acc.wants(b)) {
      Tensor gb = reduce_to(g, kind);
      for (double& v : gb.data()) v = -v;
      acc.add(b, std::move(gb));
    }
  });
}

Var mul(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const Broadcast kind = broadcast_kind("mul", x, y);
  Tensor out = Tensor::matrix(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = x(r, c) * bvalue(y, kind, r, c);
  return tape.record("mul", std::move(out), {a, b}, [a, b, kind](const Tensor& g, Accumulator& acc) {
    const Tensor& xv = a.value();
    const Tensor& yv = b.value();
    if (acc.wants(a)) {
      Tensor ga = Tensor::matrix(xv.rows(), xv.cols());
      for (std::size_t r = 0; r < xv.rows(); ++r)
        for (std::size_t c = 0; c < xv.cols(); ++c) ga(r, c) = g(r, c) * bvalue(yv, kind, r, c);
      acc.add(a, std::move(ga));
    }
    if (acc.wants(b)) {
      Tensor full = Tensor::matrix(xv.rows(), xv.cols());
      for (std::size_t i = 0; i < full.size(); ++i) full[i] = g[i] * xv[i];
      acc.add(b, reduce_to(full, kind));
    }
  });
}

Var scale(Var a, double s) {
  Tape& tape = tape_of(a);
  Tensor out = map_values(a.value(), [s](double v) { return v * s; });
  return tape.record("scale", std::move(out), {a}, [a, s](const Tensor& g, Accumulator& acc) {
    acc.add(a, map_values(g, [s](double v) { return v * s; }));
  });
}

Var add_scalar(Var a, double s) {
  Tape& tape = tape_of(a);
  Tensor out = map_values(a.value(), [s](double v) { return v + s; });
  return tape.record("add_scalar", std::move(out), {a}, [a](const Tensor& g, Accumulator& acc) { acc.add(a, g); });
}

// ---------------------------------------------------------------------------
// Elementwise unary

Var relu(Var a) {
  return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var gelu(Var a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt_2pi = 0.39894228040143267794;
  return unary(
      "gelu", a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [](double x) { return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x); });
}

Var abs(Var a) {
  return unary("abs", a, [](double x) { return std::fabs(x); }, [](double x) { return sign(x); });
}

Var square(Var a) {
  return unary("square", a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var sqrt(Var a) {
  return unary("sqrt", a, [](double x) { return std::sqrt(x); }, [](double x) { return 0.5 / std::sqrt(x); });
}

Var reciprocal(Var a) {
  return unary("reciprocal", a, [](double x) { return 1.0 / x; }, [](double x) { return -1.0 / (x * x); });
}

Var arccos_squared(Var a) {
  auto angle = [](double x) { return std::acos(std::clamp(x, -1.0, 1.0)); };
  return unary(
      "arccos_squared", a,
      [angle](double x) {
        const double t = angle(x);
        return t * t;
      },
      [angle](double x) {
        const double t = angle(x);
        if (t < 1e-6) return -2.0 * (1.0 + t * t / 6.0);
        return -2.0 * t / std::max(std::sin(t), 1e-6);
      });
}

// ---------------------------------------------------------------------------
// Row-wise normalizations

Var softmax(Var a) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out = Tensor::matrix(m, n);
  for (std::size_t r = 0; r < m; ++r) {
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n; ++c) peak = std::max(peak, x(r, c));
    double total = 0.0;
    for (std::size_t c = 0; c < n; ++c) total += (out(r, c) = std::exp(x(r, c) - peak));
    for (std::size_t c = 0; c < n; ++c) out(r, c) /= total;
  }
  // The node being recorded is the output the backward pass needs.
  const Var y{&tape, tape.size()};
  return tape.record("softmax", std::move(out), {a}, [a, y](const Tensor& g, Accumulator& acc) {
    const Tensor& s = y.value();
    Tensor ga = Tensor::matrix(s.rows(), s.cols());
    for (std::size_t r = 0; r < s.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < s.cols(); ++c) dot += g(r, c) * s(r, c);
      for (std::size_t c = 0; c < s.cols(); ++c) ga(r, c) = s(r, c) * (g(r, c) - dot);
    }
    acc.add(a, std::move(ga));
  });
}

Var layer_norm(Var a, double eps) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out = Tensor::matrix(m, n);
  std::vector<double> inv_std(m);
  for (std::size_t r = 0; r < m; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += x(r, c);
    mu /= double(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (x(r, c) - mu) * (x(r, c) - mu);
    var /= double(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) out(r, c) = (x(r, c) - mu) * inv_std[r];
  }
  const Var y{&tape, tape.size()};
  return tape.record("layer_norm", std::move(out), {a},
                     [a, y, inv_std = std::move(inv_std)](const Tensor& g, Accumulator& acc) {
                       const Tensor& normalized = y.value();
                       const std::size_t rows = g.rows(), cols = g.cols();
                       Tensor ga = Tensor::matrix(rows, cols);
                       for (std::size_t r = 0; r < rows; ++r) {
                         double g_mean = 0.0, gy_mean = 0.0;
                         for (std::size_t c = 0; c < cols; ++c) {
                           g_mean += g(r, c);
                           gy_mean += g(r, c) * normalized(r, c);
                         }
                         g_mean /= double(cols);
                         gy_mean /= double(cols);
                         for (std::size_t c = 0; c < cols; ++c) {
                           ga(r, c) = inv_std[r] * (g(r, c) - g_mean - normalized(r, c) * gy_mean);
                         }
                       }
                       acc.add(a, std::move(ga));
                     });
}

// ---------------------------------------------------------------------------
// Reductions

Var sum(Var a) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  require_matrix("sum", x);
  double total = 0.0;
  for (double v : x.data()) total += v;
  return tape.record("sum", Tensor::scalar(total), {a}, [a](const Tensor& g, Accumulator& acc) {
    acc.add(a, Tensor(a.value().shape(), g[0]));
  });
}

Var mean(Var a) {
  const double n = double(a.value().size());
  Tape& tape = tape_of(a);
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return tape.record("mean", Tensor::scalar(total / n), {a}, [a, n](const Tensor& g, Accumulator& acc) {
    acc.add(a, Tensor(a.value().shape(), g[0] / n));
  });
}

Var sum_rows(Var a) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  Tensor out = Tensor::matrix(1, x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out(0, c) += x(r, c);
  return tape.record("sum_rows", std::move(out), {a}, [a](const Tensor& g, Accumulator& acc) {
    const Tensor& xv = a.value();
    Tensor ga = Tensor::matrix(xv.rows(), xv.cols());
    for (std::size_t r = 0; r < xv.rows(); ++r)
      for (std::size_t c = 0; c < xv.cols(); ++c) ga(r, c) = g(0, c);
    acc.add(a, std::move(ga));
  });
}

Var mean_rows(Var a) { return scale(sum_rows(a), 1.0 / double(a.rows())); }

Var sum_cols(Var a) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  Tensor out = Tensor::matrix(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, 0) += x(r, c);
  return tape.record("sum_cols", std::move(out), {a}, [a](const Tensor& g, Accumulator& acc) {
    const Tensor& xv = a.value();
    Tensor ga = Tensor::matrix(xv.rows(), xv.cols());
    for (std::size_t r = 0; r < xv.rows(); ++r)
      for (std::size_t c = 0; c < xv.cols(); ++c) ga(r, c) = g(r, 0);
    acc.add(a, std::move(ga));
  });
}

// ---------------------------------------------------------------------------
// Structural

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  Tape& tape = tape_of(parts[0]);
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  for (Var p : parts) {
    tape_of(parts[0], p);
    if (p.cols() != n) shape_fail("concat_rows", parts[0].value(), p.value());
    m += p.rows();
  }
  Tensor out = Tensor::matrix(m, n);
  std::size_t offset = 0;
  for (Var p : parts) {
    const Tensor& v = p.value();
    std::copy(v.data().begin(), v.data().end(), out.data().begin() + std::ptrdiff_t(offset * n));
    offset += v.rows();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape.record("concat_rows", std::move(out), inputs, [inputs](const Tensor& g, Accumulator& acc) {
    const std::size_t cols = g.cols();
    std::size_t row = 0;
    for (Var p : inputs) {
      const std::size_t rows = p.rows();
      if (acc.wants(p)) {
        Tensor gp = Tensor::matrix(rows, cols);
        std::copy_n(g.raw() + row * cols, rows * cols, gp.raw());
        acc.add(p, std::move(gp));
      }
      row += rows;
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  Tape& tape = tape_of(parts[0]);
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  for (Var p : parts) {
    tape_of(parts[0], p);
    if (p.rows() != m) shape_fail("concat_cols", parts[0].value(), p.value());
    n += p.cols();
  }
  Tensor out = Tensor::matrix(m, n);
  std::size_t offset = 0;
  for (Var p : parts) {
    const Tensor& v = p.value();
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < v.cols(); ++c) out(r, offset + c) = v(r, c);
    offset += v.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape.record("concat_cols", std::move(out), inputs, [inputs](const Tensor& g, Accumulator& acc) {
    std::size_t col = 0;
    for (Var p : inputs) {
      const std::size_t rows = p.rows(), cols = p.cols();
      if (acc.wants(p)) {
        Tensor gp = Tensor::matrix(rows, cols);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) gp(r, c) = g(r, col + c);
        acc.add(p, std::move(gp));
      }
      col += cols;
    }
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  if (begin >= end || end > x.rows()) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") outside " + x.shape_string());
  }
  const std::size_t n = x.cols();
  Tensor out = Tensor::matrix(end - begin, n);
  std::copy_n(x.raw() + begin * n, out.size(), out.raw());
  return tape.record("slice_rows", std::move(out), {a}, [a, begin](const Tensor& g, Accumulator& acc) {
    const Tensor& xv = a.value();
    Tensor ga(xv.shape());
    std::copy_n(g.raw(), g.size(), ga.raw() + begin * xv.cols());
    acc.add(a, std::move(ga));
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  if (begin >= end || end > x.cols()) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") outside " + x.shape_string());
  }
  Tensor out = Tensor::matrix(x.rows(), end - begin);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = begin; c < end; ++c) out(r, c - begin) = x(r, c);
  return tape.record("slice_cols", std::move(out), {a}, [a, begin](const Tensor& g, Accumulator& acc) {
    const Tensor& xv = a.value();
    Tensor ga(xv.shape());
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) ga(r, begin + c) = g(r, c);
    acc.add(a, std::move(ga));
  });
}

Var reshape(Var a, std::size_t rows, std::size_t cols) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  if (rows * cols != x.size()) {
    throw ShapeError("reshape: cannot view " + x.shape_string() + " as [" + std::to_string(rows) + "x" +
                     std::to_string(cols) + "]");
  }
  Tensor out({rows, cols}, std::vector<double>(x.data().begin(), x.data().end()));
  return tape.record("reshape", std::move(out), {a}, [a](const Tensor& g, Accumulator& acc) {
    acc.add(a, Tensor(a.value().shape(), std::vector<double>(g.data().begin(), g.data().end())));
  });
}

// ---------------------------------------------------------------------------
// Attention

namespace {

using Strided = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStrided = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

struct AttentionShape {
  std::size_t tq = 0, tk = 0, d = 0, dh = 0;
};

AttentionShape attention_shape(const Tensor& q, const Tensor& k, const Tensor* v, const AttentionLayout& layout) {
  require_matrix("attention", q);
  require_matrix("attention", k);
  if (layout.heads == 0 || layout.groups == 0) throw ShapeError("attention: heads and groups must be positive");
  if (q.cols() != k.cols()) shape_fail("attention", q, k);
  if (v != nullptr && (v->rows() != k.rows() || v->cols() != k.cols())) shape_fail("attention", k, *v);
  if (q.cols() % layout.heads != 0) {
    throw ShapeError("attention: width " + std::to_string(q.cols()) + " is not divisible by " +
                     std::to_string(layout.heads) + " heads");
  }
  if (q.rows() % layout.groups != 0 || k.rows() % layout.groups != 0 || k.rows() == 0) {
    throw ShapeError("attention: rows of " + q.shape_string() + " and " + k.shape_string() +
                     " do not split into " + std::to_string(layout.groups) + " sequences");
  }
  return {q.rows() / layout.groups, k.rows() / layout.groups, q.cols(), q.cols() / layout.heads};
}

ConstStrided block(const Tensor& t, const AttentionShape& s, const AttentionLayout& layout, std::size_t g,
                   std::size_t h) {
  return {t.raw() + g * s.d + h * s.dh, Eigen::Index(t.rows() / layout.groups), Eigen::Index(s.dh),
          Eigen::OuterStride<>(Eigen::Index(layout.groups * s.d))};
}

Strided block(Tensor& t, const AttentionShape& s, const AttentionLayout& layout, std::size_t g, std::size_t h) {
  return {t.raw() + g * s.d + h * s.dh, Eigen::Index(t.rows() / layout.groups), Eigen::Index(s.dh),
          Eigen::OuterStride<>(Eigen::Index(layout.groups * s.d))};
}

RowMat probabilities(const Tensor& q, const Tensor& k, const AttentionShape& s, const AttentionLayout& layout,
                     std::size_t g, std::size_t h) {
  const double scale = 1.0 / std::sqrt(double(s.dh));
  RowMat p = (block(q, s, layout, g, h) * block(k, s, layout, g, h).transpose()) * scale;
  for (std::size_t i = 0; i < s.tq; ++i) {
    const std::size_t visible = layout.causal ? std::min(s.tk, i + layout.query_offset + 1) : s.tk;
    auto row = p.row(Eigen::Index(i));
    const double peak = row.head(Eigen::Index(visible)).maxCoeff();
    double total = 0.0;
    for (std::size_t j = 0; j < visible; ++j) total += (row(Eigen::Index(j)) = std::exp(row(Eigen::Index(j)) - peak));
    row.head(Eigen::Index(visible)) /= total;
    row.tail(Eigen::Index(s.tk - visible)).setZero();
  }
  return p;
}

}  // namespace

std::vector<Tensor> attention_weights(const Tensor& q, const Tensor& k, const AttentionLayout& layout) {
  const AttentionShape s = attention_shape(q, k, nullptr, layout);
  std::vector<Tensor> out;
  for (std::size_t g = 0; g < layout.groups; ++g) {
    for (std::size_t h = 0; h < layout.heads; ++h) {
      Tensor p = Tensor::matrix(s.tq, s.tk);
      view(p) = probabilities(q, k, s, layout, g, h);
      out.push_back(std::move(p));
    }
  }
  return out;
}

Var attention(Var q, Var k, Var v, const AttentionLayout& layout) {
  Tape& tape = tape_of(q, k);
  tape_of(k, v);
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  const AttentionShape s = attention_shape(qv, kv, &vv, layout);
  Tensor out = Tensor::matrix(qv.rows(), s.d);
  std::vector<RowMat> probs;
  probs.reserve(layout.groups * layout.heads);
  for (std::size_t g = 0; g < layout.groups; ++g) {
    for (std::size_t h = 0; h < layout.heads; ++h) {
      probs.push_back(probabilities(qv, kv, s, layout, g, h));
      block(out, s, layout, g, h).noalias() = probs.back() * block(vv, s, layout, g, h);
    }
  }
  return tape.record(
      "attention", std::move(out), {q, k, v},
      [q, k, v, s, layout, probs = std::move(probs)](const Tensor& grad, Accumulator& acc) {
        const Tensor& qv = q.value();
        const Tensor& kv = k.value();
        const Tensor& vv = v.value();
        const double scale = 1.0 / std::sqrt(double(s.dh));
        Tensor gq = Tensor::matrix(qv.rows(), s.d);
        Tensor gk = Tensor::matrix(kv.rows(), s.d);
        Tensor gv = Tensor::matrix(vv.rows(), s.d);
        for (std::size_t g = 0; g < layout.groups; ++g) {
          for (std::size_t h = 0; h < layout.heads; ++h) {
            const RowMat& p = probs[g * layout.heads + h];
            const ConstStrided go = block(grad, s, layout, g, h);
            block(gv, s, layout, g, h).noalias() = p.transpose() * go;
            const RowMat dp = go * block(vv, s, layout, g, h).transpose();
            RowMat ds = p.cwiseProduct(dp);
            const Eigen::VectorXd row_dot = ds.rowwise().sum();
            ds -= p.cwiseProduct(row_dot.replicate(1, p.cols()));
            ds *= scale;
            block(gq, s, layout, g, h).noalias() = ds * block(kv, s, layout, g, h);
            block(gk, s, layout, g, h).noalias() = ds.transpose() * block(qv, s, layout, g, h);
          }
        }
        if (acc.wants(q)) acc.add(q, std::move(gq));
        if (acc.wants(k)) acc.add(k, std::move(gk));
        if (acc.wants(v)) acc.add(v, std::move(gv));
      });
}

}  // namespace duet::ad
