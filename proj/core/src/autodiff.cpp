#include "dmvi/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace dmvi::ad {

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor{}, {}, nullptr, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor{}, {}, nullptr, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward) {
  bool needs = false;
  for (auto p : parents) {
    if (p >= nodes_.size()) throw ContractError("tape parent index out of range");
    needs = needs || nodes_[p].requires_grad;
  }
  if (!needs) backward = nullptr;
  nodes_.push_back(Node{std::move(value), Tensor{}, std::move(parents), std::move(backward), needs});
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_accumulator(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

const Tensor& Tape::grad(Var v) {
  if (v.tape_ != this) throw ContractError("grad(): variable belongs to another tape");
  return grad_accumulator(v.id_);
}

void Tape::backward(Var loss) {
  if (loss.tape_ != this) throw ContractError("backward(): loss belongs to another tape");
  if (loss.value().size() != 1) {
    throw ContractError("backward(): loss must be scalar, got shape " + shape_to_string(loss.value().shape()));
  }
  for (auto& n : nodes_) n.grad = Tensor{};
  grad_accumulator(loss.id_).fill(1.0);
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, i);
  }
}

namespace {

void accumulate(Tensor& dst, const Tensor& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

struct Broadcast {
  std::size_t rows, cols;
  std::size_t a_rows, a_cols, b_rows, b_cols;
  Shape out_shape;
  bool same;

  std::size_t a_index(std::size_t r, std::size_t c) const {
    return (a_rows == 1 ? 0 : r) * a_cols + (a_cols == 1 ? 0 : c);
  }
  std::size_t b_index(std::size_t r, std::size_t c) const {
    return (b_rows == 1 ? 0 : r) * b_cols + (b_cols == 1 ? 0 : c);
  }
};

Broadcast broadcast(const Tensor& a, const Tensor& b, const char* op) {
  Broadcast bc{};
  bc.same = a.shape() == b.shape();
  bc.a_rows = a.rows();
  bc.a_cols = a.cols();
  bc.b_rows = b.rows();
  bc.b_cols = b.cols();
  if (a.size() == 1) bc.a_rows = bc.a_cols = 1;
  if (b.size() == 1) bc.b_rows = bc.b_cols = 1;
  auto fit = [&](std::size_t x, std::size_t y, std::size_t& out) {
    if (x == y || y == 1) {
      out = x;
    } else if (x == 1) {
      out = y;
    } else {
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_to_string(a.shape()) + " with " +
                           shape_to_string(b.shape()));
    }
  };
  fit(bc.a_rows, bc.b_rows, bc.rows);
  fit(bc.a_cols, bc.b_cols, bc.cols);
  const std::size_t n = bc.rows * bc.cols;
  if (bc.same || a.size() == n) {
    bc.out_shape = a.shape();
  } else if (b.size() == n) {
    bc.out_shape = b.shape();
  } else {
    bc.out_shape = {bc.rows, bc.cols};
  }
  return bc;
}

/// Sum a broadcast-shaped gradient back onto an operand's shape.
void reduce_into(Tensor& dst, const Tensor& g, const Broadcast& bc, bool operand_a) {
  if (dst.size() == g.size()) {
    accumulate(dst, g);
    return;
  }
  auto d = dst.data();
  for (std::size_t r = 0; r < bc.rows; ++r) {
    for (std::size_t c = 0; c < bc.cols; ++c) {
      d[operand_a ? bc.a_index(r, c) : bc.b_index(r, c)] += g[r * bc.cols + c];
    }
  }
}

template <class Fwd, class Deriv>
Var unary(Var a, Fwd fwd, Deriv deriv) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
  const std::size_t pa = a.id();
  return a.tape().record(std::move(out), {pa}, [pa, deriv](Tape& t, std::size_t self) {
    if (!t.requires_grad(pa)) return;
    const Tensor& g = t.grad_accumulator(self);
    const Tensor& x = t.value(pa);
    const Tensor& y = t.value(self);
    Tensor& dx = t.grad_accumulator(pa);
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] += g[i] * deriv(x[i], y[i]);
  });
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

Var reduce_to_scalar(Var a, double factor, bool absolute) {
  const Tensor& x = a.value();
  double s = 0.0;
  for (double v : x.data()) s += absolute ? std::abs(v) : v;
  const std::size_t pa = a.id();
  return a.tape().record(Tensor::scalar(s * factor), {pa}, [pa, factor, absolute](Tape& t, std::size_t self) {
    if (!t.requires_grad(pa)) return;
    const double g = t.grad_accumulator(self)[0] * factor;
    const Tensor& x = t.value(pa);
    Tensor& dx = t.grad_accumulator(pa);
    for (std::size_t i = 0; i < x.size(); ++i) {
      dx[i] += absolute ? g * (x[i] > 0 ? 1.0 : (x[i] < 0 ? -1.0 : 0.0)) : g;
    }
  });
}

Var reduce_rows(Var a, bool absolute) {
  const Tensor& x = a.value();
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out = Tensor::matrix(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += absolute ? std::abs(x[i * c + j]) : x[i * c + j];
    out[i] = s;
  }
  const std::size_t pa = a.id();
  return a.tape().record(std::move(out), {pa}, [pa, absolute](Tape& t, std::size_t self) {
    if (!t.requires_grad(pa)) return;
    const Tensor& g = t.grad_accumulator(self);
    const Tensor& x = t.value(pa);
    Tensor& dx = t.grad_accumulator(pa);
    const std::size_t r = x.rows(), c = x.cols();
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        const double v = x[i * c + j];
        dx[i * c + j] += absolute ? g[i] * (v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0)) : g[i];
      }
    }
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  Tensor out = dmvi::matmul(a.value(), b.value());
  const std::size_t pa = a.id(), pb = b.id();
  return a.tape().record(std::move(out), {pa, pb}, [pa, pb](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_accumulator(self);
    if (t.requires_grad(pa)) accumulate(t.grad_accumulator(pa), matmul_nt(g, t.value(pb)));
    if (t.requires_grad(pb)) accumulate(t.grad_accumulator(pb), matmul_tn(t.value(pa), g));
  });
}

namespace {

template <class Op>
Var binary(Var a, Var b, const char* name, Op op, bool multiply, double b_sign = 1.0) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Broadcast bc = broadcast(x, y, name);
  Tensor out(bc.out_shape);
  if (bc.same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = op(x[i], y[i]);
  } else {
    for (std::size_t r = 0; r < bc.rows; ++r) {
      for (std::size_t c = 0; c < bc.cols; ++c) {
        out[r * bc.cols + c] = op(x[bc.a_index(r, c)], y[bc.b_index(r, c)]);
      }
    }
  }
  const std::size_t pa = a.id(), pb = b.id();
  return a.tape().record(std::move(out), {pa, pb}, [pa, pb, bc, multiply, b_sign](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_accumulator(self);
    const std::size_t n = bc.rows * bc.cols;
    if (!multiply) {
      if (t.requires_grad(pa)) reduce_into(t.grad_accumulator(pa), g, bc, true);
      if (t.requires_grad(pb)) {
        if (b_sign > 0) {
          reduce_into(t.grad_accumulator(pb), g, bc, false);
        } else {
          Tensor ng = g;
          for (auto& v : ng.data()) v = -v;
          reduce_into(t.grad_accumulator(pb), ng, bc, false);
        }
      }
      return;
    }
    const Tensor& x = t.value(pa);
    const Tensor& y = t.value(pb);
    if (t.requires_grad(pa)) {
      Tensor ga(g.shape());
      for (std::size_t i = 0; i < n; ++i) {
        ga[i] = g[i] * (bc.same ? y[i] : y[bc.b_index(i / bc.cols, i % bc.cols)]);
      }
      reduce_into(t.grad_accumulator(pa), ga, bc, true);
    }
    if (t.requires_grad(pb)) {
      Tensor gb(g.shape());
      for (std::size_t i = 0; i < n; ++i) {
        gb[i] = g[i] * (bc.same ? x[i] : x[bc.a_index(i / bc.cols, i % bc.cols)]);
      }
      reduce_into(t.grad_accumulator(pb), gb, bc, false);
    }
  });
}

}  // namespace

Var add(Var a, Var b) {
  return binary(a, b, "add", [](double x, double y) { return x + y; }, false);
}

Var sub(Var a, Var b) {
  return binary(a, b, "sub", [](double x, double y) { return x - y; }, false, -1.0);
}

Var mul(Var a, Var b) {
  return binary(a, b, "mul", [](double x, double y) { return x * y; }, true);
}

Var scale(Var a, double factor) {
  return unary(a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double offset) {
  return unary(a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Var neg(Var a) { return scale(a, -1.0); }

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sigmoid(Var a) {
  return unary(a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var softplus(Var a) {
  return unary(a, stable_softplus, [](double x, double) { return stable_sigmoid(x); });
}

Var leaky_relu(Var a, double slope) {
  return unary(
      a, [slope](double x) { return x > 0 ? x : slope * x; }, [slope](double x, double) { return x > 0 ? 1.0 : slope; });
}

Var relu(Var a) { return leaky_relu(a, 0.0); }

Var clamp(Var a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var abs(Var a) {
  return unary(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Var sum(Var a) { return reduce_to_scalar(a, 1.0, false); }

Var mean(Var a) { return reduce_to_scalar(a, 1.0 / static_cast<double>(a.value().size()), false); }

Var row_sum(Var a) { return reduce_rows(a, false); }

Var l1_norm(Var a) { return reduce_to_scalar(a, 1.0, true); }

Var row_l1(Var a) { return reduce_rows(a, true); }

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const std::size_t pa = a.id();
  return a.tape().record(std::move(out), {pa}, [pa](Tape& t, std::size_t self) {
    if (t.requires_grad(pa)) accumulate(t.grad_accumulator(pa), t.grad_accumulator(self));
  });
}

Var concat_cols(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rows() != y.rows()) {
    throw DimensionError("concat_cols: row counts differ for " + shape_to_string(x.shape()) + " and " +
                         shape_to_string(y.shape()));
  }
  const std::size_t r = x.rows(), ca = x.cols(), cb = y.cols();
  Tensor out = Tensor::matrix(r, ca + cb);
  for (std::size_t i = 0; i < r; ++i) {
    std::copy_n(x.data().begin() + i * ca, ca, out.data().begin() + i * (ca + cb));
    std::copy_n(y.data().begin() + i * cb, cb, out.data().begin() + i * (ca + cb) + ca);
  }
  const std::size_t pa = a.id(), pb = b.id();
  return a.tape().record(std::move(out), {pa, pb}, [pa, pb, r, ca, cb](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_accumulator(self);
    if (t.requires_grad(pa)) {
      Tensor& d = t.grad_accumulator(pa);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < ca; ++j) d[i * ca + j] += g[i * (ca + cb) + j];
    }
    if (t.requires_grad(pb)) {
      Tensor& d = t.grad_accumulator(pb);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < cb; ++j) d[i * cb + j] += g[i * (ca + cb) + ca + j];
    }
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  const Tensor& x = a.value();
  const std::size_t r = x.rows(), c = x.cols();
  if (count == 0 || begin + count > c) {
    throw DimensionError("slice_cols: columns [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") out of range for " + shape_to_string(x.shape()));
  }
  Tensor out = Tensor::matrix(r, count);
  for (std::size_t i = 0; i < r; ++i) std::copy_n(x.data().begin() + i * c + begin, count, out.data().begin() + i * count);
  const std::size_t pa = a.id();
  return a.tape().record(std::move(out), {pa}, [pa, r, c, begin, count](Tape& t, std::size_t self) {
    if (!t.requires_grad(pa)) return;
    const Tensor& g = t.grad_accumulator(self);
    Tensor& d = t.grad_accumulator(pa);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < count; ++j) d[i * c + begin + j] += g[i * count + j];
  });
}

Var constant_like(Var like, Tensor value) { return like.tape().constant(std::move(value)); }

}  // namespace dmvi::ad
