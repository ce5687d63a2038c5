#include "visor/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace visor {

namespace kernels {

Scalar dot(const Scalar* a, const Scalar* b, std::int64_t n) {
  // Eight independent accumulators, combined in a fixed order; the remainder
  // is summed sequentially. Deterministic for a given n.
  Scalar a0 = 0, a1 = 0, a2 = 0, a3 = 0, a4 = 0, a5 = 0, a6 = 0, a7 = 0;
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    a0 += a[i] * b[i];
    a1 += a[i + 1] * b[i + 1];
    a2 += a[i + 2] * b[i + 2];
    a3 += a[i + 3] * b[i + 3];
    a4 += a[i + 4] * b[i + 4];
    a5 += a[i + 5] * b[i + 5];
    a6 += a[i + 6] * b[i + 6];
    a7 += a[i + 7] * b[i + 7];
  }
  Scalar rest = 0;
  for (; i < n; ++i) rest += a[i] * b[i];
  return (((a0 + a1) + (a2 + a3)) + ((a4 + a5) + (a6 + a7))) + rest;
}

void matmul_nt(const Scalar* a, const Scalar* bt, Scalar* c, std::int64_t m, std::int64_t n,
               std::int64_t k) {
  for (std::int64_t i = 0; i < m; ++i) {
    const Scalar* ai = a + i * k;
    Scalar* ci = c + i * n;
    for (std::int64_t j = 0; j < n; ++j) {
      ci[j] = dot(ai, bt + j * k, k);
    }
  }
}

}  // namespace kernels

namespace {

std::vector<Scalar> transposed(const Scalar* a, std::int64_t rows, std::int64_t cols) {
  std::vector<Scalar> t(static_cast<std::size_t>(rows * cols));
  for (std::int64_t i = 0; i < rows; ++i) {
    for (std::int64_t j = 0; j < cols; ++j) {
      t[static_cast<std::size_t>(j * rows + i)] = a[i * cols + j];
    }
  }
  return t;
}

enum class Broadcast { kSame, kScalar, kSuffix };

Broadcast classify_broadcast(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return Broadcast::kSame;
  if (shape_numel(b) == 1) return Broadcast::kScalar;
  if (b.size() < a.size() &&
      std::equal(b.begin(), b.end(), a.end() - static_cast<std::ptrdiff_t>(b.size()))) {
    return Broadcast::kSuffix;
  }
  throw Error(std::string("shape mismatch in '") + op + "': " + shape_str(a) + " vs " +
              shape_str(b));
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw Error(std::string("shape mismatch in '") + op + "': " + shape_str(a.shape()) + " vs " +
                shape_str(b.shape()));
  }
}

// Row-major strides for a shape.
std::vector<std::int64_t> strides_of(const Shape& s) {
  std::vector<std::int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) {
    st[static_cast<std::size_t>(i)] = st[static_cast<std::size_t>(i + 1)] * s[static_cast<std::size_t>(i + 1)];
  }
  return st;
}

// Walks the rectangular region [start, start+extent) of src_shape in row-major
// order, invoking fn(flat_src_index) once per element.
template <typename Fn>
void walk_region(const Shape& src_shape, const std::vector<int>& start,
                 const std::vector<int>& extent, Fn&& fn) {
  const auto strides = strides_of(src_shape);
  const int rank = static_cast<int>(src_shape.size());
  std::vector<int> idx(static_cast<std::size_t>(rank), 0);
  std::int64_t base = 0;
  for (int d = 0; d < rank; ++d) base += static_cast<std::int64_t>(start[static_cast<std::size_t>(d)]) * strides[static_cast<std::size_t>(d)];
  const std::int64_t total = shape_numel(Shape(extent.begin(), extent.end()));
  std::int64_t offset = base;
  for (std::int64_t count = 0; count < total; ++count) {
    fn(offset);
    // odometer increment over extent, updating the flat offset
    for (int d = rank - 1; d >= 0; --d) {
      auto du = static_cast<std::size_t>(d);
      ++idx[du];
      offset += strides[du];
      if (idx[du] < extent[du]) break;
      offset -= static_cast<std::int64_t>(extent[du]) * strides[du];
      idx[du] = 0;
    }
  }
}

}  // namespace

void accumulate_grad(Tensor& slot, const Shape& shape, const Tensor& delta) {
  if (slot.empty()) slot = Tensor(shape);
  for (std::int64_t i = 0; i < slot.size(); ++i) slot.at(i) += delta.at(i);
}

// ---------------------------------------------------------------------------
// Gradients

Gradients::Gradients(std::vector<Tensor> grads, std::vector<Shape> shapes)
    : grads_(std::move(grads)), shapes_(std::move(shapes)) {
  zeros_.resize(grads_.size());
}

const Tensor& Gradients::grad(Var v) const {
  auto id = static_cast<std::size_t>(v.id);
  if (v.id < 0 || id >= grads_.size()) throw Error("grad(): invalid node id");
  if (!grads_[id].empty()) return grads_[id];
  if (zeros_[id].empty()) zeros_[id] = Tensor(shapes_[id]);
  return zeros_[id];
}

bool Gradients::nonzero(Var v) const {
  auto id = static_cast<std::size_t>(v.id);
  if (v.id < 0 || id >= grads_.size()) throw Error("nonzero(): invalid node id");
  return !grads_[id].empty();
}

// ---------------------------------------------------------------------------
// Tape basics

const Tape::Node& Tape::node(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw Error("invalid tape node id " + std::to_string(v.id));
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

Var Tape::push(Node n) {
  ensure_finite(n.value, n.op);
  if (!grad_enabled_) n.backward = nullptr;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::input(Tensor value, bool requires_grad) {
  if (value.empty()) throw Error("tape input must be non-empty");
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.op = "input";
  return push(std::move(n));
}

Var Tape::unary(const char* op, Var a, Tensor value,
                std::function<void(const Tape&, const Tensor&, std::vector<Tensor>&)> bw) {
  Node n;
  n.value = std::move(value);
  n.inputs = {a.id};
  n.requires_grad = requires_grad(a);
  n.op = op;
  if (n.requires_grad) n.backward = std::move(bw);
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// Elementwise binary ops

Var Tape::binary_ew(const char* op, Var a, Var b, Scalar b_sign) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  const Broadcast bc = classify_broadcast(op, av.shape(), bv.shape());
  const std::int64_t bn = bv.size();

  Tensor out(av.shape());
  const bool is_mul = b_sign == 0;  // b_sign 0 marks multiply, else add with sign
  for (std::int64_t i = 0; i < av.size(); ++i) {
    const Scalar bi = (bc == Broadcast::kSame)     ? bv.at(i)
                      : (bc == Broadcast::kScalar) ? bv.at(0)
                                                   : bv.at(i % bn);
    out.at(i) = is_mul ? av.at(i) * bi : av.at(i) + b_sign * bi;
  }

  Node n;
  n.value = std::move(out);
  n.inputs = {a.id, b.id};
  n.requires_grad = requires_grad(a) || requires_grad(b);
  n.op = op;
  if (n.requires_grad) {
    const int aid = a.id, bid = b.id;
    n.backward = [aid, bid, bc, bn, is_mul, b_sign](const Tape& t, const Tensor& g,
                                                    std::vector<Tensor>& grads) {
      const Tensor& av2 = t.value(Var{aid});
      const Tensor& bv2 = t.value(Var{bid});
      if (t.requires_grad(Var{aid})) {
        Tensor da(av2.shape());
        for (std::int64_t i = 0; i < da.size(); ++i) {
          const Scalar bi = (bc == Broadcast::kSame)     ? bv2.at(i)
                            : (bc == Broadcast::kScalar) ? bv2.at(0)
                                                         : bv2.at(i % bn);
          da.at(i) = is_mul ? g.at(i) * bi : g.at(i);
        }
        accumulate_grad(grads[static_cast<std::size_t>(aid)], av2.shape(), da);
      }
      if (t.requires_grad(Var{bid})) {
        Tensor db(bv2.shape());
        for (std::int64_t i = 0; i < g.size(); ++i) {
          const std::int64_t j = (bc == Broadcast::kSame) ? i : (bc == Broadcast::kScalar) ? 0 : i % bn;
          db.at(j) += is_mul ? g.at(i) * av2.at(i) : b_sign * g.at(i);
        }
        accumulate_grad(grads[static_cast<std::size_t>(bid)], bv2.shape(), db);
      }
    };
  }
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) { return binary_ew("add", a, b, 1.0); }
Var Tape::sub(Var a, Var b) { return binary_ew("sub", a, b, -1.0); }
Var Tape::mul(Var a, Var b) { return binary_ew("mul", a, b, 0.0); }

Var Tape::add_scalar(Var a, Scalar c) {
  const Tensor& av = value(a);
  Tensor out(av.shape());
  for (std::int64_t i = 0; i < av.size(); ++i) out.at(i) = av.at(i) + c;
  return unary("add_scalar", a, std::move(out),
               [aid = a.id](const Tape&, const Tensor& g, std::vector<Tensor>& grads) {
                 accumulate_grad(grads[static_cast<std::size_t>(aid)], g.shape(), g);
               });
}

Var Tape::mul_scalar(Var a, Scalar c) {
  const Tensor& av = value(a);
  Tensor out(av.shape());
  for (std::int64_t i = 0; i < av.size(); ++i) out.at(i) = av.at(i) * c;
  return unary("mul_scalar", a, std::move(out),
               [aid = a.id, c](const Tape&, const Tensor& g, std::vector<Tensor>& grads) {
                 Tensor da(g.shape());
                 for (std::int64_t i = 0; i < g.size(); ++i) da.at(i) = g.at(i) * c;
                 accumulate_grad(grads[static_cast<std::size_t>(aid)], g.shape(), da);
               });
}

// ---------------------------------------------------------------------------
// Matrix ops

Var Tape::matmul(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0]) {
    throw Error("shape mismatch in 'matmul': " + shape_str(av.shape()) + " x " +
                shape_str(bv.shape()));
  }
  const std::int64_t m = av.shape()[0], k = av.shape()[1], nn = bv.shape()[1];
  const auto bt = transposed(bv.data(), k, nn);  // [n,k]
  Tensor out({static_cast<int>(m), static_cast<int>(nn)});
  kernels::matmul_nt(av.data(), bt.data(), out.data(), m, nn, k);

  Node n;
  n.value = std::move(out);
  n.inputs = {a.id, b.id};
  n.requires_grad = requires_grad(a) || requires_grad(b);
  n.op = "matmul";
  if (n.requires_grad) {
    const int aid = a.id, bid = b.id;
    n.backward = [aid, bid, m, k, nn](const Tape& t, const Tensor& g, std::vector<Tensor>& grads) {
      const Tensor& av2 = t.value(Var{aid});
      const Tensor& bv2 = t.value(Var{bid});
      if (t.requires_grad(Var{aid})) {
        // da[i,t] = sum_j g[i,j] * b[t,j]
        Tensor da(av2.shape());
        kernels::matmul_nt(g.data(), bv2.data(), da.data(), m, k, nn);
        accumulate_grad(grads[static_cast<std::size_t>(aid)], av2.shape(), da);
      }
      if (t.requires_grad(Var{bid})) {
        // db[t,j] = sum_i a[i,t] * g[i,j]
        const auto at = transposed(av2.data(), m, k);   // [k,m]
        const auto gt = transposed(g.data(), m, nn);    // [n,m]
        Tensor db(bv2.shape());
        kernels::matmul_nt(at.data(), gt.data(), db.data(), k, nn, m);
        accumulate_grad(grads[static_cast<std::size_t>(bid)], bv2.shape(), db);
      }
    };
  }
  return push(std::move(n));
}

Var Tape::transpose(Var a) {
  const Tensor& av = value(a);
  if (av.rank() != 2) throw Error("transpose expects rank-2, got " + shape_str(av.shape()));
  const std::int64_t r = av.shape()[0], c = av.shape()[1];
  Tensor out({static_cast<int>(c), static_cast<int>(r)}, transposed(av.data(), r, c));
  return unary("transpose", a, std::move(out),
               [aid = a.id, r, c](const Tape&, const Tensor& g, std::vector<Tensor>& grads) {
                 Tensor da({static_cast<int>(r), static_cast<int>(c)},
                           transposed(g.data(), c, r));
                 accumulate_grad(grads[static_cast<std::size_t>(aid)], da.shape(), da);
               });
}

// ---------------------------------------------------------------------------
// Nonlinearities

namespace {
constexpr Scalar kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr Scalar kGeluA = 0.044715;
}  // namespace

Var Tape::gelu(Var a) {
  const Tensor& av = value(a);
  Tensor out(av.shape());
  for (std::int64_t i = 0; i < av.size(); ++i) {
    const Scalar x = av.at(i);
    out.at(i) = 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
  }
  return unary("gelu", a, std::move(out),
               [aid = a.id](const Tape& t, const Tensor& g, std::vector<Tensor>& grads) {
                 const Tensor& xv = t.value(Var{aid});
                 Tensor da(xv.shape());
                 for (std::int64_t i = 0; i < xv.size(); ++i) {
                   const Scalar x = xv.at(i);
                   const Scalar th = std::tanh(kGeluC * (x + kGeluA * x * x * x));
                   const Scalar du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
                   const Scalar d = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
                   da.at(i) = g.at(i) * d;
                 }
                 accumulate_grad(grads[static_cast<std::size_t>(aid)], xv.shape(), da);
               });
}

Var Tape::layer_norm(Var x, Var gain, Var bias, Scalar eps) {
  const Tensor& xv = value(x);
  const Tensor& gv = value(gain);
  const Tensor& bv = value(bias);
  if (xv.rank() < 1) throw Error("layer_norm expects rank >= 1");
  const std::int64_t d = xv.shape().back();
  if (gv.rank() != 1 || gv.shape()[0] != d || bv.rank() != 1 || bv.shape()[0] != d) {
    throw Error("shape mismatch in 'layer_norm': x " + shape_str(xv.shape()) + ", gain " +
                shape_str(gv.shape()) + ", bias " + shape_str(bv.shape()));
  }
  const std::int64_t rows = xv.size() / d;
  Tensor out(xv.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    const Scalar* xr = xv.data() + r * d;
    Scalar* yr = out.data() + r * d;
    Scalar mu = 0;
    for (std::int64_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<Scalar>(d);
    Scalar var = 0;
    for (std::int64_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<Scalar>(d);
    const Scalar sigma = std::sqrt(var + eps);
    for (std::int64_t j = 0; j < d; ++j) {
      yr[j] = ((xr[j] - mu) / sigma) * gv.at(j) + bv.at(j);
    }
  }

  Node n;
  n.value = std::move(out);
  n.inputs = {x.id, gain.id, bias.id};
  n.requires_grad = requires_grad(x) || requires_grad(gain) || requires_grad(bias);
  n.op = "layer_norm";
  if (n.requires_grad) {
    const int xid = x.id, gid = gain.id, bid = bias.id;
    n.backward = [xid, gid, bid, d, rows, eps](const Tape& t, const Tensor& g,
                                               std::vector<Tensor>& grads) {
      const Tensor& xv2 = t.value(Var{xid});
      const Tensor& gv2 = t.value(Var{gid});
      const bool need_x = t.requires_grad(Var{xid});
      const bool need_g = t.requires_grad(Var{gid});
      const bool need_b = t.requires_grad(Var{bid});
      Tensor dx = need_x ? Tensor(xv2.shape()) : Tensor();
      Tensor dg = need_g ? Tensor(gv2.shape()) : Tensor();
      Tensor db = need_b ? Tensor(gv2.shape()) : Tensor();
      std::vector<Scalar> xhat(static_cast<std::size_t>(d));
      for (std::int64_t r = 0; r < rows; ++r) {
        const Scalar* xr = xv2.data() + r * d;
        const Scalar* gr = g.data() + r * d;
        Scalar mu = 0;
        for (std::int64_t j = 0; j < d; ++j) mu += xr[j];
        mu /= static_cast<Scalar>(d);
        Scalar var = 0;
        for (std::int64_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<Scalar>(d);
        const Scalar sigma = std::sqrt(var + eps);
        for (std::int64_t j = 0; j < d; ++j) xhat[static_cast<std::size_t>(j)] = (xr[j] - mu) / sigma;
        if (need_g || need_b) {
          for (std::int64_t j = 0; j < d; ++j) {
            if (need_g) dg.at(j) += gr[j] * xhat[static_cast<std::size_t>(j)];
            if (need_b) db.at(j) += gr[j];
          }
        }
        if (need_x) {
          Scalar m1 = 0, m2 = 0;
          for (std::int64_t j = 0; j < d; ++j) {
            const Scalar u = gr[j] * gv2.at(j);
            m1 += u;
            m2 += u * xhat[static_cast<std::size_t>(j)];
          }
          m1 /= static_cast<Scalar>(d);
          m2 /= static_cast<Scalar>(d);
          for (std::int64_t j = 0; j < d; ++j) {
            const Scalar u = gr[j] * gv2.at(j);
            dx.at(r * d + j) = (u - m1 - xhat[static_cast<std::size_t>(j)] * m2) / sigma;
          }
        }
      }
      if (need_x) accumulate_grad(grads[static_cast<std::size_t>(xid)], xv2.shape(), dx);
      if (need_g) accumulate_grad(grads[static_cast<std::size_t>(gid)], gv2.shape(), dg);
      if (need_b) accumulate_grad(grads[static_cast<std::size_t>(bid)], gv2.shape(), db);
    };
  }
  return push(std::move(n));
}

namespace {

// Row-wise softmax into out; both [rows, d] flat.
void softmax_rows(const Scalar* x, Scalar* out, std::int64_t rows, std::int64_t d) {
  for (std::int64_t r = 0; r < rows; ++r) {
    const Scalar* xr = x + r * d;
    Scalar* yr = out + r * d;
    Scalar mx = xr[0];
    for (std::int64_t j = 1; j < d; ++j) mx = std::max(mx, xr[j]);
    Scalar s = 0;
    for (std::int64_t j = 0; j < d; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      s += yr[j];
    }
    for (std::int64_t j = 0; j < d; ++j) yr[j] /= s;
  }
}

}  // namespace

Var Tape::softmax(Var x) {
  const Tensor& xv = value(x);
  if (xv.rank() < 1) throw Error("softmax expects rank >= 1");
  const std::int64_t d = xv.shape().back();
  const std::int64_t rows = xv.size() / d;
  Tensor out(xv.shape());
  softmax_rows(xv.data(), out.data(), rows, d);

  Node n;
  n.value = std::move(out);
  n.inputs = {x.id};
  n.requires_grad = requires_grad(x);
  n.op = "softmax";
  if (n.requires_grad) {
    const int xid = x.id, self = static_cast<int>(nodes_.size());
    n.backward = [xid, self, d, rows](const Tape& t, const Tensor& g, std::vector<Tensor>& grads) {
      const Tensor& y = t.value(Var{self});
      Tensor dx(y.shape());
      for (std::int64_t r = 0; r < rows; ++r) {
        const Scalar* yr = y.data() + r * d;
        const Scalar* gr = g.data() + r * d;
        Scalar dotgy = 0;
        for (std::int64_t j = 0; j < d; ++j) dotgy += gr[j] * yr[j];
        for (std::int64_t j = 0; j < d; ++j) dx.at(r * d + j) = yr[j] * (gr[j] - dotgy);
      }
      accumulate_grad(grads[static_cast<std::size_t>(xid)], y.shape(), dx);
    };
  }
  return push(std::move(n));
}

Var Tape::log_softmax(Var x) {
  const Tensor& xv = value(x);
  if (xv.rank() < 1) throw Error("log_softmax expects rank >= 1");
  const std::int64_t d = xv.shape().back();
  const std::int64_t rows = xv.size() / d;
  Tensor out(xv.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    const Scalar* xr = xv.data() + r * d;
    Scalar* yr = out.data() + r * d;
    Scalar mx = xr[0];
    for (std::int64_t j = 1; j < d; ++j) mx = std::max(mx, xr[j]);
    Scalar s = 0;
    for (std::int64_t j = 0; j < d; ++j) s += std::exp(xr[j] - mx);
    const Scalar lse = mx + std::log(s);
    for (std::int64_t j = 0; j < d; ++j) yr[j] = xr[j] - lse;
  }

  Node n;
  n.value = std::move(out);
  n.inputs = {x.id};
  n.requires_grad = requires_grad(x);
  n.op = "log_softmax";
  if (n.requires_grad) {
    const int xid = x.id, self = static_cast<int>(nodes_.size());
    n.backward = [xid, self, d, rows](const Tape& t, const Tensor& g, std::vector<Tensor>& grads) {
      const Tensor& y = t.value(Var{self});
      Tensor dx(y.shape());
      for (std::int64_t r = 0; r < rows; ++r) {
        const Scalar* yr = y.data() + r * d;
        const Scalar* gr = g.data() + r * d;
        Scalar gs = 0;
        for (std::int64_t j = 0; j < d; ++j) gs += gr[j];
        for (std::int64_t j = 0; j < d; ++j) {
          dx.at(r * d + j) = gr[j] - std::exp(yr[j]) * gs;
        }
      }
      accumulate_grad(grads[static_cast<std::size_t>(xid)], y.shape(), dx);
    };
  }
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// Gather / data movement

Var Tape::embedding(Var table, std::vector<int> ids) {
  const Tensor& tv = value(table);
  if (tv.rank() != 2) throw Error("embedding table must be rank-2, got " + shape_str(tv.shape()));
  if (ids.empty()) throw Error("embedding: empty id list");
  const std::int64_t v = tv.shape()[0], d = tv.shape()[1];
  for (int id : ids) {
    if (id < 0 || id >= v) {
      throw Error("embedding: token id " + std::to_string(id) + " out of range for vocabulary " +
                  std::to_string(v));
    }
  }
  Tensor out({static_cast<int>(ids.size()), static_cast<int>(d)});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    std::memcpy(out.data() + static_cast<std::int64_t>(r) * d, tv.data() + static_cast<std::int64_t>(ids[r]) * d,
                static_cast<std::size_t>(d) * sizeof(Scalar));
  }
  return unary("embedding", table, std::move(out),
               [tid = table.id, ids = std::move(ids), d](const Tape& t, const Tensor& g,
                                                         std::vector<Tensor>& grads) {
                 const Tensor& tv2 = t.value(Var{tid});
                 Tensor dt(tv2.shape());
                 for (std::size_t r = 0; r < ids.size(); ++r) {
                   for (std::int64_t j = 0; j < d; ++j) {
                     dt.at(static_cast<std::int64_t>(ids[r]) * d + j) += g.at(static_cast<std::int64_t>(r) * d + j);
                   }
                 }
                 accumulate_grad(grads[static_cast<std::size_t>(tid)], tv2.shape(), dt);
               });
}

Var Tape::slice(Var x, std::vector<int> start, std::vector<int> extent) {
  const Tensor& xv = value(x);
  const auto rank = static_cast<std::size_t>(xv.rank());
  if (start.size() != rank || extent.size() != rank) {
    throw Error("slice: start/extent rank mismatch for " + shape_str(xv.shape()));
  }
  for (std::size_t d = 0; d < rank; ++d) {
    if (start[d] < 0 || extent[d] <= 0 || start[d] + extent[d] > xv.shape()[d]) {
      throw Error("slice: region start " + shape_str(Shape(start.begin(), start.end())) +
                  " extent " + shape_str(Shape(extent.begin(), extent.end())) +
                  " out of bounds for " + shape_str(xv.shape()));
    }
  }
  Tensor out(Shape(extent.begin(), extent.end()));
  std::int64_t w = 0;
  walk_region(xv.shape(), start, extent, [&](std::int64_t src) { out.at(w++) = xv.at(src); });
  return unary("slice", x, std::move(out),
               [xid = x.id, start = std::move(start), extent = std::move(extent)](
                   const Tape& t, const Tensor& g, std::vector<Tensor>& grads) {
                 const Tensor& xv2 = t.value(Var{xid});
                 Tensor dx(xv2.shape());
                 std::int64_t r = 0;
                 walk_region(xv2.shape(), start, extent,
                             [&](std::int64_t src) { dx.at(src) += g.at(r++); });
                 accumulate_grad(grads[static_cast<std::size_t>(xid)], xv2.shape(), dx);
               });
}

Var Tape::concat(const std::vector<Var>& xs, int axis) {
  if (xs.empty()) throw Error("concat: empty input list");
  const Tensor& first = value(xs[0]);
  const int rank = first.rank();
  if (axis < 0 || axis >= rank) throw Error("concat: axis out of range");
  Shape out_shape = first.shape();
  for (std::size_t i = 1; i < xs.size(); ++i) {
    const Shape& s = value(xs[i]).shape();
    if (static_cast<int>(s.size()) != rank) {
      throw Error("shape mismatch in 'concat': " + shape_str(first.shape()) + " vs " + shape_str(s));
    }
    for (int d = 0; d < rank; ++d) {
      if (d != axis && s[static_cast<std::size_t>(d)] != first.shape()[static_cast<std::size_t>(d)]) {
        throw Error("shape mismatch in 'concat': " + shape_str(first.shape()) + " vs " + shape_str(s));
      }
    }
    out_shape[static_cast<std::size_t>(axis)] += s[static_cast<std::size_t>(axis)];
  }

  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= first.shape()[static_cast<std::size_t>(d)];
  for (int d = axis + 1; d < rank; ++d) inner *= first.shape()[static_cast<std::size_t>(d)];

  Tensor out(out_shape);
  const std::int64_t out_axis = out_shape[static_cast<std::size_t>(axis)];
  std::int64_t axis_off = 0;
  std::vector<std::int64_t> axis_offsets;
  for (const Var& xv : xs) {
    const Tensor& t = value(xv);
    const std::int64_t a = t.shape()[static_cast<std::size_t>(axis)];
    axis_offsets.push_back(axis_off);
    for (std::int64_t o = 0; o < outer; ++o) {
      std::memcpy(out.data() + (o * out_axis + axis_off) * inner, t.data() + o * a * inner,
                  static_cast<std::size_t>(a * inner) * sizeof(Scalar));
    }
    axis_off += a;
  }

  Node n;
  n.value = std::move(out);
  n.requires_grad = false;
  for (const Var& xv : xs) {
    n.inputs.push_back(xv.id);
    n.requires_grad = n.requires_grad || requires_grad(xv);
  }
  n.op = "concat";
  if (n.requires_grad) {
    std::vector<int> ids;
    for (const Var& xv : xs) ids.push_back(xv.id);
    n.backward = [ids, axis_offsets, outer, inner, out_axis, axis](
                     const Tape& t, const Tensor& g, std::vector<Tensor>& grads) {
      for (std::size_t i = 0; i < ids.size(); ++i) {
        Var in{ids[i]};
        if (!t.requires_grad(in)) continue;
        const Tensor& xv2 = t.value(in);
        const std::int64_t a = xv2.shape()[static_cast<std::size_t>(axis)];
        Tensor dx(xv2.shape());
        for (std::int64_t o = 0; o < outer; ++o) {
          std::memcpy(dx.data() + o * a * inner, g.data() + (o * out_axis + axis_offsets[i]) * inner,
                      static_cast<std::size_t>(a * inner) * sizeof(Scalar));
        }
        accumulate_grad(grads[static_cast<std::size_t>(ids[i])], xv2.shape(), dx);
      }
    };
  }
  return push(std::move(n));
}

Var Tape::reshape(Var x, Shape new_shape) {
  const Tensor& xv = value(x);
  Tensor out = xv.reshaped(std::move(new_shape));  // shares buffer; shape check inside
  return unary("reshape", x, std::move(out),
               [xid = x.id](const Tape& t, const Tensor& g, std::vector<Tensor>& grads) {
                 const Shape& xs = t.value(Var{xid}).shape();
                 accumulate_grad(grads[static_cast<std::size_t>(xid)], xs, g.reshaped(xs));
               });
}

// ---------------------------------------------------------------------------
// Reductions

Var Tape::mean(Var x) {
  const Tensor& xv = value(x);
  Scalar s = 0;
  for (std::int64_t i = 0; i < xv.size(); ++i) s += xv.at(i);
  const Scalar n = static_cast<Scalar>(xv.size());
  return unary("mean", x, Tensor::scalar(s / n),
               [xid = x.id, n](const Tape& t, const Tensor& g, std::vector<Tensor>& grads) {
                 const Tensor& xv2 = t.value(Var{xid});
                 Tensor dx(xv2.shape());
                 const Scalar q = g.at(0) / n;
                 for (std::int64_t i = 0; i < dx.size(); ++i) dx.at(i) = q;
                 accumulate_grad(grads[static_cast<std::size_t>(xid)], xv2.shape(), dx);
               });
}

Var Tape::sum(Var x) {
  const Tensor& xv = value(x);
  Scalar s = 0;
  for (std::int64_t i = 0; i < xv.size(); ++i) s += xv.at(i);
  return unary("sum", x, Tensor::scalar(s),
               [xid = x.id](const Tape& t, const Tensor& g, std::vector<Tensor>& grads) {
                 const Tensor& xv2 = t.value(Var{xid});
                 Tensor dx(xv2.shape());
                 for (std::int64_t i = 0; i < dx.size(); ++i) dx.at(i) = g.at(0);
                 accumulate_grad(grads[static_cast<std::size_t>(xid)], xv2.shape(), dx);
               });
}

Var Tape::sse(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  check_same_shape("sse", av, bv);
  Scalar s = 0;
  for (std::int64_t i = 0; i < av.size(); ++i) {
    const Scalar d = av.at(i) - bv.at(i);
    s += d * d;
  }
  Node n;
  n.value = Tensor::scalar(s);
  n.inputs = {a.id, b.id};
  n.requires_grad = requires_grad(a) || requires_grad(b);
  n.op = "sse";
  if (n.requires_grad) {
    const int aid = a.id, bid = b.id;
    n.backward = [aid, bid](const Tape& t, const Tensor& g, std::vector<Tensor>& grads) {
      const Tensor& av2 = t.value(Var{aid});
      const Tensor& bv2 = t.value(Var{bid});
      const Scalar g0 = g.at(0);
      if (t.requires_grad(Var{aid})) {
        Tensor da(av2.shape());
        for (std::int64_t i = 0; i < da.size(); ++i) da.at(i) = 2.0 * (av2.at(i) - bv2.at(i)) * g0;
        accumulate_grad(grads[static_cast<std::size_t>(aid)], av2.shape(), da);
      }
      if (t.requires_grad(Var{bid})) {
        Tensor db(bv2.shape());
        for (std::int64_t i = 0; i < db.size(); ++i) db.at(i) = -2.0 * (av2.at(i) - bv2.at(i)) * g0;
        accumulate_grad(grads[static_cast<std::size_t>(bid)], bv2.shape(), db);
      }
    };
  }
  return push(std::move(n));
}

Var Tape::pick(Var m, std::vector<int> cols) {
  const Tensor& mv = value(m);
  if (mv.rank() != 2) throw Error("pick expects rank-2, got " + shape_str(mv.shape()));
  const std::int64_t rows = mv.shape()[0], c = mv.shape()[1];
  if (static_cast<std::int64_t>(cols.size()) != rows) {
    throw Error("pick: need one column per row (" + std::to_string(rows) + " rows, " +
                std::to_string(cols.size()) + " columns given)");
  }
  for (int j : cols) {
    if (j < 0 || j >= c) throw Error("pick: column " + std::to_string(j) + " out of range");
  }
  Tensor out({static_cast<int>(rows)});
  for (std::int64_t r = 0; r < rows; ++r) out.at(r) = mv.at(r * c + cols[static_cast<std::size_t>(r)]);
  return unary("pick", m, std::move(out),
               [mid = m.id, cols = std::move(cols), c](const Tape& t, const Tensor& g,
                                                       std::vector<Tensor>& grads) {
                 const Tensor& mv2 = t.value(Var{mid});
                 Tensor dm(mv2.shape());
                 for (std::size_t r = 0; r < cols.size(); ++r) {
                   dm.at(static_cast<std::int64_t>(r) * c + cols[r]) += g.at(static_cast<std::int64_t>(r));
                 }
                 accumulate_grad(grads[static_cast<std::size_t>(mid)], mv2.shape(), dm);
               });
}

// ---------------------------------------------------------------------------
// Backward sweep

Gradients Tape::backward(Var loss) const {
  if (!grad_enabled_) throw Error("backward() on a tape created with grad_enabled=false");
  const Node& ln = node(loss);
  if (ln.value.size() != 1) {
    throw Error("backward requires a scalar loss, got shape " + shape_str(ln.value.shape()));
  }
  std::vector<Tensor> grads(nodes_.size());
  grads[static_cast<std::size_t>(loss.id)] = Tensor::scalar(1.0);
  for (int id = loss.id; id >= 0; --id) {
    const Node& nd = nodes_[static_cast<std::size_t>(id)];
    if (!nd.requires_grad) continue;
    const Tensor& g = grads[static_cast<std::size_t>(id)];
    if (g.empty()) continue;
    if (nd.backward) nd.backward(*this, g, grads);
    else if (!nd.inputs.empty())
      throw Error(std::string("no derivative registered for op '") + nd.op + "'");
  }
  std::vector<Shape> shapes(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) shapes[i] = nodes_[i].value.shape();
  return Gradients(std::move(grads), std::move(shapes));
}

// ---------------------------------------------------------------------------
// Finite differences

Scalar finite_difference_check(const std::function<Scalar(const Tensor&)>& f, const Tensor& x,
                               const Tensor& analytic_grad, std::span<const std::int64_t> coords,
                               Scalar step) {
  if (step <= 0) throw Error("finite_difference_check: step must be positive");
  if (!analytic_grad.same_shape(x)) {
    throw Error("finite_difference_check: gradient shape " + shape_str(analytic_grad.shape()) +
                " does not match input " + shape_str(x.shape()));
  }
  Tensor probe = x.clone();
  Scalar max_err = 0;
  for (std::int64_t c : coords) {
    if (c < 0 || c >= x.size()) {
      throw Error("finite_difference_check: coordinate " + std::to_string(c) +
                  " out of range for " + std::to_string(x.size()) + " elements");
    }
    const Scalar orig = probe.at(c);
    probe.at(c) = orig + step;
    const Scalar fp = f(probe);
    probe.at(c) = orig - step;
    const Scalar fm = f(probe);
    probe.at(c) = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw Error("finite_difference_check: non-finite function value");
    }
    const Scalar numeric = (fp - fm) / (2.0 * step);
    const Scalar analytic = analytic_grad.at(c);
    const Scalar err = std::abs(analytic - numeric) / std::max(std::abs(analytic), 1e-8);
    max_err = std::max(max_err, err);
  }
  return max_err;
}

}  // namespace visor
