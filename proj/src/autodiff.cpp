// SPDX-License-Identifier: Apache-2.0
#include "physkit/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "physkit/error.hpp"

namespace physkit {

// ---------------------------------------------------------------------------
// Var / Tape

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return tape_->value(id_);
}

Tape& Var::tape() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return *tape_;
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  Node n;
  n.value = p.value;
  if (p.trainable) {
    n.requires_grad = recording_;
    n.param = &p;
  }
  Var v = push(std::move(n));
  param_nodes_.emplace(&p, v.id());
  return v;
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  if (recording_) {
    for (const Var& in : inputs) {
      if (&in.tape() != this) throw ContractError("op mixes values from different tapes");
      if (nodes_[in.id()].requires_grad) {
        n.requires_grad = true;
        break;
      }
    }
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

Tensor* Tape::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return nullptr;
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape());
    n.has_grad = true;
  }
  return &n.grad;
}

void Tape::backward(const Var& loss) {
  if (&loss.tape() != this) throw ContractError("backward: loss belongs to another tape");
  if (loss.value().numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  }
  if (!recording_) throw ContractError("backward: tape was not recording");
  Tensor* seed = grad(loss.id());
  if (!seed) return;  // nothing trainable upstream of the loss
  (*seed)[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param) {
      auto& dst = n.param->grad;
      for (std::size_t k = 0; k < dst.numel(); ++k) dst[k] += n.grad[k];
    }
  }
}

void backward(const Var& loss, ParamStore& store) {
  store.zero_grad();
  loss.tape().backward(loss);
}

// ---------------------------------------------------------------------------
// Helpers

namespace {

bool is_trailing_suffix(const Shape& small, const Shape& big) {
  if (shape_numel(small) == 1) return true;
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return a;
  if (is_trailing_suffix(b, a) && a.size() >= b.size()) return a;
  if (is_trailing_suffix(a, b)) return b;
  if (is_trailing_suffix(b, a)) return a;
  throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                   shape_str(b));
}

template <typename F>
Tensor map_unary(const Tensor& x, F f) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = f(x[i]);
  return out;
}

struct MatmulDims {
  std::size_t batch = 1, m = 0, k = 0, n = 0;
  bool a_batched = false, b_batched = false;
  Shape out;
};

MatmulDims matmul_dims(const Shape& a, const Shape& b) {
  if (a.size() < 2 || b.size() < 2) {
    throw ShapeError("matmul needs operands of rank >= 2, got " + shape_str(a) + " and " +
                     shape_str(b));
  }
  MatmulDims d;
  d.m = a[a.size() - 2];
  d.k = a[a.size() - 1];
  d.n = b[b.size() - 1];
  if (b[b.size() - 2] != d.k) {
    throw ShapeError("matmul dimension mismatch: " + shape_str(a) + " x " + shape_str(b));
  }
  const Shape ab(a.begin(), a.end() - 2);
  const Shape bb(b.begin(), b.end() - 2);
  if (ab == bb) {
    d.out = ab;
    d.a_batched = d.b_batched = !ab.empty();
  } else if (bb.empty()) {
    d.out = ab;
    d.a_batched = true;
  } else if (ab.empty()) {
    d.out = bb;
    d.b_batched = true;
  } else {
    throw ShapeError("matmul batch dimensions differ: " + shape_str(a) + " x " + shape_str(b));
  }
  d.batch = shape_numel(d.out);
  d.out.push_back(d.m);
  d.out.push_back(d.n);
  return d;
}

void check_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) throw NumericError(std::string(op) + ": non-finite input value");
}

Tensor transpose_last2_kernel(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("transpose needs rank >= 2, got " + shape_str(x.shape()));
  Shape s = x.shape();
  const std::size_t r = s[s.size() - 2], c = s[s.size() - 1];
  std::swap(s[s.size() - 2], s[s.size() - 1]);
  Tensor out(s);
  const std::size_t batch = x.numel() / (r * c);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* src = x.data().data() + b * r * c;
    double* dst = out.data().data() + b * r * c;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) dst[j * r + i] = src[i * c + j];
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Plain kernels

Tensor matmul(const Tensor& a, const Tensor& b) {
  const MatmulDims d = matmul_dims(a.shape(), b.shape());
  Tensor c(d.out);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  for (std::size_t bi = 0; bi < d.batch; ++bi) {
    const double* A = pa + (d.a_batched ? bi * d.m * d.k : 0);
    const double* B = pb + (d.b_batched ? bi * d.k * d.n : 0);
    double* C = pc + bi * d.m * d.n;
    for (std::size_t i = 0; i < d.m; ++i) {
      double* crow = C + i * d.n;
      for (std::size_t p = 0; p < d.k; ++p) {
        const double av = A[i * d.k + p];
        const double* brow = B + p * d.n;
        for (std::size_t j = 0; j < d.n; ++j) crow[j] += av * brow[j];
      }
    }
  }
  return c;
}

Tensor softmax_rows(const Tensor& t) {
  check_finite(t, "softmax_rows");
  const std::size_t n = t.shape().back();
  const std::size_t rows = t.numel() / n;
  Tensor out(t.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = t.data().data() + r * n;
    double* y = out.data().data() + r * n;
    const double mx = *std::max_element(x, x + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - mx);
      total += y[j];
    }
    for (std::size_t j = 0; j < n; ++j) y[j] /= total;
  }
  return out;
}

double gelu(double x) noexcept { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

// ---------------------------------------------------------------------------
// Differentiable ops

Var add(const Var& a, const Var& b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(broadcast_shape(x.shape(), y.shape(), "add"));
  const std::size_t nx = x.numel(), ny = y.numel();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x[i % nx] + y[i % ny];
  const Var in[] = {a, b};
  return a.tape().record(std::move(out), in, [ia = a.id(), ib = b.id(), nx, ny](Tape& t, std::size_t self) {
    const Tensor& g = *t.grad(self);
    if (Tensor* ga = t.grad(ia))
      for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i % nx] += g[i];
    if (Tensor* gb = t.grad(ib))
      for (std::size_t i = 0; i < g.numel(); ++i) (*gb)[i % ny] += g[i];
  });
}

Var sub(const Var& a, const Var& b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(broadcast_shape(x.shape(), y.shape(), "sub"));
  const std::size_t nx = x.numel(), ny = y.numel();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x[i % nx] - y[i % ny];
  const Var in[] = {a, b};
  return a.tape().record(std::move(out), in, [ia = a.id(), ib = b.id(), nx, ny](Tape& t, std::size_t self) {
    const Tensor& g = *t.grad(self);
    if (Tensor* ga = t.grad(ia))
      for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i % nx] += g[i];
    if (Tensor* gb = t.grad(ib))
      for (std::size_t i = 0; i < g.numel(); ++i) (*gb)[i % ny] -= g[i];
  });
}

Var mul(const Var& a, const Var& b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(broadcast_shape(x.shape(), y.shape(), "mul"));
  const std::size_t nx = x.numel(), ny = y.numel();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x[i % nx] * y[i % ny];
  const Var in[] = {a, b};
  return a.tape().record(std::move(out), in, [ia = a.id(), ib = b.id(), nx, ny](Tape& t, std::size_t self) {
    const Tensor& g = *t.grad(self);
    const Tensor& x = t.value(ia);
    const Tensor& y = t.value(ib);
    if (Tensor* ga = t.grad(ia))
      for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i % nx] += g[i] * y[i % ny];
    if (Tensor* gb = t.grad(ib))
      for (std::size_t i = 0; i < g.numel(); ++i) (*gb)[i % ny] += g[i] * x[i % nx];
  });
}

Var affine(const Var& a, double scale, double shift) {
  Tensor out = map_unary(a.value(), [&](double v) { return scale * v + shift; });
  const Var in[] = {a};
  return a.tape().record(std::move(out), in, [ia = a.id(), scale](Tape& t, std::size_t self) {
    const Tensor& g = *t.grad(self);
    if (Tensor* ga = t.grad(ia))
      for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += scale * g[i];
  });
}

Var matmul(const Var& a, const Var& b) {
  const MatmulDims d = matmul_dims(a.shape(), b.shape());
  Tensor out = matmul(a.value(), b.value());
  const Var in[] = {a, b};
  return a.tape().record(std::move(out), in, [ia = a.id(), ib = b.id(), d](Tape& t, std::size_t self) {
    const double* G = t.grad(self)->data().data();
    const double* A = t.value(ia).data().data();
    const double* B = t.value(ib).data().data();
    Tensor* ga = t.grad(ia);
    Tensor* gb = t.grad(ib);
    for (std::size_t bi = 0; bi < d.batch; ++bi) {
      const double* Gb = G + bi * d.m * d.n;
      const std::size_t aoff = d.a_batched ? bi * d.m * d.k : 0;
      const std::size_t boff = d.b_batched ? bi * d.k * d.n : 0;
      if (ga) {
        double* dA = ga->data().data() + aoff;
        const double* Bb = B + boff;
        for (std::size_t i = 0; i < d.m; ++i)
          for (std::size_t p = 0; p < d.k; ++p) {
            double acc = 0.0;
            const double* grow = Gb + i * d.n;
            const double* brow = Bb + p * d.n;
            for (std::size_t j = 0; j < d.n; ++j) acc += grow[j] * brow[j];
            dA[i * d.k + p] += acc;
          }
      }
      if (gb) {
        double* dB = gb->data().data() + boff;
        const double* Ab = A + aoff;
        for (std::size_t i = 0; i < d.m; ++i)
          for (std::size_t p = 0; p < d.k; ++p) {
            const double av = Ab[i * d.k + p];
            const double* grow = Gb + i * d.n;
            double* drow = dB + p * d.n;
            for (std::size_t j = 0; j < d.n; ++j) drow[j] += av * grow[j];
          }
      }
    }
  });
}

Var transpose_last2(const Var& a) {
  Tensor out = transpose_last2_kernel(a.value());
  const Var in[] = {a};
  return a.tape().record(std::move(out), in, [ia = a.id()](Tape& t, std::size_t self) {
    if (Tensor* ga = t.grad(ia)) {
      const Tensor back = transpose_last2_kernel(*t.grad(self));
      for (std::size_t i = 0; i < back.numel(); ++i) (*ga)[i] += back[i];
    }
  });
}

Var permute(const Var& a, const std::vector<std::size_t>& axes) {
  const Shape& s = a.shape();
  const std::size_t r = s.size();
  if (axes.size() != r) throw ShapeError("permute: axes rank does not match " + shape_str(s));
  std::vector<bool> seen(r, false);
  for (std::size_t ax : axes) {
    if (ax >= r || seen[ax]) throw ShapeError("permute: invalid axes for " + shape_str(s));
    seen[ax] = true;
  }
  Shape out_shape(r);
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r - 1; i > 0; --i) in_stride[i - 1] = in_stride[i] * s[i];
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = s[axes[i]];

  // Map each output position to its source offset.
  const std::size_t n = a.value().numel();
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t o = 0; o < n; ++o) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < r; ++i) off += idx[i] * in_stride[axes[i]];
    src[o] = off;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  Tensor out(out_shape);
  const Tensor& x = a.value();
  for (std::size_t o = 0; o < n; ++o) out[o] = x[src[o]];
  const Var in[] = {a};
  return a.tape().record(std::move(out), in, [ia = a.id(), src = std::move(src)](Tape& t, std::size_t self) {
    if (Tensor* ga = t.grad(ia)) {
      const Tensor& g = *t.grad(self);
      for (std::size_t o = 0; o < g.numel(); ++o) (*ga)[src[o]] += g[o];
    }
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const Var in[] = {a};
  return a.tape().record(std::move(out), in, [ia = a.id()](Tape& t, std::size_t self) {
    if (Tensor* ga = t.grad(ia)) {
      const Tensor& g = *t.grad(self);
      for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i];
    }
  });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) throw ShapeError("concat: incompatible shapes " + shape_str(first) + " and " + shape_str(s));
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  for (const Var& p : parts) widths.push_back(p.shape()[axis] * inner);
  const std::size_t row = out_shape[axis] * inner;

  Tensor out(out_shape);
  std::size_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& x = parts[k].value();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(x.data().data() + o * widths[k], widths[k], out.data().data() + o * row + col);
    col += widths[k];
  }
  std::vector<std::size_t> ids;
  for (const Var& p : parts) ids.push_back(p.id());
  return parts[0].tape().record(std::move(out), parts,
                                [ids = std::move(ids), widths, outer, row](Tape& t, std::size_t self) {
    const Tensor& g = *t.grad(self);
    std::size_t col = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (Tensor* gk = t.grad(ids[k])) {
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t j = 0; j < widths[k]; ++j) (*gk)[o * widths[k] + j] += g[o * row + col + j];
      }
      col += widths[k];
    }
  });
}

Var unfold(const Var& x, std::size_t patch, std::size_t stride) {
  const Shape& s = x.shape();
  const std::size_t len = s.back();
  if (patch == 0 || stride == 0 || patch > len) {
    throw ShapeError("unfold: patch " + std::to_string(patch) + " / stride " + std::to_string(stride) +
                     " invalid for " + shape_str(s));
  }
  const std::size_t n = (len - patch) / stride + 1;
  const std::size_t rows = x.value().numel() / len;
  Shape out_shape(s.begin(), s.end() - 1);
  out_shape.push_back(n);
  out_shape.push_back(patch);
  Tensor out(out_shape);
  const Tensor& v = x.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t j = 0; j < patch; ++j) out[(r * n + p) * patch + j] = v[r * len + p * stride + j];
  const Var in[] = {x};
  return x.tape().record(std::move(out), in, [ix = x.id(), rows, n, patch, stride, len](Tape& t, std::size_t self) {
    if (Tensor* gx = t.grad(ix)) {
      const Tensor& g = *t.grad(self);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t p = 0; p < n; ++p)
          for (std::size_t j = 0; j < patch; ++j) (*gx)[r * len + p * stride + j] += g[(r * n + p) * patch + j];
    }
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const Var in[] = {a};
  return a.tape().record(Tensor::scalar(s), in, [ia = a.id()](Tape& t, std::size_t self) {
    const double g = (*t.grad(self))[0];
    if (Tensor* ga = t.grad(ia))
      for (double& v : ga->data()) v += g;
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().numel());
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const Var in[] = {a};
  return a.tape().record(Tensor::scalar(s / n), in, [ia = a.id(), n](Tape& t, std::size_t self) {
    const double g = (*t.grad(self))[0] / n;
    if (Tensor* ga = t.grad(ia))
      for (double& v : ga->data()) v += g;
  });
}

Var mean_axis(const Var& a, std::size_t axis) {
  const Shape& s = a.shape();
  if (axis >= s.size()) throw ShapeError("mean_axis: axis out of range for " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) out_shape.push_back(s[i]);
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor out(out_shape);
  const Tensor& x = a.value();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += x[(o * len + l) * inner + i];
  for (double& v : out.data()) v /= static_cast<double>(len);
  const Var in[] = {a};
  return a.tape().record(std::move(out), in, [ia = a.id(), outer, inner, len](Tape& t, std::size_t self) {
    if (Tensor* ga = t.grad(ia)) {
      const Tensor& g = *t.grad(self);
      const double scale = 1.0 / static_cast<double>(len);
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t l = 0; l < len; ++l)
          for (std::size_t i = 0; i < inner; ++i) (*ga)[(o * len + l) * inner + i] += g[o * inner + i] * scale;
    }
  });
}

Var softmax_rows(const Var& a) {
  Tensor out = softmax_rows(a.value());
  const Var in[] = {a};
  return a.tape().record(std::move(out), in, [ia = a.id()](Tape& t, std::size_t self) {
    Tensor* ga = t.grad(ia);
    if (!ga) return;
    const Tensor& g = *t.grad(self);
    const Tensor& y = t.value(self);
    const std::size_t n = y.shape().back();
    for (std::size_t r = 0; r < y.numel() / n; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
      for (std::size_t j = 0; j < n; ++j) (*ga)[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
    }
  });
}

Var sigmoid(const Var& a) {
  Tensor out = map_unary(a.value(), [](double v) { return 1.0 / (1.0 + std::exp(-v)); });
  const Var in[] = {a};
  return a.tape().record(std::move(out), in, [ia = a.id()](Tape& t, std::size_t self) {
    if (Tensor* ga = t.grad(ia)) {
      const Tensor& g = *t.grad(self);
      const Tensor& y = t.value(self);
      for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * y[i] * (1.0 - y[i]);
    }
  });
}

Var gelu(const Var& a) {
  Tensor out = map_unary(a.value(), [](double v) { return gelu(v); });
  const Var in[] = {a};
  return a.tape().record(std::move(out), in, [ia = a.id()](Tape& t, std::size_t self) {
    if (Tensor* ga = t.grad(ia)) {
      const Tensor& g = *t.grad(self);
      const Tensor& x = t.value(ia);
      const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
      for (std::size_t i = 0; i < g.numel(); ++i) {
        const double v = x[i];
        const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
        (*ga)[i] += g[i] * (cdf + v * inv_sqrt_2pi * std::exp(-0.5 * v * v));
      }
    }
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  const Tensor& xv = x.value();
  const std::size_t d = xv.shape().back();
  if (gain.value().numel() != d || bias.value().numel() != d) {
    throw ShapeError("layer_norm: gain/bias length must equal last dim of " + shape_str(xv.shape()));
  }
  const std::size_t rows = xv.numel() / d;
  Tensor out(xv.shape());
  Tensor xhat(xv.shape());
  std::vector<double> inv_std(rows);
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data().data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (row[j] - mu) * inv_std[r];
      out[r * d + j] = xhat[r * d + j] * gv[j] + bv[j];
    }
  }
  const Var in[] = {x, gain, bias};
  return x.tape().record(
      std::move(out), in,
      [ix = x.id(), ig = gain.id(), ib = bias.id(), xhat = std::move(xhat), inv_std = std::move(inv_std), d,
       rows](Tape& t, std::size_t self) {
        const Tensor& g = *t.grad(self);
        const Tensor& gv = t.value(ig);
        Tensor* gx = t.grad(ix);
        Tensor* gg = t.grad(ig);
        Tensor* gb = t.grad(ib);
        const double n = static_cast<double>(d);
        for (std::size_t r = 0; r < rows; ++r) {
          double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dxhat = g[r * d + j] * gv[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat[r * d + j];
            if (gg) (*gg)[j] += g[r * d + j] * xhat[r * d + j];
            if (gb) (*gb)[j] += g[r * d + j];
          }
          if (gx) {
            for (std::size_t j = 0; j < d; ++j) {
              const double dxhat = g[r * d + j] * gv[j];
              (*gx)[r * d + j] +=
                  inv_std[r] / n * (n * dxhat - sum_dxhat - xhat[r * d + j] * sum_dxhat_xhat);
            }
          }
        }
      });
}

Var mse(const Var& prediction, const Var& target) {
  const Tensor& p = prediction.value();
  const Tensor& y = target.value();
  if (p.shape() != y.shape()) {
    throw ShapeError("mse: prediction " + shape_str(p.shape()) + " vs target " + shape_str(y.shape()));
  }
  const double n = static_cast<double>(p.numel());
  double acc = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) acc += (y[i] - p[i]) * (y[i] - p[i]);
  const Var in[] = {prediction, target};
  return prediction.tape().record(Tensor::scalar(acc / n), in,
                                  [ip = prediction.id(), iy = target.id(), n](Tape& t, std::size_t self) {
    const double g = (*t.grad(self))[0];
    const Tensor& p = t.value(ip);
    const Tensor& y = t.value(iy);
    Tensor* gp = t.grad(ip);
    Tensor* gy = t.grad(iy);
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double d = 2.0 * (p[i] - y[i]) / n * g;
      if (gp) (*gp)[i] += d;
      if (gy) (*gy)[i] -= d;
    }
  });
}

}  // namespace physkit
