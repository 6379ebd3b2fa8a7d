#include "samba/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "samba/errors.hpp"

namespace samba {

namespace {

// Rounds through float in f32 mode and rejects non-finite results.
void finalize(Tensor& t, const char* op) {
  const Precision p = precision();
  for (double& v : *t.data) {
    if (p == Precision::f32) v = static_cast<double>(static_cast<float>(v));
    if (!std::isfinite(v))
      throw NumericError(std::string(op) + ": non-finite value in output");
  }
}

Tape* recording(std::initializer_list<const Tensor*> ins) {
  Tape* t = Tape::active();
  if (!t) return nullptr;
  for (const Tensor* x : ins)
    if (x && x->defined() && t->node_of(*x) >= 0) return t;
  return nullptr;
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape != b.shape)
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                     " vs " + shape_str(b.shape));
}

using Pull = std::function<void(Tape&, const std::vector<double>&)>;

void attach_node(Tape* tp, Tensor& out, Pull pull) {
  tp->attach(out, tp->alloc_node(std::move(pull)));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape);
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] + (*b.data)[i];
  finalize(out, "add");
  if (Tape* tp = recording({&a, &b})) {
    const int na = tp->node_of(a), nb = tp->node_of(b);
    attach_node(tp, out, [na, nb, n](Tape& t, const std::vector<double>& g) {
      if (na >= 0) {
        auto& ga = t.grad_of(na, n);
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (nb >= 0) {
        auto& gb = t.grad_of(nb, n);
        for (int64_t i = 0; i < n; ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape);
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] - (*b.data)[i];
  finalize(out, "sub");
  if (Tape* tp = recording({&a, &b})) {
    const int na = tp->node_of(a), nb = tp->node_of(b);
    attach_node(tp, out, [na, nb, n](Tape& t, const std::vector<double>& g) {
      if (na >= 0) {
        auto& ga = t.grad_of(na, n);
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (nb >= 0) {
        auto& gb = t.grad_of(nb, n);
        for (int64_t i = 0; i < n; ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape);
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] * (*b.data)[i];
  finalize(out, "mul");
  if (Tape* tp = recording({&a, &b})) {
    const int na = tp->node_of(a), nb = tp->node_of(b);
    auto da = a.data, db = b.data;
    attach_node(tp, out, [na, nb, n, da, db](Tape& t, const std::vector<double>& g) {
      if (na >= 0) {
        auto& ga = t.grad_of(na, n);
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * (*db)[i];
      }
      if (nb >= 0) {
        auto& gb = t.grad_of(nb, n);
        for (int64_t i = 0; i < n; ++i) gb[i] += g[i] * (*da)[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape);
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) (*out.data)[i] = c * (*a.data)[i];
  finalize(out, "scale");
  if (Tape* tp = recording({&a})) {
    const int na = tp->node_of(a);
    attach_node(tp, out, [na, n, c](Tape& t, const std::vector<double>& g) {
      auto& ga = t.grad_of(na, n);
      for (int64_t i = 0; i < n; ++i) ga[i] += c * g[i];
    });
  }
  return out;
}

Tensor exp(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape);
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) (*out.data)[i] = std::exp((*a.data)[i]);
  finalize(out, "exp");
  if (Tape* tp = recording({&a})) {
    const int na = tp->node_of(a);
    auto dout = out.data;
    attach_node(tp, out, [na, n, dout](Tape& t, const std::vector<double>& g) {
      auto& ga = t.grad_of(na, n);
      for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * (*dout)[i];
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape);
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) (*out.data)[i] = stable_sigmoid((*a.data)[i]);
  finalize(out, "sigmoid");
  if (Tape* tp = recording({&a})) {
    const int na = tp->node_of(a);
    auto dout = out.data;
    attach_node(tp, out, [na, n, dout](Tape& t, const std::vector<double>& g) {
      auto& ga = t.grad_of(na, n);
      for (int64_t i = 0; i < n; ++i) {
        const double s = (*dout)[i];
        ga[i] += g[i] * s * (1.0 - s);
      }
    });
  }
  return out;
}

Tensor softplus(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape);
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) (*out.data)[i] = stable_softplus((*a.data)[i]);
  finalize(out, "softplus");
  if (Tape* tp = recording({&a})) {
    const int na = tp->node_of(a);
    auto da = a.data;
    attach_node(tp, out, [na, n, da](Tape& t, const std::vector<double>& g) {
      auto& ga = t.grad_of(na, n);
      for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * stable_sigmoid((*da)[i]);
    });
  }
  return out;
}

Tensor silu(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape);
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) {
    const double x = (*a.data)[i];
    (*out.data)[i] = x * stable_sigmoid(x);
  }
  finalize(out, "silu");
  if (Tape* tp = recording({&a})) {
    const int na = tp->node_of(a);
    auto da = a.data;
    attach_node(tp, out, [na, n, da](Tape& t, const std::vector<double>& g) {
      auto& ga = t.grad_of(na, n);
      for (int64_t i = 0; i < n; ++i) {
        const double x = (*da)[i];
        const double s = stable_sigmoid(x);
        ga[i] += g[i] * s * (1.0 + x * (1.0 - s));
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) acc += (*a.data)[i];
  Tensor out = Tensor::scalar(acc);
  finalize(out, "sum");
  if (Tape* tp = recording({&a})) {
    const int na = tp->node_of(a);
    attach_node(tp, out, [na, n](Tape& t, const std::vector<double>& g) {
      auto& ga = t.grad_of(na, n);
      for (int64_t i = 0; i < n; ++i) ga[i] += g[0];
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  const double* pa = a.ptr();
  const double* pb = b.ptr();
  double* po = out.mut();
  for (int i = 0; i < m; ++i)
    for (int kk = 0; kk < k; ++kk) {
      const double av = pa[i * k + kk];
      if (av == 0.0) continue;
      const double* brow = pb + kk * n;
      double* orow = po + i * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  finalize(out, "matmul");
  if (Tape* tp = recording({&a, &b})) {
    const int na = tp->node_of(a), nb = tp->node_of(b);
    auto da = a.data, db = b.data;
    attach_node(tp, out, [=](Tape& t, const std::vector<double>& g) {
      if (na >= 0) {
        auto& ga = t.grad_of(na, static_cast<int64_t>(m) * k);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) {
            const double gv = g[static_cast<size_t>(i) * n + j];
            if (gv == 0.0) continue;
            for (int kk = 0; kk < k; ++kk)
              ga[static_cast<size_t>(i) * k + kk] += gv * (*db)[static_cast<size_t>(kk) * n + j];
          }
      }
      if (nb >= 0) {
        auto& gb = t.grad_of(nb, static_cast<int64_t>(k) * n);
        for (int i = 0; i < m; ++i)
          for (int kk = 0; kk < k; ++kk) {
            const double av = (*da)[static_cast<size_t>(i) * k + kk];
            if (av == 0.0) continue;
            for (int j = 0; j < n; ++j)
              gb[static_cast<size_t>(kk) * n + j] += av * g[static_cast<size_t>(i) * n + j];
          }
      }
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0))
    throw ShapeError("linear: incompatible shapes " + shape_str(x.shape) + " vs " +
                     shape_str(w.shape));
  const int rows = x.dim(0), in = x.dim(1), out_dim = w.dim(1);
  if (b.defined() && (b.rank() != 1 || b.dim(0) != out_dim))
    throw ShapeError("linear: bias shape " + shape_str(b.shape));
  Tensor out = Tensor::zeros({rows, out_dim});
  const double* px = x.ptr();
  const double* pw = w.ptr();
  double* po = out.mut();
  if (b.defined()) {
    const double* pb = b.ptr();
    for (int i = 0; i < rows; ++i)
      std::memcpy(po + static_cast<size_t>(i) * out_dim, pb, sizeof(double) * out_dim);
  }
  for (int i = 0; i < rows; ++i)
    for (int kk = 0; kk < in; ++kk) {
      const double xv = px[static_cast<size_t>(i) * in + kk];
      if (xv == 0.0) continue;
      const double* wrow = pw + static_cast<size_t>(kk) * out_dim;
      double* orow = po + static_cast<size_t>(i) * out_dim;
      for (int j = 0; j < out_dim; ++j) orow[j] += xv * wrow[j];
    }
  finalize(out, "linear");
  if (Tape* tp = recording({&x, &w, &b})) {
    const int nx = tp->node_of(x), nw = tp->node_of(w);
    const int nb = b.defined() ? tp->node_of(b) : -1;
    auto dx = x.data;
    auto dw = w.data;
    attach_node(tp, out, [=](Tape& t, const std::vector<double>& g) {
      if (nx >= 0) {
        auto& gx = t.grad_of(nx, static_cast<int64_t>(rows) * in);
        for (int i = 0; i < rows; ++i)
          for (int j = 0; j < out_dim; ++j) {
            const double gv = g[static_cast<size_t>(i) * out_dim + j];
            if (gv == 0.0) continue;
            for (int kk = 0; kk < in; ++kk)
              gx[static_cast<size_t>(i) * in + kk] +=
                  gv * (*dw)[static_cast<size_t>(kk) * out_dim + j];
          }
      }
      if (nw >= 0) {
        auto& gw = t.grad_of(nw, static_cast<int64_t>(in) * out_dim);
        for (int i = 0; i < rows; ++i)
          for (int kk = 0; kk < in; ++kk) {
            const double xv = (*dx)[static_cast<size_t>(i) * in + kk];
            if (xv == 0.0) continue;
            for (int j = 0; j < out_dim; ++j)
              gw[static_cast<size_t>(kk) * out_dim + j] +=
                  xv * g[static_cast<size_t>(i) * out_dim + j];
          }
      }
      if (nb >= 0) {
        auto& gb = t.grad_of(nb, out_dim);
        for (int i = 0; i < rows; ++i)
          for (int j = 0; j < out_dim; ++j) gb[j] += g[static_cast<size_t>(i) * out_dim + j];
      }
    });
  }
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  if (x.rank() != 4 || w.rank() != 4)
    throw ShapeError("conv2d: expected 4-d input and kernel, got " +
                     shape_str(x.shape) + " and " + shape_str(w.shape));
  const int bs = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != ci)
    throw ShapeError("conv2d: channel mismatch " + shape_str(x.shape) + " vs " +
                     shape_str(w.shape));
  if (stride < 1 || kh < 1) throw ContractError("conv2d: stride and kernel must be >= 1");
  if (h + 2 * pad < kh || wd + 2 * pad < kw)
    throw ShapeError("conv2d: kernel " + shape_str(w.shape) +
                     " larger than padded input " + shape_str(x.shape));
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (wd + 2 * pad - kw) / stride + 1;
  if (b.defined() && (b.rank() != 1 || b.dim(0) != co))
    throw ShapeError("conv2d: bias shape " + shape_str(b.shape));

  Tensor out = Tensor::zeros({bs, co, oh, ow});
  const double* px = x.ptr();
  const double* pw = w.ptr();
  double* po = out.mut();
  const int64_t xs_c = static_cast<int64_t>(h) * wd;
  const int64_t os_c = static_cast<int64_t>(oh) * ow;
  for (int n = 0; n < bs; ++n)
    for (int c = 0; c < co; ++c) {
      const double bias = b.defined() ? b.ptr()[c] : 0.0;
      double* omap = po + (static_cast<int64_t>(n) * co + c) * os_c;
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = bias;
          for (int ic = 0; ic < ci; ++ic) {
            const double* xmap = px + (static_cast<int64_t>(n) * ci + ic) * xs_c;
            const double* wmap = pw + ((static_cast<int64_t>(c) * ci + ic) * kh) * kw;
            for (int ky = 0; ky < kh; ++ky) {
              const int iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < kw; ++kx) {
                const int ix = ox * stride - pad + kx;
                if (ix < 0 || ix >= wd) continue;
                acc += xmap[static_cast<int64_t>(iy) * wd + ix] * wmap[ky * kw + kx];
              }
            }
          }
          omap[static_cast<int64_t>(oy) * ow + ox] = acc;
        }
    }
  finalize(out, "conv2d");

  if (Tape* tp = recording({&x, &w, &b})) {
    const int nx = tp->node_of(x), nw = tp->node_of(w);
    const int nb = b.defined() ? tp->node_of(b) : -1;
    auto dx = x.data;
    auto dw = w.data;
    attach_node(tp, out, [=](Tape& t, const std::vector<double>& g) {
      std::vector<double>* gx = nx >= 0 ? &t.grad_of(nx, static_cast<int64_t>(bs) * ci * h * wd) : nullptr;
      std::vector<double>* gw = nw >= 0 ? &t.grad_of(nw, static_cast<int64_t>(co) * ci * kh * kw) : nullptr;
      std::vector<double>* gb = nb >= 0 ? &t.grad_of(nb, co) : nullptr;
      for (int n = 0; n < bs; ++n)
        for (int c = 0; c < co; ++c)
          for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
              const double gv =
                  g[((static_cast<size_t>(n) * co + c) * oh + oy) * ow + ox];
              if (gv == 0.0) continue;
              if (gb) (*gb)[c] += gv;
              for (int ic = 0; ic < ci; ++ic)
                for (int ky = 0; ky < kh; ++ky) {
                  const int iy = oy * stride - pad + ky;
                  if (iy < 0 || iy >= h) continue;
                  for (int kx = 0; kx < kw; ++kx) {
                    const int ix = ox * stride - pad + kx;
                    if (ix < 0 || ix >= wd) continue;
                    const size_t xi = ((static_cast<size_t>(n) * ci + ic) * h + iy) * wd + ix;
                    const size_t wi = ((static_cast<size_t>(c) * ci + ic) * kh + ky) * kw + kx;
                    if (gx) (*gx)[xi] += gv * (*dw)[wi];
                    if (gw) (*gw)[wi] += gv * (*dx)[xi];
                  }
                }
            }
    });
  }
  return out;
}

Tensor depthwise_conv1d(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 3 || w.rank() != 2 || x.dim(1) != w.dim(0))
    throw ShapeError("depthwise_conv1d: incompatible shapes " + shape_str(x.shape) +
                     " vs " + shape_str(w.shape));
  const int bs = x.dim(0), ch = x.dim(1), len = x.dim(2), k = w.dim(1);
  if (k < 1) throw ContractError("depthwise_conv1d: kernel must be >= 1");
  if (b.defined() && (b.rank() != 1 || b.dim(0) != ch))
    throw ShapeError("depthwise_conv1d: bias shape " + shape_str(b.shape));
  Tensor out = Tensor::zeros({bs, ch, len});
  const double* px = x.ptr();
  const double* pw = w.ptr();
  double* po = out.mut();
  for (int n = 0; n < bs; ++n)
    for (int c = 0; c < ch; ++c) {
      const double bias = b.defined() ? b.ptr()[c] : 0.0;
      const double* xrow = px + (static_cast<int64_t>(n) * ch + c) * len;
      const double* wrow = pw + static_cast<int64_t>(c) * k;
      double* orow = po + (static_cast<int64_t>(n) * ch + c) * len;
      for (int t = 0; t < len; ++t) {
        double acc = bias;
        const int jmax = std::min(k - 1, t);
        for (int j = 0; j <= jmax; ++j) acc += wrow[j] * xrow[t - j];
        orow[t] = acc;
      }
    }
  finalize(out, "depthwise_conv1d");
  if (Tape* tp = recording({&x, &w, &b})) {
    const int nx = tp->node_of(x), nw = tp->node_of(w);
    const int nb = b.defined() ? tp->node_of(b) : -1;
    auto dx = x.data;
    auto dw = w.data;
    attach_node(tp, out, [=](Tape& t, const std::vector<double>& g) {
      std::vector<double>* gx = nx >= 0 ? &t.grad_of(nx, static_cast<int64_t>(bs) * ch * len) : nullptr;
      std::vector<double>* gw = nw >= 0 ? &t.grad_of(nw, static_cast<int64_t>(ch) * k) : nullptr;
      std::vector<double>* gb = nb >= 0 ? &t.grad_of(nb, ch) : nullptr;
      for (int n = 0; n < bs; ++n)
        for (int c = 0; c < ch; ++c) {
          const size_t row = (static_cast<size_t>(n) * ch + c) * len;
          for (int tt = 0; tt < len; ++tt) {
            const double gv = g[row + tt];
            if (gv == 0.0) continue;
            if (gb) (*gb)[c] += gv;
            const int jmax = std::min(k - 1, tt);
            for (int j = 0; j <= jmax; ++j) {
              if (gx) (*gx)[row + tt - j] += gv * (*dw)[static_cast<size_t>(c) * k + j];
              if (gw) (*gw)[static_cast<size_t>(c) * k + j] += gv * (*dx)[row + tt - j];
            }
          }
        }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() < 1) throw ShapeError("layer_norm: rank-0 input");
  const int d = x.dim(x.rank() - 1);
  if (d == 0) throw ShapeError("layer_norm: zero trailing dimension");
  if (gamma.rank() != 1 || gamma.dim(0) != d || beta.rank() != 1 || beta.dim(0) != d)
    throw ShapeError("layer_norm: affine shapes " + shape_str(gamma.shape) + ", " +
                     shape_str(beta.shape) + " for input " + shape_str(x.shape));
  if (eps <= 0.0) throw ContractError("layer_norm: eps must be positive");
  const int64_t rows = x.numel() / d;
  Tensor out = Tensor::zeros(x.shape);
  auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(x.numel()));
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
  const double* px = x.ptr();
  const double* pg = gamma.ptr();
  const double* pb = beta.ptr();
  double* po = out.mut();
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = px + r * d;
    double mean = 0.0;
    for (int i = 0; i < d; ++i) mean += row[i];
    mean /= d;
    double var = 0.0;
    for (int i = 0; i < d; ++i) {
      const double c = row[i] - mean;
      var += c * c;
    }
    var /= d;
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<size_t>(r)] = inv;
    for (int i = 0; i < d; ++i) {
      const double h = (row[i] - mean) * inv;
      (*xhat)[static_cast<size_t>(r * d + i)] = h;
      po[r * d + i] = pg[i] * h + pb[i];
    }
  }
  finalize(out, "layer_norm");
  if (Tape* tp = recording({&x, &gamma, &beta})) {
    const int nx = tp->node_of(x), ng = tp->node_of(gamma), nb = tp->node_of(beta);
    auto dgamma = gamma.data;
    attach_node(tp, out, [=](Tape& t, const std::vector<double>& g) {
      std::vector<double>* gx = nx >= 0 ? &t.grad_of(nx, rows * d) : nullptr;
      std::vector<double>* gg = ng >= 0 ? &t.grad_of(ng, d) : nullptr;
      std::vector<double>* gb = nb >= 0 ? &t.grad_of(nb, d) : nullptr;
      for (int64_t r = 0; r < rows; ++r) {
        const size_t base = static_cast<size_t>(r * d);
        if (gg || gb) {
          for (int i = 0; i < d; ++i) {
            if (gg) (*gg)[i] += g[base + i] * (*xhat)[base + i];
            if (gb) (*gb)[i] += g[base + i];
          }
        }
        if (gx) {
          double mean_h = 0.0, mean_hx = 0.0;
          for (int i = 0; i < d; ++i) {
            const double hch = g[base + i] * (*dgamma)[i];
            mean_h += hch;
            mean_hx += hch * (*xhat)[base + i];
          }
          mean_h /= d;
          mean_hx /= d;
          const double inv = (*inv_std)[static_cast<size_t>(r)];
          for (int i = 0; i < d; ++i) {
            const double hch = g[base + i] * (*dgamma)[i];
            (*gx)[base + i] += inv * (hch - mean_h - (*xhat)[base + i] * mean_hx);
          }
        }
      }
    });
  }
  return out;
}

Tensor bilinear_resize(const Tensor& x, int out_h, int out_w) {
  if (x.rank() != 4) throw ShapeError("bilinear_resize: expected 4-d input");
  if (out_h < 1 || out_w < 1)
    throw ContractError("bilinear_resize: output dims must be >= 1");
  const int bs = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out = Tensor::zeros({bs, ch, out_h, out_w});

  // Per-axis source indices and interpolation weights (align_corners=false).
  std::vector<int> y0(out_h), y1(out_h);
  std::vector<double> fy(out_h);
  for (int i = 0; i < out_h; ++i) {
    double sy = (i + 0.5) * static_cast<double>(h) / out_h - 0.5;
    sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
    y0[i] = static_cast<int>(sy);
    y1[i] = std::min(y0[i] + 1, h - 1);
    fy[i] = sy - y0[i];
  }
  std::vector<int> x0(out_w), x1(out_w);
  std::vector<double> fx(out_w);
  for (int i = 0; i < out_w; ++i) {
    double sx = (i + 0.5) * static_cast<double>(w) / out_w - 0.5;
    sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
    x0[i] = static_cast<int>(sx);
    x1[i] = std::min(x0[i] + 1, w - 1);
    fx[i] = sx - x0[i];
  }

  const double* px = x.ptr();
  double* po = out.mut();
  const int64_t maps = static_cast<int64_t>(bs) * ch;
  for (int64_t m = 0; m < maps; ++m) {
    const double* src = px + m * h * w;
    double* dst = po + m * out_h * out_w;
    for (int oy = 0; oy < out_h; ++oy)
      for (int ox = 0; ox < out_w; ++ox) {
        const double a = src[static_cast<int64_t>(y0[oy]) * w + x0[ox]];
        const double b = src[static_cast<int64_t>(y0[oy]) * w + x1[ox]];
        const double c = src[static_cast<int64_t>(y1[oy]) * w + x0[ox]];
        const double d = src[static_cast<int64_t>(y1[oy]) * w + x1[ox]];
        const double top = a + (b - a) * fx[ox];
        const double bot = c + (d - c) * fx[ox];
        dst[static_cast<int64_t>(oy) * out_w + ox] = top + (bot - top) * fy[oy];
      }
  }
  finalize(out, "bilinear_resize");
  if (Tape* tp = recording({&x})) {
    const int nx = tp->node_of(x);
    attach_node(tp, out, [=](Tape& t, const std::vector<double>& g) {
      auto& gx = t.grad_of(nx, static_cast<int64_t>(bs) * ch * h * w);
      for (int64_t m = 0; m < maps; ++m) {
        double* gsrc = gx.data() + m * h * w;
        const double* gdst = g.data() + m * out_h * out_w;
        for (int oy = 0; oy < out_h; ++oy)
          for (int ox = 0; ox < out_w; ++ox) {
            const double gv = gdst[static_cast<int64_t>(oy) * out_w + ox];
            if (gv == 0.0) continue;
            const double wy1 = fy[oy], wy0 = 1.0 - wy1;
            const double wx1 = fx[ox], wx0 = 1.0 - wx1;
            gsrc[static_cast<int64_t>(y0[oy]) * w + x0[ox]] += gv * wy0 * wx0;
            gsrc[static_cast<int64_t>(y0[oy]) * w + x1[ox]] += gv * wy0 * wx1;
            gsrc[static_cast<int64_t>(y1[oy]) * w + x0[ox]] += gv * wy1 * wx0;
            gsrc[static_cast<int64_t>(y1[oy]) * w + x1[ox]] += gv * wy1 * wx1;
          }
      }
    });
  }
  return out;
}

Tensor adaptive_avg_pool2d(const Tensor& x, int out_h, int out_w) {
  if (x.rank() != 4) throw ShapeError("adaptive_avg_pool2d: expected 4-d input");
  const int bs = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (out_h > h || out_w > w)
    throw ShapeError("adaptive_avg_pool2d: pool grid " + std::to_string(out_h) + "x" +
                     std::to_string(out_w) + " exceeds feature size " +
                     shape_str(x.shape));
  Tensor out = Tensor::zeros({bs, ch, out_h, out_w});
  auto edge = [](int i, int n, int o) { return static_cast<int>((static_cast<int64_t>(i) * n) / o); };
  auto edge_up = [](int i, int n, int o) {
    return static_cast<int>((static_cast<int64_t>(i) * n + o - 1) / o);
  };
  const double* px = x.ptr();
  double* po = out.mut();
  const int64_t maps = static_cast<int64_t>(bs) * ch;
  for (int64_t m = 0; m < maps; ++m) {
    const double* src = px + m * h * w;
    double* dst = po + m * out_h * out_w;
    for (int oy = 0; oy < out_h; ++oy) {
      const int ys = edge(oy, h, out_h), ye = edge_up(oy + 1, h, out_h);
      for (int ox = 0; ox < out_w; ++ox) {
        const int xs = edge(ox, w, out_w), xe = edge_up(ox + 1, w, out_w);
        double acc = 0.0;
        for (int iy = ys; iy < ye; ++iy)
          for (int ix = xs; ix < xe; ++ix) acc += src[static_cast<int64_t>(iy) * w + ix];
        dst[static_cast<int64_t>(oy) * out_w + ox] =
            acc / (static_cast<double>(ye - ys) * (xe - xs));
      }
    }
  }
  finalize(out, "adaptive_avg_pool2d");
  if (Tape* tp = recording({&x})) {
    const int nx = tp->node_of(x);
    attach_node(tp, out, [=](Tape& t, const std::vector<double>& g) {
      auto& gx = t.grad_of(nx, static_cast<int64_t>(bs) * ch * h * w);
      for (int64_t m = 0; m < maps; ++m) {
        double* gsrc = gx.data() + m * h * w;
        const double* gdst = g.data() + m * out_h * out_w;
        for (int oy = 0; oy < out_h; ++oy) {
          const int ys = edge(oy, h, out_h), ye = edge_up(oy + 1, h, out_h);
          for (int ox = 0; ox < out_w; ++ox) {
            const int xs = edge(ox, w, out_w), xe = edge_up(ox + 1, w, out_w);
            const double gv = gdst[static_cast<int64_t>(oy) * out_w + ox] /
                              (static_cast<double>(ye - ys) * (xe - xs));
            if (gv == 0.0) continue;
            for (int iy = ys; iy < ye; ++iy)
              for (int ix = xs; ix < xe; ++ix) gsrc[static_cast<int64_t>(iy) * w + ix] += gv;
          }
        }
      }
    });
  }
  return out;
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ContractError("concat_channels: no inputs");
  const int bs = xs[0].dim(0), h = xs[0].dim(2), w = xs[0].dim(3);
  int total_c = 0;
  for (const Tensor& t : xs) {
    if (t.rank() != 4 || t.dim(0) != bs || t.dim(2) != h || t.dim(3) != w)
      throw ShapeError("concat_channels: mismatched input " + shape_str(t.shape));
    total_c += t.dim(1);
  }
  Tensor out = Tensor::zeros({bs, total_c, h, w});
  const int64_t plane = static_cast<int64_t>(h) * w;
  double* po = out.mut();
  for (int n = 0; n < bs; ++n) {
    int64_t coff = 0;
    for (const Tensor& t : xs) {
      const int64_t block = static_cast<int64_t>(t.dim(1)) * plane;
      std::memcpy(po + (static_cast<int64_t>(n) * total_c) * plane + coff,
                  t.ptr() + static_cast<int64_t>(n) * block, sizeof(double) * block);
      coff += block;
    }
  }
  std::vector<const Tensor*> refs;
  for (const Tensor& t : xs) refs.push_back(&t);
  Tape* tp = Tape::active();
  bool any = false;
  if (tp)
    for (const Tensor* t : refs)
      if (tp->node_of(*t) >= 0) any = true;
  if (tp && any) {
    std::vector<int> nodes;
    std::vector<int> chans;
    for (const Tensor& t : xs) {
      nodes.push_back(tp->node_of(t));
      chans.push_back(t.dim(1));
    }
    attach_node(tp, out, [=](Tape& t, const std::vector<double>& g) {
      for (int n = 0; n < bs; ++n) {
        int64_t coff = 0;
        for (size_t i = 0; i < nodes.size(); ++i) {
          const int64_t block = static_cast<int64_t>(chans[i]) * plane;
          if (nodes[i] >= 0) {
            auto& gi = t.grad_of(nodes[i], static_cast<int64_t>(bs) * block);
            const double* gsrc = g.data() + (static_cast<int64_t>(n) * total_c) * plane + coff;
            double* gdst = gi.data() + static_cast<int64_t>(n) * block;
            for (int64_t j = 0; j < block; ++j) gdst[j] += gsrc[j];
          }
          coff += block;
        }
      }
    });
  }
  return out;
}

namespace {

// Shared machinery for pure index permutations and reshapes: grad moves by the
// inverse map, values are untouched.
Tensor permuted(const Tensor& x, Shape out_shape, std::vector<int64_t> dst_of_src,
                const char* op) {
  (void)op;
  Tensor out = Tensor::zeros(std::move(out_shape));
  const int64_t n = x.numel();
  const double* px = x.ptr();
  double* po = out.mut();
  for (int64_t i = 0; i < n; ++i) po[dst_of_src[static_cast<size_t>(i)]] = px[i];
  if (Tape* tp = recording({&x})) {
    const int nx = tp->node_of(x);
    auto map = std::make_shared<std::vector<int64_t>>(std::move(dst_of_src));
    attach_node(tp, out, [nx, n, map](Tape& t, const std::vector<double>& g) {
      auto& gx = t.grad_of(nx, n);
      for (int64_t i = 0; i < n; ++i) gx[i] += g[(*map)[static_cast<size_t>(i)]];
    });
  }
  return out;
}

}  // namespace

Tensor reshape(const Tensor& x, Shape s) {
  if (shape_numel(s) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape) + " as " + shape_str(s));
  Tensor out;
  out.shape = std::move(s);
  out.data = x.data;  // shared; data immutable
  if (Tape* tp = recording({&x})) {
    const int nx = tp->node_of(x);
    const int64_t n = x.numel();
    attach_node(tp, out, [nx, n](Tape& t, const std::vector<double>& g) {
      auto& gx = t.grad_of(nx, n);
      for (int64_t i = 0; i < n; ++i) gx[i] += g[i];
    });
  }
  return out;
}

Tensor nchw_to_tokens(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("nchw_to_tokens: expected 4-d input");
  const int bs = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t hw = static_cast<int64_t>(h) * w;
  std::vector<int64_t> map(static_cast<size_t>(x.numel()));
  int64_t src = 0;
  for (int n = 0; n < bs; ++n)
    for (int cc = 0; cc < c; ++cc)
      for (int64_t p = 0; p < hw; ++p)
        map[static_cast<size_t>(src++)] = (static_cast<int64_t>(n) * hw + p) * c + cc;
  return permuted(x, {bs, static_cast<int>(hw), c}, std::move(map), "nchw_to_tokens");
}

Tensor tokens_to_nchw(const Tensor& x, int h, int w) {
  if (x.rank() != 3 || x.dim(1) != h * w)
    throw ShapeError("tokens_to_nchw: " + shape_str(x.shape) + " does not cover " +
                     std::to_string(h) + "x" + std::to_string(w));
  const int bs = x.dim(0), c = x.dim(2);
  const int64_t hw = static_cast<int64_t>(h) * w;
  std::vector<int64_t> map(static_cast<size_t>(x.numel()));
  int64_t src = 0;
  for (int n = 0; n < bs; ++n)
    for (int64_t p = 0; p < hw; ++p)
      for (int cc = 0; cc < c; ++cc)
        map[static_cast<size_t>(src++)] = (static_cast<int64_t>(n) * c + cc) * hw + p;
  return permuted(x, {bs, c, h, w}, std::move(map), "tokens_to_nchw");
}

Tensor tokens_to_bcl(const Tensor& x) {
  if (x.rank() != 3) throw ShapeError("tokens_to_bcl: expected 3-d input");
  const int bs = x.dim(0), l = x.dim(1), c = x.dim(2);
  std::vector<int64_t> map(static_cast<size_t>(x.numel()));
  int64_t src = 0;
  for (int n = 0; n < bs; ++n)
    for (int t = 0; t < l; ++t)
      for (int cc = 0; cc < c; ++cc)
        map[static_cast<size_t>(src++)] =
            (static_cast<int64_t>(n) * c + cc) * l + t;
  return permuted(x, {bs, c, l}, std::move(map), "tokens_to_bcl");
}

Tensor bcl_to_tokens(const Tensor& x) {
  if (x.rank() != 3) throw ShapeError("bcl_to_tokens: expected 3-d input");
  const int bs = x.dim(0), c = x.dim(1), l = x.dim(2);
  std::vector<int64_t> map(static_cast<size_t>(x.numel()));
  int64_t src = 0;
  for (int n = 0; n < bs; ++n)
    for (int cc = 0; cc < c; ++cc)
      for (int t = 0; t < l; ++t)
        map[static_cast<size_t>(src++)] =
            (static_cast<int64_t>(n) * l + t) * c + cc;
  return permuted(x, {bs, l, c}, std::move(map), "bcl_to_tokens");
}

Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0)
    throw ContractError("dropout: rate must be in [0, 1)");
  if (!training || rate == 0.0) return x;
  const int64_t n = x.numel();
  auto mask = std::make_shared<std::vector<double>>(static_cast<size_t>(n));
  const double keep = 1.0 - rate;
  for (int64_t i = 0; i < n; ++i)
    (*mask)[static_cast<size_t>(i)] = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
  Tensor out = Tensor::zeros(x.shape);
  for (int64_t i = 0; i < n; ++i)
    (*out.data)[i] = (*x.data)[i] * (*mask)[static_cast<size_t>(i)];
  finalize(out, "dropout");
  if (Tape* tp = recording({&x})) {
    const int nx = tp->node_of(x);
    attach_node(tp, out, [nx, n, mask](Tape& t, const std::vector<double>& g) {
      auto& gx = t.grad_of(nx, n);
      for (int64_t i = 0; i < n; ++i) gx[i] += g[i] * (*mask)[static_cast<size_t>(i)];
    });
  }
  return out;
}

Tensor cross_entropy_loss(const Tensor& logits, const std::vector<uint8_t>& labels,
                          int ignore_index) {
  if (logits.rank() != 4) throw ShapeError("cross_entropy_loss: expected 4-d logits");
  const int bs = logits.dim(0), k = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  const int64_t pixels = static_cast<int64_t>(bs) * h * w;
  if (static_cast<int64_t>(labels.size()) != pixels)
    throw ShapeError("cross_entropy_loss: got " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(pixels) + " pixels");
  const int64_t plane = static_cast<int64_t>(h) * w;
  const double* pz = logits.ptr();
  double acc = 0.0;
  int64_t valid = 0;
  for (int n = 0; n < bs; ++n)
    for (int64_t p = 0; p < plane; ++p) {
      const int label = labels[static_cast<size_t>(n * plane + p)];
      if (label == ignore_index) continue;
      if (label >= k)
        throw ValidationError("cross_entropy_loss: label " + std::to_string(label) +
                              " out of range for " + std::to_string(k) + " classes");
      const double* zcol = pz + static_cast<int64_t>(n) * k * plane + p;
      double m = zcol[0];
      for (int c = 1; c < k; ++c) m = std::max(m, zcol[static_cast<int64_t>(c) * plane]);
      double lse = 0.0;
      for (int c = 0; c < k; ++c) lse += std::exp(zcol[static_cast<int64_t>(c) * plane] - m);
      lse = m + std::log(lse);
      acc += lse - zcol[static_cast<int64_t>(label) * plane];
      ++valid;
    }
  if (valid == 0) return Tensor::scalar(0.0);  // constant, no gradient path

  Tensor out = Tensor::scalar(acc / static_cast<double>(valid));
  finalize(out, "cross_entropy_loss");
  if (Tape* tp = recording({&logits})) {
    const int nz = tp->node_of(logits);
    auto dz = logits.data;
    auto labs = std::make_shared<std::vector<uint8_t>>(labels);
    const int64_t v = valid;
    attach_node(tp, out, [=](Tape& t, const std::vector<double>& g) {
      auto& gz = t.grad_of(nz, static_cast<int64_t>(bs) * k * plane);
      const double scale = g[0] / static_cast<double>(v);
      for (int n = 0; n < bs; ++n)
        for (int64_t p = 0; p < plane; ++p) {
          const int label = (*labs)[static_cast<size_t>(n * plane + p)];
          if (label == ignore_index) continue;
          const int64_t base = static_cast<int64_t>(n) * k * plane + p;
          double m = (*dz)[static_cast<size_t>(base)];
          for (int c = 1; c < k; ++c)
            m = std::max(m, (*dz)[static_cast<size_t>(base + static_cast<int64_t>(c) * plane)]);
          double denom = 0.0;
          for (int c = 0; c < k; ++c)
            denom += std::exp((*dz)[static_cast<size_t>(base + static_cast<int64_t>(c) * plane)] - m);
          for (int c = 0; c < k; ++c) {
            const double pc =
                std::exp((*dz)[static_cast<size_t>(base + static_cast<int64_t>(c) * plane)] - m) / denom;
            gz[static_cast<size_t>(base + static_cast<int64_t>(c) * plane)] +=
                scale * (pc - (c == label ? 1.0 : 0.0));
          }
        }
    });
  }
  return out;
}

std::vector<uint8_t> argmax_classes(const Tensor& logits) {
  if (logits.rank() != 4) throw ShapeError("argmax_classes: expected 4-d logits");
  const int bs = logits.dim(0), k = logits.dim(1);
  const int64_t plane = static_cast<int64_t>(logits.dim(2)) * logits.dim(3);
  std::vector<uint8_t> out(static_cast<size_t>(bs * plane));
  const double* pz = logits.ptr();
  for (int n = 0; n < bs; ++n)
    for (int64_t p = 0; p < plane; ++p) {
      const double* zcol = pz + static_cast<int64_t>(n) * k * plane + p;
      int best = 0;
      double bv = zcol[0];
      for (int c = 1; c < k; ++c) {
        const double v = zcol[static_cast<int64_t>(c) * plane];
        if (v > bv) {
          bv = v;
          best = c;
        }
      }
      out[static_cast<size_t>(n * plane + p)] = static_cast<uint8_t>(best);
    }
  return out;
}

}  // namespace samba
