#include "samba/scan.hpp"

#include <algorithm>
#include <cmath>

#include "samba/errors.hpp"

namespace samba {

namespace {

// phi(z) = expm1(z)/z, phi(0) = 1. Series below the cutoff keeps full
// precision through the z -> 0 limit.
double phi(double z) {
  if (std::fabs(z) < 1e-8) return 1.0 + 0.5 * z;
  return std::expm1(z) / z;
}

// phi'(z) = (e^z (z - 1) + 1) / z^2; the direct form cancels near zero.
double phi_prime(double z) {
  if (std::fabs(z) < 1e-4) return 0.5 + z / 3.0 + z * z / 8.0;
  return (std::exp(z) * (z - 1.0) + 1.0) / (z * z);
}

void quantize_and_check(Tensor& t, const char* op) {
  const Precision p = precision();
  for (double& v : *t.data) {
    if (p == Precision::f32) v = static_cast<double>(static_cast<float>(v));
    if (!std::isfinite(v))
      throw NumericError(std::string(op) + ": non-finite value in output");
  }
}

struct ScanDims {
  int bs, len, di, ds;
};

ScanDims check_scan_shapes(const Tensor& x, const Tensor& a_bar, const Tensor& b_bar,
                           const Tensor& c_t, const Tensor& d) {
  if (x.rank() != 3 || a_bar.rank() != 4 || b_bar.rank() != 4 || c_t.rank() != 3 ||
      d.rank() != 1)
    throw ShapeError("selective_scan: bad ranks x=" + shape_str(x.shape) +
                     " a_bar=" + shape_str(a_bar.shape));
  ScanDims sd{x.dim(0), x.dim(1), x.dim(2), a_bar.dim(3)};
  const Shape abs_shape{sd.bs, sd.len, sd.di, sd.ds};
  if (a_bar.shape != abs_shape || b_bar.shape != abs_shape)
    throw ShapeError("selective_scan: coefficient shape " + shape_str(a_bar.shape) +
                     " does not match input " + shape_str(x.shape));
  if (c_t.dim(0) != sd.bs || c_t.dim(1) != sd.len || c_t.dim(2) != sd.ds)
    throw ShapeError("selective_scan: c_t shape " + shape_str(c_t.shape));
  if (d.dim(0) != sd.di) throw ShapeError("selective_scan: d shape " + shape_str(d.shape));
  return sd;
}

// Reverse sweep of the recurrence adjoint shared by the sequential and the
// chunked forward (identical mathematics, same saved states).
void scan_backward(Tape& t, const std::vector<double>& g, ScanDims sd,
                   std::shared_ptr<std::vector<double>> h_all,
                   std::shared_ptr<std::vector<double>> dx,
                   std::shared_ptr<std::vector<double>> dab,
                   std::shared_ptr<std::vector<double>> dbb,
                   std::shared_ptr<std::vector<double>> dct,
                   std::shared_ptr<std::vector<double>> dd, int nx, int nab, int nbb,
                   int nct, int nd) {
  const auto [bs, len, di, ds] = sd;
  const int64_t xn = static_cast<int64_t>(bs) * len * di;
  const int64_t cn = static_cast<int64_t>(bs) * len * ds;
  const int64_t lane_n = static_cast<int64_t>(bs) * len * di * ds;
  std::vector<double>* gx = nx >= 0 ? &t.grad_of(nx, xn) : nullptr;
  std::vector<double>* gab = nab >= 0 ? &t.grad_of(nab, lane_n) : nullptr;
  std::vector<double>* gbb = nbb >= 0 ? &t.grad_of(nbb, lane_n) : nullptr;
  std::vector<double>* gct = nct >= 0 ? &t.grad_of(nct, cn) : nullptr;
  std::vector<double>* gd = nd >= 0 ? &t.grad_of(nd, di) : nullptr;

  std::vector<double> gh(static_cast<size_t>(di) * ds);
  for (int b = 0; b < bs; ++b) {
    std::fill(gh.begin(), gh.end(), 0.0);
    for (int tt = len - 1; tt >= 0; --tt) {
      const int64_t yoff = (static_cast<int64_t>(b) * len + tt) * di;
      const int64_t coff = (static_cast<int64_t>(b) * len + tt) * ds;
      const int64_t loff = yoff * ds;
      for (int i = 0; i < di; ++i) {
        const double gy = g[static_cast<size_t>(yoff + i)];
        const double xv = (*dx)[static_cast<size_t>(yoff + i)];
        if (gy != 0.0) {
          if (gd) (*gd)[static_cast<size_t>(i)] += gy * xv;
          if (gx) (*gx)[static_cast<size_t>(yoff + i)] += gy * (*dd)[static_cast<size_t>(i)];
        }
        double* ghrow = gh.data() + static_cast<size_t>(i) * ds;
        const double* hrow = h_all->data() + loff + static_cast<int64_t>(i) * ds;
        for (int n = 0; n < ds; ++n) {
          if (gy != 0.0) {
            ghrow[n] += gy * (*dct)[static_cast<size_t>(coff + n)];
            if (gct) (*gct)[static_cast<size_t>(coff + n)] += gy * hrow[n];
          }
        }
        // through h_t = a_bar*h_{t-1} + b_bar*x_t
        const double* hprev =
            tt > 0 ? h_all->data() + loff - static_cast<int64_t>(di) * ds +
                         static_cast<int64_t>(i) * ds
                   : nullptr;
        double gx_acc = 0.0;
        for (int n = 0; n < ds; ++n) {
          const double ghv = ghrow[n];
          if (ghv != 0.0) {
            if (gab) (*gab)[static_cast<size_t>(loff + i * ds + n)] += ghv * (hprev ? hprev[n] : 0.0);
            if (gbb) (*gbb)[static_cast<size_t>(loff + i * ds + n)] += ghv * xv;
            gx_acc += ghv * (*dbb)[static_cast<size_t>(loff + i * ds + n)];
          }
          ghrow[n] = ghv * (*dab)[static_cast<size_t>(loff + i * ds + n)];
        }
        if (gx) (*gx)[static_cast<size_t>(yoff + i)] += gx_acc;
      }
    }
  }
}

Tensor scan_common(const Tensor& x, const DiscreteLaneParams& dp, const Tensor& c_t,
                   const Tensor& d, int chunk) {
  const ScanDims sd = check_scan_shapes(x, dp.a_bar, dp.b_bar, c_t, d);
  const auto [bs, len, di, ds] = sd;
  if (chunk < 1) throw ContractError("selective_scan: chunk must be >= 1");

  Tensor y = Tensor::zeros({bs, len, di});
  auto h_all =
      std::make_shared<std::vector<double>>(static_cast<size_t>(bs) * len * di * ds);
  const double* px = x.ptr();
  const double* pab = dp.a_bar.ptr();
  const double* pbb = dp.b_bar.ptr();
  const double* pc = c_t.ptr();
  const double* pd = d.ptr();
  double* py = y.mut();

  const bool chunked = chunk < len;
  std::vector<double> carry(static_cast<size_t>(di) * ds);
  std::vector<double> cumprod(static_cast<size_t>(di) * ds);
  std::vector<double> local(static_cast<size_t>(di) * ds);
  for (int b = 0; b < bs; ++b) {
    std::fill(carry.begin(), carry.end(), 0.0);
    for (int s = 0; s < len; s += chunk) {
      const int e = std::min(s + chunk, len);
      const bool first = s == 0;
      if (chunked && !first) std::fill(cumprod.begin(), cumprod.end(), 1.0);
      // Local scan from a zero state; non-first chunks fold in the carried
      // state through the materialized cumulative product of a_bar.
      std::fill(local.begin(), local.end(), 0.0);
      for (int tt = s; tt < e; ++tt) {
        const int64_t yoff = (static_cast<int64_t>(b) * len + tt) * di;
        const int64_t coff = (static_cast<int64_t>(b) * len + tt) * ds;
        const int64_t loff = yoff * ds;
        for (int i = 0; i < di; ++i) {
          const double xv = px[yoff + i];
          double* lrow = local.data() + static_cast<size_t>(i) * ds;
          double* hsave = h_all->data() + loff + static_cast<int64_t>(i) * ds;
          const double* abrow = pab + loff + static_cast<int64_t>(i) * ds;
          const double* bbrow = pbb + loff + static_cast<int64_t>(i) * ds;
          double acc = pd[i] * xv;
          if (chunked && !first) {
            double* prow = cumprod.data() + static_cast<size_t>(i) * ds;
            const double* crow = carry.data() + static_cast<size_t>(i) * ds;
            for (int n = 0; n < ds; ++n) {
              lrow[n] = abrow[n] * lrow[n] + bbrow[n] * xv;
              prow[n] *= abrow[n];
              const double hv = lrow[n] + prow[n] * crow[n];
              hsave[n] = hv;
              acc += pc[coff + n] * hv;
            }
          } else {
            for (int n = 0; n < ds; ++n) {
              const double hv = abrow[n] * lrow[n] + bbrow[n] * xv;
              lrow[n] = hv;
              hsave[n] = hv;
              acc += pc[coff + n] * hv;
            }
          }
          py[yoff + i] = acc;
        }
      }
      // carry the true end-of-chunk state
      const int64_t last = ((static_cast<int64_t>(b) * len + (e - 1)) * di) * ds;
      std::copy(h_all->data() + last, h_all->data() + last + static_cast<int64_t>(di) * ds,
                carry.begin());
    }
  }
  quantize_and_check(y, "selective_scan");

  Tape* tp = Tape::active();
  if (tp) {
    const int nx = tp->node_of(x), nab = tp->node_of(dp.a_bar), nbb = tp->node_of(dp.b_bar);
    const int nct = tp->node_of(c_t), nd = tp->node_of(d);
    if (nx >= 0 || nab >= 0 || nbb >= 0 || nct >= 0 || nd >= 0) {
      auto dx = x.data;
      auto dab = dp.a_bar.data;
      auto dbb = dp.b_bar.data;
      auto dct = c_t.data;
      auto dd = d.data;
      tp->attach(y, tp->alloc_node([=](Tape& t, const std::vector<double>& g) {
        scan_backward(t, g, sd, h_all, dx, dab, dbb, dct, dd, nx, nab, nbb, nct, nd);
      }));
    }
  }
  return y;
}

}  // namespace

DiscreteLaneParams zoh_discretize(const Tensor& a, const Tensor& b_t,
                                  const Tensor& delta) {
  if (a.rank() != 2 || b_t.rank() != 3 || delta.rank() != 3)
    throw ShapeError("zoh_discretize: bad ranks a=" + shape_str(a.shape) +
                     " b_t=" + shape_str(b_t.shape) + " delta=" + shape_str(delta.shape));
  const int di = a.dim(0), ds = a.dim(1);
  const int bs = b_t.dim(0), len = b_t.dim(1);
  if (b_t.dim(2) != ds)
    throw ShapeError("zoh_discretize: b_t state width " + shape_str(b_t.shape) +
                     " vs a " + shape_str(a.shape));
  if (delta.dim(0) != bs || delta.dim(1) != len || delta.dim(2) != di)
    throw ShapeError("zoh_discretize: delta shape " + shape_str(delta.shape));

  const double* pa = a.ptr();
  const double* pb = b_t.ptr();
  const double* pdt = delta.ptr();
  for (int64_t i = 0; i < delta.numel(); ++i)
    if (!(pdt[i] > 0.0))
      throw ContractError("zoh_discretize: nonpositive timestep delta");

  Tensor a_bar = Tensor::zeros({bs, len, di, ds});
  Tensor b_bar = Tensor::zeros({bs, len, di, ds});
  double* pab = a_bar.mut();
  double* pbb = b_bar.mut();
  for (int b = 0; b < bs; ++b)
    for (int t = 0; t < len; ++t) {
      const int64_t doff = (static_cast<int64_t>(b) * len + t) * di;
      const int64_t boff = (static_cast<int64_t>(b) * len + t) * ds;
      for (int i = 0; i < di; ++i) {
        const double dt = pdt[doff + i];
        const int64_t loff = (doff + i) * ds;
        for (int n = 0; n < ds; ++n) {
          const double z = dt * pa[static_cast<int64_t>(i) * ds + n];
          pab[loff + n] = std::exp(z);
          pbb[loff + n] = dt * pb[boff + n] * phi(z);
        }
      }
    }
  quantize_and_check(a_bar, "zoh_discretize");
  quantize_and_check(b_bar, "zoh_discretize");

  Tape* tp = Tape::active();
  if (tp) {
    const int na = tp->node_of(a), nb = tp->node_of(b_t), ndt = tp->node_of(delta);
    if (na >= 0 || nb >= 0 || ndt >= 0) {
      auto da = a.data;
      auto db = b_t.data;
      auto ddt = delta.data;
      const int64_t an = static_cast<int64_t>(di) * ds;
      const int64_t bn = static_cast<int64_t>(bs) * len * ds;
      const int64_t dn = static_cast<int64_t>(bs) * len * di;

      tp->attach(a_bar, tp->alloc_node([=](Tape& t, const std::vector<double>& g) {
        std::vector<double>* ga = na >= 0 ? &t.grad_of(na, an) : nullptr;
        std::vector<double>* gdt = ndt >= 0 ? &t.grad_of(ndt, dn) : nullptr;
        if (!ga && !gdt) return;
        for (int b = 0; b < bs; ++b)
          for (int tt = 0; tt < len; ++tt) {
            const int64_t doff = (static_cast<int64_t>(b) * len + tt) * di;
            for (int i = 0; i < di; ++i) {
              const double dt = (*ddt)[static_cast<size_t>(doff + i)];
              const int64_t loff = (doff + i) * ds;
              for (int n = 0; n < ds; ++n) {
                const double gv = g[static_cast<size_t>(loff + n)];
                if (gv == 0.0) continue;
                const double av = (*da)[static_cast<size_t>(i) * ds + n];
                const double e = std::exp(dt * av);
                if (ga) (*ga)[static_cast<size_t>(i) * ds + n] += gv * dt * e;
                if (gdt) (*gdt)[static_cast<size_t>(doff + i)] += gv * av * e;
              }
            }
          }
      }));

      tp->attach(b_bar, tp->alloc_node([=](Tape& t, const std::vector<double>& g) {
        std::vector<double>* ga = na >= 0 ? &t.grad_of(na, an) : nullptr;
        std::vector<double>* gb = nb >= 0 ? &t.grad_of(nb, bn) : nullptr;
        std::vector<double>* gdt = ndt >= 0 ? &t.grad_of(ndt, dn) : nullptr;
        if (!ga && !gb && !gdt) return;
        for (int b = 0; b < bs; ++b)
          for (int tt = 0; tt < len; ++tt) {
            const int64_t doff = (static_cast<int64_t>(b) * len + tt) * di;
            const int64_t boff = (static_cast<int64_t>(b) * len + tt) * ds;
            for (int i = 0; i < di; ++i) {
              const double dt = (*ddt)[static_cast<size_t>(doff + i)];
              const int64_t loff = (doff + i) * ds;
              for (int n = 0; n < ds; ++n) {
                const double gv = g[static_cast<size_t>(loff + n)];
                if (gv == 0.0) continue;
                const double av = (*da)[static_cast<size_t>(i) * ds + n];
                const double bv = (*db)[static_cast<size_t>(boff + n)];
                const double z = dt * av;
                const double ph = phi(z);
                const double php = phi_prime(z);
                if (gb) (*gb)[static_cast<size_t>(boff + n)] += gv * dt * ph;
                if (gdt)
                  (*gdt)[static_cast<size_t>(doff + i)] += gv * bv * (ph + z * php);
                if (ga) (*ga)[static_cast<size_t>(i) * ds + n] += gv * bv * dt * dt * php;
              }
            }
          }
      }));
    }
  }
  return {a_bar, b_bar};
}

Tensor scan_discrete_sequential(const Tensor& x, const DiscreteLaneParams& dp,
                                const Tensor& c_t, const Tensor& d) {
  const int len = x.rank() == 3 ? x.dim(1) : 0;
  return scan_common(x, dp, c_t, d, std::max(1, len));
}

Tensor scan_discrete_chunked(const Tensor& x, const DiscreteLaneParams& dp,
                             const Tensor& c_t, const Tensor& d, int chunk) {
  return scan_common(x, dp, c_t, d, chunk);
}

Tensor selective_scan_sequential(const Tensor& x, const SsmLaneParams& p) {
  DiscreteLaneParams dp = zoh_discretize(p.a, p.b_t, p.delta);
  return scan_discrete_sequential(x, dp, p.c_t, p.d);
}

Tensor selective_scan_chunked(const Tensor& x, const SsmLaneParams& p, int chunk) {
  DiscreteLaneParams dp = zoh_discretize(p.a, p.b_t, p.delta);
  return scan_discrete_chunked(x, dp, p.c_t, p.d, chunk);
}

}  // namespace samba
