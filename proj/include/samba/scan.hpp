#pragma once

#include "samba/tensor.hpp"

namespace samba {

// Continuous-time lane parameters. A [d_inner, d_state] is diagonal per
// (channel, state) and strictly negative; D [d_inner] is the skip gain;
// B_t/C_t [B, L, d_state] and Delta_t [B, L, d_inner] are per-token.
struct SsmLaneParams {
  Tensor a;
  Tensor d;
  Tensor b_t;
  Tensor c_t;
  Tensor delta;
};

// Zero-order-hold coefficients, [B, L, d_inner, d_state] each.
// a_bar = e^{delta*a}; b_bar = delta * b * expm1(delta*a)/(delta*a) with the
// delta*a -> 0 limit handled exactly.
struct DiscreteLaneParams {
  Tensor a_bar;
  Tensor b_bar;
};

DiscreteLaneParams zoh_discretize(const Tensor& a, const Tensor& b_t,
                                  const Tensor& delta);

// h_k = a_bar_k * h_{k-1} + b_bar_k * x_k;  y_k = <c_k, h_k> + d * x_k,
// with h_0 = 0, per (batch, channel) lane. Differentiable in all inputs.
Tensor scan_discrete_sequential(const Tensor& x, const DiscreteLaneParams& dp,
                                const Tensor& c_t, const Tensor& d);

// Same result computed from per-chunk cumulative products of a_bar plus a
// carried inter-chunk state. chunk == L collapses to the sequential path.
Tensor scan_discrete_chunked(const Tensor& x, const DiscreteLaneParams& dp,
                             const Tensor& c_t, const Tensor& d, int chunk);

// Discretize-then-scan conveniences over the continuous parameter capsule.
Tensor selective_scan_sequential(const Tensor& x, const SsmLaneParams& p);
Tensor selective_scan_chunked(const Tensor& x, const SsmLaneParams& p, int chunk);

}  // namespace samba
