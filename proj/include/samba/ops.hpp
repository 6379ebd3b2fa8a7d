#pragma once

#include <cstdint>
#include <vector>

#include "samba/rng.hpp"
#include "samba/tensor.hpp"

namespace samba {

// Elementwise. add/sub/mul require identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor exp(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);  // ln(1 + e^x), overflow-safe
Tensor silu(const Tensor& a);     // x * sigmoid(x)

// Reductions.
Tensor sum(const Tensor& a);  // -> scalar

// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);

// x [N,in], w [in,out], b [out] or undefined -> [N,out]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// x [B,Cin,H,W], w [Cout,Cin,k,k], b [Cout] or undefined.
// Cross-correlation (no kernel flip); H' = (H + 2*pad - k)/stride + 1.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);

// Per-channel causal convolution, y[t] = sum_j w[j] * x[t-j].
// x [B,C,L], w [C,k], b [C] or undefined.
Tensor depthwise_conv1d(const Tensor& x, const Tensor& w, const Tensor& b);

// Normalizes over the trailing dimension D, then applies gamma/beta [D].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-6);

// align_corners = false
Tensor bilinear_resize(const Tensor& x, int out_h, int out_w);

Tensor adaptive_avg_pool2d(const Tensor& x, int out_h, int out_w);

// All inputs [B,Ci,H,W]; concatenated along the channel axis.
Tensor concat_channels(const std::vector<Tensor>& xs);

Tensor reshape(const Tensor& x, Shape s);

// Layout moves between spatial maps and token sequences.
Tensor nchw_to_tokens(const Tensor& x);                // [B,C,H,W] -> [B,HW,C]
Tensor tokens_to_nchw(const Tensor& x, int h, int w);  // [B,L,C] -> [B,C,h,w]
Tensor tokens_to_bcl(const Tensor& x);                 // [B,L,C] -> [B,C,L]
Tensor bcl_to_tokens(const Tensor& x);                 // [B,C,L] -> [B,L,C]

// Inverted dropout; identity when !training or rate == 0.
Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training);

// logits [B,K,H,W], labels [B*H*W] row-major. Mean of -log softmax over
// non-ignore pixels; zero valid pixels yields a constant 0 with no gradient.
Tensor cross_entropy_loss(const Tensor& logits, const std::vector<uint8_t>& labels,
                          int ignore_index = 255);

// Greedy per-pixel class choice, [B,K,H,W] -> B*H*W labels.
std::vector<uint8_t> argmax_classes(const Tensor& logits);

}  // namespace samba
