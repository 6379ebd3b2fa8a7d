#include "samba/nn.hpp"

#include <cmath>

namespace samba {

namespace {

std::vector<double> uniform_init(int64_t n, double bound, Rng& rng) {
  std::vector<double> v(static_cast<size_t>(n));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return v;
}

}  // namespace

Linear::Linear(const std::string& name, int in, int out, bool with_bias, Rng& rng)
    : has_bias(with_bias) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = Parameter(name + ".weight", {in, out},
                     uniform_init(static_cast<int64_t>(in) * out, bound, rng));
  if (with_bias) bias = Parameter(name + ".bias", {out}, uniform_init(out, bound, rng));
}

Tensor Linear::forward(const Tensor& x) const {
  return linear(x, weight.value, has_bias ? bias.value : Tensor{});
}

void Linear::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  if (has_bias) out.push_back(&bias);
}

LayerNorm::LayerNorm(const std::string& name, int dim) {
  gamma = Parameter(name + ".gamma", {dim}, std::vector<double>(static_cast<size_t>(dim), 1.0));
  beta = Parameter(name + ".beta", {dim});
}

Tensor LayerNorm::forward(const Tensor& x) const {
  return layer_norm(x, gamma.value, beta.value, eps);
}

void LayerNorm::collect(std::vector<Parameter*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

Conv2d::Conv2d(const std::string& name, int ci, int co, int k, int stride_, int pad_,
               Rng& rng)
    : stride(stride_), pad(pad_) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(ci) * k * k);
  weight = Parameter(name + ".weight", {co, ci, k, k},
                     uniform_init(static_cast<int64_t>(co) * ci * k * k, bound, rng));
  bias = Parameter(name + ".bias", {co}, uniform_init(co, bound, rng));
}

Tensor Conv2d::forward(const Tensor& x) const {
  return conv2d(x, weight.value, bias.value, stride, pad);
}

void Conv2d::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

DepthwiseConv1d::DepthwiseConv1d(const std::string& name, int channels, int k, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(k));
  weight = Parameter(name + ".weight", {channels, k},
                     uniform_init(static_cast<int64_t>(channels) * k, bound, rng));
  bias = Parameter(name + ".bias", {channels}, uniform_init(channels, bound, rng));
}

Tensor DepthwiseConv1d::forward(const Tensor& x) const {
  return depthwise_conv1d(x, weight.value, bias.value);
}

void DepthwiseConv1d::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

}  // namespace samba
