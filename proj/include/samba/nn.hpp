#pragma once

#include <string>
#include <vector>

#include "samba/ops.hpp"
#include "samba/rng.hpp"
#include "samba/tensor.hpp"

namespace samba {

// Layers own their Parameters; collect() appends pointers in construction
// order, which fixes the checkpoint tensor order.

struct Linear {
  Parameter weight;  // [in, out]
  Parameter bias;    // [out]; undefined tensor when bias-less
  bool has_bias = true;

  Linear() = default;
  Linear(const std::string& name, int in, int out, bool with_bias, Rng& rng);

  Tensor forward(const Tensor& x) const;  // [N, in] -> [N, out]
  void collect(std::vector<Parameter*>& out);
};

struct LayerNorm {
  Parameter gamma;
  Parameter beta;
  double eps = 1e-6;

  LayerNorm() = default;
  LayerNorm(const std::string& name, int dim);

  Tensor forward(const Tensor& x) const;
  void collect(std::vector<Parameter*>& out);
};

struct Conv2d {
  Parameter weight;  // [co, ci, k, k]
  Parameter bias;    // [co]
  int stride = 1;
  int pad = 0;

  Conv2d() = default;
  Conv2d(const std::string& name, int ci, int co, int k, int stride, int pad, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void collect(std::vector<Parameter*>& out);
};

struct DepthwiseConv1d {
  Parameter weight;  // [channels, k]
  Parameter bias;    // [channels]

  DepthwiseConv1d() = default;
  DepthwiseConv1d(const std::string& name, int channels, int k, Rng& rng);

  Tensor forward(const Tensor& x) const;  // [B, C, L] causal
  void collect(std::vector<Parameter*>& out);
};

}  // namespace samba
