#pragma once

#include <string>
#include <vector>

#include "samba/encoder.hpp"
#include "samba/nn.hpp"

namespace samba {

struct DecoderConfig {
  int fpn_channels = 512;
  std::vector<int> pool_scales{1, 2, 3, 6};
  int num_classes = 7;
  double dropout_rate = 0.1;

  void validate() const;
};

// UperNet-style head: pyramid pooling over the deepest level, top-down FPN
// fusion, concatenation at the f1 scale, and a per-pixel classifier.
struct UperNetDecoder {
  DecoderConfig cfg;
  std::vector<Conv2d> ppm_convs;  // 1x1 per pool scale
  Conv2d ppm_bottleneck;          // 3x3 over f4 + pooled branches
  std::vector<Conv2d> laterals;   // 1x1 for f1..f3
  std::vector<Conv2d> fpn_convs;  // 3x3 refinements for f1..f3
  Conv2d fuse_conv;               // 3x3 over the concatenated levels
  Conv2d classifier;              // 1x1 to num_classes

  UperNetDecoder() = default;
  UperNetDecoder(const std::string& name, int base_channels, const DecoderConfig& cfg,
                 Rng& rng);

  Tensor ppm_forward(const Tensor& f4) const;
  std::vector<Tensor> fpn_fuse(const FeaturePyramid& pyr) const;
  // Logits [B, num_classes, out_h, out_w]; rng drives dropout when training.
  Tensor decode(const FeaturePyramid& pyr, int out_h, int out_w, bool training,
                Rng* dropout_rng) const;

  void collect(std::vector<Parameter*>& out);
};

}  // namespace samba
