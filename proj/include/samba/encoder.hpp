#pragma once

#include <array>
#include <string>
#include <vector>

#include "samba/nn.hpp"
#include "samba/ssm.hpp"

namespace samba {

// Four-stage hierarchical encoder. Stage s runs at 1/(4*2^s) resolution with
// width base_channels * 2^s.
struct SambaConfig {
  int base_channels = 64;
  std::array<int, 4> stage_depths{2, 2, 4, 2};
  double mlp_ratio = 4.0;
  MambaBlockConfig mamba;  // dim is filled per stage
  int num_classes = 7;

  int stage_width(int s) const { return base_channels << s; }
  void validate() const;
};

struct FeaturePyramid {
  Tensor f1;  // [B,  C, H/4,  W/4 ]
  Tensor f2;  // [B, 2C, H/8,  W/8 ]
  Tensor f3;  // [B, 4C, H/16, W/16]
  Tensor f4;  // [B, 8C, H/32, W/32]
};

// Residual unit: tokens + mamba(LN(tokens)), then tokens + FFN(LN(tokens)).
struct SambaBlock {
  LayerNorm norm1;
  LayerNorm norm2;
  MambaBlock mamba;
  Linear fc1;
  Linear fc2;

  SambaBlock(const std::string& name, int dim, int mlp_hidden,
             const MambaBlockConfig& mcfg, Rng& rng);

  Tensor forward(const Tensor& tokens, int scan_chunk = 0) const;
  void collect(std::vector<Parameter*>& out);
};

// Non-overlapping 4x4 patchification via strided conv, then channel LN.
struct PatchEmbed {
  Conv2d proj;
  LayerNorm norm;

  PatchEmbed() = default;
  PatchEmbed(const std::string& name, int out_channels, Rng& rng);

  Tensor forward(const Tensor& img) const;  // [B,3,H,W] -> [B,C,H/4,W/4]
  void collect(std::vector<Parameter*>& out);
};

// 2x spatial reduction and channel doubling between stages.
struct Downsample {
  Conv2d proj;
  LayerNorm norm;

  Downsample() = default;
  Downsample(const std::string& name, int in_channels, Rng& rng);

  Tensor forward(const Tensor& fmap) const;  // [B,D,h,w] -> [B,2D,h/2,w/2]
  void collect(std::vector<Parameter*>& out);
};

struct SambaEncoder {
  SambaConfig cfg;
  PatchEmbed embed;
  std::array<std::vector<SambaBlock>, 4> stages;
  std::array<Downsample, 3> downs;

  SambaEncoder(const std::string& name, const SambaConfig& cfg, Rng& rng);

  FeaturePyramid forward(const Tensor& img, int scan_chunk = 0) const;
  void collect(std::vector<Parameter*>& out);
};

}  // namespace samba
