#include "samba/encoder.hpp"

#include "samba/errors.hpp"

namespace samba {

void SambaConfig::validate() const {
  if (base_channels < 1) throw ConfigError("base_channels must be positive");
  for (int d : stage_depths)
    if (d < 1) throw ConfigError("stage depths must be positive");
  if (mlp_ratio <= 0.0) throw ConfigError("mlp_ratio must be positive");
  if (num_classes < 1) throw ConfigError("num_classes must be positive");
  MambaBlockConfig probe = mamba;
  probe.dim = base_channels;
  probe.validate();
}

SambaBlock::SambaBlock(const std::string& name, int dim, int mlp_hidden,
                       const MambaBlockConfig& mcfg, Rng& rng)
    : norm1(name + ".norm1", dim),
      norm2(name + ".norm2", dim),
      mamba(name + ".mamba", mcfg, rng),
      fc1(name + ".fc1", dim, mlp_hidden, true, rng),
      fc2(name + ".fc2", mlp_hidden, dim, true, rng) {}

Tensor SambaBlock::forward(const Tensor& tokens, int scan_chunk) const {
  Tensor x = add(tokens, mamba.forward(norm1.forward(tokens), scan_chunk));
  const int bs = x.dim(0), len = x.dim(1), dim = x.dim(2);
  Tensor h = reshape(norm2.forward(x), {bs * len, dim});
  h = fc2.forward(silu(fc1.forward(h)));
  return add(x, reshape(h, {bs, len, dim}));
}

void SambaBlock::collect(std::vector<Parameter*>& out) {
  norm1.collect(out);
  mamba.collect(out);
  norm2.collect(out);
  fc1.collect(out);
  fc2.collect(out);
}

PatchEmbed::PatchEmbed(const std::string& name, int out_channels, Rng& rng)
    : proj(name + ".proj", 3, out_channels, 4, 4, 0, rng), norm(name + ".norm", out_channels) {}

Tensor PatchEmbed::forward(const Tensor& img) const {
  if (img.rank() != 4 || img.dim(1) != 3)
    throw ShapeError("patch_embed: expected [B,3,H,W], got " + shape_str(img.shape));
  const int h = img.dim(2), w = img.dim(3);
  if (h % 4 != 0 || w % 4 != 0)
    throw ShapeError("patch_embed: spatial dims " + std::to_string(h) + "x" +
                     std::to_string(w) + " not divisible by 4");
  Tensor f = proj.forward(img);
  Tensor t = norm.forward(nchw_to_tokens(f));
  return tokens_to_nchw(t, f.dim(2), f.dim(3));
}

void PatchEmbed::collect(std::vector<Parameter*>& out) {
  proj.collect(out);
  norm.collect(out);
}

Downsample::Downsample(const std::string& name, int in_channels, Rng& rng)
    : proj(name + ".proj", in_channels, 2 * in_channels, 2, 2, 0, rng),
      norm(name + ".norm", 2 * in_channels) {}

Tensor Downsample::forward(const Tensor& fmap) const {
  if (fmap.rank() != 4) throw ShapeError("downsample: expected 4-d feature map");
  if (fmap.dim(2) % 2 != 0 || fmap.dim(3) % 2 != 0)
    throw ShapeError("downsample: odd spatial dims in " + shape_str(fmap.shape));
  Tensor f = proj.forward(fmap);
  Tensor t = norm.forward(nchw_to_tokens(f));
  return tokens_to_nchw(t, f.dim(2), f.dim(3));
}

void Downsample::collect(std::vector<Parameter*>& out) {
  proj.collect(out);
  norm.collect(out);
}

SambaEncoder::SambaEncoder(const std::string& name, const SambaConfig& c, Rng& rng)
    : cfg(c), embed(name + ".patch_embed", c.base_channels, rng) {
  cfg.validate();
  for (int s = 0; s < 4; ++s) {
    const int dim = cfg.stage_width(s);
    MambaBlockConfig mc = cfg.mamba;
    mc.dim = dim;
    const int hidden = static_cast<int>(dim * cfg.mlp_ratio);
    stages[static_cast<size_t>(s)].reserve(static_cast<size_t>(cfg.stage_depths[static_cast<size_t>(s)]));
    for (int b = 0; b < cfg.stage_depths[static_cast<size_t>(s)]; ++b)
      stages[static_cast<size_t>(s)].emplace_back(
          name + ".stages." + std::to_string(s) + ".blocks." + std::to_string(b), dim,
          hidden, mc, rng);
    if (s < 3)
      downs[static_cast<size_t>(s)] =
          Downsample(name + ".downs." + std::to_string(s), dim, rng);
  }
}

FeaturePyramid SambaEncoder::forward(const Tensor& img, int scan_chunk) const {
  if (img.rank() != 4) throw ShapeError("encoder: expected [B,3,H,W] input");
  const int h = img.dim(2), w = img.dim(3);
  if (h % 32 != 0 || w % 32 != 0)
    throw ShapeError("encoder: input dims " + std::to_string(h) + "x" +
                     std::to_string(w) + " must be divisible by 32");

  FeaturePyramid pyr;
  Tensor f = embed.forward(img);
  for (int s = 0; s < 4; ++s) {
    const int fh = f.dim(2), fw = f.dim(3);
    Tensor t = nchw_to_tokens(f);
    for (const SambaBlock& blk : stages[static_cast<size_t>(s)])
      t = blk.forward(t, scan_chunk);
    f = tokens_to_nchw(t, fh, fw);
    switch (s) {
      case 0: pyr.f1 = f; break;
      case 1: pyr.f2 = f; break;
      case 2: pyr.f3 = f; break;
      case 3: pyr.f4 = f; break;
    }
    if (s < 3) f = downs[static_cast<size_t>(s)].forward(f);
  }
  return pyr;
}

void SambaEncoder::collect(std::vector<Parameter*>& out) {
  embed.collect(out);
  for (int s = 0; s < 4; ++s) {
    for (SambaBlock& blk : stages[static_cast<size_t>(s)]) blk.collect(out);
    if (s < 3) downs[static_cast<size_t>(s)].collect(out);
  }
}

}  // namespace samba
