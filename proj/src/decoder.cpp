#include "samba/decoder.hpp"

#include <algorithm>

#include "samba/errors.hpp"

namespace samba {

void DecoderConfig::validate() const {
  if (fpn_channels < 1) throw ConfigError("fpn_channels must be positive");
  if (num_classes < 1) throw ConfigError("num_classes must be positive");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw ConfigError("dropout_rate must be in [0, 1)");
  if (pool_scales.empty()) throw ConfigError("pool_scales must be non-empty");
  for (size_t i = 0; i < pool_scales.size(); ++i) {
    if (pool_scales[i] < 1) throw ConfigError("pool scales must be >= 1");
    if (i > 0 && pool_scales[i] <= pool_scales[i - 1])
      throw ConfigError("pool_scales must be strictly ascending");
  }
}

UperNetDecoder::UperNetDecoder(const std::string& name, int base_channels,
                               const DecoderConfig& c, Rng& rng)
    : cfg(c) {
  cfg.validate();
  const int top = 8 * base_channels;
  const int fpn = cfg.fpn_channels;
  ppm_convs.reserve(cfg.pool_scales.size());
  for (size_t i = 0; i < cfg.pool_scales.size(); ++i)
    ppm_convs.emplace_back(name + ".ppm." + std::to_string(i), top, fpn, 1, 1, 0, rng);
  ppm_bottleneck = Conv2d(name + ".ppm_bottleneck",
                          top + fpn * static_cast<int>(cfg.pool_scales.size()), fpn, 3, 1,
                          1, rng);
  for (int s = 0; s < 3; ++s) {
    laterals.emplace_back(name + ".lateral." + std::to_string(s),
                          base_channels << s, fpn, 1, 1, 0, rng);
    fpn_convs.emplace_back(name + ".fpn." + std::to_string(s), fpn, fpn, 3, 1, 1, rng);
  }
  fuse_conv = Conv2d(name + ".fuse", 4 * fpn, fpn, 3, 1, 1, rng);
  classifier = Conv2d(name + ".classifier", fpn, cfg.num_classes, 1, 1, 0, rng);
}

Tensor UperNetDecoder::ppm_forward(const Tensor& f4) const {
  const int h = f4.dim(2), w = f4.dim(3);
  const int max_scale = cfg.pool_scales.back();  // validated ascending
  if (h < max_scale || w < max_scale)
    throw ShapeError("ppm: pool scale " + std::to_string(max_scale) +
                     " exceeds feature size " + shape_str(f4.shape));
  std::vector<Tensor> branches;
  branches.push_back(f4);
  for (size_t i = 0; i < cfg.pool_scales.size(); ++i) {
    const int s = cfg.pool_scales[i];
    Tensor pooled = adaptive_avg_pool2d(f4, s, s);
    Tensor projd = silu(ppm_convs[i].forward(pooled));
    branches.push_back(bilinear_resize(projd, h, w));
  }
  return silu(ppm_bottleneck.forward(concat_channels(branches)));
}

std::vector<Tensor> UperNetDecoder::fpn_fuse(const FeaturePyramid& pyr) const {
  std::array<const Tensor*, 3> lower{&pyr.f1, &pyr.f2, &pyr.f3};
  Tensor top = ppm_forward(pyr.f4);

  std::vector<Tensor> fused(4);
  fused[3] = top;
  Tensor carry = top;
  for (int s = 2; s >= 0; --s) {
    Tensor lat = laterals[static_cast<size_t>(s)].forward(*lower[static_cast<size_t>(s)]);
    carry = add(lat, bilinear_resize(carry, lat.dim(2), lat.dim(3)));
    fused[static_cast<size_t>(s)] =
        silu(fpn_convs[static_cast<size_t>(s)].forward(carry));
  }
  return fused;
}

Tensor UperNetDecoder::decode(const FeaturePyramid& pyr, int out_h, int out_w,
                              bool training, Rng* dropout_rng) const {
  std::vector<Tensor> fused = fpn_fuse(pyr);
  const int h = fused[0].dim(2), w = fused[0].dim(3);
  std::vector<Tensor> gathered;
  gathered.reserve(fused.size());
  for (size_t i = 0; i < fused.size(); ++i)
    gathered.push_back(i == 0 ? fused[i] : bilinear_resize(fused[i], h, w));
  Tensor x = silu(fuse_conv.forward(concat_channels(gathered)));
  if (training && cfg.dropout_rate > 0.0) {
    if (!dropout_rng) throw ContractError("decode: dropout requires an rng in training");
    x = dropout(x, cfg.dropout_rate, *dropout_rng, true);
  }
  Tensor logits = classifier.forward(x);
  return bilinear_resize(logits, out_h, out_w);
}

void UperNetDecoder::collect(std::vector<Parameter*>& out) {
  for (Conv2d& cv : ppm_convs) cv.collect(out);
  ppm_bottleneck.collect(out);
  for (Conv2d& cv : laterals) cv.collect(out);
  for (Conv2d& cv : fpn_convs) cv.collect(out);
  fuse_conv.collect(out);
  classifier.collect(out);
}

}  // namespace samba
