#include "samba/model.hpp"

namespace samba {

namespace {

// Model init and dropout draw from separate streams of the run seed.
Rng init_rng(uint64_t seed) { return Rng(mix_seed(seed, 0x6d6f64656cull)); }

}  // namespace

SambaSegmenter::SambaSegmenter(const SambaConfig& c, const DecoderConfig& dc,
                               uint64_t seed)
    : cfg(c),
      dcfg([&] {
        DecoderConfig d = dc;
        d.num_classes = c.num_classes;
        return d;
      }()),
      encoder([&] {
        Rng rng = init_rng(seed);
        return SambaEncoder("encoder", c, rng);
      }()),
      decoder([&] {
        Rng rng = init_rng(mix_seed(seed, 0xdec0de));
        DecoderConfig d = dc;
        d.num_classes = c.num_classes;
        return UperNetDecoder("decoder", c.base_channels, d, rng);
      }()),
      dropout_rng(mix_seed(seed, 0xd50b)) {}

Tensor SambaSegmenter::forward(const Tensor& img, int scan_chunk) {
  FeaturePyramid pyr = encoder.forward(img, scan_chunk);
  return decoder.decode(pyr, img.dim(2), img.dim(3), training, &dropout_rng);
}

std::vector<Parameter*> SambaSegmenter::parameters() {
  std::vector<Parameter*> out;
  encoder.collect(out);
  decoder.collect(out);
  return out;
}

int64_t count_parameters(const std::vector<Parameter*>& params) {
  int64_t total = 0;
  for (const Parameter* p : params) total += p->numel();
  return total;
}

double estimate_flops(const SambaConfig& cfg, const DecoderConfig& dcfg, int h, int w) {
  double macs = 0.0;
  const int c = cfg.base_channels;

  // patch embed: 4x4 stride-4 conv from 3 channels
  double fh = h / 4.0, fw = w / 4.0;
  macs += fh * fw * c * 3.0 * 16.0;

  for (int s = 0; s < 4; ++s) {
    const int dim = cfg.stage_width(s);
    MambaBlockConfig mc = cfg.mamba;
    mc.dim = dim;
    const int di = mc.d_inner();
    const int ds = mc.d_state;
    const int rank = mc.resolved_dt_rank();
    const double len = fh * fw;
    const double hidden = static_cast<double>(static_cast<int>(dim * cfg.mlp_ratio));
    const double per_block =
        2.0 * len * dim * di                      // value and gate projections
        + len * di * mc.conv_kernel               // causal depthwise conv
        + len * di * (2.0 * ds + rank)            // B, C and low-rank Delta
        + len * rank * di                         // Delta up-projection
        + len * di * (ds * 6.0)                   // discretize + recurrence
        + len * di * dim                          // output projection
        + 2.0 * len * dim * hidden;               // FFN
    macs += cfg.stage_depths[static_cast<size_t>(s)] * per_block;
    if (s < 3) {
      macs += (fh / 2.0) * (fw / 2.0) * (2.0 * dim) * (dim * 4.0);  // 2x2 stride-2 conv
      fh /= 2.0;
      fw /= 2.0;
    }
  }

  // decoder at pyramid resolutions
  const double h4 = h / 4.0, w4 = w / 4.0;
  const double h32 = h / 32.0, w32 = w / 32.0;
  const int top = 8 * c;
  const int fpn = dcfg.fpn_channels;
  for (int sc : dcfg.pool_scales) macs += static_cast<double>(sc) * sc * top * fpn;
  macs += h32 * w32 * (top + dcfg.pool_scales.size() * static_cast<double>(fpn)) * fpn * 9.0;
  for (int s = 0; s < 3; ++s) {
    const double hs = h / (4.0 * (1 << s)), ws = w / (4.0 * (1 << s));
    macs += hs * ws * (c << s) * fpn;        // lateral 1x1
    macs += hs * ws * fpn * fpn * 9.0;       // fpn 3x3
  }
  macs += h4 * w4 * (4.0 * fpn) * fpn * 9.0;             // fuse 3x3
  macs += h4 * w4 * fpn * dcfg.num_classes;              // classifier 1x1

  return 2.0 * macs;
}

}  // namespace samba
