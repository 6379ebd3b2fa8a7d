#pragma once

#include <string>
#include <vector>

#include "samba/decoder.hpp"
#include "samba/encoder.hpp"

namespace samba {

// Encoder + decode head behind one forward. Parameter pointers stay valid
// while the model object is alive and unmoved.
struct SambaSegmenter {
  SambaConfig cfg;
  DecoderConfig dcfg;
  SambaEncoder encoder;
  UperNetDecoder decoder;
  bool training = false;
  Rng dropout_rng;

  SambaSegmenter(const SambaConfig& cfg, const DecoderConfig& dcfg, uint64_t seed);

  Tensor forward(const Tensor& img, int scan_chunk = 0);
  std::vector<Parameter*> parameters();
};

int64_t count_parameters(const std::vector<Parameter*>& params);

// Analytic multiply-add accounting (2 FLOPs per MAC) over conv, matmul and
// scan work for one [1,3,H,W] input. Elementwise and normalization work is
// not counted.
double estimate_flops(const SambaConfig& cfg, const DecoderConfig& dcfg, int h, int w);

}  // namespace samba
