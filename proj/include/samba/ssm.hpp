#pragma once

#include <string>
#include <vector>

#include "samba/nn.hpp"
#include "samba/scan.hpp"

namespace samba {

struct MambaBlockConfig {
  int dim = 0;
  int d_state = 16;
  int expansion = 2;
  int conv_kernel = 4;
  int dt_rank = 0;  // 0 resolves to ceil(dim / 16)

  int d_inner() const { return expansion * dim; }
  int resolved_dt_rank() const { return dt_rank > 0 ? dt_rank : (dim + 15) / 16; }
  void validate() const;
};

// Token mixer: LN, parallel value/gate projections, causal depthwise conv +
// SiLU on the value stream, input-dependent (B, C, Delta), ZOH discretization,
// the selective scan, SiLU gating, output projection.
struct MambaBlock {
  MambaBlockConfig cfg;
  LayerNorm norm;
  Linear in_proj_u;     // dim -> d_inner
  Linear in_proj_gate;  // dim -> d_inner
  DepthwiseConv1d conv;
  Linear proj_b;        // d_inner -> d_state
  Linear proj_c;        // d_inner -> d_state
  Linear proj_dt_low;   // d_inner -> dt_rank
  Linear proj_dt;       // dt_rank -> d_inner, bias sets the softplus floor
  Parameter a_log;      // [d_inner, d_state]; A = -exp(a_log)
  Parameter d_skip;     // [d_inner]
  Linear out_proj;      // d_inner -> dim

  MambaBlock(const std::string& name, const MambaBlockConfig& cfg, Rng& rng);

  struct Projection {
    Tensor b_t;    // [B, L, d_state]
    Tensor c_t;    // [B, L, d_state]
    Tensor delta;  // [B, L, d_inner], strictly positive
  };
  // u is the post-conv post-activation inner stream, [B, L, d_inner].
  Projection selective_projection(const Tensor& u) const;

  Tensor evolution_matrix() const;  // A = -exp(a_log), [d_inner, d_state]

  // tokens [B, L, dim] -> [B, L, dim]. scan_chunk 0 means sequential.
  Tensor forward(const Tensor& tokens, int scan_chunk = 0) const;

  void collect(std::vector<Parameter*>& out);
};

}  // namespace samba
