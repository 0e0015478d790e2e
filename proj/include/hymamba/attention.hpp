#pragma once

// Multi-head cross-attention, feed-forward network and a pre-norm encoder
// block used as the small trainable stand-in encoder.

#include <cstddef>
#include <string>
#include <vector>

#include "hymamba/nn.hpp"

namespace hym::attn {

struct AttnConfig {
  std::size_t embed_dim = 32;
  std::size_t heads = 4;
  std::size_t ffn_hidden = 128;

  static AttnConfig make(std::size_t embed_dim, std::size_t heads) {
    return {embed_dim, heads, 4 * embed_dim};
  }
  std::size_t head_dim() const { return embed_dim / heads; }
  // Throws ConfigError unless heads ≥ 1 divides embed_dim.
  void validate() const;
};

struct MhcaWeights {
  Linear q, k, v, o;
  static MhcaWeights init(std::size_t dim, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct FfnWeights {
  Linear fc1, fc2;
  static FfnWeights init(std::size_t dim, std::size_t hidden, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct EncoderWeights {
  Tensor norm1, norm2;  // RMS-norm gains
  MhcaWeights attn;
  FfnWeights ffn;
  static EncoderWeights init(const AttnConfig& cfg, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

// Scaled dot-product attention of q_seq over kv_seq, per head, followed by
// the output projection. When `probs` is given it receives one [Lq×Lkv]
// attention matrix per head.
Tensor mhca(const Tensor& q_seq, const Tensor& kv_seq, const AttnConfig& cfg,
            const MhcaWeights& w, std::vector<Tensor>* probs = nullptr);

// fc2(silu(fc1(x))); residual is the caller's.
Tensor ffn(const Tensor& x, const FfnWeights& w);

// h = x + mhca(n1, n1) with n1 = rms(x); out = h + ffn(rms(h)).
Tensor encoder_block(const Tensor& x, const AttnConfig& cfg, const EncoderWeights& w);

}  // namespace hym::attn
