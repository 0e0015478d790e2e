#include "hymamba/attention.hpp"

#include <cmath>

#include "hymamba/ops.hpp"

namespace hym::attn {

void AttnConfig::validate() const {
  if (heads == 0 || embed_dim == 0 || embed_dim % heads != 0) {
    throw ConfigError("attention: embed_dim " + std::to_string(embed_dim) +
                      " is not divisible by heads " + std::to_string(heads));
  }
  if (ffn_hidden == 0) throw ConfigError("attention: ffn_hidden must be positive");
}

MhcaWeights MhcaWeights::init(std::size_t dim, Rng& rng) {
  MhcaWeights w;
  w.q = Linear::init(dim, dim, rng);
  // Softmax rows are invariant to a key bias, so the key projection has none.
  w.k = Linear::init(dim, dim, rng, false);
  w.v = Linear::init(dim, dim, rng);
  w.o = Linear::init(dim, dim, rng);
  return w;
}

void MhcaWeights::visit(const std::string& prefix, const ParamVisitor& fn) {
  q.visit(prefix + ".q", fn);
  k.visit(prefix + ".k", fn);
  v.visit(prefix + ".v", fn);
  o.visit(prefix + ".o", fn);
}

FfnWeights FfnWeights::init(std::size_t dim, std::size_t hidden, Rng& rng) {
  FfnWeights w;
  w.fc1 = Linear::init(dim, hidden, rng);
  w.fc2 = Linear::init(hidden, dim, rng);
  return w;
}

void FfnWeights::visit(const std::string& prefix, const ParamVisitor& fn) {
  fc1.visit(prefix + ".fc1", fn);
  fc2.visit(prefix + ".fc2", fn);
}

EncoderWeights EncoderWeights::init(const AttnConfig& cfg, Rng& rng) {
  EncoderWeights w;
  w.norm1 = parameter({cfg.embed_dim}, 1.0);
  w.norm2 = parameter({cfg.embed_dim}, 1.0);
  w.attn = MhcaWeights::init(cfg.embed_dim, rng);
  w.ffn = FfnWeights::init(cfg.embed_dim, cfg.ffn_hidden, rng);
  return w;
}

void EncoderWeights::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".norm1", norm1);
  fn(prefix + ".norm2", norm2);
  attn.visit(prefix + ".attn", fn);
  ffn.visit(prefix + ".ffn", fn);
}

Tensor mhca(const Tensor& q_seq, const Tensor& kv_seq, const AttnConfig& cfg,
            const MhcaWeights& w, std::vector<Tensor>* probs) {
  cfg.validate();
  if (q_seq.ndim() != 2 || kv_seq.ndim() != 2 || q_seq.cols() != cfg.embed_dim ||
      kv_seq.cols() != cfg.embed_dim) {
    throw DimensionError("mhca: query " + shape_str(q_seq.shape()) + ", key/value " +
                         shape_str(kv_seq.shape()) + ", embed_dim " +
                         std::to_string(cfg.embed_dim));
  }
  const Tensor q = w.q(q_seq);
  const Tensor k = w.k(kv_seq);
  const Tensor v = w.v(kv_seq);
  const std::size_t hd = cfg.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  if (probs) probs->clear();
  std::vector<Tensor> heads;
  heads.reserve(cfg.heads);
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const Tensor qh = cfg.heads == 1 ? q : slice_cols(q, h * hd, hd);
    const Tensor kh = cfg.heads == 1 ? k : slice_cols(k, h * hd, hd);
    const Tensor vh = cfg.heads == 1 ? v : slice_cols(v, h * hd, hd);
    const Tensor p = softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt));
    if (probs) probs->push_back(p);
    heads.push_back(matmul(p, vh));
  }
  const Tensor merged = cfg.heads == 1 ? heads.front() : concat_cols(heads);
  return w.o(merged);
}

Tensor ffn(const Tensor& x, const FfnWeights& w) { return w.fc2(silu(w.fc1(x))); }

Tensor encoder_block(const Tensor& x, const AttnConfig& cfg, const EncoderWeights& w) {
  const Tensor n1 = rms_norm(x, w.norm1);
  const Tensor h = add(x, mhca(n1, n1, cfg, w.attn));
  return add(h, ffn(rms_norm(h, w.norm2), w.ffn));
}

}  // namespace hym::attn
