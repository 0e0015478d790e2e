#pragma once

// HyMamba feature network: spectral distillation, dual-branch patch
// embedding, base encoder, and the stack of SSI layers that thread the
// spectral hidden state through depth (and, via the tracker, through time).

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hymamba/attention.hpp"
#include "hymamba/nn.hpp"
#include "hymamba/ssm.hpp"

namespace hym::net {

enum class SsmVariant { mm, hsm };
std::string to_string(SsmVariant v);
SsmVariant parse_variant(const std::string& s);

// Which terms of the multi-directional fusion are active (ablation knockouts).
struct HsmPaths {
  bool forward = true;
  bool backward = true;
  bool spectral = true;
  bool joint_act = true;
  bool hs_act = true;
  bool operator==(const HsmPaths&) const = default;
};

struct NetConfig {
  std::size_t bands = 8;
  std::size_t search_size = 64;
  std::size_t template_size = 32;
  std::size_t patch_size = 8;
  std::size_t embed_dim = 32;
  std::size_t state_len = 8;
  std::size_t ssi_layers = 2;
  std::size_t heads = 4;
  std::size_t conv_kernel = 3;
  SsmVariant variant = SsmVariant::hsm;
  HsmPaths paths;

  static NetConfig desk() { return {}; }
  // Reference sizes (not trainable to reference accuracy here).
  static NetConfig paper();
  // Smallest configuration used for exhaustive gradient checks.
  static NetConfig tiny();

  void validate() const;
  std::size_t expanded_dim() const { return 2 * embed_dim; }
  std::size_t grid() const { return search_size / patch_size; }
  std::size_t search_tokens() const { return grid() * grid(); }
  std::size_t template_tokens() const {
    return (template_size / patch_size) * (template_size / patch_size);
  }
  std::size_t total_tokens() const { return search_tokens() + 2 * template_tokens(); }
  attn::AttnConfig attn() const { return attn::AttnConfig::make(embed_dim, heads); }
  bool operator==(const NetConfig&) const = default;
};

enum class Role { search, static_template, dynamic_template };

struct FrameGroup {
  Tensor hs_cube;      // [S×S×C]
  Tensor false_color;  // [S×S×3]
  Role role = Role::search;
};

// Final states of the three directional scans (paper's H_i).
struct SpectralHiddenState {
  Tensor fwd;   // [2D×n]
  Tensor bwd;   // [2D×n]
  Tensor spec;  // [L×n]

  static SpectralHiddenState zeros(const NetConfig& cfg);
  SpectralHiddenState detach() const;
  double max_abs() const;
};

struct TokenBundle {
  Tensor joint;  // [(L+2l)×D], layout [search | static | dynamic]
  Tensor hs;     // [(L+2l)×D] before the first SSI layer, [L×D] after
};

// ---- weights -------------------------------------------------------------

struct PatchEmbedWeights {
  Linear proj;           // patch·patch·ch → D
  Tensor pos_search;     // [L×D]
  Tensor pos_template;   // [l×D]
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct ScanPathWeights {
  Tensor conv_w;  // [k×2D] depthwise causal kernel
  Tensor conv_b;  // [2D]
  ssm::SsmParams ssm;
  bool defined() const { return conv_w.defined(); }
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

// Shared by MM (forward path only) and HSM (all three paths).
struct StateModuleWeights {
  Tensor norm_joint, norm_hs;
  Linear up_joint, up_hs;  // D → 2D
  ScanPathWeights fwd, bwd, spec;
  Linear down;             // 2D → D
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct SsiLayerWeights {
  StateModuleWeights state;
  attn::MhcaWeights ja;
  attn::MhcaWeights sa;
  attn::FfnWeights sa_ffn;
  attn::EncoderWeights encoder;
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct HeadWeights {
  Linear score;   // D → 1, sigmoid
  Linear size;    // D → 2, sigmoid, fraction of the search crop
  Linear offset;  // D → 2, cell units relative to the cell centre
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct NetWeights {
  NetConfig cfg;
  Linear asd;  // per-pixel C → 3 (1×1 convolution)
  PatchEmbedWeights embed_joint;
  PatchEmbedWeights embed_hs;
  attn::EncoderWeights base_encoder;  // shared by both streams
  std::vector<SsiLayerWeights> layers;
  HeadWeights head;

  static NetWeights init(const NetConfig& cfg, std::uint64_t seed);

  // Names: asd.*, embed_joint.*, embed_hs.*, encoder.*, layer<i>.ssi.*,
  // layer<i>.encoder.*, head.*
  void visit(const ParamVisitor& fn);
  NamedParams named();
  std::vector<Tensor> all_params();
  // Groups trained when the pretrained-encoder split is enforced:
  // ASD, SSI modules and the HS patch embedding.
  static bool trained_in_paper_split(const std::string& name);
  // Value copy with fresh storage.
  NetWeights clone();
};

// ---- operations ------------------------------------------------------------

// [H×W×C] → [H×W×3]
Tensor asd_project(const Tensor& hs_cube, const Linear& asd);
// Concat(ASD(hs), false_color) → [H×W×6]
Tensor joint_image(const Tensor& hs_cube, const Tensor& false_color, const Linear& asd);
Tensor patch_embed(const Tensor& image, std::size_t patch, const Linear& proj, const Tensor& pos);

TokenBundle build_bundle(std::span<const FrameGroup> groups, const NetWeights& w);

// Search filter: first `search_tokens` rows.
Tensor search_filter(const Tensor& tokens, std::size_t search_tokens);

struct StateModuleResult {
  Tensor f_m;  // [L×D]
  SpectralHiddenState state;
};

// Intermediate tensors of one HSM forward, for tests and diagnostics.
struct HsmTrace {
  Tensor act_joint, act_hs, f_fwd, f_bwd, f_spec, fusion;
};

StateModuleResult mamba_module(const Tensor& joint, const Tensor& hs,
                               const SpectralHiddenState& state, const StateModuleWeights& w,
                               const NetConfig& cfg);
StateModuleResult hsm_forward(const Tensor& joint, const Tensor& hs,
                              const SpectralHiddenState& state, const StateModuleWeights& w,
                              const NetConfig& cfg, std::size_t layer_index,
                              HsmTrace* trace = nullptr);

// Σ of the six activation × direction products, skipping knocked-out terms.
Tensor fuse_directions(const Tensor& act_joint, const Tensor& act_hs, const Tensor& f_fwd,
                       const Tensor& f_bwd, const Tensor& f_spec, const HsmPaths& paths);

Tensor joint_augment(const Tensor& joint, const Tensor& f_m, const attn::AttnConfig& cfg,
                     const attn::MhcaWeights& w);
Tensor spectral_augment(const Tensor& f_m, const Tensor& joint_refined,
                        const attn::AttnConfig& cfg, const attn::MhcaWeights& attn_w,
                        const attn::FfnWeights& ffn_w);

struct SsiResult {
  TokenBundle bundle;
  SpectralHiddenState state;
};
SsiResult ssi_layer(const TokenBundle& bundle, const SpectralHiddenState& state,
                    const SsiLayerWeights& w, const NetConfig& cfg, std::size_t layer_index);

struct FeatureResult {
  Tensor joint;  // F_N^J
  SpectralHiddenState state;  // H_N
};
FeatureResult feature_network_forward(std::span<const FrameGroup> groups,
                                      const SpectralHiddenState& state0, const NetWeights& w);

// prev_final if confidence > tau_h (strict), otherwise prev_accepted.
const SpectralHiddenState& propagate_hidden(const SpectralHiddenState& prev_final,
                                            const SpectralHiddenState& prev_accepted,
                                            double confidence, double tau_h);

}  // namespace hym::net
