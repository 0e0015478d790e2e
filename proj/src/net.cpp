#include "hymamba/net.hpp"

#include <algorithm>
#include <cmath>

#include "hymamba/ops.hpp"

namespace hym::net {

std::string to_string(SsmVariant v) { return v == SsmVariant::mm ? "mm" : "hsm"; }

SsmVariant parse_variant(const std::string& s) {
  if (s == "mm") return SsmVariant::mm;
  if (s == "hsm") return SsmVariant::hsm;
  throw ConfigError("unknown ssm variant '" + s + "' (expected mm or hsm)");
}

NetConfig NetConfig::paper() {
  NetConfig c;
  c.bands = 16;
  c.search_size = 224;
  c.template_size = 112;
  c.patch_size = 16;
  c.embed_dim = 256;
  c.state_len = 16;
  c.ssi_layers = 4;
  c.heads = 8;
  return c;
}

NetConfig NetConfig::tiny() {
  NetConfig c;
  c.bands = 4;
  c.search_size = 16;
  c.template_size = 8;
  c.patch_size = 8;
  c.embed_dim = 8;
  c.state_len = 2;
  c.ssi_layers = 1;
  c.heads = 2;
  return c;
}

void NetConfig::validate() const {
  if (bands == 0) throw ConfigError("bands must be positive");
  if (patch_size == 0 || search_size % patch_size != 0 || template_size % patch_size != 0) {
    throw ConfigError("search_size " + std::to_string(search_size) + " and template_size " +
                      std::to_string(template_size) + " must be divisible by patch_size " +
                      std::to_string(patch_size));
  }
  if (template_size > search_size) throw ConfigError("template_size exceeds search_size");
  if (state_len == 0) throw ConfigError("state_len must be positive");
  if (conv_kernel == 0) throw ConfigError("conv_kernel must be positive");
  attn().validate();
}

// ---- hidden state -----------------------------------------------------------

SpectralHiddenState SpectralHiddenState::zeros(const NetConfig& cfg) {
  return {Tensor::zeros({cfg.expanded_dim(), cfg.state_len}),
          Tensor::zeros({cfg.expanded_dim(), cfg.state_len}),
          Tensor::zeros({cfg.search_tokens(), cfg.state_len})};
}

SpectralHiddenState SpectralHiddenState::detach() const {
  return {fwd.detach(), bwd.detach(), spec.detach()};
}

double SpectralHiddenState::max_abs() const {
  double m = 0.0;
  for (const Tensor* t : {&fwd, &bwd, &spec})
    for (double v : t->values()) m = std::max(m, std::abs(v));
  return m;
}

// ---- weights ----------------------------------------------------------------

namespace {

Tensor small_normal(Shape shape, double stddev, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.normal(0.0, stddev);
  return parameter(std::move(shape), std::move(v));
}

ScanPathWeights make_path(std::size_t conv_ch, std::size_t ssm_ch, std::size_t n,
                          std::size_t kernel, Rng& rng) {
  ScanPathWeights p;
  const double bound = 1.0 / std::sqrt(static_cast<double>(kernel));
  std::vector<double> w(kernel * conv_ch);
  for (double& x : w) x = rng.uniform(-bound, bound);
  p.conv_w = parameter({kernel, conv_ch}, std::move(w));
  p.conv_b = parameter({conv_ch}, 0.0);
  p.ssm = ssm::SsmParams::init(ssm_ch, n, rng);
  return p;
}

PatchEmbedWeights make_embed(std::size_t in, const NetConfig& cfg, Rng& rng) {
  PatchEmbedWeights e;
  e.proj = Linear::init(in, cfg.embed_dim, rng);
  e.pos_search = small_normal({cfg.search_tokens(), cfg.embed_dim}, 0.02, rng);
  e.pos_template = small_normal({cfg.template_tokens(), cfg.embed_dim}, 0.02, rng);
  return e;
}

}  // namespace

void PatchEmbedWeights::visit(const std::string& prefix, const ParamVisitor& fn) {
  proj.visit(prefix + ".proj", fn);
  fn(prefix + ".pos_search", pos_search);
  fn(prefix + ".pos_template", pos_template);
}

void ScanPathWeights::visit(const std::string& prefix, const ParamVisitor& fn) {
  if (!defined()) return;
  fn(prefix + ".conv_w", conv_w);
  fn(prefix + ".conv_b", conv_b);
  ssm.visit(prefix + ".ssm", fn);
}

void StateModuleWeights::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".norm_joint", norm_joint);
  fn(prefix + ".norm_hs", norm_hs);
  up_joint.visit(prefix + ".up_joint", fn);
  up_hs.visit(prefix + ".up_hs", fn);
  fwd.visit(prefix + ".fwd", fn);
  bwd.visit(prefix + ".bwd", fn);
  spec.visit(prefix + ".spec", fn);
  down.visit(prefix + ".down", fn);
}

void SsiLayerWeights::visit(const std::string& prefix, const ParamVisitor& fn) {
  state.visit(prefix + ".ssi.state", fn);
  ja.visit(prefix + ".ssi.ja", fn);
  sa.visit(prefix + ".ssi.sa", fn);
  sa_ffn.visit(prefix + ".ssi.sa_ffn", fn);
  encoder.visit(prefix + ".encoder", fn);
}

void HeadWeights::visit(const std::string& prefix, const ParamVisitor& fn) {
  score.visit(prefix + ".score", fn);
  size.visit(prefix + ".size", fn);
  offset.visit(prefix + ".offset", fn);
}

NetWeights NetWeights::init(const NetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  NetWeights w;
  w.cfg = cfg;
  const std::size_t d = cfg.embed_dim, e = cfg.expanded_dim(), p2 = cfg.patch_size * cfg.patch_size;
  const auto acfg = cfg.attn();
  w.asd = Linear::init(cfg.bands, 3, rng);
  w.embed_joint = make_embed(p2 * 6, cfg, rng);
  w.embed_hs = make_embed(p2 * cfg.bands, cfg, rng);
  w.base_encoder = attn::EncoderWeights::init(acfg, rng);
  for (std::size_t i = 0; i < cfg.ssi_layers; ++i) {
    SsiLayerWeights layer;
    auto& s = layer.state;
    s.norm_joint = parameter({d}, 1.0);
    s.norm_hs = parameter({d}, 1.0);
    s.up_joint = Linear::init(d, e, rng);
    s.up_hs = Linear::init(d, e, rng);
    s.fwd = make_path(e, e, cfg.state_len, cfg.conv_kernel, rng);
    if (cfg.variant == SsmVariant::hsm) {
      s.bwd = make_path(e, e, cfg.state_len, cfg.conv_kernel, rng);
      s.spec = make_path(e, cfg.search_tokens(), cfg.state_len, cfg.conv_kernel, rng);
    }
    s.down = Linear::init(e, d, rng);
    layer.ja = attn::MhcaWeights::init(d, rng);
    layer.sa = attn::MhcaWeights::init(d, rng);
    layer.sa_ffn = attn::FfnWeights::init(d, acfg.ffn_hidden, rng);
    layer.encoder = attn::EncoderWeights::init(acfg, rng);
    w.layers.push_back(std::move(layer));
  }
  w.head.score = Linear::init(d, 1, rng);
  w.head.size = Linear::init(d, 2, rng);
  w.head.offset = Linear::init(d, 2, rng);
  return w;
}

void NetWeights::visit(const ParamVisitor& fn) {
  asd.visit("asd", fn);
  embed_joint.visit("embed_joint", fn);
  embed_hs.visit("embed_hs", fn);
  base_encoder.visit("encoder", fn);
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].visit("layer" + std::to_string(i), fn);
  head.visit("head", fn);
}

NamedParams NetWeights::named() {
  NamedParams out;
  visit([&](const std::string& name, Tensor& t) { out.emplace_back(name, t); });
  return out;
}

std::vector<Tensor> NetWeights::all_params() {
  std::vector<Tensor> out;
  visit([&](const std::string&, Tensor& t) { out.push_back(t); });
  return out;
}

bool NetWeights::trained_in_paper_split(const std::string& name) {
  if (name.starts_with("asd.") || name.starts_with("embed_hs.")) return true;
  return name.starts_with("layer") && name.find(".ssi.") != std::string::npos;
}

NetWeights NetWeights::clone() {
  NetWeights copy = *this;
  copy.visit([](const std::string&, Tensor& t) {
    const auto v = t.values();
    t = parameter(t.shape(), std::vector<double>(v.begin(), v.end()));
  });
  return copy;
}

// ---- operations -------------------------------------------------------------

Tensor asd_project(const Tensor& hs_cube, const Linear& asd) {
  if (hs_cube.ndim() != 3 || hs_cube.dim(2) != asd.in_features()) {
    throw DimensionError("asd_project: cube " + shape_str(hs_cube.shape()) + " vs ASD expecting " +
                         std::to_string(asd.in_features()) + " bands");
  }
  const std::size_t h = hs_cube.dim(0), w = hs_cube.dim(1), c = hs_cube.dim(2);
  const Tensor flat = reshape(hs_cube, {h * w, c});
  return reshape(asd(flat), {h, w, asd.out_features()});
}

Tensor joint_image(const Tensor& hs_cube, const Tensor& false_color, const Linear& asd) {
  const Tensor spectral = asd_project(hs_cube, asd);
  if (false_color.shape() != spectral.shape()) {
    throw DimensionError("joint_image: false colour " + shape_str(false_color.shape()) +
                         " vs distilled " + shape_str(spectral.shape()));
  }
  const std::size_t h = spectral.dim(0), w = spectral.dim(1);
  const Tensor joint = concat_cols({reshape(spectral, {h * w, 3}), reshape(false_color, {h * w, 3})});
  return reshape(joint, {h, w, 6});
}

Tensor patch_embed(const Tensor& image, std::size_t patch, const Linear& proj, const Tensor& pos) {
  const Tensor tokens = proj(patchify(image, patch));
  if (pos.shape() != tokens.shape()) {
    throw DimensionError("patch_embed: position table " + shape_str(pos.shape()) + " vs tokens " +
                         shape_str(tokens.shape()));
  }
  return add(tokens, pos);
}

TokenBundle build_bundle(std::span<const FrameGroup> groups, const NetWeights& w) {
  const auto& cfg = w.cfg;
  const std::array<Role, 3> order{Role::search, Role::static_template, Role::dynamic_template};
  std::vector<Tensor> joint_parts, hs_parts;
  for (Role role : order) {
    const auto it = std::find_if(groups.begin(), groups.end(),
                                 [role](const FrameGroup& g) { return g.role == role; });
    if (it == groups.end()) {
      throw ContractError("build_bundle: missing frame group for role #" +
                          std::to_string(static_cast<int>(role)));
    }
    const std::size_t side = role == Role::search ? cfg.search_size : cfg.template_size;
    if (it->hs_cube.shape() != Shape{side, side, cfg.bands}) {
      throw DimensionError("build_bundle: HS cube " + shape_str(it->hs_cube.shape()) +
                           ", expected " + shape_str({side, side, cfg.bands}));
    }
    const Tensor& pos_j = role == Role::search ? w.embed_joint.pos_search : w.embed_joint.pos_template;
    const Tensor& pos_h = role == Role::search ? w.embed_hs.pos_search : w.embed_hs.pos_template;
    const Tensor joint = joint_image(it->hs_cube, it->false_color, w.asd);
    joint_parts.push_back(patch_embed(joint, cfg.patch_size, w.embed_joint.proj, pos_j));
    hs_parts.push_back(patch_embed(it->hs_cube, cfg.patch_size, w.embed_hs.proj, pos_h));
  }
  const auto acfg = cfg.attn();
  return {attn::encoder_block(concat_rows(joint_parts), acfg, w.base_encoder),
          attn::encoder_block(concat_rows(hs_parts), acfg, w.base_encoder)};
}

Tensor search_filter(const Tensor& tokens, std::size_t search_tokens) {
  if (tokens.rows() == search_tokens) return tokens;
  return slice_rows(tokens, 0, search_tokens);
}

namespace {

Tensor conv_act(const Tensor& u, const ScanPathWeights& p) {
  return silu(conv1d_causal(u, p.conv_w, p.conv_b));
}

}  // namespace

StateModuleResult mamba_module(const Tensor& joint, const Tensor& hs,
                               const SpectralHiddenState& state, const StateModuleWeights& w,
                               const NetConfig& cfg) {
  const std::size_t len = cfg.search_tokens();
  if (joint.rows() < len || hs.rows() < len) {
    throw DimensionError("mamba_module: joint " + shape_str(joint.shape()) + ", hs " +
                         shape_str(hs.shape()) + " shorter than " + std::to_string(len) +
                         " search tokens");
  }
  const Tensor fj = rms_norm(search_filter(joint, len), w.norm_joint);
  const Tensor fhs = rms_norm(search_filter(hs, len), w.norm_hs);
  const Tensor u = w.up_hs(fhs);
  const auto scan = ssm::scan_forward(conv_act(u, w.fwd), w.fwd.ssm, {state.fwd});
  const Tensor gate = mul(silu(w.up_joint(fj)), scan.y);
  return {add(fj, w.down(gate)), {scan.final_state.h, state.bwd, state.spec}};
}

Tensor fuse_directions(const Tensor& act_joint, const Tensor& act_hs, const Tensor& f_fwd,
                       const Tensor& f_bwd, const Tensor& f_spec, const HsmPaths& paths) {
  std::vector<const Tensor*> acts, dirs;
  if (paths.joint_act) acts.push_back(&act_joint);
  if (paths.hs_act) acts.push_back(&act_hs);
  if (paths.forward) dirs.push_back(&f_fwd);
  if (paths.backward) dirs.push_back(&f_bwd);
  if (paths.spectral) dirs.push_back(&f_spec);
  Tensor total;
  for (const Tensor* a : acts)
    for (const Tensor* d : dirs) {
      Tensor term = mul(*a, *d);
      total = total.defined() ? add(total, term) : term;
    }
  if (!total.defined()) return Tensor::zeros(act_joint.shape());
  return total;
}

StateModuleResult hsm_forward(const Tensor& joint, const Tensor& hs,
                              const SpectralHiddenState& state, const StateModuleWeights& w,
                              const NetConfig& cfg, std::size_t layer_index, HsmTrace* trace) {
  const std::size_t len = cfg.search_tokens();
  const std::size_t want_hs = layer_index == 0 ? cfg.total_tokens() : len;
  if (hs.ndim() != 2 || hs.rows() != want_hs) {
    throw ContractError("hsm_forward: layer " + std::to_string(layer_index) + " expects an HS "
                        "feature of " + std::to_string(want_hs) + " rows, got " +
                        shape_str(hs.shape()));
  }
  if (joint.rows() != cfg.total_tokens()) {
    throw DimensionError("hsm_forward: joint " + shape_str(joint.shape()) + ", expected " +
                         std::to_string(cfg.total_tokens()) + " rows");
  }
  if (!w.bwd.defined() || !w.spec.defined()) {
    throw ContractError("hsm_forward: weights were built for the mm variant");
  }
  const Tensor fj = rms_norm(search_filter(joint, len), w.norm_joint);
  const Tensor fhs = rms_norm(search_filter(hs, len), w.norm_hs);
  const Tensor u = w.up_hs(fhs);

  SpectralHiddenState next = state;
  Tensor f_fwd, f_bwd, f_spec;
  const Tensor zero = Tensor::zeros({len, cfg.expanded_dim()});
  if (cfg.paths.forward) {
    auto r = ssm::scan_forward(conv_act(u, w.fwd), w.fwd.ssm, {state.fwd});
    f_fwd = r.y;
    next.fwd = r.final_state.h;
  } else {
    f_fwd = zero;
  }
  if (cfg.paths.backward) {
    auto r = ssm::scan_backward(conv_act(u, w.bwd), w.bwd.ssm, {state.bwd});
    f_bwd = r.y;
    next.bwd = r.final_state.h;
  } else {
    f_bwd = zero;
  }
  if (cfg.paths.spectral) {
    auto r = ssm::scan_spectral(conv_act(u, w.spec), w.spec.ssm, {state.spec});
    f_spec = r.y;
    next.spec = r.final_state.h;
  } else {
    f_spec = zero;
  }
  const Tensor act_hs = silu(u);
  const Tensor act_joint = silu(w.up_joint(fj));
  const Tensor fusion = fuse_directions(act_joint, act_hs, f_fwd, f_bwd, f_spec, cfg.paths);
  if (trace) *trace = {act_joint, act_hs, f_fwd, f_bwd, f_spec, fusion};
  return {add(fj, w.down(fusion)), next};
}

Tensor joint_augment(const Tensor& joint, const Tensor& f_m, const attn::AttnConfig& cfg,
                     const attn::MhcaWeights& w) {
  return add(joint, attn::mhca(joint, f_m, cfg, w));
}

Tensor spectral_augment(const Tensor& f_m, const Tensor& joint_refined,
                        const attn::AttnConfig& cfg, const attn::MhcaWeights& attn_w,
                        const attn::FfnWeights& ffn_w) {
  const Tensor f = add(f_m, attn::mhca(f_m, joint_refined, cfg, attn_w));
  return add(f, attn::ffn(f, ffn_w));
}

SsiResult ssi_layer(const TokenBundle& bundle, const SpectralHiddenState& state,
                    const SsiLayerWeights& w, const NetConfig& cfg, std::size_t layer_index) {
  const StateModuleResult sm =
      cfg.variant == SsmVariant::mm
          ? mamba_module(bundle.joint, bundle.hs, state, w.state, cfg)
          : hsm_forward(bundle.joint, bundle.hs, state, w.state, cfg, layer_index);
  const auto acfg = cfg.attn();
  const Tensor ja = joint_augment(bundle.joint, sm.f_m, acfg, w.ja);
  const Tensor joint = attn::encoder_block(ja, acfg, w.encoder);
  const Tensor hs = spectral_augment(sm.f_m, joint, acfg, w.sa, w.sa_ffn);
  return {{joint, hs}, sm.state};
}

FeatureResult feature_network_forward(std::span<const FrameGroup> groups,
                                      const SpectralHiddenState& state0, const NetWeights& w) {
  const auto& cfg = w.cfg;
  const auto want = SpectralHiddenState::zeros(cfg);
  if (state0.fwd.shape() != want.fwd.shape() || state0.bwd.shape() != want.bwd.shape() ||
      state0.spec.shape() != want.spec.shape()) {
    throw DimensionError("feature_network_forward: hidden state shapes fwd " +
                         shape_str(state0.fwd.shape()) + ", bwd " + shape_str(state0.bwd.shape()) +
                         ", spec " + shape_str(state0.spec.shape()) + " do not match the config");
  }
  TokenBundle bundle = build_bundle(groups, w);
  SpectralHiddenState state = state0;
  for (std::size_t i = 0; i < w.layers.size(); ++i) {
    SsiResult r = ssi_layer(bundle, state, w.layers[i], cfg, i);
    bundle = std::move(r.bundle);
    state = std::move(r.state);
  }
  return {bundle.joint, state};
}

const SpectralHiddenState& propagate_hidden(const SpectralHiddenState& prev_final,
                                            const SpectralHiddenState& prev_accepted,
                                            double confidence, double tau_h) {
  if (!(confidence >= 0.0 && confidence <= 1.0)) {
    throw ContractError("propagate_hidden: confidence " + std::to_string(confidence) +
                        " outside [0, 1]");
  }
  return confidence > tau_h ? prev_final : prev_accepted;
}

}  // namespace hym::net
