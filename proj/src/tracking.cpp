#include "hymamba/tracking.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "hymamba/ops.hpp"
#include "hymamba/render.hpp"

namespace hym::track {

bool BBox::valid() const {
  return std::isfinite(cx) && std::isfinite(cy) && std::isfinite(w) && std::isfinite(h) && w > 0 &&
         h > 0;
}

void TrackerConfig::validate() const {
  if (update_interval < 1) throw ConfigError("update_interval must be >= 1");
  if (!(tau_template >= 0 && tau_template <= 1)) throw ConfigError("tau_template must lie in [0, 1]");
  if (!(tau_hidden >= 0 && tau_hidden <= 1)) throw ConfigError("tau_hidden must lie in [0, 1]");
  if (!(search_context > 0) || !(template_context > 0)) {
    throw ConfigError("context factors must be positive");
  }
}

// ---- head --------------------------------------------------------------------

Decoded decode_maps(std::span<const double> score, std::span<const double> size,
                    std::span<const double> offset, std::size_t grid, std::size_t patch) {
  const std::size_t cells = grid * grid;
  if (score.size() != cells || size.size() != 2 * cells || offset.size() != 2 * cells) {
    throw DimensionError("decode_maps: map sizes " + std::to_string(score.size()) + "/" +
                         std::to_string(size.size()) + "/" + std::to_string(offset.size()) +
                         " do not match a " + std::to_string(grid) + "×" + std::to_string(grid) +
                         " grid");
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < cells; ++i)
    if (score[i] > score[best]) best = i;
  const double row = static_cast<double>(best / grid), col = static_cast<double>(best % grid);
  const double p = static_cast<double>(patch), s = p * static_cast<double>(grid);
  BBox b;
  b.cx = (col + 0.5 + offset[2 * best]) * p;
  b.cy = (row + 0.5 + offset[2 * best + 1]) * p;
  b.w = size[2 * best] * s;
  b.h = size[2 * best + 1] * s;
  return {b, score[best], best};
}

HeadOutput head_forward(const Tensor& f_joint, const net::HeadWeights& w, const net::NetConfig& cfg) {
  const std::size_t g = cfg.grid(), len = cfg.search_tokens();
  if (cfg.search_size % cfg.patch_size != 0) {
    throw ConfigError("head_forward: search grid is not square");
  }
  if (f_joint.ndim() != 2 || f_joint.rows() < len) {
    throw DimensionError("head_forward: features " + shape_str(f_joint.shape()) + " hold fewer than " +
                         std::to_string(len) + " search tokens");
  }
  const Tensor tokens = net::search_filter(f_joint, len);
  HeadOutput out;
  out.score_map = reshape(sigmoid(w.score(tokens)), {g, g});
  out.size_map = reshape(sigmoid(w.size(tokens)), {g, g, 2});
  out.offset_map = reshape(w.offset(tokens), {g, g, 2});
  const Decoded d = decode_maps(out.score_map.values(), out.size_map.values(),
                                out.offset_map.values(), g, cfg.patch_size);
  out.bbox_search = d.bbox;
  out.confidence = d.confidence;
  out.best_cell = d.cell;
  return out;
}

// ---- losses ------------------------------------------------------------------

Tensor gaussian_target(std::size_t grid, double cx_cells, double cy_cells, double w_cells,
                       double h_cells) {
  const auto clamp_cell = [grid](double v) {
    const double f = std::floor(v);
    if (f < 0) return std::size_t{0};
    return std::min(grid - 1, static_cast<std::size_t>(f));
  };
  const std::size_t pc = clamp_cell(cx_cells), pr = clamp_cell(cy_cells);
  const double sigma = std::max(0.5, std::sqrt(std::max(w_cells * h_cells, 0.0)) / 4.0);
  std::vector<double> t(grid * grid);
  for (std::size_t r = 0; r < grid; ++r)
    for (std::size_t c = 0; c < grid; ++c) {
      const double dr = static_cast<double>(r) - static_cast<double>(pr);
      const double dc = static_cast<double>(c) - static_cast<double>(pc);
      t[r * grid + c] = std::exp(-(dr * dr + dc * dc) / (2 * sigma * sigma));
    }
  t[pr * grid + pc] = 1.0;
  return Tensor({grid, grid}, std::move(t));
}

Tensor focal_loss(const Tensor& score_map, const Tensor& target_map) {
  if (score_map.shape() != target_map.shape()) {
    throw DimensionError("focal_loss: score " + shape_str(score_map.shape()) + " vs target " +
                         shape_str(target_map.shape()));
  }
  const auto s = score_map.values();
  const auto y = target_map.values();
  std::size_t positives = 0;
  for (double v : y) {
    if (!(v >= 0.0 && v <= 1.0)) throw ContractError("focal_loss: target values must lie in [0, 1]");
    if (v == 1.0) ++positives;
  }
  if (positives == 0) throw ContractError("focal_loss: target map has no positive cell");

  const double norm = 1.0 / static_cast<double>(positives);
  std::vector<double> dldp(s.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double p = std::clamp(s[i], kFocalClamp, 1.0 - kFocalClamp);
    const bool clamped = p != s[i];
    double l, g;
    if (y[i] == 1.0) {
      const double q = 1.0 - p;
      l = -q * q * std::log(p);
      g = 2.0 * q * std::log(p) - q * q / p;
    } else {
      const double neg = std::pow(1.0 - y[i], kFocalBeta);
      const double lq = std::log(1.0 - p);
      l = -neg * p * p * lq;
      g = -neg * (2.0 * p * lq - p * p / (1.0 - p));
    }
    loss += l;
    dldp[i] = clamped ? 0.0 : g * norm;
  }
  Tensor out = make_result({}, {loss * norm}, {&score_map});
  if (Tape* tape = recording(out)) {
    tape->record([o = out.handle(), in = score_map.handle(), dldp = std::move(dldp)]() {
      if (!o->has_grad() || !in->requires_grad) return;
      auto& gi = in->grad_buffer();
      const double go = o->grad[0];
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go * dldp[i];
    });
  }
  return out;
}

double giou(const BBox& a, const BBox& b) {
  const double iw = std::max(0.0, std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0()));
  const double ih = std::max(0.0, std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0()));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  const double cw = std::max(a.x1(), b.x1()) - std::min(a.x0(), b.x0());
  const double ch = std::max(a.y1(), b.y1()) - std::min(a.y0(), b.y0());
  const double enclose = cw * ch;
  return inter / uni - (enclose - uni) / enclose;
}

double giou_loss(const BBox& pred, const BBox& gt) { return 1.0 - giou(pred, gt); }

Tensor giou_loss(const Tensor& pred, const Tensor& gt) {
  if (pred.shape() != Shape{1, 4} || gt.shape() != Shape{1, 4}) {
    throw DimensionError("giou_loss: expected [1×4] boxes, got " + shape_str(pred.shape()) + " and " +
                         shape_str(gt.shape()));
  }
  const auto col = [](const Tensor& t, std::size_t i) { return slice_cols(t, i, 1); };
  const auto corners = [&](const Tensor& t) {
    const Tensor cx = col(t, 0), cy = col(t, 1), hw = scale(col(t, 2), 0.5), hh = scale(col(t, 3), 0.5);
    return std::array<Tensor, 4>{sub(cx, hw), sub(cy, hh), add(cx, hw), add(cy, hh)};
  };
  const auto p = corners(pred), g = corners(gt);
  const Tensor iw = relu(sub(minimum(p[2], g[2]), maximum(p[0], g[0])));
  const Tensor ih = relu(sub(minimum(p[3], g[3]), maximum(p[1], g[1])));
  const Tensor inter = mul(iw, ih);
  const Tensor area_p = mul(col(pred, 2), col(pred, 3));
  const Tensor area_g = mul(col(gt, 2), col(gt, 3));
  const Tensor uni = sub(add(area_p, area_g), inter);
  const Tensor cw = sub(maximum(p[2], g[2]), minimum(p[0], g[0]));
  const Tensor ch = sub(maximum(p[3], g[3]), minimum(p[1], g[1]));
  const Tensor enclose = mul(cw, ch);
  const Tensor value = sub(div(inter, uni), div(sub(enclose, uni), enclose));
  return reshape(add_scalar(scale(value, -1.0), 1.0), {});
}

Tensor l1_loss(const Tensor& pred, const Tensor& gt) { return mean(abs(sub(pred, gt))); }

double total_loss(double l_cls, double l_l1, double l_giou) {
  return l_cls + kWeightL1 * l_l1 + kWeightGiou * l_giou;
}

Tensor total_loss(const Tensor& l_cls, const Tensor& l_l1, const Tensor& l_giou) {
  return add(add(l_cls, scale(l_l1, kWeightL1)), scale(l_giou, kWeightGiou));
}

// ---- crops -------------------------------------------------------------------

BBox CropMap::to_frame(const BBox& b) const {
  return {x0 + scale * b.cx, y0 + scale * b.cy, scale * b.w, scale * b.h};
}

BBox CropMap::to_crop(const BBox& b) const {
  return {(b.cx - x0) / scale, (b.cy - y0) / scale, b.w / scale, b.h / scale};
}

Crop crop_region(const Tensor& frame, const BBox& box, double context, std::size_t out_size) {
  if (!box.valid()) {
    throw ContractError("crop_region: degenerate box (" + std::to_string(box.cx) + ", " +
                        std::to_string(box.cy) + ", " + std::to_string(box.w) + ", " +
                        std::to_string(box.h) + ")");
  }
  if (!(context > 0)) throw ContractError("crop_region: context must be positive");
  if (out_size == 0) throw ContractError("crop_region: out_size must be positive");
  if (frame.ndim() != 3) throw DimensionError("crop_region: frame " + shape_str(frame.shape()));

  const std::size_t fh = frame.dim(0), fw = frame.dim(1), ch = frame.dim(2);
  const double side = context * std::sqrt(box.w * box.h);
  Crop out;
  out.map.scale = side / static_cast<double>(out_size);
  out.map.x0 = box.cx - 0.5 * side;
  out.map.y0 = box.cy - 0.5 * side;

  const auto src = frame.values();
  std::vector<double> img(out_size * out_size * ch, 0.0);
  const auto ifw = static_cast<std::ptrdiff_t>(fw), ifh = static_cast<std::ptrdiff_t>(fh);
  for (std::size_t i = 0; i < out_size; ++i) {
    // Pixel centres sit at half-integer coordinates in both frames.
    const double v = out.map.y0 + out.map.scale * (static_cast<double>(i) + 0.5) - 0.5;
    const double fv = std::floor(v);
    const double wv = v - fv;
    const auto r0 = static_cast<std::ptrdiff_t>(fv);
    for (std::size_t j = 0; j < out_size; ++j) {
      const double u = out.map.x0 + out.map.scale * (static_cast<double>(j) + 0.5) - 0.5;
      const double fu = std::floor(u);
      const double wu = u - fu;
      const auto c0 = static_cast<std::ptrdiff_t>(fu);
      double* dst = img.data() + (i * out_size + j) * ch;
      const std::ptrdiff_t rows[2] = {r0, r0 + 1};
      const std::ptrdiff_t cols[2] = {c0, c0 + 1};
      const double wr[2] = {1.0 - wv, wv};
      const double wc[2] = {1.0 - wu, wu};
      for (int a = 0; a < 2; ++a) {
        if (rows[a] < 0 || rows[a] >= ifh || wr[a] == 0.0) continue;
        for (int b = 0; b < 2; ++b) {
          if (cols[b] < 0 || cols[b] >= ifw || wc[b] == 0.0) continue;
          const double wgt = wr[a] * wc[b];
          const double* px = src.data() + (static_cast<std::size_t>(rows[a]) * fw +
                                           static_cast<std::size_t>(cols[b])) * ch;
          for (std::size_t k = 0; k < ch; ++k) dst[k] += wgt * px[k];
        }
      }
    }
  }
  out.image = Tensor({out_size, out_size, ch}, std::move(img));
  return out;
}

net::FrameGroup make_group(const Tensor& frame, const BBox& box, double context,
                           std::size_t out_size, net::Role role, const Tensor& render) {
  Crop c = crop_region(frame, box, context, out_size);
  Tensor fc = data::false_color_render(c.image, render);
  return {std::move(c.image), std::move(fc), role};
}

// ---- inference ---------------------------------------------------------------

bool should_update_template(std::size_t frame_idx, double confidence, const TrackerConfig& cfg) {
  return frame_idx % cfg.update_interval == 0 && confidence > cfg.tau_template;
}

TemplateDecision update_dynamic_template(const Tensor& frame, const BBox& predicted,
                                         std::size_t frame_idx, double confidence,
                                         const TrackerConfig& cfg, const net::NetConfig& net_cfg,
                                         const Tensor& render) {
  TemplateDecision d;
  if (!should_update_template(frame_idx, confidence, cfg)) return d;
  d.updated = true;
  d.group = make_group(frame, predicted, cfg.template_context, net_cfg.template_size,
                       net::Role::dynamic_template, render);
  return d;
}

namespace {

// Keeps the next search crop anchored on the frame.
BBox keep_on_frame(BBox b, double fw, double fh) {
  b.cx = std::clamp(b.cx, 0.0, fw);
  b.cy = std::clamp(b.cy, 0.0, fh);
  b.w = std::clamp(b.w, 2.0, fw);
  b.h = std::clamp(b.h, 2.0, fh);
  return b;
}

}  // namespace

std::vector<TrackRecord> track_sequence(std::span<const Tensor> frames, const BBox& init,
                                        const net::NetWeights& w, const TrackerConfig& cfg) {
  if (frames.empty()) throw ContractError("track_sequence: empty sequence");
  if (frames.size() < 2) throw ContractError("track_sequence: need at least 2 frames");
  if (!init.valid()) throw ContractError("track_sequence: invalid initial box");
  cfg.validate();
  const auto& ncfg = w.cfg;
  for (const Tensor& f : frames) {
    if (f.ndim() != 3 || f.dim(2) != ncfg.bands || f.shape() != frames[0].shape()) {
      throw DimensionError("track_sequence: frame " + shape_str(f.shape()) + " vs first frame " +
                           shape_str(frames[0].shape()) + " with " + std::to_string(ncfg.bands) +
                           " bands");
    }
  }
  const double fh = static_cast<double>(frames[0].dim(0)), fw = static_cast<double>(frames[0].dim(1));
  const Tensor render = data::render_matrix(ncfg.bands);
  NoTapeScope no_tape;

  std::vector<net::FrameGroup> groups(3);
  groups[1] = make_group(frames[0], init, cfg.template_context, ncfg.template_size,
                         net::Role::static_template, render);
  groups[2] = groups[1];
  groups[2].role = net::Role::dynamic_template;

  std::vector<TrackRecord> records;
  records.reserve(frames.size());
  records.push_back({0, init, 1.0, false, false});

  const auto zeros = net::SpectralHiddenState::zeros(ncfg);
  net::SpectralHiddenState accepted = zeros, prev_final = zeros;
  double prev_conf = 0.0;
  BBox prev = init;
  for (std::size_t t = 1; t < frames.size(); ++t) {
    const bool propagated = t > 1 && prev_conf > cfg.tau_hidden;
    if (t > 1) accepted = net::propagate_hidden(prev_final, accepted, prev_conf, cfg.tau_hidden);

    Crop search = crop_region(frames[t], prev, cfg.search_context, ncfg.search_size);
    groups[0] = {search.image, data::false_color_render(search.image, render), net::Role::search};
    const auto feat = net::feature_network_forward(groups, accepted, w);
    const HeadOutput head = head_forward(feat.joint, w.head, ncfg);
    const BBox box = keep_on_frame(search.map.to_frame(head.bbox_search), fw, fh);

    auto tpl = update_dynamic_template(frames[t], box, t, head.confidence, cfg, ncfg, render);
    if (tpl.updated) groups[2] = std::move(*tpl.group);
    records.push_back({t, box, head.confidence, tpl.updated, propagated});

    prev_final = feat.state;
    prev_conf = head.confidence;
    prev = box;
  }
  return records;
}

std::string to_jsonl(std::span<const TrackRecord> records) {
  std::ostringstream os;
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["frame"] = r.frame;
    j["bbox"] = {r.bbox.cx, r.bbox.cy, r.bbox.w, r.bbox.h};
    j["conf"] = r.confidence;
    j["tpl"] = r.template_updated;
    j["state"] = r.state_propagated;
    os << j.dump() << '\n';
  }
  return os.str();
}

std::vector<TrackRecord> from_jsonl(const std::string& text) {
  std::vector<TrackRecord> out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto& b = j.at("bbox");
      out.push_back({j.at("frame").get<std::size_t>(),
                     {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                      b.at(3).get<double>()},
                     j.at("conf").get<double>(),
                     j.at("tpl").get<bool>(),
                     j.at("state").get<bool>()});
    } catch (const nlohmann::json::exception& e) {
      throw IoError("malformed track record line: " + std::string(e.what()));
    }
  }
  return out;
}

// ---- training ----------------------------------------------------------------

SampleLoss sample_loss(const TrainSample& s, const net::NetWeights& w) {
  const auto& cfg = w.cfg;
  const std::size_t g = cfg.grid();
  const double patch = static_cast<double>(cfg.patch_size);
  const double side = static_cast<double>(cfg.search_size);

  net::SpectralHiddenState state0 = net::SpectralHiddenState::zeros(cfg);
  if (s.warmup_search) {
    NoTapeScope no_tape;
    std::vector<net::FrameGroup> warm = s.groups;
    for (auto& grp : warm)
      if (grp.role == net::Role::search) grp = *s.warmup_search;
    state0 = net::feature_network_forward(warm, state0, w).state.detach();
  }

  const auto feat = net::feature_network_forward(s.groups, state0, w);
  const HeadOutput head = head_forward(feat.joint, w.head, cfg);

  const BBox& gt = s.gt_search;
  const Tensor target = gaussian_target(g, gt.cx / patch, gt.cy / patch, gt.w / patch, gt.h / patch);
  const auto cell_of = [g](double v) {
    const double f = std::floor(v);
    if (f < 0) return std::size_t{0};
    return std::min(g - 1, static_cast<std::size_t>(f));
  };
  const std::size_t col = cell_of(gt.cx / patch), row = cell_of(gt.cy / patch);
  const std::size_t cell = row * g + col;
  const std::size_t len = g * g;
  const double inv_g = 1.0 / static_cast<double>(g);

  const Tensor off = slice_rows(reshape(head.offset_map, {len, 2}), cell, 1);
  const Tensor size = slice_rows(reshape(head.size_map, {len, 2}), cell, 1);
  const Tensor pred = concat_cols(
      {add_scalar(scale(slice_cols(off, 0, 1), inv_g), (static_cast<double>(col) + 0.5) * inv_g),
       add_scalar(scale(slice_cols(off, 1, 1), inv_g), (static_cast<double>(row) + 0.5) * inv_g),
       size});
  const Tensor gt_norm({1, 4}, {gt.cx / side, gt.cy / side, gt.w / side, gt.h / side});

  SampleLoss out;
  out.cls = focal_loss(head.score_map, target);
  out.l1 = l1_loss(pred, gt_norm);
  out.giou = giou_loss(pred, gt_norm);
  out.total = total_loss(out.cls, out.l1, out.giou);
  return out;
}

std::vector<Tensor> trainable_params(net::NetWeights& w, bool freeze_paper) {
  std::vector<Tensor> out;
  w.visit([&](const std::string& name, Tensor& t) {
    if (!freeze_paper || net::NetWeights::trained_in_paper_split(name)) out.push_back(t);
  });
  return out;
}

LossParts train_step(std::span<const TrainSample> batch, net::NetWeights& w, AdamW& opt) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  for (Tensor& p : w.all_params()) p.zero_grad();

  Tape tape;
  LossParts parts;
  Tensor total;
  {
    TapeScope scope(tape);
    for (const TrainSample& s : batch) {
      const SampleLoss l = sample_loss(s, w);
      total = total.defined() ? add(total, l.total) : l.total;
      parts.cls += l.cls.item();
      parts.l1 += l.l1.item();
      parts.giou += l.giou.item();
    }
    total = scale(total, 1.0 / static_cast<double>(batch.size()));
  }
  const double n = static_cast<double>(batch.size());
  parts.total = total.item();
  parts.cls /= n;
  parts.l1 /= n;
  parts.giou /= n;
  if (!std::isfinite(parts.total)) {
    throw NumericError("train_step: non-finite loss (cls " + std::to_string(parts.cls) + ", l1 " +
                       std::to_string(parts.l1) + ", giou " + std::to_string(parts.giou) + ")");
  }
  backward(total);
  opt.step();
  return parts;
}

namespace {

BBox jitter(const BBox& b, Rng& rng, double shift, double scale_range) {
  const double s = std::sqrt(b.w * b.h);
  BBox out = b;
  out.cx += rng.uniform(-shift, shift) * s;
  out.cy += rng.uniform(-shift, shift) * s;
  const double f = std::exp(rng.uniform(-scale_range, scale_range));
  out.w *= f;
  out.h *= f;
  return out;
}

}  // namespace

TrainSample sample_from_sequence(std::span<const Tensor> frames, std::span<const BBox> gt,
                                 const net::NetConfig& net_cfg, const TrackerConfig& cfg, Rng& rng,
                                 bool warmup) {
  if (frames.size() < 2 || gt.size() != frames.size()) {
    throw ContractError("sample_from_sequence: need >= 2 frames with one box each");
  }
  const Tensor render = data::render_matrix(net_cfg.bands);
  const int last = static_cast<int>(frames.size()) - 1;
  const auto t = static_cast<std::size_t>(rng.integer(1, last));
  const int lo = std::max(0, static_cast<int>(t) - static_cast<int>(cfg.update_interval));
  const auto k = static_cast<std::size_t>(rng.integer(lo, static_cast<int>(t) - 1));

  TrainSample s;
  s.groups.push_back({});
  s.groups.push_back(make_group(frames[0], gt[0], cfg.template_context, net_cfg.template_size,
                                net::Role::static_template, render));
  s.groups.push_back(make_group(frames[k], gt[k], cfg.template_context, net_cfg.template_size,
                                net::Role::dynamic_template, render));

  const BBox anchor = jitter(gt[t], rng, 0.5, 0.1);
  const Crop search = crop_region(frames[t], anchor, cfg.search_context, net_cfg.search_size);
  s.groups[0] = {search.image, data::false_color_render(search.image, render), net::Role::search};
  s.gt_search = search.map.to_crop(gt[t]);
  if (warmup) {
    const BBox prev_anchor = jitter(gt[t - 1], rng, 0.5, 0.1);
    s.warmup_search = make_group(frames[t - 1], prev_anchor, cfg.search_context,
                                 net_cfg.search_size, net::Role::search, render);
  }
  return s;
}

}  // namespace hym::track
