#include "hymamba/data.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace hym::data {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

std::string to_string(Motion m) {
  switch (m) {
    case Motion::still: return "still";
    case Motion::linear: return "linear";
    case Motion::sinusoidal: return "sinusoidal";
  }
  return "linear";
}

Motion parse_motion(const std::string& s) {
  if (s == "still") return Motion::still;
  if (s == "linear") return Motion::linear;
  if (s == "sinusoidal") return Motion::sinusoidal;
  throw ConfigError("unknown motion model '" + s + "' (expected still, linear or sinusoidal)");
}

void SceneConfig::validate() const {
  if (frames < 2) {
    throw ConfigError("scene needs at least 2 frames, got " + std::to_string(frames));
  }
  if (bands == 0 || height == 0 || width == 0) throw ConfigError("scene dimensions must be positive");
  if (!(target_w > 0) || !(target_h > 0)) throw ConfigError("target size must be positive");
  if (target_w > static_cast<double>(width) || target_h > static_cast<double>(height)) {
    throw ConfigError("target larger than the frame");
  }
  if (!(noise >= 0)) throw ConfigError("noise sigma must be non-negative");
  if (motion == Motion::sinusoidal && !(period > 0)) throw ConfigError("period must be positive");
  if (!target_signature.empty()) {
    if (target_signature.size() != bands) {
      throw ConfigError("target signature has " + std::to_string(target_signature.size()) +
                        " values for " + std::to_string(bands) + " bands");
    }
    for (double v : target_signature)
      if (!(v >= 0)) throw ConfigError("target signature must be nonnegative");
  }
}

// ---- generation ----------------------------------------------------------------

std::vector<std::vector<double>> background_family(std::size_t bands, Rng& rng) {
  std::vector<std::vector<double>> family(3, std::vector<double>(bands));
  const double c = static_cast<double>(bands);
  for (auto& sig : family) {
    const double freq = rng.uniform(0.5, 1.5);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double level = rng.uniform(0.25, 0.4);
    for (std::size_t b = 0; b < bands; ++b) {
      const double u = static_cast<double>(b) / c;
      sig[b] = level + 0.12 * std::sin(2.0 * std::numbers::pi * freq * u + phase);
    }
  }
  return family;
}

std::vector<double> target_signature(std::size_t bands, Rng& rng) {
  const double c = static_cast<double>(bands);
  const double centre = rng.uniform(0.2, 0.8) * c;
  const double width = std::max(1.0, c / 8.0);
  const double base = rng.uniform(0.2, 0.3);
  std::vector<double> sig(bands);
  for (std::size_t b = 0; b < bands; ++b) {
    const double u = (static_cast<double>(b) + 0.5 - centre) / width;
    sig[b] = base + 0.55 * std::exp(-0.5 * u * u);
  }
  return sig;
}

namespace {

struct Rect {
  double x0, y0, x1, y1;
};

Rect rect_of(double cx, double cy, double w, double h) {
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

// Paints `sig` over `r` with per-pixel area coverage as blend weight.
void paint(std::vector<double>& img, std::size_t height, std::size_t width,
           std::span<const double> sig, const Rect& r) {
  const std::size_t bands = sig.size();
  const auto lo = [](double v) { return static_cast<std::ptrdiff_t>(std::floor(v)); };
  const std::ptrdiff_t i0 = std::max<std::ptrdiff_t>(0, lo(r.y0));
  const std::ptrdiff_t i1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(height) - 1, lo(r.y1));
  const std::ptrdiff_t j0 = std::max<std::ptrdiff_t>(0, lo(r.x0));
  const std::ptrdiff_t j1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(width) - 1, lo(r.x1));
  for (std::ptrdiff_t i = i0; i <= i1; ++i) {
    const double di = static_cast<double>(i);
    const double cy = std::max(0.0, std::min(di + 1, r.y1) - std::max(di, r.y0));
    if (cy <= 0) continue;
    for (std::ptrdiff_t j = j0; j <= j1; ++j) {
      const double dj = static_cast<double>(j);
      const double cov = cy * std::max(0.0, std::min(dj + 1, r.x1) - std::max(dj, r.x0));
      if (cov <= 0) continue;
      double* px = img.data() + (static_cast<std::size_t>(i) * width + static_cast<std::size_t>(j)) * bands;
      for (std::size_t b = 0; b < bands; ++b) px[b] = (1.0 - cov) * px[b] + cov * sig[b];
    }
  }
}

struct Mover {
  double cx, cy, vx, vy;
  std::size_t family_index;
  double gain;
};

}  // namespace

Sequence generate_sequence(const SceneConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const std::size_t H = cfg.height, W = cfg.width, C = cfg.bands;
  Sequence seq;
  seq.cfg = cfg;
  seq.background_family = background_family(C, rng);
  seq.target_signature = cfg.target_signature.empty() ? target_signature(C, rng) : cfg.target_signature;
  for (const auto& f : seq.background_family) {
    double gap = 0.0;
    for (std::size_t b = 0; b < C; ++b) gap = std::max(gap, std::abs(seq.target_signature[b] - f[b]));
    if (gap < 3.0 * cfg.noise || gap == 0.0) {
      throw ConfigError("target signature is within 3 sigma of a background signature in every band");
    }
  }

  // Static textured background: per-pixel blend of the family.
  std::vector<double> background(H * W * C);
  std::array<double, 6> tex{};
  for (double& v : tex) v = rng.uniform(0.0, 1.0);
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      std::array<double, 3> wk{};
      double total = 0.0;
      for (std::size_t k = 0; k < 3; ++k) {
        const double fx = (0.5 + 2.0 * tex[2 * k]) * 2.0 * std::numbers::pi / static_cast<double>(W);
        const double fy = (0.5 + 2.0 * tex[2 * k + 1]) * 2.0 * std::numbers::pi / static_cast<double>(H);
        wk[k] = 1.0 + 0.8 * std::sin(fx * static_cast<double>(j) + static_cast<double>(k)) *
                          std::sin(fy * static_cast<double>(i) + 2.0 * static_cast<double>(k));
        total += wk[k];
      }
      double* px = background.data() + (i * W + j) * C;
      for (std::size_t b = 0; b < C; ++b) {
        double v = 0.0;
        for (std::size_t k = 0; k < 3; ++k) v += wk[k] / total * seq.background_family[k][b];
        px[b] = v;
      }
    }

  std::vector<Mover> movers;
  for (std::size_t d = 0; d < cfg.distractors; ++d) {
    Mover m;
    m.cx = rng.uniform(0.0, static_cast<double>(W));
    m.cy = rng.uniform(0.0, static_cast<double>(H));
    m.vx = rng.uniform(-1.0, 1.0);
    m.vy = rng.uniform(-1.0, 1.0);
    m.family_index = static_cast<std::size_t>(rng.integer(0, 2));
    m.gain = rng.uniform(1.2, 1.5);
    movers.push_back(m);
  }

  const double hw = 0.5 * cfg.target_w, hh = 0.5 * cfg.target_h;
  const double fw = static_cast<double>(W), fh = static_cast<double>(H);
  for (std::size_t t = 0; t < cfg.frames; ++t) {
    const double td = static_cast<double>(t);
    double cx = cfg.start_cx, cy = cfg.start_cy;
    if (cfg.motion == Motion::linear) {
      cx += cfg.vx * td;
      cy += cfg.vy * td;
    } else if (cfg.motion == Motion::sinusoidal) {
      const double ph = 2.0 * std::numbers::pi * td / cfg.period;
      cx += cfg.amp_x * std::sin(ph);
      cy += cfg.amp_y * std::sin(ph + 0.5 * std::numbers::pi) - cfg.amp_y;
    }
    if (cfg.clamp_motion) {
      cx = std::clamp(cx, hw, fw - hw);
      cy = std::clamp(cy, hh, fh - hh);
    } else if (cx + hw <= 0 || cx - hw >= fw || cy + hh <= 0 || cy - hh >= fh) {
      throw ContractError("generate_sequence: target leaves the frame at frame " + std::to_string(t) +
                          " (enable motion clamping)");
    }
    seq.gt.push_back({cx, cy, cfg.target_w, cfg.target_h});

    std::vector<double> img = background;
    for (auto& m : movers) {
      std::vector<double> sig = seq.background_family[m.family_index];
      for (double& v : sig) v *= m.gain;
      paint(img, H, W, sig, rect_of(m.cx, m.cy, cfg.target_w, cfg.target_h));
      m.cx += m.vx;
      m.cy += m.vy;
      if (m.cx < 0 || m.cx > fw) m.vx = -m.vx;
      if (m.cy < 0 || m.cy > fh) m.vy = -m.vy;
    }
    paint(img, H, W, seq.target_signature, rect_of(cx, cy, cfg.target_w, cfg.target_h));
    if (cfg.occluder && t >= cfg.occluder_start && t < cfg.occluder_start + cfg.occluder_len) {
      paint(img, H, W, seq.background_family[0], {cx - hw, cy - hh, cx, cy + hh});
    }
    if (cfg.noise > 0)
      for (double& v : img) v += rng.normal(0.0, cfg.noise);
    seq.frames.emplace_back(Shape{H, W, C}, std::move(img));
  }
  return seq;
}

std::vector<SceneConfig> split_configs(std::uint64_t seed, std::size_t count, std::size_t frames,
                                       std::size_t bands, std::uint64_t stream_offset) {
  std::vector<SceneConfig> out;
  for (std::size_t i = 0; i < count; ++i) {
    Rng r = Rng::derive(seed, stream_offset + i);
    SceneConfig c;
    c.bands = bands;
    c.frames = frames;
    c.target_w = r.uniform(10.0, 14.0);
    c.target_h = r.uniform(10.0, 14.0);
    c.start_cx = r.uniform(22.0, 42.0);
    c.start_cy = r.uniform(22.0, 42.0);
    c.motion = i % 3 == 2 ? Motion::sinusoidal : Motion::linear;
    c.vx = r.uniform(-0.6, 0.6);
    c.vy = r.uniform(-0.6, 0.6);
    c.amp_x = r.uniform(6.0, 14.0);
    c.amp_y = r.uniform(4.0, 10.0);
    c.period = r.uniform(30.0, 60.0);
    c.distractors = static_cast<std::size_t>(r.integer(0, 2));
    c.occluder = r.uniform() < 0.3;
    c.occluder_start = static_cast<std::size_t>(r.integer(5, 40));
    c.occluder_len = 6;
    c.noise = 0.02;
    c.seed = r.next();
    out.push_back(c);
  }
  return out;
}

// ---- store -------------------------------------------------------------------

namespace {

ojson scene_json(const SceneConfig& c) {
  ojson j;
  j["bands"] = c.bands;
  j["height"] = c.height;
  j["width"] = c.width;
  j["frames"] = c.frames;
  j["target_w"] = c.target_w;
  j["target_h"] = c.target_h;
  j["start_cx"] = c.start_cx;
  j["start_cy"] = c.start_cy;
  j["motion"] = to_string(c.motion);
  j["vx"] = c.vx;
  j["vy"] = c.vy;
  j["amp_x"] = c.amp_x;
  j["amp_y"] = c.amp_y;
  j["period"] = c.period;
  j["clamp_motion"] = c.clamp_motion;
  j["distractors"] = c.distractors;
  j["occluder"] = c.occluder;
  j["occluder_start"] = c.occluder_start;
  j["occluder_len"] = c.occluder_len;
  j["noise"] = c.noise;
  j["target_signature"] = c.target_signature;
  j["seed"] = c.seed;
  return j;
}

SceneConfig scene_from_json(const nlohmann::json& j) {
  SceneConfig c;
  c.bands = j.at("bands").get<std::size_t>();
  c.height = j.at("height").get<std::size_t>();
  c.width = j.at("width").get<std::size_t>();
  c.frames = j.at("frames").get<std::size_t>();
  c.target_w = j.at("target_w").get<double>();
  c.target_h = j.at("target_h").get<double>();
  c.start_cx = j.at("start_cx").get<double>();
  c.start_cy = j.at("start_cy").get<double>();
  c.motion = parse_motion(j.at("motion").get<std::string>());
  c.vx = j.at("vx").get<double>();
  c.vy = j.at("vy").get<double>();
  c.amp_x = j.at("amp_x").get<double>();
  c.amp_y = j.at("amp_y").get<double>();
  c.period = j.at("period").get<double>();
  c.clamp_motion = j.at("clamp_motion").get<bool>();
  c.distractors = j.at("distractors").get<std::size_t>();
  c.occluder = j.at("occluder").get<bool>();
  c.occluder_start = j.at("occluder_start").get<std::size_t>();
  c.occluder_len = j.at("occluder_len").get<std::size_t>();
  c.noise = j.at("noise").get<double>();
  c.target_signature = j.at("target_signature").get<std::vector<double>>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

void write_le_doubles(const fs::path& path, std::span<const double> values) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(values.data()),
             static_cast<std::streamsize>(values.size() * sizeof(double)));
  } else {
    for (double v : values) {
      auto bits = std::bit_cast<std::uint64_t>(v);
      char bytes[8];
      for (int k = 0; k < 8; ++k) bytes[k] = static_cast<char>((bits >> (8 * k)) & 0xff);
      os.write(bytes, 8);
    }
  }
  if (!os) throw IoError("write failed: " + path.string());
}

std::vector<double> read_le_doubles(const fs::path& path, std::size_t count) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::vector<char> raw(count * sizeof(double));
  is.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(is.gcount()) != raw.size() || is.peek() != std::char_traits<char>::eof()) {
    throw IoError(path.string() + " does not hold exactly " + std::to_string(count) + " f64 values");
  }
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k)
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(raw[i * 8 + k])) << (8 * k);
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw IoError("write failed: " + path.string());
}

std::string frame_name(std::size_t t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%04zu.bin", t);
  return buf;
}

}  // namespace

void write_sequence(const fs::path& dir, const Sequence& seq) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  ojson meta;
  meta["name"] = seq.name;
  meta["scene"] = scene_json(seq.cfg);
  meta["target_signature"] = seq.target_signature;
  meta["background_family"] = seq.background_family;
  ojson gt = ojson::array();
  for (const auto& b : seq.gt) gt.push_back({b.cx, b.cy, b.w, b.h});
  meta["gt"] = gt;
  write_text(dir / "meta.json", meta.dump(2) + "\n");
  for (std::size_t t = 0; t < seq.frames.size(); ++t)
    write_le_doubles(dir / frame_name(t), seq.frames[t].values());
}

Sequence read_sequence(const fs::path& dir) {
  std::ifstream is(dir / "meta.json");
  if (!is) throw IoError("cannot open " + (dir / "meta.json").string());
  Sequence seq;
  try {
    const auto meta = nlohmann::json::parse(is);
    seq.name = meta.at("name").get<std::string>();
    seq.cfg = scene_from_json(meta.at("scene"));
    seq.target_signature = meta.at("target_signature").get<std::vector<double>>();
    seq.background_family = meta.at("background_family").get<std::vector<std::vector<double>>>();
    for (const auto& b : meta.at("gt"))
      seq.gt.push_back({b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                        b.at(3).get<double>()});
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed " + (dir / "meta.json").string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw IoError("malformed " + (dir / "meta.json").string() + ": " + e.what());
  }
  const auto& c = seq.cfg;
  if (seq.gt.size() != c.frames) throw IoError(dir.string() + ": GT count does not match frames");
  for (std::size_t t = 0; t < c.frames; ++t) {
    seq.frames.emplace_back(Shape{c.height, c.width, c.bands},
                            read_le_doubles(dir / frame_name(t), c.height * c.width * c.bands));
  }
  return seq;
}

void write_store(const fs::path& root, std::span<const Sequence> seqs) {
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "seq_%03zu", i);
    if (seqs[i].name.empty()) {
      Sequence named = seqs[i];
      named.name = buf;
      write_sequence(root / buf, named);
    } else {
      write_sequence(root / buf, seqs[i]);
    }
  }
}

std::vector<Sequence> read_store(const fs::path& root) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw IoError("sequence store not found: " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && e.path().filename().string().starts_with("seq_")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw IoError("no seq_* directories under " + root.string());
  std::vector<Sequence> out;
  for (const auto& d : dirs) out.push_back(read_sequence(d));
  return out;
}

// ---- metrics -------------------------------------------------------------------

double iou(const BBox& a, const BBox& b) {
  const double iw = std::max(0.0, std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0()));
  const double ih = std::max(0.0, std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0()));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  // Rounding in the corner arithmetic can push identical boxes past 1.
  return uni > 0 ? std::min(1.0, inter / uni) : 0.0;
}

double center_distance(const BBox& a, const BBox& b) { return std::hypot(a.cx - b.cx, a.cy - b.cy); }

namespace {

void check_aligned(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ContractError(std::string(what) + ": " + std::to_string(a) + " predictions vs " +
                        std::to_string(b) + " ground-truth boxes");
  }
  if (a == 0) throw ContractError(std::string(what) + ": empty sequence");
}

std::vector<BBox> boxes_of(std::span<const TrackRecord> records) {
  std::vector<BBox> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.bbox);
  return out;
}

}  // namespace

SuccessCurve success_auc(std::span<const BBox> pred, std::span<const BBox> gt) {
  check_aligned(pred.size(), gt.size(), "success_auc");
  std::vector<double> ious(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) ious[i] = iou(pred[i], gt[i]);
  SuccessCurve s;
  const double n = static_cast<double>(pred.size());
  for (std::size_t k = 0; k < kSuccessPoints; ++k) {
    const double tau = static_cast<double>(k) / 20.0;
    const auto hits = std::count_if(ious.begin(), ious.end(), [tau](double v) { return v > tau; });
    s.curve[k] = static_cast<double>(hits) / n;
  }
  s.auc = std::accumulate(s.curve.begin(), s.curve.end(), 0.0) / static_cast<double>(kSuccessPoints);
  return s;
}

SuccessCurve success_auc(std::span<const TrackRecord> records, std::span<const BBox> gt) {
  const auto b = boxes_of(records);
  return success_auc(std::span<const BBox>(b), gt);
}

double dp20(std::span<const BBox> pred, std::span<const BBox> gt, double threshold) {
  check_aligned(pred.size(), gt.size(), "dp20");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (center_distance(pred[i], gt[i]) <= threshold) ++hits;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double dp20(std::span<const TrackRecord> records, std::span<const BBox> gt) {
  const auto b = boxes_of(records);
  return dp20(std::span<const BBox>(b), gt);
}

double mean_center_error(std::span<const BBox> pred, std::span<const BBox> gt) {
  check_aligned(pred.size(), gt.size(), "mean_center_error");
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) total += center_distance(pred[i], gt[i]);
  return total / static_cast<double>(pred.size());
}

SequenceReport evaluate_records(const std::string& name, std::span<const TrackRecord> records,
                                std::span<const BBox> gt) {
  const auto boxes = boxes_of(records);
  const std::span<const BBox> pred(boxes);
  const SuccessCurve s = success_auc(pred, gt);
  SequenceReport r;
  r.sequence = name;
  r.frames = records.size();
  r.curve = s.curve;
  r.auc = s.auc;
  r.dp20 = dp20(pred, gt);
  r.mce = mean_center_error(pred, gt);
  return r;
}

MetricsReport aggregate(std::vector<SequenceReport> reports) {
  std::sort(reports.begin(), reports.end(),
            [](const SequenceReport& a, const SequenceReport& b) { return a.sequence < b.sequence; });
  MetricsReport m;
  m.sequences = std::move(reports);
  if (m.sequences.empty()) return m;
  for (const auto& r : m.sequences) {
    m.mean_auc += r.auc;
    m.mean_dp20 += r.dp20;
    m.mean_mce += r.mce;
  }
  const double n = static_cast<double>(m.sequences.size());
  m.mean_auc /= n;
  m.mean_dp20 /= n;
  m.mean_mce /= n;
  return m;
}

TrackerKind parse_tracker(const std::string& s) {
  if (s == "network") return TrackerKind::network;
  if (s == "oracle") return TrackerKind::oracle;
  throw ConfigError("unknown tracker '" + s + "' (expected network or oracle)");
}

std::vector<TrackRecord> oracle_track(std::span<const BBox> gt) {
  std::vector<TrackRecord> out;
  for (std::size_t t = 0; t < gt.size(); ++t) out.push_back({t, gt[t], 1.0, false, false});
  return out;
}

MetricsReport ope_run(std::span<const Sequence> seqs, const net::NetWeights* weights,
                      const track::TrackerConfig& cfg, TrackerKind kind,
                      std::vector<std::vector<TrackRecord>>* records) {
  if (kind == TrackerKind::network && weights == nullptr) {
    throw ContractError("ope_run: network tracker needs weights");
  }
  for (const auto& s : seqs) {
    if (s.frames.size() < 2) {
      throw ContractError("ope_run: sequence '" + s.name + "' has fewer than 2 frames");
    }
  }
  std::vector<std::size_t> order(seqs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return seqs[a].name < seqs[b].name; });

  std::vector<std::vector<TrackRecord>> recs(seqs.size());
  std::vector<SequenceReport> reports(seqs.size());
  std::vector<std::exception_ptr> errors(seqs.size());
  const auto n = static_cast<std::ptrdiff_t>(seqs.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      const Sequence& s = seqs[order[static_cast<std::size_t>(i)]];
      auto& r = recs[static_cast<std::size_t>(i)];
      r = kind == TrackerKind::oracle ? oracle_track(s.gt)
                                      : track::track_sequence(s.frames, s.gt[0], *weights, cfg);
      reports[static_cast<std::size_t>(i)] = evaluate_records(s.name, r, s.gt);
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  if (records) *records = std::move(recs);
  return aggregate(std::move(reports));
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::string report_json(const MetricsReport& r) {
  ojson j;
  ojson seqs = ojson::array();
  for (const auto& s : r.sequences) {
    ojson e;
    e["sequence"] = s.sequence;
    e["frames"] = s.frames;
    e["auc"] = s.auc;
    e["dp20"] = s.dp20;
    e["mce"] = s.mce;
    e["success"] = s.curve;
    seqs.push_back(e);
  }
  j["sequences"] = seqs;
  j["mean_auc"] = r.mean_auc;
  j["mean_dp20"] = r.mean_dp20;
  j["mean_mce"] = r.mean_mce;
  return j.dump(2) + "\n";
}

std::string report_csv(const MetricsReport& r) {
  std::string out = "sequence,auc,dp20,mce\n";
  for (const auto& s : r.sequences)
    out += s.sequence + "," + fmt(s.auc) + "," + fmt(s.dp20) + "," + fmt(s.mce) + "\n";
  return out;
}

// ---- training loop ---------------------------------------------------------------

void train_loop(net::NetWeights& w, AdamW& opt, std::span<const Sequence> train,
                const track::TrackerConfig& tcfg, const TrainOptions& opts, std::size_t first_step,
                const std::function<void(const StepLog&)>& on_step) {
  if (train.empty()) throw ContractError("train_loop: no training sequences");
  if (opts.batch == 0) throw ConfigError("batch must be positive");
  for (const auto& s : train) {
    if (s.frames.size() < 2) throw ContractError("train_loop: sequence '" + s.name + "' is too short");
    if (s.cfg.bands != w.cfg.bands) {
      throw ConfigError("train_loop: sequence '" + s.name + "' has " + std::to_string(s.cfg.bands) +
                        " bands, network expects " + std::to_string(w.cfg.bands));
    }
  }
  const int last = static_cast<int>(train.size()) - 1;
  for (std::size_t step = first_step; step < opts.steps; ++step) {
    const bool decayed = opts.lr_decay_step > 0 && step >= opts.lr_decay_step;
    opt.set_learning_rate(decayed ? opts.lr * opts.lr_decay : opts.lr);
    Rng rng = Rng::derive(opts.seed, step);
    std::vector<track::TrainSample> batch;
    for (std::size_t b = 0; b < opts.batch; ++b) {
      const Sequence& s = train[static_cast<std::size_t>(rng.integer(0, last))];
      batch.push_back(track::sample_from_sequence(s.frames, s.gt, w.cfg, tcfg, rng, opts.warmup));
    }
    const track::LossParts parts = track::train_step(batch, w, opt);
    if (on_step) on_step({step, parts});
  }
}

// ---- ablation ------------------------------------------------------------------

namespace {

std::size_t parse_count(const std::string& axis, const std::string& v, bool allow_zero) {
  std::size_t out = 0;
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end || (!allow_zero && out == 0)) {
    throw ConfigError("invalid value '" + v + "' for axis " + axis);
  }
  return out;
}

}  // namespace

net::NetConfig apply_axis(net::NetConfig cfg, const std::string& axis, const std::string& value) {
  if (axis == "ssi_layers") {
    cfg.ssi_layers = parse_count(axis, value, true);
  } else if (axis == "variant") {
    cfg.variant = net::parse_variant(value);
  } else if (axis == "state_len") {
    cfg.state_len = parse_count(axis, value, false);
  } else if (axis == "knockout") {
    net::HsmPaths p;
    if (value == "full") {
    } else if (value == "no_spectral") {
      p.spectral = false;
    } else if (value == "no_spectral_backward") {
      p.spectral = false;
      p.backward = false;
    } else if (value == "no_joint") {
      p.joint_act = false;
    } else if (value == "no_hs") {
      p.hs_act = false;
    } else {
      throw ConfigError("invalid knockout '" + value +
                        "' (expected full, no_spectral, no_spectral_backward, no_joint, no_hs)");
    }
    cfg.paths = p;
  } else {
    throw ConfigError("unknown ablation axis '" + axis +
                      "' (expected ssi_layers, variant, state_len or knockout)");
  }
  return cfg;
}

AblationAxis parse_axis(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == text.size()) {
    throw ConfigError("axis must look like name=v1,v2,... (got '" + text + "')");
  }
  AblationAxis a;
  a.name = text.substr(0, eq);
  std::stringstream ss(text.substr(eq + 1));
  std::string v;
  while (std::getline(ss, v, ',')) {
    if (v.empty()) throw ConfigError("empty value in axis '" + text + "'");
    a.values.push_back(v);
  }
  for (const auto& value : a.values) apply_axis(net::NetConfig{}, a.name, value);
  return a;
}

std::vector<AblationRow> ablation_harness(const net::NetConfig& base, const AblationAxis& axis,
                                          std::span<const Sequence> train,
                                          std::span<const Sequence> eval,
                                          const track::TrackerConfig& tcfg,
                                          const TrainOptions& opts,
                                          std::span<const std::uint64_t> seeds) {
  if (axis.values.empty()) throw ConfigError("ablation axis '" + axis.name + "' has no values");
  if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
  std::vector<net::NetConfig> cfgs;
  for (const auto& v : axis.values) {
    cfgs.push_back(apply_axis(base, axis.name, v));
    cfgs.back().validate();
  }
  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < cfgs.size(); ++i) {
    AblationRow row;
    row.config = axis.name + "=" + axis.values[i];
    for (std::uint64_t seed : seeds) {
      net::NetWeights w = net::NetWeights::init(cfgs[i], seed);
      AdamW opt(track::trainable_params(w, opts.freeze_paper), {opts.lr, opts.wd});
      TrainOptions o = opts;
      o.seed = seed;
      train_loop(w, opt, train, tcfg, o, 0, {});
      const MetricsReport rep = ope_run(eval, &w, tcfg, TrackerKind::network);
      row.auc_per_seed.push_back(rep.mean_auc);
      row.dp20_per_seed.push_back(rep.mean_dp20);
    }
    const double n = static_cast<double>(seeds.size());
    row.auc = std::accumulate(row.auc_per_seed.begin(), row.auc_per_seed.end(), 0.0) / n;
    row.dp20 = std::accumulate(row.dp20_per_seed.begin(), row.dp20_per_seed.end(), 0.0) / n;
    rows.push_back(std::move(row));
  }
  for (auto& r : rows) {
    r.delta_auc = r.auc - rows.front().auc;
    r.delta_dp20 = r.dp20 - rows.front().dp20;
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "config,auc,delta_auc,dp20,delta_dp20\n";
  for (const auto& r : rows)
    out += r.config + "," + fmt(r.auc) + "," + fmt(r.delta_auc) + "," + fmt(r.dp20) + "," +
           fmt(r.delta_dp20) + "\n";
  return out;
}

}  // namespace hym::data
