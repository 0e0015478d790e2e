#pragma once

// Box head, training losses, crop geometry, template management and the
// frame-by-frame tracking loop.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hymamba/net.hpp"
#include "hymamba/optim.hpp"
#include "hymamba/rng.hpp"

namespace hym::track {

// Centre/size box in pixels.
struct BBox {
  double cx = 0, cy = 0, w = 1, h = 1;

  bool valid() const;
  double x0() const { return cx - 0.5 * w; }
  double y0() const { return cy - 0.5 * h; }
  double x1() const { return cx + 0.5 * w; }
  double y1() const { return cy + 0.5 * h; }
  double area() const { return w * h; }
  bool operator==(const BBox&) const = default;
};

struct TrackerConfig {
  std::size_t update_interval = 25;
  double tau_template = 0.5;
  double tau_hidden = 0.5;
  double search_context = 4.0;
  double template_context = 2.0;

  void validate() const;
  bool operator==(const TrackerConfig&) const = default;
};

struct TrackRecord {
  std::size_t frame = 0;
  BBox bbox;
  double confidence = 0;
  bool template_updated = false;
  bool state_propagated = false;
  bool operator==(const TrackRecord&) const = default;
};

// ---- head --------------------------------------------------------------------

struct HeadOutput {
  Tensor score_map;   // [g×g], sigmoid
  Tensor size_map;    // [g×g×2] (w, h) as a fraction of the search crop
  Tensor offset_map;  // [g×g×2] (dx, dy) in cells from the cell centre
  BBox bbox_search;   // search-crop pixels
  double confidence = 0;
  std::size_t best_cell = 0;
};

struct Decoded {
  BBox bbox;
  double confidence;
  std::size_t cell;
};

// Argmax over `score` (first cell wins ties), then centre = (cell + 0.5 +
// offset)·patch and size = size_frac·search_size.
Decoded decode_maps(std::span<const double> score, std::span<const double> size,
                    std::span<const double> offset, std::size_t grid, std::size_t patch);

HeadOutput head_forward(const Tensor& f_joint, const net::HeadWeights& w, const net::NetConfig& cfg);

// ---- losses ------------------------------------------------------------------

constexpr double kFocalAlpha = 2.0;
constexpr double kFocalBeta = 4.0;
constexpr double kFocalClamp = 1e-7;
constexpr double kWeightL1 = 5.0;
constexpr double kWeightGiou = 2.0;

// Gaussian splat on a g×g grid peaking at exactly 1 in the cell containing
// (cx, cy); sigma follows the box size in cells.
Tensor gaussian_target(std::size_t grid, double cx_cells, double cy_cells, double w_cells,
                       double h_cells);

// Penalty-reduced focal loss summed over cells and divided by the number of
// cells whose target equals 1.
Tensor focal_loss(const Tensor& score_map, const Tensor& target_map);

double giou(const BBox& a, const BBox& b);
double giou_loss(const BBox& pred, const BBox& gt);
// pred and gt are [1×4] (cx, cy, w, h); differentiable in pred.
Tensor giou_loss(const Tensor& pred, const Tensor& gt);
Tensor l1_loss(const Tensor& pred, const Tensor& gt);

double total_loss(double l_cls, double l_l1, double l_giou);
Tensor total_loss(const Tensor& l_cls, const Tensor& l_l1, const Tensor& l_giou);

// ---- crops -------------------------------------------------------------------

// frame = origin + scale · crop, per axis.
struct CropMap {
  double x0 = 0, y0 = 0, scale = 1;

  BBox to_frame(const BBox& crop_box) const;
  BBox to_crop(const BBox& frame_box) const;
};

struct Crop {
  Tensor image;  // [out×out×ch]
  CropMap map;
};

// Square crop of side context·√(w·h) centred on `box`, bilinearly resampled to
// out_size; samples outside the frame read as zero.
Crop crop_region(const Tensor& frame, const BBox& box, double context, std::size_t out_size);

// Crop plus its false-colour rendering.
net::FrameGroup make_group(const Tensor& frame, const BBox& box, double context,
                           std::size_t out_size, net::Role role, const Tensor& render);

// ---- inference ---------------------------------------------------------------

bool should_update_template(std::size_t frame_idx, double confidence, const TrackerConfig& cfg);

struct TemplateDecision {
  bool updated = false;
  std::optional<net::FrameGroup> group;
};
TemplateDecision update_dynamic_template(const Tensor& frame, const BBox& predicted,
                                         std::size_t frame_idx, double confidence,
                                         const TrackerConfig& cfg, const net::NetConfig& net_cfg,
                                         const Tensor& render);

std::vector<TrackRecord> track_sequence(std::span<const Tensor> frames, const BBox& init,
                                        const net::NetWeights& w, const TrackerConfig& cfg);

std::string to_jsonl(std::span<const TrackRecord> records);
std::vector<TrackRecord> from_jsonl(const std::string& text);

// ---- training ----------------------------------------------------------------

struct TrainSample {
  std::vector<net::FrameGroup> groups;  // search + both templates
  BBox gt_search;                       // in search-crop pixels
  // Search crop of the preceding frame; when set, an untaped forward on it
  // provides the initial hidden state.
  std::optional<net::FrameGroup> warmup_search;
};

struct LossParts {
  double total = 0, cls = 0, l1 = 0, giou = 0;
};

struct SampleLoss {
  Tensor total, cls, l1, giou;
};

// Focal + weighted L1 + weighted GIoU for one sample, recorded on the active tape.
SampleLoss sample_loss(const TrainSample& s, const net::NetWeights& w);

// Parameters handed to the optimiser: all of them, or only ASD, SSI and the
// HS patch embedding when `freeze_paper` is set.
std::vector<Tensor> trainable_params(net::NetWeights& w, bool freeze_paper);

// Mean loss over the batch, one backward pass and one optimiser step.
// Throws NumericError on a non-finite loss (weights untouched).
LossParts train_step(std::span<const TrainSample> batch, net::NetWeights& w, AdamW& opt);

// Draws one training sample from a sequence: static template from frame 0,
// dynamic template from a recent earlier frame, search on a jittered crop of
// frame t ≥ 1.
TrainSample sample_from_sequence(std::span<const Tensor> frames, std::span<const BBox> gt,
                                 const net::NetConfig& net_cfg, const TrackerConfig& cfg, Rng& rng,
                                 bool warmup);

}  // namespace hym::track
