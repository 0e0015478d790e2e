#pragma once

// Synthetic hyperspectral sequences, the on-disk sequence store, one-pass
// evaluation metrics and the ablation sweep.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hymamba/render.hpp"
#include "hymamba/tracking.hpp"

namespace hym::data {

using track::BBox;
using track::TrackRecord;

enum class Motion { still, linear, sinusoidal };
std::string to_string(Motion m);
Motion parse_motion(const std::string& s);

struct SceneConfig {
  std::size_t bands = 8;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t frames = 60;
  double target_w = 12;
  double target_h = 12;
  double start_cx = 32;
  double start_cy = 32;
  Motion motion = Motion::linear;
  double vx = 0.5, vy = 0.25;        // px per frame (linear)
  double amp_x = 10, amp_y = 6;      // px (sinusoidal)
  double period = 40;                // frames (sinusoidal)
  bool clamp_motion = true;
  std::size_t distractors = 0;
  bool occluder = false;
  std::size_t occluder_start = 20;
  std::size_t occluder_len = 6;
  double noise = 0.02;
  // Empty: drawn from the seed. Otherwise one value per band.
  std::vector<double> target_signature;
  std::uint64_t seed = 0;

  // Throws ConfigError; checks the frame count (≥ 2), sizes and signature.
  void validate() const;
  bool operator==(const SceneConfig&) const = default;
};

struct Sequence {
  std::string name;
  SceneConfig cfg;
  std::vector<Tensor> frames;  // [H×W×C] each
  std::vector<BBox> gt;
  std::vector<double> target_signature;
  std::vector<std::vector<double>> background_family;
};

// Smooth nonnegative background signatures for a scene.
std::vector<std::vector<double>> background_family(std::size_t bands, Rng& rng);
// Peaked target signature; differs from every family member by ≥ 3σ in some band.
std::vector<double> target_signature(std::size_t bands, Rng& rng);

// Throws ContractError when the target leaves the frame and clamping is off.
Sequence generate_sequence(const SceneConfig& cfg);

// Scene configs for a train/eval split, varied per index and derived from seed.
std::vector<SceneConfig> split_configs(std::uint64_t seed, std::size_t count, std::size_t frames,
                                       std::size_t bands, std::uint64_t stream_offset);

// ---- sequence store ------------------------------------------------------------
//
// <root>/seq_%03d/meta.json         scene config echo, shape and GT boxes
// <root>/seq_%03d/frame_%04d.bin    H·W·C little-endian f64, row-major (y, x, band)

void write_sequence(const std::filesystem::path& dir, const Sequence& seq);
Sequence read_sequence(const std::filesystem::path& dir);
void write_store(const std::filesystem::path& root, std::span<const Sequence> seqs);
// Every seq_* directory under root, sorted by name.
std::vector<Sequence> read_store(const std::filesystem::path& root);

// ---- metrics -------------------------------------------------------------------

constexpr std::size_t kSuccessPoints = 21;
constexpr double kDpThreshold = 20.0;

double iou(const BBox& a, const BBox& b);
double center_distance(const BBox& a, const BBox& b);

struct SuccessCurve {
  std::array<double, kSuccessPoints> curve{};  // τ = i/20, success = IoU > τ
  double auc = 0;
};
SuccessCurve success_auc(std::span<const BBox> pred, std::span<const BBox> gt);
SuccessCurve success_auc(std::span<const TrackRecord> records, std::span<const BBox> gt);
double dp20(std::span<const BBox> pred, std::span<const BBox> gt, double threshold = kDpThreshold);
double dp20(std::span<const TrackRecord> records, std::span<const BBox> gt);
double mean_center_error(std::span<const BBox> pred, std::span<const BBox> gt);

struct SequenceReport {
  std::string sequence;
  std::size_t frames = 0;
  std::array<double, kSuccessPoints> curve{};
  double auc = 0, dp20 = 0, mce = 0;
  bool operator==(const SequenceReport&) const = default;
};

struct MetricsReport {
  std::vector<SequenceReport> sequences;  // sorted by name
  double mean_auc = 0, mean_dp20 = 0, mean_mce = 0;
};

SequenceReport evaluate_records(const std::string& name, std::span<const TrackRecord> records,
                                std::span<const BBox> gt);
MetricsReport aggregate(std::vector<SequenceReport> reports);

enum class TrackerKind { network, oracle };
TrackerKind parse_tracker(const std::string& s);

// Feeds the ground truth back as predictions.
std::vector<TrackRecord> oracle_track(std::span<const BBox> gt);

// One-pass evaluation of every sequence; `records` (optional) receives the
// per-sequence records in report order.
MetricsReport ope_run(std::span<const Sequence> seqs, const net::NetWeights* weights,
                      const track::TrackerConfig& cfg, TrackerKind kind,
                      std::vector<std::vector<TrackRecord>>* records = nullptr);

std::string report_json(const MetricsReport& r);
std::string report_csv(const MetricsReport& r);

// ---- training loop ---------------------------------------------------------------

struct TrainOptions {
  std::size_t steps = 300;
  std::size_t batch = 4;
  double lr = 1e-3;
  double wd = 1e-4;
  // Learning rate ×lr_decay from this step on (0 disables).
  std::size_t lr_decay_step = 0;
  double lr_decay = 0.1;
  bool warmup = true;
  bool freeze_paper = false;
  std::uint64_t seed = 0;
};

struct StepLog {
  std::size_t step;
  track::LossParts loss;
};

// Runs steps [first_step, opts.steps). Samples for step s come from
// Rng::derive(seed, s), so a resumed run draws the same batches.
void train_loop(net::NetWeights& w, AdamW& opt, std::span<const Sequence> train,
                const track::TrackerConfig& tcfg, const TrainOptions& opts, std::size_t first_step,
                const std::function<void(const StepLog&)>& on_step);

// ---- ablation ------------------------------------------------------------------

struct AblationAxis {
  std::string name;  // ssi_layers | variant | state_len | knockout
  std::vector<std::string> values;
};
// "name=v1,v2,..."; throws ConfigError on an unknown axis or value.
AblationAxis parse_axis(const std::string& text);
// Applies one axis value to a config.
net::NetConfig apply_axis(net::NetConfig cfg, const std::string& axis, const std::string& value);

struct AblationRow {
  std::string config;
  double auc = 0, delta_auc = 0, dp20 = 0, delta_dp20 = 0;
  std::vector<double> auc_per_seed, dp20_per_seed;
};

// Trains and evaluates every axis value under each seed with identical
// budgets; Δ columns are relative to the first value.
std::vector<AblationRow> ablation_harness(const net::NetConfig& base, const AblationAxis& axis,
                                          std::span<const Sequence> train,
                                          std::span<const Sequence> eval,
                                          const track::TrackerConfig& tcfg,
                                          const TrainOptions& opts,
                                          std::span<const std::uint64_t> seeds);
std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace hym::data
