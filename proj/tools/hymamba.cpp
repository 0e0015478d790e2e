// hymamba: data generation, training, tracking, evaluation, ablation,
// self-test and kernel benchmarks.
//
// Exit codes: 0 success, 1 contract/config/usage error, 2 numeric failure,
// 3 IO failure.

#include <omp.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hymamba/bench.hpp"
#include "hymamba/checkpoint.hpp"
#include "hymamba/config.hpp"
#include "hymamba/data.hpp"
#include "hymamba/selftest.hpp"

namespace fs = std::filesystem;
using namespace hym;

namespace {

struct Common {
  std::string config_file;
  std::string preset = "desk";
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_file, "key = value config file");
  sub->add_option("--preset", c.preset, "desk or paper (paper sizes are for reference only and "
                                        "not trainable to paper accuracy without real data)");
  sub->add_option("--set", c.sets, "override one key, e.g. --set net.ssi_layers=0");
  sub->add_option("--seed", c.seed, "master seed");
  sub->add_option("--threads", c.threads, "cap on worker threads");
}

cfg::RunConfig resolve(const Common& c) {
  cfg::RunConfig rc = cfg::RunConfig::preset(c.preset);
  if (!c.config_file.empty()) rc.load_file(c.config_file);
  for (const auto& s : c.sets) rc.set_assignment(s);
  if (c.seed) rc.set("seed", std::to_string(*c.seed));
  if (c.threads) rc.set("threads", std::to_string(*c.threads));
  if (rc.threads() > 0) omp_set_num_threads(rc.threads());
  return rc;
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw IoError("write failed: " + path.string());
}

std::string seq_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "seq_%03zu", i);
  return buf;
}

std::vector<data::Sequence> make_sequences(const cfg::RunConfig& rc, std::size_t count,
                                           std::uint64_t stream) {
  const auto scenes = data::split_configs(rc.seed(), count, rc.frames(), rc.net().bands, stream);
  std::vector<data::Sequence> out;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    out.push_back(data::generate_sequence(scenes[i]));
    out.back().name = seq_name(i);
  }
  return out;
}

constexpr std::uint64_t kEvalStream = 1000;

fs::path split_dir(const fs::path& root, const char* split) {
  std::error_code ec;
  return fs::is_directory(root / split, ec) ? root / split : root;
}

void print_report(const data::MetricsReport& r) {
  std::printf("%-12s %8s %8s %8s\n", "sequence", "AUC", "DP@20", "MCE");
  for (const auto& s : r.sequences)
    std::printf("%-12s %8.4f %8.4f %8.3f\n", s.sequence.c_str(), s.auc, s.dp20, s.mce);
  std::printf("%-12s %8.4f %8.4f %8.3f\n", "mean", r.mean_auc, r.mean_dp20, r.mean_mce);
}

// ---- subcommands -------------------------------------------------------------------

int cmd_generate(const Common& c, const std::string& out, std::optional<std::size_t> sequences,
                 std::optional<std::size_t> frames) {
  cfg::RunConfig rc = resolve(c);
  if (frames) rc.set("data.frames", std::to_string(*frames));
  if (rc.frames() < 2) throw ConfigError("--frames must be at least 2 (got " + std::to_string(rc.frames()) + ")");
  if (sequences) {
    const auto seqs = make_sequences(rc, *sequences, 0);
    data::write_store(out, seqs);
    std::printf("wrote %zu sequences × %zu frames to %s\n", seqs.size(), rc.frames(), out.c_str());
    return 0;
  }
  const auto train = make_sequences(rc, rc.train_sequences(), 0);
  const auto eval = make_sequences(rc, rc.eval_sequences(), kEvalStream);
  data::write_store(fs::path(out) / "train", train);
  data::write_store(fs::path(out) / "eval", eval);
  std::printf("wrote %zu train + %zu eval sequences × %zu frames to %s\n", train.size(), eval.size(),
              rc.frames(), out.c_str());
  return 0;
}

struct TrainArgs {
  std::string data, out, overfit, resume, log;
  std::optional<std::size_t> steps;
  std::optional<double> lr;
  bool freeze_paper = false;
  std::size_t print_every = 25;
};

int cmd_train(const Common& c, const TrainArgs& a) {
  cfg::RunConfig rc = resolve(c);
  if (a.steps) rc.set("train.steps", std::to_string(*a.steps));
  if (a.lr) {
    std::ostringstream os;
    os.precision(17);
    os << *a.lr;
    rc.set("train.lr", os.str());
  }
  if (a.freeze_paper) rc.set("train.freeze_paper", "true");
  const net::NetConfig ncfg = rc.net();
  const track::TrackerConfig tcfg = rc.tracker();
  const data::TrainOptions opts = rc.train();

  std::vector<data::Sequence> seqs = data::read_store(split_dir(a.data, "train"));
  if (!a.overfit.empty()) {
    std::string want = a.overfit;
    if (want.starts_with("seq") && !want.starts_with("seq_")) {
      want = seq_name(static_cast<std::size_t>(std::stoul(want.substr(3))));
    }
    std::erase_if(seqs, [&](const data::Sequence& s) { return s.name != want; });
    if (seqs.empty()) throw ConfigError("--overfit: no sequence named '" + a.overfit + "'");
  }

  std::optional<ckpt::Loaded> resumed;
  if (!a.resume.empty()) resumed = ckpt::load(a.resume, &ncfg);
  net::NetWeights w = resumed ? resumed->weights : net::NetWeights::init(ncfg, rc.seed());
  AdamW opt(track::trainable_params(w, opts.freeze_paper), {opts.lr, opts.wd});
  std::size_t first = 0;
  if (resumed) {
    if (resumed->optimizer) opt.load_state(*resumed->optimizer);
    first = resumed->step;
  }

  const fs::path log_path = !a.log.empty() ? fs::path(a.log)
                                           : fs::path(a.out).parent_path() / "loss.csv";
  if (log_path.has_parent_path()) fs::create_directories(log_path.parent_path());
  std::ofstream log(log_path, resumed ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot open loss log " + log_path.string());
  if (!resumed) log << "step,total,cls,l1,giou\n";

  data::train_loop(w, opt, seqs, tcfg, opts, first, [&](const data::StepLog& s) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g,%.10g,%.10g\n", s.step, s.loss.total, s.loss.cls,
                  s.loss.l1, s.loss.giou);
    log << buf;
    if (a.print_every > 0 && (s.step % a.print_every == 0 || s.step + 1 == opts.steps)) {
      std::printf("step %5zu  total %.4f  cls %.4f  l1 %.4f  giou %.4f\n", s.step, s.loss.total,
                  s.loss.cls, s.loss.l1, s.loss.giou);
      std::fflush(stdout);
    }
  });
  log.flush();
  if (!log) throw IoError("write failed: " + log_path.string());
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  ckpt::save(a.out, w, &opt, std::max(first, opts.steps));
  std::printf("checkpoint %s, loss log %s\n", a.out.c_str(), log_path.c_str());
  return 0;
}

struct EvalArgs {
  std::string ckpt, data, out, tracker = "network";
};

data::MetricsReport run_eval(const Common& c, const EvalArgs& a, bool write_reports) {
  const cfg::RunConfig rc = resolve(c);
  const auto kind = data::parse_tracker(a.tracker);
  const net::NetConfig ncfg = rc.net();
  const track::TrackerConfig tcfg = rc.tracker();
  std::optional<ckpt::Loaded> loaded;
  if (kind == data::TrackerKind::network) {
    if (a.ckpt.empty()) throw ConfigError("--ckpt is required for the network tracker");
    loaded = ckpt::load(a.ckpt, &ncfg);
  }
  const auto seqs = data::read_store(split_dir(a.data, "eval"));
  std::vector<std::vector<track::TrackRecord>> records;
  const auto report = data::ope_run(seqs, loaded ? &loaded->weights : nullptr, tcfg, kind, &records);
  const fs::path out(a.out);
  for (std::size_t i = 0; i < report.sequences.size(); ++i)
    write_file(out / (report.sequences[i].sequence + ".jsonl"), track::to_jsonl(records[i]));
  if (write_reports) {
    write_file(out / "report.json", data::report_json(report));
    write_file(out / "report.csv", data::report_csv(report));
  }
  print_report(report);
  return report;
}

struct AblateArgs {
  std::vector<std::string> axes;
  std::vector<std::uint64_t> seeds{0};
  std::string data, out;
};

int cmd_ablate(const Common& c, const AblateArgs& a) {
  const cfg::RunConfig rc = resolve(c);
  std::vector<data::AblationAxis> axes;
  for (const auto& text : a.axes) axes.push_back(data::parse_axis(text));
  std::vector<data::Sequence> train, eval;
  if (a.data.empty()) {
    train = make_sequences(rc, rc.train_sequences(), 0);
    eval = make_sequences(rc, rc.eval_sequences(), kEvalStream);
  } else {
    train = data::read_store(fs::path(a.data) / "train");
    eval = data::read_store(fs::path(a.data) / "eval");
  }
  for (const auto& axis : axes) {
    const auto rows = data::ablation_harness(rc.net(), axis, train, eval, rc.tracker(), rc.train(), a.seeds);
    const std::string csv = data::ablation_csv(rows);
    write_file(fs::path(a.out) / ("ablation_" + axis.name + ".csv"), csv);
    std::fputs(csv.c_str(), stdout);
  }
  return 0;
}

int cmd_selftest(const Common& c) {
  const cfg::RunConfig rc = resolve(c);
  const auto results = selftest::run_all(rc.seed());
  int failures = 0;
  for (const auto& r : results) {
    std::printf("%s  %-30s %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
    if (!r.passed) ++failures;
  }
  if (failures > 0) {
    std::fprintf(stderr, "selftest: %d suite(s) failed:", failures);
    for (const auto& r : results)
      if (!r.passed) std::fprintf(stderr, " [%s]", r.name.c_str());
    std::fprintf(stderr, "\n");
    return 1;
  }
  std::printf("selftest passed (%zu suites)\n", results.size());
  return 0;
}

int cmd_bench(const Common& c, bench::BenchOptions opts, const std::string& out) {
  const cfg::RunConfig rc = resolve(c);
  opts.seed = rc.seed();
  const auto rows = bench::run_scan_bench(opts);
  const std::string csv = bench::bench_csv(rows);
  if (out.empty()) {
    std::fputs(csv.c_str(), stdout);
  } else {
    write_file(out, csv);
  }
  for (const auto& r : rows) {
    if (r.variant != "blocked") continue;
    for (const auto& s : rows) {
      if (s.variant == "reference" && s.len == r.len && r.seconds > 1.5 * s.seconds) {
        std::fprintf(stderr, "note: blocked scan at L=%zu took %.2fx the serial time\n", r.len,
                     r.seconds / s.seconds);
      }
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hyperspectral tracking with state-space spectral hidden states"};
  app.require_subcommand(1);
  Common common;

  auto* gen = app.add_subcommand("generate", "write synthetic train/eval sequence stores");
  add_common(gen, common);
  std::string gen_out;
  std::optional<std::size_t> gen_sequences, gen_frames;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--sequences", gen_sequences, "write this many sequences directly under --out");
  gen->add_option("--frames", gen_frames, "frames per sequence (>= 2)");

  auto* train = app.add_subcommand("train", "train a checkpoint");
  add_common(train, common);
  TrainArgs targs;
  train->add_option("--data", targs.data, "sequence store (its train/ split if present)")->required();
  train->add_option("--out", targs.out, "checkpoint path")->required();
  train->add_option("--steps", targs.steps, "optimizer steps");
  train->add_option("--lr", targs.lr, "learning rate");
  train->add_option("--overfit", targs.overfit, "train on one sequence (e.g. seq0 or seq_000)");
  train->add_option("--resume", targs.resume, "continue from this checkpoint");
  train->add_option("--log", targs.log, "loss CSV (default: loss.csv next to the checkpoint)");
  train->add_option("--print-every", targs.print_every, "progress interval in steps (0 = quiet)");
  train->add_flag("--freeze-paper", targs.freeze_paper,
                  "train only ASD, SSI and the HS patch embedding");

  EvalArgs eargs;
  auto* trk = app.add_subcommand("track", "run the tracker and write JSONL records");
  add_common(trk, common);
  trk->add_option("--ckpt", eargs.ckpt, "checkpoint");
  trk->add_option("--data", eargs.data, "sequence store (its eval/ split if present)")->required();
  trk->add_option("--out", eargs.out, "output directory")->required();
  trk->add_option("--tracker", eargs.tracker, "network or oracle");

  auto* ev = app.add_subcommand("eval", "one-pass evaluation with report.json/report.csv");
  add_common(ev, common);
  ev->add_option("--ckpt", eargs.ckpt, "checkpoint");
  ev->add_option("--data", eargs.data, "sequence store (its eval/ split if present)")->required();
  ev->add_option("--out", eargs.out, "output directory")->required();
  ev->add_option("--tracker", eargs.tracker, "network or oracle");

  auto* abl = app.add_subcommand("ablate", "train/evaluate sweeps, one CSV per axis");
  add_common(abl, common);
  AblateArgs aargs;
  abl->add_option("--axis", aargs.axes, "ssi_layers=..., variant=..., state_len=..., knockout=...")
      ->required();
  abl->add_option("--seeds", aargs.seeds, "seeds averaged per row")->delimiter(',');
  abl->add_option("--data", aargs.data, "store with train/ and eval/ (generated in memory if absent)");
  abl->add_option("--out", aargs.out, "output directory")->required();

  auto* self = app.add_subcommand("selftest", "run the built-in verification suites");
  add_common(self, common);

  auto* bch = app.add_subcommand("bench", "time serial, parallel and blocked scan kernels");
  add_common(bch, common);
  bench::BenchOptions bopts;
  std::string bench_out;
  bch->add_option("--lengths", bopts.lengths, "sequence lengths")->delimiter(',');
  bch->add_option("--channels", bopts.channels, "channels");
  bch->add_option("--state", bopts.state, "state length n");
  bch->add_option("--block", bopts.block, "block size of the blocked scan");
  bch->add_option("--repeats", bopts.repeats, "timing repeats (best is kept)");
  bch->add_option("--out", bench_out, "CSV path (stdout if empty)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_generate(common, gen_out, gen_sequences, gen_frames);
    if (*train) return cmd_train(common, targs);
    if (*trk) {
      run_eval(common, eargs, false);
      return 0;
    }
    if (*ev) {
      run_eval(common, eargs, true);
      return 0;
    }
    if (*abl) return cmd_ablate(common, aargs);
    if (*self) return cmd_selftest(common);
    if (*bch) return cmd_bench(common, bopts, bench_out);
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 2;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 3;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
