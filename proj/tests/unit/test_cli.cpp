#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "hymamba/checkpoint.hpp"
#include "hymamba/config.hpp"
#include "hymamba/data.hpp"
#include "hymamba/ops.hpp"
#include "json.hpp"

using namespace hym;
namespace fs = std::filesystem;

namespace {

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

fs::path scratch(const std::string& leaf) {
  const auto p = fs::temp_directory_path() / ("hymamba_cli_" + leaf);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

// Relative path → contents for every regular file below root.
std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  return out;
}

struct Run {
  int code;
  std::string out;
};

Run cli(const std::string& args, const fs::path& dir) {
  const fs::path log = dir / "cli_output.txt";
  const std::string cmd = std::string(HYMAMBA_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
}

// Small network and data budget so every subcommand finishes in seconds.
fs::path small_config(const fs::path& dir) {
  const fs::path p = dir / "small.cfg";
  std::ofstream os(p);
  os << "# reduced sizes\n"
        "net.bands = 4\nnet.search_size = 16\nnet.template_size = 8\nnet.embed_dim = 8\n"
        "net.state_len = 2\nnet.ssi_layers = 1\nnet.heads = 2\n"
        "data.frames = 6\ndata.train_sequences = 2\ndata.eval_sequences = 1\n"
        "train.batch = 1\n";
  return p;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("run config presets and key validation") {
  const auto desk = cfg::RunConfig::preset("desk");
  for (const auto& k : cfg::documented_keys()) {
    CHECK(desk.get(k.key) == k.desk_default);
    CHECK_FALSE(k.help.empty());
  }
  CHECK(desk.entries().size() == cfg::documented_keys().size());
  CHECK(desk.net() == net::NetConfig::desk());
  CHECK(desk.train_sequences() == 12);
  CHECK(desk.eval_sequences() == 4);
  CHECK(desk.frames() == 60);

  const auto paper = cfg::RunConfig::preset("paper");
  CHECK(std::stod(paper.get("train.lr")) == 6e-5);
  CHECK(std::stod(paper.get("train.wd")) == 1e-4);
  CHECK(paper.get("train.batch") == "14");
  CHECK(paper.get("train.epochs") == "15");
  CHECK(paper.get("train.decay_epoch") == "10");
  CHECK(paper.train().batch == 14);

  CHECK_THROWS_AS(cfg::RunConfig::preset("laptop"), ConfigError);
  auto rc = cfg::RunConfig::preset("desk");
  CHECK_THROWS_AS(rc.set("net.depth", "3"), ConfigError);
  CHECK_THROWS_AS(rc.set("net.embed_dim", "thirty"), ConfigError);
  CHECK_THROWS_AS(rc.set_assignment("no_equals_sign"), ConfigError);
  rc.set_assignment("net.ssi_layers=0");
  CHECK(rc.net().ssi_layers == 0);
}

TEST_CASE("run config text parsing") {
  auto rc = cfg::RunConfig::preset("desk");
  rc.parse_text("# comment\n\nnet.state_len = 4   # trailing\n  track.tau_hidden=0.25\n");
  CHECK(rc.net().state_len == 4);
  CHECK(rc.tracker().tau_hidden == 0.25);
  CHECK_THROWS_AS(rc.parse_text("bogus.key = 1\n"), ConfigError);
  CHECK_THROWS_AS(rc.parse_text("net.state_len\n"), ConfigError);

  auto again = cfg::RunConfig::preset("paper");
  again.parse_text(rc.to_text());
  CHECK(again.entries() == rc.entries());

  const auto n = net::NetConfig::tiny();
  CHECK(cfg::net_config_from_text(cfg::net_config_text(n)) == n);
  auto other = n;
  other.embed_dim = 16;
  other.state_len = 4;
  const auto diff = cfg::net_config_diff(n, other);
  REQUIRE(diff.size() == 2);
  CHECK(diff[0].find("net.embed_dim") != std::string::npos);
  CHECK(diff[1].find("net.state_len") != std::string::npos);
  CHECK_THROWS_AS(rc.load_file("/nonexistent/run.cfg"), IoError);
}

TEST_CASE("checkpoint round trip") {
  const auto dir = scratch("ckpt");
  auto w = net::NetWeights::init(net::NetConfig::tiny(), 4);
  AdamW opt(track::trainable_params(w, true), {.learning_rate = 1e-3});
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = Tensor::scalar(0);
    for (const auto& p : track::trainable_params(w, true)) loss = add(loss, sum(mul(p, p)));
    tape.backward(loss);
  }
  opt.step();
  ckpt::save(dir / "a.bin", w, &opt, 7);
  const auto back = ckpt::load(dir / "a.bin");
  CHECK(back.step == 7);
  CHECK(back.weights.cfg == w.cfg);
  auto a = w.named();
  auto b = const_cast<net::NetWeights&>(back.weights).named();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(vals(a[i].second) == vals(b[i].second));
  }
  REQUIRE(back.optimizer.has_value());
  CHECK(back.optimizer->step == opt.state().step);
  REQUIRE(back.optimizer->first_moment.size() == opt.state().first_moment.size());
  for (std::size_t i = 0; i < opt.state().first_moment.size(); ++i) {
    CHECK(back.optimizer->first_moment[i] == opt.state().first_moment[i]);
    CHECK(back.optimizer->second_moment[i] == opt.state().second_moment[i]);
  }

  ckpt::save(dir / "plain.bin", w, nullptr, 0);
  CHECK_FALSE(ckpt::load(dir / "plain.bin").optimizer.has_value());
  fs::remove_all(dir);
}

TEST_CASE("checkpoint errors") {
  const auto dir = scratch("ckpt_err");
  auto w = net::NetWeights::init(net::NetConfig::tiny(), 5);
  ckpt::save(dir / "w.bin", w, nullptr, 0);

  auto expected = net::NetConfig::tiny();
  expected.embed_dim = 16;
  expected.heads = 4;
  try {
    ckpt::load(dir / "w.bin", &expected);
    FAIL("mismatch not detected");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("net.embed_dim") != std::string::npos);
    CHECK(msg.find("net.heads") != std::string::npos);
  }

  const std::string bytes = slurp(dir / "w.bin");
  std::ofstream(dir / "truncated.bin", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  CHECK_THROWS_AS(ckpt::load(dir / "truncated.bin"), IoError);
  std::ofstream(dir / "garbage.bin", std::ios::binary) << "not a checkpoint at all";
  CHECK_THROWS_AS(ckpt::load(dir / "garbage.bin"), IoError);
  CHECK_THROWS_AS(ckpt::load(dir / "missing.bin"), IoError);
  fs::remove_all(dir);
}

TEST_CASE("cli generate") {
  const auto dir = scratch("generate");
  const auto c = small_config(dir).string();
  REQUIRE(cli("generate --config " + c + " --sequences 3 --seed 7 --out " + (dir / "a").string(), dir).code == 0);
  REQUIRE(cli("generate --config " + c + " --sequences 3 --seed 7 --out " + (dir / "b").string(), dir).code == 0);
  REQUIRE(cli("generate --config " + c + " --sequences 3 --seed 8 --out " + (dir / "c").string(), dir).code == 0);
  const auto a = tree(dir / "a");
  CHECK(a.size() == 3 * (1 + 6));
  CHECK(a == tree(dir / "b"));
  CHECK(a != tree(dir / "c"));

  const auto bad = cli("generate --config " + c + " --frames 1 --out " + (dir / "d").string(), dir);
  CHECK(bad.code == 1);
  CHECK(bad.out.find("frames") != std::string::npos);

  std::ofstream(dir / "plain_file") << "x";
  CHECK(cli("generate --config " + c + " --out " + (dir / "plain_file" / "sub").string(), dir).code == 3);
  CHECK(cli("generate --set net.nope=1 --out " + (dir / "e").string(), dir).code == 1);

  REQUIRE(cli("generate --config " + c + " --out " + (dir / "split").string(), dir).code == 0);
  CHECK(data::read_store(dir / "split" / "train").size() == 2);
  CHECK(data::read_store(dir / "split" / "eval").size() == 1);
  fs::remove_all(dir);
}

TEST_CASE("cli train, eval and resume") {
  const auto dir = scratch("train");
  const auto c = "--config " + small_config(dir).string();
  const auto data = (dir / "data").string();
  REQUIRE(cli("generate " + c + " --out " + data, dir).code == 0);

  SUBCASE("zero steps writes the initialisation") {
    REQUIRE(cli("train " + c + " --seed 3 --steps 0 --data " + data + " --out " + (dir / "z" / "w.bin").string(),
                dir).code == 0);
    const auto loaded = ckpt::load(dir / "z" / "w.bin");
    auto init = net::NetWeights::init(loaded.weights.cfg, 3);
    auto a = init.named();
    auto b = const_cast<net::NetWeights&>(loaded.weights).named();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(vals(a[i].second) == vals(b[i].second));
    CHECK(lines(slurp(dir / "z" / "loss.csv")) == std::vector<std::string>{"step,total,cls,l1,giou"});
  }

  SUBCASE("resume continues the same loss log") {
    const auto straight = (dir / "s" / "w.bin").string();
    REQUIRE(cli("train " + c + " --steps 6 --data " + data + " --out " + straight, dir).code == 0);
    const auto part = (dir / "p" / "w.bin").string();
    REQUIRE(cli("train " + c + " --steps 3 --data " + data + " --out " + part, dir).code == 0);
    REQUIRE(cli("train " + c + " --steps 6 --resume " + part + " --data " + data + " --out " + part, dir).code == 0);
    const auto s = lines(slurp(dir / "s" / "loss.csv"));
    const auto p = lines(slurp(dir / "p" / "loss.csv"));
    REQUIRE(s.size() == 7);
    CHECK(p == s);
    CHECK(slurp(straight) == slurp(part));
  }

  SUBCASE("eval reports and determinism") {
    const auto ck = (dir / "t" / "w.bin").string();
    REQUIRE(cli("train " + c + " --steps 2 --data " + data + " --out " + ck, dir).code == 0);
    REQUIRE(cli("eval " + c + " --ckpt " + ck + " --data " + data + " --out " + (dir / "e1").string(), dir).code == 0);
    REQUIRE(cli("eval " + c + " --ckpt " + ck + " --data " + data + " --out " + (dir / "e2").string(), dir).code == 0);
    const auto t1 = tree(dir / "e1");
    CHECK(t1.count("report.json") == 1);
    CHECK(t1.count("report.csv") == 1);
    CHECK(t1.count("seq_000.jsonl") == 1);
    CHECK(t1 == tree(dir / "e2"));
    CHECK(track::from_jsonl(t1.at("seq_000.jsonl")).size() == 6);

    REQUIRE(cli("track " + c + " --ckpt " + ck + " --data " + data + " --out " + (dir / "tr").string(), dir).code == 0);
    const auto tr = tree(dir / "tr");
    CHECK(tr.count("report.json") == 0);
    CHECK(tr.at("seq_000.jsonl") == t1.at("seq_000.jsonl"));

    const auto mismatch = cli("eval " + c + " --set net.embed_dim=16 --ckpt " + ck + " --data " + data +
                                  " --out " + (dir / "e3").string(),
                              dir);
    CHECK(mismatch.code == 1);
    CHECK(mismatch.out.find("net.embed_dim") != std::string::npos);
    CHECK(cli("eval " + c + " --ckpt " + (dir / "none.bin").string() + " --data " + data + " --out " +
                  (dir / "e4").string(),
              dir)
              .code == 3);
  }

  SUBCASE("oracle tracker") {
    REQUIRE(cli("eval " + c + " --tracker oracle --data " + data + " --out " + (dir / "o").string(), dir).code == 0);
    const auto j = nlohmann::json::parse(slurp(dir / "o" / "report.json"));
    CHECK(j.at("mean_auc").get<double>() == 20.0 / 21.0);
    CHECK(j.at("mean_dp20").get<double>() == 1.0);
  }

  SUBCASE("non-finite loss exits with the numeric code") {
    const auto r = cli("train " + c + " --steps 3 --lr inf --data " + data + " --out " + (dir / "n" / "w.bin").string(),
                       dir);
    CHECK(r.code == 2);
    CHECK(r.out.find("non-finite") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("cli ablate") {
  const auto dir = scratch("ablate");
  const auto c = "--config " + small_config(dir).string() + " --set train.steps=2";
  const auto data = (dir / "data").string();
  REQUIRE(cli("generate " + c + " --out " + data, dir).code == 0);
  REQUIRE(cli("ablate " + c + " --axis ssi_layers=0,1 --axis variant=mm,hsm --data " + data + " --out " +
                  (dir / "a").string(),
              dir)
              .code == 0);
  const auto layers = lines(slurp(dir / "a" / "ablation_ssi_layers.csv"));
  REQUIRE(layers.size() == 3);
  CHECK(layers[0] == "config,auc,delta_auc,dp20,delta_dp20");
  CHECK(layers[1].rfind("ssi_layers=0,", 0) == 0);
  CHECK(layers[2].rfind("ssi_layers=1,", 0) == 0);
  const auto variants = lines(slurp(dir / "a" / "ablation_variant.csv"));
  REQUIRE(variants.size() == 3);
  CHECK(variants[1].rfind("variant=mm,", 0) == 0);
  CHECK(variants[2].rfind("variant=hsm,", 0) == 0);

  CHECK(cli("ablate " + c + " --axis depth=1,2 --data " + data + " --out " + (dir / "b").string(), dir).code == 1);
  fs::remove_all(dir);
}

TEST_CASE("cli selftest and bench") {
  const auto dir = scratch("misc");
  const auto self = cli("selftest", dir);
  CHECK(self.code == 0);
  CHECK(self.out.find("FAIL") == std::string::npos);
  CHECK(self.out.find("selftest passed") != std::string::npos);

  REQUIRE(cli("bench --lengths 16,32 --channels 4 --state 2 --block 8 --repeats 1 --out " +
                  (dir / "bench.csv").string(),
              dir)
              .code == 0);
  const auto rows = lines(slurp(dir / "bench.csv"));
  REQUIRE(rows.size() == 1 + 3 * 2);
  CHECK(rows[0] == "variant,L,ch,n,block,seconds");
  for (const char* v : {"reference", "parallel", "blocked"})
    for (const char* len : {",16,", ",32,"})
      CHECK(std::count_if(rows.begin(), rows.end(), [&](const std::string& r) {
              return r.rfind(v, 0) == 0 && r.find(len) != std::string::npos;
            }) == 1);
  CHECK(cli("frobnicate", dir).code == 1);
  CHECK(cli("--help", dir).code == 0);
  fs::remove_all(dir);
}
