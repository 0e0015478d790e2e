#include "hymamba/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace hym::cfg {

const std::vector<KeyDoc>& documented_keys() {
  static const std::vector<KeyDoc> keys = {
      {"net.bands", "8", "spectral bands C"},
      {"net.search_size", "64", "search crop side in pixels"},
      {"net.template_size", "32", "template crop side in pixels"},
      {"net.patch_size", "8", "patch side in pixels"},
      {"net.embed_dim", "32", "token width D (state path runs at 2D)"},
      {"net.state_len", "8", "SSM hidden state length n"},
      {"net.ssi_layers", "2", "number of SSI layers N"},
      {"net.heads", "4", "attention heads"},
      {"net.conv_kernel", "3", "causal conv kernel before each scan"},
      {"net.variant", "hsm", "state module: mm or hsm"},
      {"net.knockout", "full", "full | no_spectral | no_spectral_backward | no_joint | no_hs"},
      {"track.update_interval", "25", "frames between dynamic template updates"},
      {"track.tau_template", "0.5", "confidence needed to update the dynamic template"},
      {"track.tau_hidden", "0.5", "confidence needed to propagate the hidden state"},
      {"track.search_context", "4.0", "search crop side / sqrt(w*h)"},
      {"track.template_context", "2.0", "template crop side / sqrt(w*h)"},
      {"data.train_sequences", "12", "generated training sequences"},
      {"data.eval_sequences", "4", "generated evaluation sequences"},
      {"data.frames", "60", "frames per generated sequence"},
      {"train.steps", "1200", "optimizer steps (ignored when train.epochs > 0)"},
      {"train.epochs", "0", "epoch-based budget; 0 uses train.steps"},
      {"train.steps_per_epoch", "100", "steps per epoch when train.epochs > 0"},
      {"train.decay_epoch", "0", "epoch after which the learning rate decays; 0 disables"},
      {"train.batch", "4", "samples per step"},
      {"train.lr", "0.001", "AdamW learning rate"},
      {"train.wd", "0.0001", "AdamW decoupled weight decay"},
      {"train.lr_decay", "0.1", "learning-rate factor after the decay point"},
      {"train.lr_decay_step", "0", "step at which the learning rate decays; 0 disables"},
      {"train.warmup", "true", "seed each sample's hidden state from the previous frame"},
      {"train.freeze_paper", "false", "train only ASD, SSI and the HS patch embedding"},
      {"seed", "0", "master seed"},
      {"threads", "0", "worker cap; 0 leaves the OpenMP default"},
  };
  return keys;
}

namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
  throw ConfigError("config key '" + key + "': '" + value + "' is not " + want);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "a boolean");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string knockout_name(const net::HsmPaths& p) {
  for (const char* name : {"full", "no_spectral", "no_spectral_backward", "no_joint", "no_hs"}) {
    if (data::apply_axis(net::NetConfig{}, "knockout", name).paths == p) return name;
  }
  throw ConfigError("path combination has no knockout name");
}

void check_value(const std::string& key, const std::string& v) {
  if (key == "net.variant") {
    net::parse_variant(v);
  } else if (key == "net.knockout") {
    data::apply_axis(net::NetConfig{}, "knockout", v);
  } else if (key.starts_with("track.tau") || key.ends_with("_context") || key == "train.lr" ||
             key == "train.wd" || key == "train.lr_decay") {
    parse_double(key, v);
  } else if (key == "train.warmup" || key == "train.freeze_paper") {
    parse_bool(key, v);
  } else {
    parse_u64(key, v);
  }
}

}  // namespace

RunConfig RunConfig::preset(const std::string& name) {
  RunConfig c;
  for (const auto& k : documented_keys()) c.values_[k.key] = k.desk_default;
  if (name == "desk") return c;
  if (name != "paper") throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
  const net::NetConfig p = net::NetConfig::paper();
  c.values_["net.bands"] = std::to_string(p.bands);
  c.values_["net.search_size"] = std::to_string(p.search_size);
  c.values_["net.template_size"] = std::to_string(p.template_size);
  c.values_["net.patch_size"] = std::to_string(p.patch_size);
  c.values_["net.embed_dim"] = std::to_string(p.embed_dim);
  c.values_["net.state_len"] = std::to_string(p.state_len);
  c.values_["net.ssi_layers"] = std::to_string(p.ssi_layers);
  c.values_["net.heads"] = std::to_string(p.heads);
  c.values_["train.lr"] = "0.00006";
  c.values_["train.wd"] = "0.0001";
  c.values_["train.batch"] = "14";
  c.values_["train.epochs"] = "15";
  c.values_["train.decay_epoch"] = "10";
  c.values_["train.lr_decay"] = "0.1";
  c.values_["train.freeze_paper"] = "true";
  return c;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto& keys = documented_keys();
  if (std::none_of(keys.begin(), keys.end(), [&](const KeyDoc& k) { return k.key == key; })) {
    throw ConfigError("unknown config key '" + key + "'");
  }
  check_value(key, value);
  values_[key] = value;
}

void RunConfig::set_assignment(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + text + "'");
  set(trim(text.substr(0, eq)), trim(text.substr(eq + 1)));
}

void RunConfig::parse_text(const std::string& text, const std::string& origin) {
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      set_assignment(line);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  parse_text(ss.str(), path.string());
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

net::NetConfig RunConfig::net() const {
  net::NetConfig c;
  const auto u = [&](const char* k) { return static_cast<std::size_t>(parse_u64(k, get(k))); };
  c.bands = u("net.bands");
  c.search_size = u("net.search_size");
  c.template_size = u("net.template_size");
  c.patch_size = u("net.patch_size");
  c.embed_dim = u("net.embed_dim");
  c.state_len = u("net.state_len");
  c.ssi_layers = u("net.ssi_layers");
  c.heads = u("net.heads");
  c.conv_kernel = u("net.conv_kernel");
  c.variant = net::parse_variant(get("net.variant"));
  c.paths = data::apply_axis(c, "knockout", get("net.knockout")).paths;
  c.validate();
  return c;
}

track::TrackerConfig RunConfig::tracker() const {
  track::TrackerConfig t;
  t.update_interval = parse_u64("track.update_interval", get("track.update_interval"));
  t.tau_template = parse_double("track.tau_template", get("track.tau_template"));
  t.tau_hidden = parse_double("track.tau_hidden", get("track.tau_hidden"));
  t.search_context = parse_double("track.search_context", get("track.search_context"));
  t.template_context = parse_double("track.template_context", get("track.template_context"));
  t.validate();
  return t;
}

data::TrainOptions RunConfig::train() const {
  data::TrainOptions o;
  const auto u = [&](const char* k) { return static_cast<std::size_t>(parse_u64(k, get(k))); };
  const auto d = [&](const char* k) { return parse_double(k, get(k)); };
  const std::size_t epochs = u("train.epochs");
  const std::size_t spe = u("train.steps_per_epoch");
  o.steps = epochs > 0 ? epochs * spe : u("train.steps");
  o.lr_decay_step = u("train.lr_decay_step");
  if (epochs > 0 && u("train.decay_epoch") > 0) o.lr_decay_step = u("train.decay_epoch") * spe;
  o.batch = u("train.batch");
  o.lr = d("train.lr");
  o.wd = d("train.wd");
  o.lr_decay = d("train.lr_decay");
  o.warmup = parse_bool("train.warmup", get("train.warmup"));
  o.freeze_paper = parse_bool("train.freeze_paper", get("train.freeze_paper"));
  o.seed = seed();
  if (o.batch == 0) throw ConfigError("train.batch must be positive");
  if (!(o.lr >= 0) || !(o.wd >= 0)) throw ConfigError("train.lr and train.wd must be non-negative");
  return o;
}

std::uint64_t RunConfig::seed() const { return parse_u64("seed", get("seed")); }
int RunConfig::threads() const { return static_cast<int>(parse_u64("threads", get("threads"))); }
std::size_t RunConfig::train_sequences() const {
  return parse_u64("data.train_sequences", get("data.train_sequences"));
}
std::size_t RunConfig::eval_sequences() const {
  return parse_u64("data.eval_sequences", get("data.eval_sequences"));
}
std::size_t RunConfig::frames() const { return parse_u64("data.frames", get("data.frames")); }

std::string net_config_text(const net::NetConfig& c) {
  std::ostringstream os;
  os << "net.bands = " << c.bands << "\n"
     << "net.conv_kernel = " << c.conv_kernel << "\n"
     << "net.embed_dim = " << c.embed_dim << "\n"
     << "net.heads = " << c.heads << "\n"
     << "net.knockout = " << knockout_name(c.paths) << "\n"
     << "net.patch_size = " << c.patch_size << "\n"
     << "net.search_size = " << c.search_size << "\n"
     << "net.ssi_layers = " << c.ssi_layers << "\n"
     << "net.state_len = " << c.state_len << "\n"
     << "net.template_size = " << c.template_size << "\n"
     << "net.variant = " << net::to_string(c.variant) << "\n";
  return os.str();
}

net::NetConfig net_config_from_text(const std::string& text) {
  RunConfig rc = RunConfig::preset("desk");
  rc.parse_text(text, "checkpoint config");
  return rc.net();
}

std::vector<std::string> net_config_diff(const net::NetConfig& a, const net::NetConfig& b) {
  RunConfig ra = RunConfig::preset("desk"), rb = RunConfig::preset("desk");
  ra.parse_text(net_config_text(a));
  rb.parse_text(net_config_text(b));
  std::vector<std::string> out;
  for (const auto& [k, v] : ra.entries()) {
    const auto& w = rb.get(k);
    if (v != w) out.push_back(k + " (" + v + " vs " + w + ")");
  }
  return out;
}

}  // namespace hym::cfg
