#include "hymamba/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "hymamba/config.hpp"

namespace hym::ckpt {

namespace {

constexpr char kMagic[8] = {'H', 'Y', 'M', 'C', 'K', 'P', 'T', '1'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int k = 0; k < 8; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
}

void put_record(std::string& out, const std::string& name, const Shape& shape,
                std::span<const double> data) {
  out += name;
  out.push_back('\0');
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out.push_back(',');
    out += std::to_string(shape[i]);
  }
  out.push_back('\0');
  for (double v : data) put_u64(out, std::bit_cast<std::uint64_t>(v));
}

class Reader {
 public:
  Reader(std::string bytes, std::string path) : bytes_(std::move(bytes)), path_(std::move(path)) {}

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + k])) << (8 * k);
    pos_ += 8;
    return v;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string cstr() {
    const auto end = bytes_.find('\0', pos_);
    if (end == std::string::npos) fail("unterminated string");
    std::string s = bytes_.substr(pos_, end - pos_);
    pos_ = end + 1;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }
  [[noreturn]] void fail(const std::string& why) const {
    throw IoError("checkpoint " + path_ + ": " + why);
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) fail("truncated");
  }
  std::string bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

Shape parse_shape(const std::string& s, const Reader& r) {
  Shape shape;
  if (s.empty()) return shape;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      std::size_t used = 0;
      shape.push_back(std::stoull(part, &used));
      if (used != part.size()) r.fail("bad shape '" + s + "'");
    } catch (const std::logic_error&) {
      r.fail("bad shape '" + s + "'");
    }
  }
  return shape;
}

}  // namespace

void save(const std::filesystem::path& path, net::NetWeights& w, const AdamW* opt,
          std::size_t step) {
  const std::string cfg_text = cfg::net_config_text(w.cfg);
  std::string out(kMagic, kMagic + 8);
  put_u64(out, cfg_text.size());
  out += cfg_text;

  const auto named = w.named();
  std::size_t count = named.size();
  std::vector<std::string> opt_names;
  if (opt) {
    // Map optimizer slots back to parameter names through storage identity.
    std::map<const detail::TensorImpl*, std::string> by_impl;
    for (const auto& [name, t] : named) by_impl[t.impl()] = name;
    for (const Tensor& p : opt->params()) {
      const auto it = by_impl.find(p.impl());
      if (it == by_impl.end()) throw ContractError("checkpoint: optimizer holds a foreign parameter");
      opt_names.push_back(it->second);
    }
    count += 2 * opt_names.size() + 1;
  }
  put_u64(out, count);
  for (const auto& [name, t] : named) put_record(out, name, t.shape(), t.values());
  if (opt) {
    const OptimState& st = opt->state();
    for (std::size_t i = 0; i < opt_names.size(); ++i) {
      const Shape shape = opt->params()[i].shape();
      const std::vector<double> zeros(shape_numel(shape), 0.0);
      const auto& m = st.first_moment.empty() ? zeros : st.first_moment[i];
      const auto& v = st.second_moment.empty() ? zeros : st.second_moment[i];
      put_record(out, "adamw.m/" + opt_names[i], shape, m);
      put_record(out, "adamw.v/" + opt_names[i], shape, v);
    }
    const double steps[2] = {static_cast<double>(st.step), static_cast<double>(step)};
    put_record(out, "adamw.step", {2}, steps);
  }

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!os) throw IoError("write failed: " + path.string());
}

Loaded load(const std::filesystem::path& path, const net::NetConfig* expected) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  Reader r(ss.str(), path.string());

  if (r.raw(8) != std::string(kMagic, 8)) r.fail("bad magic header");
  const std::string cfg_text = r.raw(r.u64());
  net::NetConfig cfg;
  try {
    cfg = cfg::net_config_from_text(cfg_text);
  } catch (const ConfigError& e) {
    r.fail(std::string("bad config echo: ") + e.what());
  }
  if (expected) {
    const auto diff = cfg::net_config_diff(cfg, *expected);
    if (!diff.empty()) {
      std::string msg = "checkpoint/config mismatch (checkpoint vs config):";
      for (const auto& d : diff) msg += " " + d + ";";
      throw ConfigError(msg);
    }
  }

  std::map<std::string, std::pair<Shape, std::vector<double>>> records;
  const std::uint64_t count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.cstr();
    Shape shape = parse_shape(r.cstr(), r);
    std::vector<double> data(shape_numel(shape));
    for (double& v : data) v = std::bit_cast<double>(r.u64());
    records[std::move(name)] = {std::move(shape), std::move(data)};
  }
  if (!r.done()) r.fail("trailing bytes");

  Loaded out;
  out.weights = net::NetWeights::init(cfg, 0);
  std::vector<std::string> names;
  out.weights.visit([&](const std::string& name, Tensor& t) {
    const auto it = records.find(name);
    if (it == records.end()) r.fail("missing parameter " + name);
    if (it->second.first != t.shape()) {
      r.fail("parameter " + name + " has shape " + shape_str(it->second.first) + ", expected " +
             shape_str(t.shape()));
    }
    std::copy(it->second.second.begin(), it->second.second.end(), t.mutable_values().begin());
    names.push_back(name);
  });

  if (const auto it = records.find("adamw.step"); it != records.end()) {
    if (it->second.second.size() != 2) r.fail("bad adamw.step record");
    OptimState st;
    st.step = static_cast<std::uint64_t>(it->second.second[0]);
    out.step = static_cast<std::size_t>(it->second.second[1]);
    for (const auto& name : names) {
      const auto m = records.find("adamw.m/" + name);
      const auto v = records.find("adamw.v/" + name);
      if (m == records.end() || v == records.end()) continue;
      st.first_moment.push_back(m->second.second);
      st.second_moment.push_back(v->second.second);
    }
    out.optimizer = std::move(st);
  }
  return out;
}

}  // namespace hym::ckpt
