#pragma once

// Flat `key = value` run configuration with named presets.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "hymamba/data.hpp"
#include "hymamba/net.hpp"
#include "hymamba/tracking.hpp"

namespace hym::cfg {

struct KeyDoc {
  std::string key;
  std::string desk_default;
  std::string help;
};

// Every accepted key with its desk default.
const std::vector<KeyDoc>& documented_keys();

class RunConfig {
 public:
  // "desk" or "paper"; throws ConfigError otherwise.
  static RunConfig preset(const std::string& name);

  // Throws ConfigError on an unknown key or a value that does not parse.
  void set(const std::string& key, const std::string& value);
  // "key=value" form of set().
  void set_assignment(const std::string& text);
  // Parses `key = value` lines; `#` starts a comment.
  void parse_text(const std::string& text, const std::string& origin = "<text>");
  void load_file(const std::filesystem::path& path);

  const std::string& get(const std::string& key) const;
  const std::map<std::string, std::string>& entries() const { return values_; }
  // Sorted `key = value` lines.
  std::string to_text() const;

  net::NetConfig net() const;
  track::TrackerConfig tracker() const;
  data::TrainOptions train() const;
  std::uint64_t seed() const;
  int threads() const;
  std::size_t train_sequences() const;
  std::size_t eval_sequences() const;
  std::size_t frames() const;

 private:
  std::map<std::string, std::string> values_;
};

// Only the net.* lines; embedded in checkpoints.
std::string net_config_text(const net::NetConfig& c);
net::NetConfig net_config_from_text(const std::string& text);
// Keys whose values differ, formatted "key (a vs b)".
std::vector<std::string> net_config_diff(const net::NetConfig& a, const net::NetConfig& b);

}  // namespace hym::cfg
