#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "roifuse/eval.hpp"
#include "roifuse/model.hpp"
#include "roifuse/scene.hpp"
#include "roifuse/training.hpp"

namespace roifuse::config {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// `key = value` lines; `#` starts a comment; blank lines are ignored.
/// Later assignments override earlier ones.
class KeyValues {
 public:
  static KeyValues parse(std::istream& in, const std::string& source);
  static KeyValues load(const std::filesystem::path& path);

  /// Override from the command line (reported as such in errors).
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const { return entries_.count(key) > 0; }
  std::optional<std::string> raw(const std::string& key) const;
  /// Human-readable origin, e.g. "desk.conf:12".
  std::string where(const std::string& key) const;
  std::vector<std::string> keys() const;

  double get(const std::string& key, double fallback) const;
  std::size_t get(const std::string& key, std::size_t fallback) const;
  int get(const std::string& key, int fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get(const std::string& key, bool fallback) const;
  std::string get(const std::string& key, const std::string& fallback) const;
  std::vector<double> get(const std::string& key, const std::vector<double>& fallback) const;

 private:
  struct Entry {
    std::string value;
    std::string origin;
  };
  std::map<std::string, Entry> entries_;

  [[noreturn]] void fail(const std::string& key, const std::string& what) const;
};

/// Everything a command may need, resolved from one configuration.
struct Settings {
  std::uint64_t seed = 0;
  scene::GenConfig gen;
  model::ModelConfig model;
  std::size_t backbone_hidden = 8;
  training::TrainConfig train;
  eval::EvalConfig eval;
  double rect_jitter = 0.0;  // feature cells, applied at refinement
};

/// Throws ConfigError for unknown keys, unparsable values, or values that
/// fail validation; messages name the key and its line.
Settings resolve(const KeyValues& kv);

/// Resolved snapshot (every field, defaults included) for run manifests.
nlohmann::ordered_json to_json(const Settings& s);

}  // namespace roifuse::config
