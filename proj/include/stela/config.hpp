#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "stela/error.hpp"
#include "stela/sparse_grid.hpp"
#include "stela/stela_core.hpp"
#include "stela/synthetic.hpp"

namespace stela {

// Flat `key = value` text format; '#' starts a comment. Values are scalars or
// comma-separated lists (used by the sweep.* keys).
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::istream& in) {
    KeyValueConfig cfg;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const auto trimmed = trim(line);
      if (trimmed.empty()) continue;
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw FormatError("config line " + std::to_string(line_no) + ": expected key = value");
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty()) throw FormatError("config line " + std::to_string(line_no) + ": empty key");
      cfg.values_[key] = value;
    }
    return cfg;
  }

  static KeyValueConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    return parse(in);
  }

  bool contains(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    return parse_double(key, it->second);
  }

  std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    return parse_int(key, it->second);
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1" || it->second == "yes") return true;
    if (it->second == "false" || it->second == "0" || it->second == "no") return false;
    throw FormatError("config key " + key + ": expected a boolean, got '" + it->second + "'");
  }

  std::vector<std::int64_t> get_int_list(const std::string& key,
                                         std::vector<std::int64_t> fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<std::int64_t> out;
    std::stringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_int(key, trim(item)));
    return out;
  }

  std::vector<bool> get_bool_list(const std::string& key, std::vector<bool> fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<bool> out;
    std::stringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const std::string v = trim(item);
      if (v == "true" || v == "1")
        out.push_back(true);
      else if (v == "false" || v == "0")
        out.push_back(false);
      else
        throw FormatError("config key " + key + ": expected booleans, got '" + v + "'");
    }
    return out;
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  static std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
  }

  static double parse_double(const std::string& key, const std::string& value) {
    try {
      std::size_t used = 0;
      const double v = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
      return v;
    } catch (const std::exception&) {
      throw FormatError("config key " + key + ": expected a number, got '" + value + "'");
    }
  }

  static std::int64_t parse_int(const std::string& key, const std::string& value) {
    try {
      std::size_t used = 0;
      const std::int64_t v = std::stoll(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
      return v;
    } catch (const std::exception&) {
      throw FormatError("config key " + key + ": expected an integer, got '" + value + "'");
    }
  }

  std::map<std::string, std::string> values_;
};

// Everything one experiment needs. Defaults follow the strongest ablation
// settings (k = 16, two past frames, alignment on).
struct ExperimentConfig {
  std::uint64_t seed = 1;
  int threads = 1;

  int k = 16;
  int n_past = 2;
  bool aligned = true;
  bool use_stela = true;

  int feature_dim = 16;
  int key_dim = 8;
  int num_scales = 1;
  std::vector<int> encoder_hidden = {64, 128, 256};
  std::vector<int> decoder_hidden = {16};

  int epochs_baseline = 25;
  int epochs_warmup = 10;
  int epochs_joint = 10;
  double lr_pretrain = 1e-3;
  double lr_joint = 1e-5;
  // Plateau rule for the joint stage: halve the rate after this many epochs
  // without improvement.
  int plateau_patience = 3;

  GridConfig grid;

  std::string data_kind = "synthetic";  // synthetic | prepared
  std::filesystem::path data_path;      // prepared-cache directory
  SyntheticSpec synthetic;
  int synthetic_val_frames = 4;

  void validate() const {
    if (k < 1) throw ConfigError("config: k must be >= 1");
    if (n_past < 0) throw ConfigError("config: n_past must be >= 0");
    if (feature_dim < 1 || key_dim < 1) throw ConfigError("config: dims must be >= 1");
    if (threads < 1) throw ConfigError("config: threads must be >= 1");
    grid.validate();
    synthetic.validate();
  }
};

inline ExperimentConfig experiment_from_config(const KeyValueConfig& kv) {
  ExperimentConfig ec;
  if (!kv.contains("seed")) throw ConfigError("config: seed is required");
  ec.seed = static_cast<std::uint64_t>(kv.get_int("seed", 1));
  ec.threads = static_cast<int>(kv.get_int("threads", ec.threads));
  ec.k = static_cast<int>(kv.get_int("k", ec.k));
  ec.n_past = static_cast<int>(kv.get_int("n_past", ec.n_past));
  ec.aligned = kv.get_bool("aligned", ec.aligned);
  ec.use_stela = kv.get_bool("use_stela", ec.use_stela);
  ec.feature_dim = static_cast<int>(kv.get_int("feature_dim", ec.feature_dim));
  ec.key_dim = static_cast<int>(kv.get_int("key_dim", default_key_dim(ec.feature_dim)));
  ec.num_scales = static_cast<int>(kv.get_int("num_scales", ec.num_scales));
  {
    std::vector<std::int64_t> hid =
        kv.get_int_list("encoder_hidden", {ec.encoder_hidden.begin(), ec.encoder_hidden.end()});
    ec.encoder_hidden.assign(hid.begin(), hid.end());
    hid = kv.get_int_list("decoder_hidden", {ec.decoder_hidden.begin(), ec.decoder_hidden.end()});
    ec.decoder_hidden.assign(hid.begin(), hid.end());
  }
  ec.epochs_baseline = static_cast<int>(kv.get_int("epochs_baseline", ec.epochs_baseline));
  ec.epochs_warmup = static_cast<int>(kv.get_int("epochs_warmup", ec.epochs_warmup));
  ec.epochs_joint = static_cast<int>(kv.get_int("epochs_joint", ec.epochs_joint));
  ec.lr_pretrain = kv.get_double("lr_pretrain", ec.lr_pretrain);
  ec.lr_joint = kv.get_double("lr_joint", ec.lr_joint);
  ec.plateau_patience = static_cast<int>(kv.get_int("plateau_patience", ec.plateau_patience));

  ec.grid.rho_min = kv.get_double("grid.rho_min", 0.0);
  ec.grid.rho_max = kv.get_double("grid.rho_max", 20.0);
  ec.grid.z_min = kv.get_double("grid.z_min", -3.0);
  ec.grid.z_max = kv.get_double("grid.z_max", 3.0);
  ec.grid.h = static_cast<int>(kv.get_int("grid.h", 48));
  ec.grid.w = static_cast<int>(kv.get_int("grid.w", 60));
  ec.grid.l = static_cast<int>(kv.get_int("grid.l", 12));
  ec.grid.feature_dim = ec.feature_dim;

  ec.data_kind = kv.get_string("data.kind", ec.data_kind);
  ec.data_path = kv.get_string("data.path", "");
  ec.synthetic.scenario =
      SyntheticSpec::scenario_from_string(kv.get_string("synthetic.scenario", "motion"));
  ec.synthetic.num_frames = static_cast<int>(kv.get_int("synthetic.frames", 8));
  ec.synthetic.ground_points =
      static_cast<int>(kv.get_int("synthetic.ground_points", ec.synthetic.ground_points));
  ec.synthetic.static_boxes =
      static_cast<int>(kv.get_int("synthetic.static_boxes", ec.synthetic.static_boxes));
  ec.synthetic.moving_boxes =
      static_cast<int>(kv.get_int("synthetic.moving_boxes", ec.synthetic.moving_boxes));
  ec.synthetic.points_per_box =
      static_cast<int>(kv.get_int("synthetic.points_per_box", ec.synthetic.points_per_box));
  ec.synthetic.speed = kv.get_double("synthetic.speed", ec.synthetic.speed);
  ec.synthetic.ego_speed = kv.get_double("synthetic.ego_speed", ec.synthetic.ego_speed);
  ec.synthetic.ego_yaw_rate = kv.get_double("synthetic.ego_yaw_rate", ec.synthetic.ego_yaw_rate);
  ec.synthetic_val_frames =
      static_cast<int>(kv.get_int("synthetic.val_frames", ec.synthetic_val_frames));

  ec.validate();
  return ec;
}

}  // namespace stela
