#include "roifuse/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace roifuse::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_double(const std::string& s, double& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end && std::isfinite(out);
}

template <typename T>
bool parse_unsigned(const std::string& s, T& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

}  // namespace

KeyValues KeyValues::parse(std::istream& in, const std::string& source) {
  KeyValues kv;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string origin = source + ":" + std::to_string(number);
    if (eq == std::string::npos) throw ConfigError(origin + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ": missing key");
    kv.entries_[key] = {trim(line.substr(eq + 1)), origin};
  }
  return kv;
}

KeyValues KeyValues::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse(in, path.filename().string());
}

void KeyValues::set(const std::string& key, const std::string& value) {
  entries_[key] = {value, "command line"};
}

std::optional<std::string> KeyValues::raw(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second.value;
}

std::string KeyValues::where(const std::string& key) const {
  const auto it = entries_.find(key);
  return it == entries_.end() ? std::string("default") : it->second.origin;
}

std::vector<std::string> KeyValues::keys() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : entries_) out.push_back(k);
  return out;
}

void KeyValues::fail(const std::string& key, const std::string& what) const {
  throw ConfigError(where(key) + ": " + key + ": " + what);
}

double KeyValues::get(const std::string& key, double fallback) const {
  const auto v = raw(key);
  if (!v) return fallback;
  double out = 0.0;
  if (!parse_double(*v, out)) fail(key, "expected a number, got '" + *v + "'");
  return out;
}

std::size_t KeyValues::get(const std::string& key, std::size_t fallback) const {
  const auto v = raw(key);
  if (!v) return fallback;
  std::size_t out = 0;
  if (!parse_unsigned(*v, out)) fail(key, "expected a non-negative integer, got '" + *v + "'");
  return out;
}

int KeyValues::get(const std::string& key, int fallback) const {
  const auto v = raw(key);
  if (!v) return fallback;
  int out = 0;
  if (!parse_unsigned(*v, out)) fail(key, "expected an integer, got '" + *v + "'");
  return out;
}

std::uint64_t KeyValues::get_u64(const std::string& key, std::uint64_t fallback) const {
  const auto v = raw(key);
  if (!v) return fallback;
  std::uint64_t out = 0;
  if (!parse_unsigned(*v, out)) fail(key, "expected a non-negative integer, got '" + *v + "'");
  return out;
}

bool KeyValues::get(const std::string& key, bool fallback) const {
  const auto v = raw(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  fail(key, "expected true or false, got '" + *v + "'");
}

std::string KeyValues::get(const std::string& key, const std::string& fallback) const {
  return raw(key).value_or(fallback);
}

std::vector<double> KeyValues::get(const std::string& key, const std::vector<double>& fallback) const {
  const auto v = raw(key);
  if (!v) return fallback;
  std::vector<double> out;
  std::stringstream ss(*v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    double x = 0.0;
    if (!parse_double(trim(item), x)) fail(key, "expected a comma-separated list of numbers, got '" + *v + "'");
    out.push_back(x);
  }
  if (out.empty()) fail(key, "expected at least one number");
  return out;
}

namespace {

// Reads keys and remembers which ones were consumed.
class Reader {
 public:
  explicit Reader(const KeyValues& kv) : kv_(kv) {}

  template <typename T>
  void read(const std::string& key, T& field) {
    used_.insert(key);
    field = kv_.get(key, field);
  }
  void read_u64(const std::string& key, std::uint64_t& field) {
    used_.insert(key);
    field = kv_.get_u64(key, field);
  }
  void check_unknown() const {
    for (const auto& k : kv_.keys()) {
      if (!used_.count(k)) throw ConfigError(kv_.where(k) + ": unknown key '" + k + "'");
    }
  }
  const KeyValues& kv() const { return kv_; }

 private:
  const KeyValues& kv_;
  std::set<std::string> used_;
};

// Validation messages start with the field name; attach its origin.
template <typename F>
void checked(const KeyValues& kv, F&& fn) {
  try {
    fn();
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    const std::string key = msg.substr(0, msg.find(' '));
    throw ConfigError(kv.where(key) + ": " + msg);
  }
}

std::string grid_name(eval::RecallGrid g) { return g == eval::RecallGrid::kR11 ? "R11" : "R40"; }

}  // namespace

Settings resolve(const KeyValues& kv) {
  Settings s;
  Reader r(kv);
  r.read_u64("seed", s.seed);

  auto& g = s.gen;
  r.read("gen.scene_count", g.scene_count);
  r.read("gen.objects_min", g.objects_min);
  r.read("gen.objects_max", g.objects_max);
  r.read("gen.range_min", g.range_min);
  r.read("gen.range_max", g.range_max);
  r.read("gen.ground_z", g.ground_z);
  r.read("gen.points_at_10m", g.points_at_10m);
  r.read("gen.max_object_points", g.max_object_points);
  r.read("gen.point_jitter", g.point_jitter);
  r.read("gen.clutter_points", g.clutter_points);
  r.read("gen.clutter_height", g.clutter_height);
  r.read("gen.camera_count", g.camera_count);
  r.read("gen.image_width", g.image_width);
  r.read("gen.image_height", g.image_height);
  r.read("gen.focal", g.focal);
  r.read("gen.placement_retries", g.placement_retries);
  r.read("gen.max_bev_overlap", g.max_bev_overlap);
  r.read("gen.noise.center_sigma_x", g.noise.center_sigma_x);
  r.read("gen.noise.center_sigma_y", g.noise.center_sigma_y);
  r.read("gen.noise.center_sigma_z", g.noise.center_sigma_z);
  r.read("gen.noise.size_sigma", g.noise.size_sigma);
  r.read("gen.noise.yaw_sigma", g.noise.yaw_sigma);
  r.read("gen.noise.range_gain", g.noise.range_gain);
  r.read("gen.noise.drop_rate", g.noise.drop_rate);
  r.read("gen.noise.false_positive_rate", g.noise.false_positive_rate);
  for (std::size_t i = 0; i < g.classes.size(); ++i) {
    const std::string p = "gen.class" + std::to_string(i) + ".";
    r.read(p + "length", g.classes[i].length);
    r.read(p + "height", g.classes[i].height);
    r.read(p + "width", g.classes[i].width);
    r.read(p + "size_sigma", g.classes[i].size_sigma);
    r.read(p + "weight", g.classes[i].weight);
  }
  g.seed = s.seed;

  auto& m = s.model;
  r.read("model.channels", m.channels);
  r.read("model.heads", m.heads);
  r.read("model.encoder_layers", m.encoder_layers);
  r.read("model.decoder_layers", m.decoder_layers);
  r.read("model.ffn_mult", m.ffn_mult);
  r.read("model.num_points", m.num_points);
  r.read("model.pool_size", m.pool_size);
  r.read("model.image_channels", m.image_channels);
  r.read("model.expand_ratio", m.expand_ratio);
  r.read("model.lidar_only", m.lidar_only);
  r.read("model.backbone_hidden", s.backbone_hidden);

  auto& t = s.train;
  r.read("train.iou_threshold", t.iou_threshold);
  r.read("train.learning_rate", t.learning_rate);
  r.read("train.epochs", t.epochs);
  r.read("train.batch_size", t.batch_size);
  r.read("train.weight_confidence", t.weights.confidence);
  r.read("train.weight_regression", t.weights.regression);
  r.read("train.beta1", t.adam.beta1);
  r.read("train.beta2", t.adam.beta2);
  r.read("train.adam_eps", t.adam.eps);
  r.read("train.warmup_fraction", t.warmup_fraction);
  r.read("train.augment", t.augment);
  r.read("train.augment_flip_probability", t.augment_ranges.flip_probability);
  r.read("train.augment_max_rotation", t.augment_ranges.max_rotation);
  r.read("train.augment_min_scale", t.augment_ranges.min_scale);
  r.read("train.augment_max_scale", t.augment_ranges.max_scale);
  t.seed = s.seed;

  auto& e = s.eval;
  r.read("eval.thresholds", e.thresholds);
  std::string grid = grid_name(e.grid);
  r.read("eval.recall_grid", grid);
  if (grid == "R11") {
    e.grid = eval::RecallGrid::kR11;
  } else if (grid == "R40") {
    e.grid = eval::RecallGrid::kR40;
  } else {
    throw ConfigError(kv.where("eval.recall_grid") + ": eval.recall_grid: expected R11 or R40, got '" + grid + "'");
  }
  std::string mode = e.iou_mode == geometry::IouMode::k3d ? "3d" : "bev";
  r.read("eval.iou_mode", mode);
  if (mode == "3d") {
    e.iou_mode = geometry::IouMode::k3d;
  } else if (mode == "bev") {
    e.iou_mode = geometry::IouMode::kBev;
  } else {
    throw ConfigError(kv.where("eval.iou_mode") + ": eval.iou_mode: expected 3d or bev, got '" + mode + "'");
  }
  r.read("eval.class_aware", e.class_aware);
  r.read("eval.level1_min_points", e.levels[0].min_points);

  r.read("refine.rect_jitter", s.rect_jitter);

  r.check_unknown();
  checked(kv, [&] { scene::validate(s.gen); });
  checked(kv, [&] { model::validate(s.model); });
  checked(kv, [&] { training::validate(s.train); });
  checked(kv, [&] { eval::validate(s.eval); });
  if (s.backbone_hidden == 0) throw ConfigError(kv.where("model.backbone_hidden") + ": model.backbone_hidden must be >= 1");
  if (!(s.rect_jitter >= 0.0)) throw ConfigError(kv.where("refine.rect_jitter") + ": refine.rect_jitter must be >= 0");
  return s;
}

nlohmann::ordered_json to_json(const Settings& s) {
  nlohmann::ordered_json j;
  j["seed"] = s.seed;
  const auto& g = s.gen;
  j["gen"] = {{"scene_count", g.scene_count},
              {"objects_min", g.objects_min},
              {"objects_max", g.objects_max},
              {"range_min", g.range_min},
              {"range_max", g.range_max},
              {"ground_z", g.ground_z},
              {"points_at_10m", g.points_at_10m},
              {"max_object_points", g.max_object_points},
              {"point_jitter", g.point_jitter},
              {"clutter_points", g.clutter_points},
              {"clutter_height", g.clutter_height},
              {"camera_count", g.camera_count},
              {"image_width", g.image_width},
              {"image_height", g.image_height},
              {"focal", g.focal},
              {"placement_retries", g.placement_retries},
              {"max_bev_overlap", g.max_bev_overlap},
              {"noise",
               {{"center_sigma_x", g.noise.center_sigma_x},
                {"center_sigma_y", g.noise.center_sigma_y},
                {"center_sigma_z", g.noise.center_sigma_z},
                {"size_sigma", g.noise.size_sigma},
                {"yaw_sigma", g.noise.yaw_sigma},
                {"range_gain", g.noise.range_gain},
                {"drop_rate", g.noise.drop_rate},
                {"false_positive_rate", g.noise.false_positive_rate}}}};
  for (std::size_t i = 0; i < g.classes.size(); ++i) {
    const auto& c = g.classes[i];
    j["gen"]["class" + std::to_string(i)] = {{"length", c.length},
                                             {"height", c.height},
                                             {"width", c.width},
                                             {"size_sigma", c.size_sigma},
                                             {"weight", c.weight}};
  }
  const auto& m = s.model;
  j["model"] = {{"channels", m.channels},
                {"heads", m.heads},
                {"encoder_layers", m.encoder_layers},
                {"decoder_layers", m.decoder_layers},
                {"ffn_mult", m.ffn_mult},
                {"num_points", m.num_points},
                {"pool_size", m.pool_size},
                {"image_channels", m.image_channels},
                {"expand_ratio", m.expand_ratio},
                {"lidar_only", m.lidar_only},
                {"backbone_hidden", s.backbone_hidden}};
  const auto& t = s.train;
  j["train"] = {{"iou_threshold", t.iou_threshold},
                {"learning_rate", t.learning_rate},
                {"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"weight_confidence", t.weights.confidence},
                {"weight_regression", t.weights.regression},
                {"beta1", t.adam.beta1},
                {"beta2", t.adam.beta2},
                {"adam_eps", t.adam.eps},
                {"warmup_fraction", t.warmup_fraction},
                {"augment", t.augment},
                {"augment_flip_probability", t.augment_ranges.flip_probability},
                {"augment_max_rotation", t.augment_ranges.max_rotation},
                {"augment_min_scale", t.augment_ranges.min_scale},
                {"augment_max_scale", t.augment_ranges.max_scale}};
  const auto& e = s.eval;
  j["eval"] = {{"thresholds", e.thresholds},
               {"recall_grid", grid_name(e.grid)},
               {"iou_mode", e.iou_mode == geometry::IouMode::k3d ? "3d" : "bev"},
               {"class_aware", e.class_aware},
               {"level1_min_points", e.levels[0].min_points}};
  j["refine"] = {{"rect_jitter", s.rect_jitter}};
  return j;
}

}  // namespace roifuse::config
