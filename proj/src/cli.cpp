#include "roifuse/cli.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "roifuse/checkpoint.hpp"
#include "roifuse/config.hpp"
#include "roifuse/parallel.hpp"
#include "roifuse/scene.hpp"
#include "roifuse/training.hpp"
#include "roifuse/verify.hpp"

namespace roifuse::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

struct VerificationFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommonOptions {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::vector<std::string> overrides;  // key=value
  std::string out;
};

config::KeyValues load_config(const CommonOptions& o) {
  config::KeyValues kv;
  if (!o.config.empty()) kv = config::KeyValues::load(o.config);
  for (const auto& s : o.overrides) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw config::ConfigError("--set expects key=value, got '" + s + "'");
    kv.set(s.substr(0, eq), s.substr(eq + 1));
  }
  if (o.seed) kv.set("seed", std::to_string(*o.seed));
  return kv;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw std::runtime_error("write to " + path.string() + " failed");
}

class Manifest {
 public:
  Manifest(std::string command, const config::Settings& s) : start_(std::chrono::steady_clock::now()) {
    j_["command"] = std::move(command);
    j_["tool_version"] = kToolVersion;
    j_["seed"] = s.seed;
    j_["config"] = config::to_json(s);
    j_["artifacts"] = json::object();
  }
  void artifact(const std::string& role, const fs::path& path) { j_["artifacts"][role] = path.string(); }
  json& extra() { return j_; }
  void write(const fs::path& out) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    j_["timings"] = {{"wall_seconds", secs}};
    write_text(fs::path(out.string() + ".manifest.json"), j_.dump(2) + "\n");
  }

 private:
  json j_;
  std::chrono::steady_clock::time_point start_;
};

// ---- gen ---------------------------------------------------------------------------

int cmd_gen(const CommonOptions& o, std::optional<std::size_t> scenes, std::ostream& out) {
  const config::KeyValues kv = load_config(o);
  config::Settings s = config::resolve(kv);
  if (scenes) s.gen.scene_count = *scenes;
  Manifest manifest("gen", s);
  scene::DatasetWriter writer(o.out);
  const std::size_t chunk = std::max<std::size_t>(1, 2 * thread_count());
  for (std::size_t lo = 0; lo < s.gen.scene_count; lo += chunk) {
    const std::size_t hi = std::min(s.gen.scene_count, lo + chunk);
    std::vector<scene::Scene> batch(hi - lo);
    parallel_for(batch.size(), [&](std::size_t i) { batch[i] = scene::generate_indexed(s.gen, lo + i); });
    for (const auto& sc : batch) writer.write(sc);
  }
  writer.close();
  manifest.artifact("dataset", o.out);
  manifest.extra()["scene_count"] = s.gen.scene_count;
  manifest.write(o.out);
  out << "wrote " << s.gen.scene_count << " scenes to " << o.out << " (seed " << s.seed << ")\n";
  return kOk;
}

// ---- train -------------------------------------------------------------------------

json metrics_record(const training::EpochMetrics& m) {
  return {{"epoch", m.epoch},
          {"loss", m.loss},
          {"confidence_loss", m.confidence_loss},
          {"regression_loss", m.regression_loss},
          {"mean_iou", m.mean_iou},
          {"mean_proposal_iou", m.mean_proposal_iou},
          {"overlap_iou", m.overlap_iou},
          {"overlap_proposal_iou", m.overlap_proposal_iou},
          {"accuracy", m.accuracy},
          {"learning_rate", m.learning_rate},
          {"rois", m.rois},
          {"positives", m.positives}};
}

int cmd_train(const CommonOptions& o, const std::string& data, std::optional<std::size_t> epochs, bool lidar_only,
              std::string metrics_path, std::ostream& out) {
  const config::KeyValues kv = load_config(o);
  config::Settings s = config::resolve(kv);
  if (epochs) s.train.epochs = *epochs;
  if (lidar_only) s.model.lidar_only = true;
  if (metrics_path.empty()) metrics_path = o.out + ".metrics.jsonl";
  Manifest manifest("train", s);

  const auto dataset = scene::read_dataset(data);
  model::RefinementModel net = model::RefinementModel::create(s.model, tensor::mix_seed(s.seed, 1));
  const roi::BackboneParams backbone =
      roi::BackboneParams::create(tensor::mix_seed(s.seed, 2), s.model.image_channels, s.backbone_hidden);

  std::ofstream metrics(metrics_path, std::ios::binary);
  if (!metrics) throw std::runtime_error("cannot open " + metrics_path + " for writing");
  out << "training on " << dataset.size() << " scenes, " << net.parameters().num_values() << " parameters"
      << (s.model.lidar_only ? " (lidar-only)" : "") << ", iou threshold " << s.train.iou_threshold << "\n";
  const auto history = training::train(dataset, net, s.train, backbone, [&](const training::EpochMetrics& m) {
    const json rec = metrics_record(m);
    metrics << rec.dump() << '\n';
    out << "epoch " << m.epoch << "  loss " << std::fixed << std::setprecision(4) << m.loss << "  conf "
        << m.confidence_loss << "  reg " << m.regression_loss << "  iou " << m.mean_proposal_iou << " -> "
        << m.mean_iou << "  acc " << m.accuracy << std::defaultfloat << std::endl;
  });
  metrics.close();

  tensor::ParameterSet saved;
  for (const auto& p : net.parameters().items()) saved.add(p.name, p.tensor);
  if (!s.model.lidar_only) add_backbone_parameters(saved, backbone);
  tensor::save_checkpoint(o.out, saved);

  manifest.artifact("dataset", data);
  manifest.artifact("checkpoint", o.out);
  manifest.artifact("metrics", metrics_path);
  if (!history.empty()) manifest.extra()["final_metrics"] = metrics_record(history.back());
  manifest.write(o.out);
  out << "wrote checkpoint " << o.out << "\n";
  return kOk;
}

// ---- refine ------------------------------------------------------------------------

int cmd_refine(const CommonOptions& o, const std::string& data, const std::string& checkpoint,
               std::optional<double> rect_jitter, std::ostream& out) {
  const config::KeyValues kv = load_config(o);
  config::Settings s = config::resolve(kv);
  if (rect_jitter) {
    if (!(*rect_jitter >= 0.0)) throw config::ConfigError("--rect-jitter must be >= 0");
    s.rect_jitter = *rect_jitter;
  }
  Manifest manifest("refine", s);

  const auto stored = tensor::load_checkpoint(checkpoint);
  std::vector<tensor::Parameter> model_params, backbone_params;
  bool has_image_branch = false;
  for (const auto& p : stored) {
    if (p.name.rfind("backbone.", 0) == 0) {
      backbone_params.push_back(p);
    } else {
      if (p.name.rfind("embed.image.", 0) == 0) has_image_branch = true;
      model_params.push_back(p);
    }
  }
  s.model.lidar_only = !has_image_branch;
  model::RefinementModel net = model::RefinementModel::create(s.model, 0);
  try {
    tensor::assign_parameters(net.parameters(), model_params);
  } catch (const std::exception& e) {
    throw config::ConfigError(std::string("checkpoint does not match the model configuration: ") + e.what());
  }
  std::optional<roi::BackboneParams> backbone;
  if (!s.model.lidar_only) backbone = backbone_from_parameters(backbone_params);

  scene::DatasetReader reader(data);
  std::vector<SceneDetections> results;
  std::size_t total = 0;
  while (auto sc = reader.next()) {
    std::vector<roi::CameraView> views;
    if (backbone) views = scene::camera_views(*sc, *backbone);
    std::mt19937_64 jitter_rng(tensor::mix_seed(tensor::mix_seed(s.seed, 0x717), sc->id));
    const roi::PoolOptions pool{s.rect_jitter, &jitter_rng};
    const auto refined = training::refine_scene(net, *sc, views, s.seed, pool);
    SceneDetections d;
    d.scene = sc->id;
    for (const auto& r : refined) {
      d.detections.push_back({r.box, r.score, r.class_id});
      d.proposals.push_back(r.proposal);
    }
    total += refined.size();
    results.push_back(std::move(d));
  }
  write_detections(o.out, results);
  manifest.artifact("dataset", data);
  manifest.artifact("checkpoint", checkpoint);
  manifest.artifact("detections", o.out);
  manifest.extra()["lidar_only"] = s.model.lidar_only;
  manifest.write(o.out);
  out << "refined " << total << " proposals in " << results.size() << " scenes"
      << (s.model.lidar_only ? " (lidar-only checkpoint)" : "") << "\n";
  return kOk;
}

// ---- eval --------------------------------------------------------------------------

int cmd_eval(const CommonOptions& o, const std::string& data, const std::vector<std::string>& detection_files,
             bool proposals, const std::string& plot_dir, std::ostream& out) {
  const config::KeyValues kv = load_config(o);
  const config::Settings s = config::resolve(kv);
  if (detection_files.empty() && !proposals) {
    throw config::ConfigError("eval needs --detections and/or --proposals");
  }
  Manifest manifest("eval", s);

  std::vector<std::pair<std::string, std::vector<eval::SceneEval>>> sources;
  std::vector<eval::SceneEval> base;  // gt per scene, dataset order
  std::vector<std::vector<roi::Proposal>> raw;
  {
    scene::DatasetReader reader(data);
    while (auto sc = reader.next()) {
      base.push_back({sc->id, sc->gt, {}});
      if (proposals) raw.push_back(sc->proposals);
    }
  }
  if (proposals) {
    auto scenes = base;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      for (const auto& p : raw[i]) scenes[i].detections.push_back({p.box, p.score, p.class_id});
    }
    sources.emplace_back("proposals", std::move(scenes));
  }
  for (const auto& file : detection_files) {
    const auto dets = read_detections(file);
    if (dets.size() != base.size()) {
      throw std::runtime_error(file + " has " + std::to_string(dets.size()) + " scenes, dataset has " +
                               std::to_string(base.size()));
    }
    auto scenes = base;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      if (dets[i].scene != scenes[i].id) {
        throw std::runtime_error(file + ": scene id " + std::to_string(dets[i].scene) + " at position " +
                                 std::to_string(i) + " does not match dataset id " + std::to_string(scenes[i].id));
      }
      scenes[i].detections = dets[i].detections;
    }
    sources.emplace_back(fs::path(file).stem().string(), std::move(scenes));
  }

  std::vector<std::vector<eval::ReportRow>> reports;
  std::string records;
  for (const auto& [name, scenes] : sources) {
    reports.push_back(eval::bucketize_and_report(scenes, s.eval, name));
    records += eval::format_records(reports.back(), s.eval);
  }
  const std::string table = eval::format_table(reports, s.eval);
  write_text(o.out, records);
  write_text(o.out + ".txt", table);
  out << table;

  if (!plot_dir.empty()) {
    fs::create_directories(plot_dir);
    std::vector<eval::PlotSeries> series;
    const double thr = s.eval.thresholds.front();
    for (const auto& [name, scenes] : sources) {
      std::size_t num_gt = 0;
      auto ranked = eval::slice_detections(scenes, s.eval.levels.front(), s.eval.buckets.front(), thr, s.eval, &num_gt);
      series.push_back({name, eval::pr_curve(std::move(ranked), num_gt)});
    }
    std::ostringstream title;
    title << "PR curve, " << s.eval.levels.front().name << ", IoU " << thr;
    const fs::path pr = fs::path(plot_dir) / "pr_curves.svg";
    const fs::path bars = fs::path(plot_dir) / "ap_by_distance.svg";
    write_text(pr, eval::pr_curve_svg(series, title.str()));
    std::ostringstream bar_title;
    bar_title << "AP by distance, " << s.eval.levels.front().name << ", IoU " << thr;
    write_text(bars, eval::distance_bars_svg(reports, s.eval.levels.front().name, thr, bar_title.str()));
    manifest.artifact("pr_plot", pr);
    manifest.artifact("distance_plot", bars);
  }
  manifest.artifact("dataset", data);
  for (std::size_t i = 0; i < detection_files.size(); ++i) {
    manifest.artifact("detections_" + std::to_string(i), detection_files[i]);
  }
  manifest.artifact("report", o.out);
  manifest.artifact("table", o.out + ".txt");
  manifest.write(o.out);
  return kOk;
}

// ---- gradcheck ---------------------------------------------------------------------

int cmd_gradcheck(const CommonOptions& o, const std::string& block, std::ostream& out) {
  const config::KeyValues kv = load_config(o);
  const config::Settings s = config::resolve(kv);
  Manifest manifest("gradcheck", s);
  constexpr double kLimit = 1e-4;
  const auto reports = verify::run_gradcheck(s.seed, block);
  std::ostringstream text;
  bool ok = true;
  text << std::scientific << std::setprecision(3);
  for (const auto& r : reports) {
    const bool pass = r.max_rel_error < kLimit;
    ok = ok && pass;
    text << (pass ? "PASS " : "FAIL ") << r.block << "  max_rel_error " << r.max_rel_error << "\n";
    for (const auto& t : r.tensors) {
      text << "    " << t.name << "  " << t.max_rel_error << "  (" << t.coordinates << " values)\n";
    }
  }
  text << (ok ? "gradcheck passed" : "gradcheck FAILED") << " (limit " << kLimit << ")\n";
  out << text.str();
  const std::string path = o.out.empty() ? std::string("gradcheck_report.txt") : o.out;
  write_text(path, text.str());
  manifest.artifact("report", path);
  manifest.extra()["passed"] = ok;
  manifest.write(path);
  if (!ok) throw VerificationFailure("gradient check exceeded " + std::to_string(kLimit));
  return kOk;
}

}  // namespace

// ---- file helpers -----------------------------------------------------------------

void add_backbone_parameters(tensor::ParameterSet& params, const roi::BackboneParams& b) {
  const std::size_t in = b.in_channels, hid = b.hidden_channels, outc = b.out_channels;
  params.add("backbone.conv1.weight", tensor::Tensor({hid, in, 3, 3}, b.w1));
  params.add("backbone.conv1.bias", tensor::Tensor({hid}, b.b1));
  params.add("backbone.conv2.weight", tensor::Tensor({outc, hid, 3, 3}, b.w2));
  params.add("backbone.conv2.bias", tensor::Tensor({outc}, b.b2));
}

roi::BackboneParams backbone_from_parameters(const std::vector<tensor::Parameter>& params) {
  auto find = [&](const std::string& name) -> const tensor::Tensor& {
    for (const auto& p : params) {
      if (p.name == name) return p.tensor;
    }
    throw std::runtime_error("checkpoint has an image branch but no " + name);
  };
  const auto& w1 = find("backbone.conv1.weight");
  const auto& b1 = find("backbone.conv1.bias");
  const auto& w2 = find("backbone.conv2.weight");
  const auto& b2 = find("backbone.conv2.bias");
  if (w1.rank() != 4 || w2.rank() != 4 || w2.dim(1) != w1.dim(0) || b1.size() != w1.dim(0) || b2.size() != w2.dim(0)) {
    throw std::runtime_error("checkpoint backbone tensors have inconsistent shapes");
  }
  roi::BackboneParams b;
  b.in_channels = w1.dim(1);
  b.hidden_channels = w1.dim(0);
  b.out_channels = w2.dim(0);
  b.w1.assign(w1.data().begin(), w1.data().end());
  b.b1.assign(b1.data().begin(), b1.data().end());
  b.w2.assign(w2.data().begin(), w2.data().end());
  b.b2.assign(b2.data().begin(), b2.data().end());
  return b;
}

void write_detections(const fs::path& path, const std::vector<SceneDetections>& scenes) {
  std::string text;
  for (const auto& s : scenes) {
    json dets = json::array();
    for (std::size_t i = 0; i < s.detections.size(); ++i) {
      const auto& d = s.detections[i];
      json rec = {{"box", d.box.to_array()}, {"score", d.score}, {"class", d.class_id}};
      if (i < s.proposals.size()) rec["proposal"] = s.proposals[i];
      dets.push_back(std::move(rec));
    }
    json line = {{"scene", s.scene}, {"detections", std::move(dets)}};
    text += line.dump() + "\n";
  }
  write_text(path, text);
}

std::vector<SceneDetections> read_detections(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string() + " for reading");
  std::vector<SceneDetections> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      SceneDetections s;
      s.scene = j.at("scene").get<std::uint64_t>();
      for (const auto& d : j.at("detections")) {
        const auto box = d.at("box").get<std::vector<double>>();
        s.detections.push_back({geometry::Box3D::from_array(box), d.at("score").get<double>(), d.value("class", 0)});
        s.proposals.push_back(d.value("proposal", std::size_t{0}));
      }
      out.push_back(std::move(s));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ": line " + std::to_string(number) + ": " + e.what());
    }
  }
  return out;
}

// ---- entry point -------------------------------------------------------------------

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"LiDAR-camera RoI refinement: data generation, training, refinement, evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("roifuse ") + kToolVersion);

  CommonOptions common;
  auto add_common = [&](CLI::App* sub, bool out_required) {
    sub->add_option("--seed", common.seed, "Seed for every random stream");
    sub->add_option("--config", common.config, "Key-value configuration file");
    sub->add_option("--set", common.overrides, "Override a configuration key (key=value)");
    auto* o = sub->add_option("--out", common.out, "Output path");
    if (out_required) o->required();
  };

  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  add_common(gen, true);
  std::optional<std::size_t> scenes;
  gen->add_option("--scenes", scenes, "Number of scenes (overrides gen.scene_count)");

  auto* train = app.add_subcommand("train", "Train the refinement network");
  add_common(train, true);
  std::string data;
  std::optional<std::size_t> epochs;
  bool lidar_only = false;
  std::string metrics;
  train->add_option("--data", data, "Dataset file")->required();
  train->add_option("--epochs", epochs, "Epoch count (overrides train.epochs)");
  train->add_flag("--lidar-only", lidar_only, "Drop the image branch and cross-attention");
  train->add_option("--metrics", metrics, "Per-epoch metrics file (default <out>.metrics.jsonl)");

  auto* refine = app.add_subcommand("refine", "Refine every proposal of a dataset");
  add_common(refine, true);
  std::string checkpoint;
  std::optional<double> rect_jitter;
  refine->add_option("--data", data, "Dataset file")->required();
  refine->add_option("--checkpoint", checkpoint, "Trained checkpoint")->required();
  refine->add_option("--rect-jitter", rect_jitter, "Uniform jitter of projected rectangles, in feature cells");

  auto* evaluate = app.add_subcommand("eval", "Evaluate detections and/or raw proposals");
  add_common(evaluate, true);
  std::vector<std::string> detections;
  bool proposals = false;
  std::string plot;
  evaluate->add_option("--data", data, "Dataset file")->required();
  evaluate->add_option("--detections", detections, "Detections file (repeatable)");
  evaluate->add_flag("--proposals", proposals, "Also evaluate the raw proposals");
  evaluate->add_option("--plot", plot, "Directory for SVG figures");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  add_common(gradcheck, false);
  std::string block;
  gradcheck->add_option("--block", block, "Run a single block");

  std::vector<std::string> argv_store{"roifuse"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (gen->parsed()) return cmd_gen(common, scenes, out);
    if (train->parsed()) return cmd_train(common, data, epochs, lidar_only, metrics, out);
    if (refine->parsed()) return cmd_refine(common, data, checkpoint, rect_jitter, out);
    if (evaluate->parsed()) return cmd_eval(common, data, detections, proposals, plot, out);
    if (gradcheck->parsed()) return cmd_gradcheck(common, block, out);
  } catch (const config::ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kConfigError;
  } catch (const VerificationFailure& e) {
    err << "verification failed: " << e.what() << "\n";
    return kVerificationFailed;
  } catch (const training::DivergenceError& e) {
    err << "diverged: " << e.what() << "\n";
    return kDiverged;
  } catch (const std::invalid_argument& e) {
    err << "invalid argument: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}

}  // namespace roifuse::cli
