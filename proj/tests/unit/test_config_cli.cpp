#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "roifuse/checkpoint.hpp"
#include "roifuse/cli.hpp"
#include "roifuse/codec.hpp"
#include "roifuse/config.hpp"

using namespace roifuse;
namespace fs = std::filesystem;

namespace {

config::KeyValues parse(const std::string& text) {
  std::istringstream in(text);
  return config::KeyValues::parse(in, "test.conf");
}

std::string resolve_error(const config::KeyValues& kv) {
  try {
    config::resolve(kv);
  } catch (const config::ConfigError& e) {
    return e.what();
  }
  return {};
}

struct Run {
  int code;
  std::string out, err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("roifuse_cli_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

// Tiny settings that keep a full pipeline under a second.
constexpr const char* kTinyConfig = R"(# tiny pipeline
gen.objects_min = 2
gen.objects_max = 3
gen.clutter_points = 100
gen.image_width = 32
gen.image_height = 16
gen.focal = 16
model.channels = 8
model.heads = 2
model.num_points = 4
model.pool_size = 2
model.encoder_layers = 1
train.epochs = 2
)";

}  // namespace

TEST_CASE("key-value files") {
  const auto kv = parse("# comment\n\n a = 1 \nb=two # trailing\na = 3\n");
  CHECK(kv.raw("a") == "3");
  CHECK(kv.raw("b") == "two");
  CHECK(kv.where("a") == "test.conf:5");
  CHECK(kv.where("missing") == "default");
  CHECK(kv.get("a", 0.0) == 3.0);
  CHECK(kv.get("missing", std::size_t{7}) == 7);
  CHECK_THROWS_WITH_AS(parse("a = 1\njust words\n"), "test.conf:2: expected 'key = value'", config::ConfigError);
  CHECK_THROWS_WITH_AS(parse(" = 4\n"), "test.conf:1: missing key", config::ConfigError);

  auto typed = parse("n = -3\nb = maybe\nx = 1e-3\nl = 0.5, 0.7\nbad = 1,,2\n");
  CHECK_THROWS_WITH_AS(typed.get("n", std::size_t{0}), "test.conf:1: n: expected a non-negative integer, got '-3'",
                       config::ConfigError);
  CHECK_THROWS_AS(typed.get("b", false), config::ConfigError);
  CHECK(typed.get("x", 0.0) == 1e-3);
  CHECK(typed.get("l", std::vector<double>{}) == std::vector<double>{0.5, 0.7});
  CHECK_THROWS_AS(typed.get("bad", std::vector<double>{}), config::ConfigError);
  typed.set("b", "true");
  CHECK(typed.get("b", false));
  CHECK(typed.where("b") == "command line");
}

TEST_CASE("settings resolution") {
  SUBCASE("defaults") {
    const auto s = config::resolve(parse(""));
    CHECK(s.model.channels == 64);
    CHECK(s.model.num_points == 256);
    CHECK(s.model.pool_size == 7);
    CHECK(s.model.encoder_layers == 3);
    CHECK(s.eval.thresholds == std::vector<double>{0.7, 0.8});
    CHECK(s.eval.grid == eval::RecallGrid::kR11);
  }
  SUBCASE("overrides") {
    const auto s = config::resolve(parse("model.channels = 16\nmodel.heads = 2\neval.recall_grid = R40\n"
                                         "gen.class1.length = 7.5\neval.iou_mode = bev\nseed = 9\n"));
    CHECK(s.model.channels == 16);
    CHECK(s.eval.grid == eval::RecallGrid::kR40);
    CHECK(s.eval.iou_mode == geometry::IouMode::kBev);
    CHECK(s.gen.classes[1].length == 7.5);
    CHECK(s.seed == 9);
  }
  SUBCASE("errors name the key and where it came from") {
    CHECK(resolve_error(parse("model.chanels = 3\n")) == "test.conf:1: unknown key 'model.chanels'");
    CHECK(resolve_error(parse("\nmodel.channels = lots\n")) ==
          "test.conf:2: model.channels: expected a non-negative integer, got 'lots'");
    CHECK(resolve_error(parse("gen.noise.drop_rate = 2\n")).starts_with("test.conf:1: gen.noise.drop_rate"));
    CHECK(resolve_error(parse("eval.recall_grid = R12\n")).find("expected R11 or R40") != std::string::npos);
    auto kv = parse("");
    kv.set("refine.rect_jitter", "-1");
    CHECK(resolve_error(kv).starts_with("command line: refine.rect_jitter"));
  }
  SUBCASE("snapshot covers every section") {
    const auto j = config::to_json(config::resolve(parse("")));
    for (const char* key : {"seed", "gen", "model", "train", "eval"}) CHECK(j.contains(key));
  }
}

TEST_CASE("base64 and float arrays") {
  const std::string text = "any carnal pleas";
  const std::vector<unsigned char> bytes(text.begin(), text.end());
  CHECK(codec::base64_encode(bytes) == "YW55IGNhcm5hbCBwbGVhcw==");
  CHECK(codec::base64_decode("YW55IGNhcm5hbCBwbGVhcw==") == bytes);
  CHECK(codec::base64_encode({}).empty());
  CHECK(codec::base64_decode("").empty());
  CHECK_THROWS_AS(codec::base64_decode("YW5*"), std::invalid_argument);
  CHECK_THROWS_AS(codec::base64_decode("YW5"), std::invalid_argument);

  const std::vector<double> values{0.0, -0.0, 1.0 / 3.0, 1e-310, -2.5e300, std::numeric_limits<double>::infinity()};
  const auto back = codec::decode_f64(codec::encode_f64(values));
  REQUIRE(back.size() == values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    CHECK(std::memcmp(&back[i], &values[i], sizeof(double)) == 0);
  }
  // Little-endian layout: 1.0 is 00 00 00 00 00 00 f0 3f.
  CHECK(codec::encode_f64(std::vector<double>{1.0}) == "AAAAAAAA8D8=");
  CHECK_THROWS(codec::decode_f64("AAAA"));
}

TEST_CASE("detection files round trip") {
  TempDir dir;
  std::vector<cli::SceneDetections> scenes(2);
  scenes[0].scene = 4;
  scenes[0].detections = {{{1.0 / 3.0, 2, -1, 4, 1.5, 1.8, 0.1}, 0.123456789012345, 1}};
  scenes[0].proposals = {3};
  scenes[1].scene = 9;
  cli::write_detections(dir / "d.jsonl", scenes);
  const auto back = cli::read_detections(dir / "d.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back[0].scene == 4);
  CHECK(back[0].detections[0].box == scenes[0].detections[0].box);
  CHECK(back[0].detections[0].score == scenes[0].detections[0].score);
  CHECK(back[0].detections[0].class_id == 1);
  CHECK(back[0].proposals == std::vector<std::size_t>{3});
  CHECK(back[1].detections.empty());

  std::ofstream(dir / "bad.jsonl") << R"({"scene": 1, "detections": [{"box": [1, 2]}]})" << "\n";
  CHECK_THROWS_WITH_AS(cli::read_detections(dir / "bad.jsonl"),
                       doctest::Contains("bad.jsonl: line 1:"), std::runtime_error);
}

TEST_CASE("backbone weights travel with the checkpoint") {
  const auto bb = roi::BackboneParams::create(3, 6, 5);
  tensor::ParameterSet ps;
  cli::add_backbone_parameters(ps, bb);
  std::stringstream buf;
  tensor::write_checkpoint(buf, ps);
  const auto back = cli::backbone_from_parameters(tensor::read_checkpoint(buf));
  CHECK(back.in_channels == 3);
  CHECK(back.hidden_channels == 5);
  CHECK(back.out_channels == 6);
  CHECK(back.w1 == bb.w1);
  CHECK(back.b2 == bb.b2);
  CHECK_THROWS(cli::backbone_from_parameters({}));
}

TEST_CASE("command line pipeline") {
  TempDir dir;
  std::ofstream(dir / "tiny.conf") << kTinyConfig;
  const std::string conf = dir / "tiny.conf";

  auto gen = run({"gen", "--config", conf, "--seed", "3", "--scenes", "3", "--out", dir / "d.jsonl"});
  REQUIRE(gen.code == cli::kOk);
  CHECK(gen.out == "wrote 3 scenes to " + (dir / "d.jsonl") + " (seed 3)\n");
  const auto manifest = nlohmann::json::parse(slurp(dir / "d.jsonl.manifest.json"));
  CHECK(manifest["command"] == "gen");
  CHECK(manifest["seed"] == 3);
  CHECK(manifest["config"]["gen"]["image_width"] == 32);

  auto train = run({"train", "--config", conf, "--data", dir / "d.jsonl", "--out", dir / "m.ckpt"});
  REQUIRE(train.code == cli::kOk);
  CHECK(train.out.find("epoch 2 ") != std::string::npos);
  CHECK(fs::exists(dir / "m.ckpt.metrics.jsonl"));
  auto lidar = run({"train", "--config", conf, "--data", dir / "d.jsonl", "--out", dir / "l.ckpt", "--lidar-only"});
  REQUIRE(lidar.code == cli::kOk);
  CHECK(lidar.out.find("(lidar-only)") != std::string::npos);

  auto refine = run({"refine", "--config", conf, "--data", dir / "d.jsonl", "--checkpoint", dir / "m.ckpt", "--out",
                     dir / "refined.jsonl", "--rect-jitter", "1"});
  REQUIRE(refine.code == cli::kOk);
  auto refine_l = run({"refine", "--config", conf, "--data", dir / "d.jsonl", "--checkpoint", dir / "l.ckpt", "--out",
                       dir / "lidar.jsonl"});
  REQUIRE(refine_l.code == cli::kOk);
  CHECK(refine_l.out.find("(lidar-only checkpoint)") != std::string::npos);
  CHECK(cli::read_detections(dir / "refined.jsonl").size() == 3);

  auto ev = run({"eval", "--config", conf, "--data", dir / "d.jsonl", "--detections", dir / "refined.jsonl",
                 "--detections", dir / "lidar.jsonl", "--proposals", "--out", dir / "report.jsonl", "--plot",
                 dir / "plots"});
  REQUIRE(ev.code == cli::kOk);
  CHECK(ev.out.find("AP proposals") != std::string::npos);
  CHECK(ev.out.find("AP refined") != std::string::npos);
  CHECK(ev.out.find("AP lidar") != std::string::npos);
  CHECK(slurp(dir / "report.jsonl.txt") == ev.out);
  CHECK(fs::exists(dir / "plots/pr_curves.svg"));
  CHECK(fs::exists(dir / "plots/ap_by_distance.svg"));

  SUBCASE("failures map to exit codes") {
    CHECK(run({}).code == cli::kConfigError);
    CHECK(run({"train", "--out", dir / "x"}).code == cli::kConfigError);
    const auto unknown = run({"gen", "--out", dir / "x", "--set", "gen.bogus=1"});
    CHECK(unknown.code == cli::kConfigError);
    CHECK(unknown.err == "configuration error: command line: unknown key 'gen.bogus'\n");
    CHECK(run({"eval", "--data", dir / "d.jsonl", "--out", dir / "x"}).code == cli::kConfigError);
    CHECK(run({"train", "--data", dir / "missing.jsonl", "--out", dir / "x"}).code == cli::kFailure);
    CHECK(run({"train", "--config", conf, "--data", dir / "d.jsonl", "--out", dir / "x", "--set",
               "train.learning_rate=1e300"})
              .code == cli::kDiverged);
    // Model width disagrees with the checkpoint.
    CHECK(run({"refine", "--config", conf, "--set", "model.channels=16", "--data", dir / "d.jsonl", "--checkpoint",
               dir / "m.ckpt", "--out", dir / "x"})
              .code == cli::kConfigError);
    CHECK(run({"gradcheck", "--block", "nonsense", "--out", dir / "g.txt"}).code == cli::kConfigError);
  }
  SUBCASE("gradcheck on one block") {
    const auto g = run({"gradcheck", "--block", "gelu", "--out", dir / "g.txt"});
    CHECK(g.code == cli::kOk);
    CHECK(g.out.starts_with("PASS gelu"));
    CHECK(slurp(dir / "g.txt") == g.out);
  }
}
