#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "roifuse/eval.hpp"
#include "roifuse/roi.hpp"
#include "roifuse/tensor.hpp"

namespace roifuse::cli {

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfigError = 2,
  kVerificationFailed = 3,
  kDiverged = 4,
};

/// Entry point shared by the executable and the tests. `args` excludes the
/// program name: {"train", "--data", "d.jsonl", ...}.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// ---- file helpers shared with tests -----------------------------------------------

/// Frozen backbone weights are stored next to the model parameters under
/// the "backbone." prefix.
void add_backbone_parameters(tensor::ParameterSet& params, const roi::BackboneParams& backbone);
roi::BackboneParams backbone_from_parameters(const std::vector<tensor::Parameter>& params);

struct SceneDetections {
  std::uint64_t scene = 0;
  std::vector<eval::Detection> detections;
  std::vector<std::size_t> proposals;  // source proposal per detection
};

/// One JSON record per scene: {"scene", "detections": [{"box", "score", "class", "proposal"}]}.
void write_detections(const std::filesystem::path& path, const std::vector<SceneDetections>& scenes);
std::vector<SceneDetections> read_detections(const std::filesystem::path& path);

}  // namespace roifuse::cli
