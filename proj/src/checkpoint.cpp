#include <fstream>
#include <sstream>

#include <json.hpp>

#include "gspo_lab/errors.hpp"
#include "gspo_lab/policy.hpp"

namespace gspo_lab {

namespace {

std::string hex(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << v;
  return s.str();
}

}  // namespace

void save_params(const std::filesystem::path& path, const PolicyParams& params,
                 const Vocab& vocab) {
  nlohmann::ordered_json j;
  j["format"] = kCheckpointFormat;
  j["featurizer_version"] = FeatureLayout::kVersion;
  j["vocab_hash"] = hex(vocab.hash());
  j["V"] = params.weights.rows();
  j["F"] = params.weights.cols();
  j["weights"] = std::vector<double>(params.weights.flat().begin(), params.weights.flat().end());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorKind::io, "cannot write checkpoint '" + path.string() + "'");
  f << j.dump() << '\n';
  if (!f) fail(ErrorKind::io, "write failed for '" + path.string() + "'");
}

PolicyParams load_params(const std::filesystem::path& path, const Vocab& vocab) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::io, "cannot read checkpoint '" + path.string() + "'");
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::shape_mismatch, std::string("checkpoint is not valid JSON: ") + e.what());
  }
  auto header = [&](const char* key) -> const nlohmann::json& {
    if (!j.contains(key)) fail(ErrorKind::shape_mismatch, std::string("checkpoint lacks ") + key);
    return j[key];
  };
  require(header("format") == kCheckpointFormat, ErrorKind::shape_mismatch, "unknown checkpoint format");
  require(header("featurizer_version") == FeatureLayout::kVersion, ErrorKind::shape_mismatch,
          "featurizer version mismatch");
  require(header("vocab_hash") == hex(vocab.hash()), ErrorKind::shape_mismatch,
          "vocabulary hash mismatch");
  const FeatureLayout layout{vocab.size()};
  const auto rows = header("V").get<std::size_t>();
  const auto cols = header("F").get<std::size_t>();
  require(rows == vocab.size() && cols == layout.dim(), ErrorKind::shape_mismatch,
          "checkpoint shape " + std::to_string(rows) + "x" + std::to_string(cols) +
              " does not match " + std::to_string(vocab.size()) + "x" +
              std::to_string(layout.dim()));
  const auto weights = header("weights").get<std::vector<double>>();
  require(weights.size() == rows * cols, ErrorKind::shape_mismatch, "weight count mismatch");
  PolicyParams p = PolicyParams::zeros(rows, cols);
  std::copy(weights.begin(), weights.end(), p.weights.flat().begin());
  require(p.weights.all_finite(), ErrorKind::shape_mismatch, "non-finite weights in checkpoint");
  return p;
}

}  // namespace gspo_lab
