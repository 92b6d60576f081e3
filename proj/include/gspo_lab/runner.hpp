#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gspo_lab/errors.hpp"
#include "gspo_lab/eval.hpp"
#include "gspo_lab/rl.hpp"
#include "gspo_lab/synth.hpp"

namespace gspo_lab {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kDatasetFormat = "gspo-lab-jsonl/1";

// Exit-code contract: 0 ok, 2 config, 3 degenerate data, 4 IO.
int exit_code_for(ErrorKind kind) noexcept;

// Command-line overrides; unset fields keep the config file's values.
struct RunOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  std::optional<Algorithm> algorithm;
  std::optional<PromptStyle> mode;
};

// Compressed setup used when only the style is requested: two weak signals
// and a tight budget.
PromptMode default_compressed_mode();

// Desk-scale default: a 20000-record pool at the test fraud rate, split into
// a ~2000-record balanced training set and a 2000-record natural-ratio test set.
GenConfig desk_scale_generator();
SplitProtocol desk_scale_split();

struct GenDataConfig {
  GenConfig generator = desk_scale_generator();
  SplitProtocol split = desk_scale_split();
  std::filesystem::path out = "data";
};

struct TrainRunConfig {
  TrainConfig train;
  std::size_t n_fillers = 4;
  std::filesystem::path train_data;
  std::filesystem::path eval_data;  // optional
  std::filesystem::path out = "run";
  int eval_every = 0;
  int checkpoint_every = 0;
  SamplerOptions eval_sampler{Decoding::greedy, 1.0};
};

struct CompareArm {
  std::string name;
  Algorithm algorithm = Algorithm::gspo;
  PromptMode mode;
};

struct CompareConfig {
  TrainRunConfig base;
  std::vector<CompareArm> arms;
  std::vector<std::uint64_t> seeds;
  // Trailing steps averaged for "at convergence" statistics; 0 = steps / 10.
  int tail_window = 0;
};

struct EvalArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path data;
  std::filesystem::path out = "eval";
  PromptMode mode = PromptMode::standard();
  std::size_t n_fillers = 4;
  double distance_threshold_km = kDefaultDistanceThresholdKm;
  SamplerOptions sampler{Decoding::greedy, 1.0};
  std::uint64_t seed = 0;
  std::string model_name = "policy";
};

// Parsers reject unknown keys and bad values with Error(invalid_config).
// Relative paths inside a config resolve against base_dir.
GenDataConfig parse_gen_data_config(std::string_view json_text);
TrainRunConfig parse_train_config(std::string_view json_text,
                                  const std::filesystem::path& base_dir = {});
CompareConfig parse_compare_config(std::string_view json_text,
                                   const std::filesystem::path& base_dir = {});

std::string to_json(const GenDataConfig& config);
std::string to_json(const TrainRunConfig& config);

// FNV-1a 64 of the text, as 16 hex digits.
std::string config_hash(std::string_view text);

// Each command writes into its output directory and returns it. Failures
// surface as gspo_lab::Error.
std::filesystem::path cmd_gen_data(const std::filesystem::path& config_path,
                                   const RunOverrides& overrides = {});
std::filesystem::path cmd_train(const std::filesystem::path& config_path,
                                const RunOverrides& overrides = {});
std::filesystem::path cmd_eval(const EvalArgs& args);
std::filesystem::path cmd_compare(const std::filesystem::path& config_path,
                                  const RunOverrides& overrides = {});

// Config-object entry points behind the file-based commands.
std::filesystem::path run_gen_data(const GenDataConfig& config);
std::filesystem::path run_train(const TrainRunConfig& config);
std::filesystem::path run_compare(const CompareConfig& config);

}  // namespace gspo_lab
