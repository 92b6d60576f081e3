#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gspo_lab/policy.hpp"
#include "gspo_lab/reward.hpp"
#include "gspo_lab/transaction.hpp"

namespace gspo_lab {

enum class Algorithm : std::uint8_t { grpo, gspo };

std::string_view to_string(Algorithm a) noexcept;
std::optional<Algorithm> algorithm_from_string(std::string_view text) noexcept;

struct HyperParams {
  int group_size = 8;
  double clip_epsilon = 0.2;
  double learning_rate = 5.0;
  int prompts_per_batch = 32;
  // Optimizer steps taken against one frozen rollout policy.
  int updates_per_snapshot = 1;
  int total_steps = 500;
  Algorithm algorithm = Algorithm::gspo;
  double adv_std_floor = 1e-8;
  double momentum = 0.0;

  // Throws Error(invalid_config).
  void validate() const;
};

// G completions for one prompt, scored under the rollout policy.
struct GroupRollout {
  std::string prompt_key;
  std::shared_ptr<const DecodingContext> context;
  std::vector<Completion> completions;
  std::vector<std::vector<double>> old_logprobs;  // per token, rollout policy
  std::vector<double> old_totals;
  std::vector<double> rewards;
  std::vector<double> advantages;

  std::size_t size() const noexcept { return completions.size(); }
  // Throws Error(shape_mismatch) when the per-completion lists disagree.
  void validate() const;
};

// (r - mean) / std with the population std; all zeros when std <= floor.
std::vector<double> group_advantages(std::span<const double> rewards, double floor);

std::vector<double> token_importance_ratios(std::span<const double> new_logprobs,
                                            std::span<const double> old_logprobs);

// exp((new_total - old_total) / length)
double sequence_importance_weight(double new_total, double old_total, std::size_t length);

struct SurrogateTerm {
  double value = 0.0;
  bool clipped = false;  // clipped branch strictly smaller; gradient is zero
};

// min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A); ties take the unclipped branch.
SurrogateTerm clipped_surrogate(double ratio, double advantage, double eps);

struct ObjectiveResult {
  double value = 0.0;
  Matrix gradient;
  // Share of tokens (GRPO) or sequences (GSPO) on the clipped branch.
  double clip_fraction = 0.0;
};

// Mean over groups of (1/G) sum_i (1/|y_i|) sum_t min(w_it A_i, clip(w_it) A_i).
ObjectiveResult grpo_objective(std::span<const GroupRollout> groups, const PolicyParams& params,
                               double eps);

// Mean over groups of (1/G) sum_i min(s_i A_i, clip(s_i) A_i); no outer 1/|y_i|.
ObjectiveResult gspo_objective(std::span<const GroupRollout> groups, const PolicyParams& params,
                               double eps);

ObjectiveResult surrogate_objective(Algorithm algorithm, std::span<const GroupRollout> groups,
                                    const PolicyParams& params, double eps);

// Prompt-to-decoding-context mapping shared by training and evaluation.
struct TrainEnv {
  std::shared_ptr<const Vocab> vocab = Vocab::fraud();
  PromptMode mode = PromptMode::standard();
  RewardWeights weights;
  double distance_threshold_km = kDefaultDistanceThresholdKm;

  std::shared_ptr<const DecodingContext> context_for(const TransactionRecord& record) const;
  std::size_t feature_dim() const { return FeatureLayout{vocab->size()}.dim(); }
  PolicyParams zero_params() const { return PolicyParams::zeros(vocab->size(), feature_dim()); }
};

// Samples G completions per record under the rollout policy and scores them.
std::vector<GroupRollout> collect_rollouts(const PolicyParams& rollout_policy,
                                           std::span<const LabeledRecord> batch,
                                           const HyperParams& hyper, const TrainEnv& env,
                                           std::uint64_t seed, std::uint64_t step);

struct EvalSnapshot {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double avg_tokens = 0.0;
  double format_failure_rate = 0.0;
  double faithfulness_pass_rate = 0.0;

  bool operator==(const EvalSnapshot&) const = default;
};

struct StepLog {
  int step = 0;
  double mean_reward = 0.0;
  double accuracy_hit_rate = 0.0;
  double format_hit_rate = 0.0;
  double mean_length = 0.0;
  double objective = 0.0;
  double grad_norm = 0.0;
  double clip_fraction = 0.0;
  int degenerate_groups = 0;
  std::optional<EvalSnapshot> eval;

  bool operator==(const StepLog&) const = default;
};

std::string to_json_line(const StepLog& log);

struct StepResult {
  PolicyParams params;
  StepLog log;
};

// One optimizer step: rollouts under `rollout_policy`, rewards, advantages,
// surrogate objective at `params`, gradient ascent. `velocity` carries the
// momentum buffer when hyper.momentum > 0.
StepResult train_step(const PolicyParams& params, const PolicyParams& rollout_policy,
                      std::span<const LabeledRecord> batch, const HyperParams& hyper,
                      const TrainEnv& env, std::uint64_t seed, int step,
                      Matrix* velocity = nullptr);

enum class InitScheme : std::uint8_t { zeros, gaussian };

struct TrainConfig {
  HyperParams hyper;
  TrainEnv env;
  std::uint64_t seed = 0;
  InitScheme init = InitScheme::zeros;
  double init_stddev = 0.1;
};

struct TrainHooks {
  int eval_every = 0;  // 0 disables periodic evaluation
  std::function<EvalSnapshot(int step, const PolicyParams&)> evaluate;
  int checkpoint_every = 0;
  std::function<void(int step, const PolicyParams&)> checkpoint;
  std::function<void(const StepLog&)> on_step;
};

struct TrainResult {
  PolicyParams params;
  std::vector<StepLog> log;
};

PolicyParams initial_params(const TrainConfig& config);

// Runs hyper.total_steps steps. The rollout snapshot is refreshed every
// updates_per_snapshot steps.
TrainResult train(const TrainConfig& config, const Dataset& train_set, const TrainHooks& hooks = {});

}  // namespace gspo_lab
