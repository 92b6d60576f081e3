#include "gspo_lab/rl.hpp"

#include <cmath>
#include <numeric>

#include <json.hpp>

#include "gspo_lab/errors.hpp"
#include "gspo_lab/parallel.hpp"
#include "gspo_lab/rng.hpp"

namespace gspo_lab {

std::string_view to_string(Algorithm a) noexcept { return a == Algorithm::grpo ? "grpo" : "gspo"; }

std::optional<Algorithm> algorithm_from_string(std::string_view text) noexcept {
  if (text == "grpo") return Algorithm::grpo;
  if (text == "gspo") return Algorithm::gspo;
  return std::nullopt;
}

void HyperParams::validate() const {
  auto check = [](bool ok, const char* what) { require(ok, ErrorKind::invalid_config, what); };
  check(group_size >= 2, "group_size must be >= 2");
  check(std::isfinite(clip_epsilon) && clip_epsilon > 0.0 && clip_epsilon < 1.0,
        "clip_epsilon must lie in (0, 1)");
  check(std::isfinite(learning_rate) && learning_rate > 0.0, "learning_rate must be positive");
  check(prompts_per_batch > 0, "prompts_per_batch must be positive");
  check(updates_per_snapshot > 0, "updates_per_snapshot must be positive");
  check(total_steps >= 0, "total_steps must be >= 0");
  check(std::isfinite(adv_std_floor) && adv_std_floor > 0.0, "adv_std_floor must be positive");
  check(std::isfinite(momentum) && momentum >= 0.0 && momentum < 1.0,
        "momentum must lie in [0, 1)");
}

void GroupRollout::validate() const {
  const auto g = completions.size();
  require(g > 0 && old_logprobs.size() == g && old_totals.size() == g && advantages.size() == g,
          ErrorKind::shape_mismatch, "group '" + prompt_key + "' has inconsistent list lengths");
  require(rewards.empty() || rewards.size() == g, ErrorKind::shape_mismatch,
          "group '" + prompt_key + "' reward count differs from group size");
  require(context != nullptr, ErrorKind::shape_mismatch, "group '" + prompt_key + "' lacks a context");
  for (std::size_t i = 0; i < g; ++i) {
    require(old_logprobs[i].size() == completions[i].length(), ErrorKind::shape_mismatch,
            "old logprobs do not match completion length in group '" + prompt_key + "'");
  }
}

std::vector<double> group_advantages(std::span<const double> rewards, double floor) {
  const auto n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double std = std::sqrt(var / n);
  std::vector<double> adv(rewards.size(), 0.0);
  if (std <= floor) return adv;
  for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = (rewards[i] - mean) / std;
  return adv;
}

std::vector<double> token_importance_ratios(std::span<const double> new_logprobs,
                                            std::span<const double> old_logprobs) {
  require(new_logprobs.size() == old_logprobs.size(), ErrorKind::shape_mismatch,
          "logprob sequences differ in length");
  std::vector<double> w(new_logprobs.size());
  for (std::size_t t = 0; t < w.size(); ++t) w[t] = std::exp(new_logprobs[t] - old_logprobs[t]);
  return w;
}

double sequence_importance_weight(double new_total, double old_total, std::size_t length) {
  require(length >= 1, ErrorKind::shape_mismatch, "sequence length must be >= 1");
  return std::exp((new_total - old_total) / static_cast<double>(length));
}

SurrogateTerm clipped_surrogate(double ratio, double advantage, double eps) {
  const double unclipped = ratio * advantage;
  const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps) * advantage;
  if (clipped < unclipped) return {clipped, true};
  return {unclipped, false};
}

namespace {

struct GroupTerm {
  double value = 0.0;
  Matrix gradient;
  std::size_t clipped = 0;
  std::size_t units = 0;
};

template <typename PerGroup>
ObjectiveResult reduce_groups(std::span<const GroupRollout> groups, const PolicyParams& params,
                              PerGroup&& per_group) {
  require(!groups.empty(), ErrorKind::shape_mismatch, "objective needs at least one group");
  std::vector<GroupTerm> terms(groups.size());
  parallel_for(groups.size(), [&](std::size_t g) {
    groups[g].validate();
    terms[g].gradient = Matrix(params.weights.rows(), params.weights.cols());
    per_group(groups[g], terms[g]);
  });
  ObjectiveResult out;
  out.gradient = Matrix(params.weights.rows(), params.weights.cols());
  std::size_t clipped = 0;
  std::size_t units = 0;
  const double scale = 1.0 / static_cast<double>(groups.size());
  for (const auto& t : terms) {
    out.value += scale * t.value;
    out.gradient.axpy(scale, t.gradient);
    clipped += t.clipped;
    units += t.units;
  }
  out.clip_fraction = units ? static_cast<double>(clipped) / static_cast<double>(units) : 0.0;
  return out;
}

}  // namespace

ObjectiveResult grpo_objective(std::span<const GroupRollout> groups, const PolicyParams& params,
                               double eps) {
  return reduce_groups(groups, params, [&](const GroupRollout& group, GroupTerm& term) {
    const double inv_g = 1.0 / static_cast<double>(group.size());
    for (std::size_t i = 0; i < group.size(); ++i) {
      const auto& tokens = group.completions[i].token_ids;
      SequenceTrace trace(params, *group.context, tokens);
      const auto ratios = token_importance_ratios(trace.logprobs(), group.old_logprobs[i]);
      const double inv_len = 1.0 / static_cast<double>(tokens.size());
      const double a = group.advantages[i];
      std::vector<double> coeffs(tokens.size(), 0.0);
      for (std::size_t t = 0; t < tokens.size(); ++t) {
        const auto s = clipped_surrogate(ratios[t], a, eps);
        term.value += inv_g * inv_len * s.value;
        ++term.units;
        if (s.clipped) {
          ++term.clipped;
        } else {
          // d(w A)/dW = A w d log pi / dW
          coeffs[t] = inv_g * inv_len * a * ratios[t];
        }
      }
      trace.accumulate_score(coeffs, term.gradient);
    }
  });
}

ObjectiveResult gspo_objective(std::span<const GroupRollout> groups, const PolicyParams& params,
                               double eps) {
  return reduce_groups(groups, params, [&](const GroupRollout& group, GroupTerm& term) {
    const double inv_g = 1.0 / static_cast<double>(group.size());
    for (std::size_t i = 0; i < group.size(); ++i) {
      const auto& tokens = group.completions[i].token_ids;
      SequenceTrace trace(params, *group.context, tokens);
      const double s =
          sequence_importance_weight(trace.total(), group.old_totals[i], tokens.size());
      const double a = group.advantages[i];
      const auto surrogate = clipped_surrogate(s, a, eps);
      term.value += inv_g * surrogate.value;
      ++term.units;
      if (surrogate.clipped) {
        ++term.clipped;
        continue;
      }
      // d s / dW = s / |y| * sum_t d log pi_t / dW
      trace.accumulate_score(inv_g * a * s / static_cast<double>(tokens.size()), term.gradient);
    }
  });
}

ObjectiveResult surrogate_objective(Algorithm algorithm, std::span<const GroupRollout> groups,
                                    const PolicyParams& params, double eps) {
  return algorithm == Algorithm::grpo ? grpo_objective(groups, params, eps)
                                      : gspo_objective(groups, params, eps);
}

std::shared_ptr<const DecodingContext> TrainEnv::context_for(const TransactionRecord& record) const {
  return std::make_shared<FraudContext>(vocab, record, mode, distance_threshold_km);
}

std::vector<GroupRollout> collect_rollouts(const PolicyParams& rollout_policy,
                                           std::span<const LabeledRecord> batch,
                                           const HyperParams& hyper, const TrainEnv& env,
                                           std::uint64_t seed, std::uint64_t step) {
  std::vector<GroupRollout> groups(batch.size());
  parallel_for(batch.size(), [&](std::size_t p) {
    auto& g = groups[p];
    const auto& item = batch[p];
    g.prompt_key = item.record.order_id;
    g.context = env.context_for(item.record);
    for (int i = 0; i < hyper.group_size; ++i) {
      auto c = sample_completion(rollout_policy, *g.context,
                                 derive_seed(seed, {step, p, static_cast<std::uint64_t>(i)}));
      g.old_totals.push_back(std::accumulate(c.logprobs.begin(), c.logprobs.end(), 0.0));
      g.old_logprobs.push_back(c.logprobs);
      g.rewards.push_back(total_reward(c.text, item.label, env.weights).total);
      g.completions.push_back(std::move(c));
    }
    g.advantages = group_advantages(g.rewards, hyper.adv_std_floor);
  });
  return groups;
}

std::string to_json_line(const StepLog& log) {
  nlohmann::ordered_json j;
  j["step"] = log.step;
  j["mean_reward"] = log.mean_reward;
  j["accuracy_hit_rate"] = log.accuracy_hit_rate;
  j["format_hit_rate"] = log.format_hit_rate;
  j["mean_length"] = log.mean_length;
  j["objective"] = log.objective;
  j["grad_norm"] = log.grad_norm;
  j["clip_fraction"] = log.clip_fraction;
  j["degenerate_groups"] = log.degenerate_groups;
  if (log.eval) {
    const auto& e = *log.eval;
    j["eval"] = {{"accuracy", e.accuracy},
                 {"precision", e.precision},
                 {"recall", e.recall},
                 {"f1", e.f1},
                 {"avg_tokens", e.avg_tokens},
                 {"format_failure_rate", e.format_failure_rate},
                 {"faithfulness_pass_rate", e.faithfulness_pass_rate}};
  }
  return j.dump();
}

StepResult train_step(const PolicyParams& params, const PolicyParams& rollout_policy,
                      std::span<const LabeledRecord> batch, const HyperParams& hyper,
                      const TrainEnv& env, std::uint64_t seed, int step, Matrix* velocity) {
  hyper.validate();
  require(!batch.empty(), ErrorKind::invalid_config, "training batch is empty");
  const auto groups =
      collect_rollouts(rollout_policy, batch, hyper, env, seed, static_cast<std::uint64_t>(step));
  auto objective = surrogate_objective(hyper.algorithm, groups, params, hyper.clip_epsilon);

  StepLog log;
  log.step = step;
  std::size_t n = 0;
  for (std::size_t p = 0; p < groups.size(); ++p) {
    const auto& g = groups[p];
    bool degenerate = true;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto r = total_reward(g.completions[i].text, batch[p].label, env.weights);
      log.mean_reward += r.total;
      log.accuracy_hit_rate += r.accuracy > 0.0 ? 1.0 : 0.0;
      log.format_hit_rate += r.format > 0.0 ? 1.0 : 0.0;
      log.mean_length += static_cast<double>(g.completions[i].length());
      degenerate &= g.advantages[i] == 0.0;
      ++n;
    }
    log.degenerate_groups += degenerate ? 1 : 0;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  log.mean_reward *= inv_n;
  log.accuracy_hit_rate *= inv_n;
  log.format_hit_rate *= inv_n;
  log.mean_length *= inv_n;
  log.objective = objective.value;
  log.grad_norm = objective.gradient.norm();
  log.clip_fraction = objective.clip_fraction;

  PolicyParams next = params;
  if (hyper.momentum > 0.0 && velocity != nullptr) {
    if (!velocity->same_shape(objective.gradient)) {
      *velocity = Matrix(objective.gradient.rows(), objective.gradient.cols());
    }
    for (std::size_t i = 0; i < velocity->size(); ++i) {
      velocity->flat()[i] = hyper.momentum * velocity->flat()[i] + objective.gradient.flat()[i];
    }
    next.weights.axpy(hyper.learning_rate, *velocity);
  } else {
    next.weights.axpy(hyper.learning_rate, objective.gradient);
  }
  return {std::move(next), log};
}

PolicyParams initial_params(const TrainConfig& config) {
  const auto v = config.env.vocab->size();
  const auto f = config.env.feature_dim();
  if (config.init == InitScheme::gaussian) {
    return PolicyParams::gaussian(v, f, config.init_stddev, config.seed);
  }
  return PolicyParams::zeros(v, f);
}

TrainResult train(const TrainConfig& config, const Dataset& train_set, const TrainHooks& hooks) {
  const auto& hyper = config.hyper;
  hyper.validate();
  config.env.mode.validate();
  config.env.weights.validate();

  TrainResult result;
  result.params = initial_params(config);
  if (hyper.total_steps == 0) return result;
  require(!train_set.records.empty(), ErrorKind::degenerate_data, "training set is empty");

  PolicyParams snapshot = result.params;
  Matrix velocity;
  const auto n_records = static_cast<std::int64_t>(train_set.size());
  const auto batch_size = static_cast<std::size_t>(hyper.prompts_per_batch);
  std::vector<std::size_t> order(train_set.size());
  std::vector<LabeledRecord> batch;
  batch.reserve(batch_size);

  for (int step = 0; step < hyper.total_steps; ++step) {
    if (step % hyper.updates_per_snapshot == 0) snapshot = result.params;

    // Prompts without replacement within a step (with replacement when the
    // batch exceeds the dataset).
    Rng rng(derive_seed(config.seed, {static_cast<std::uint64_t>(step), 0xba7c}));
    batch.clear();
    if (batch_size <= train_set.size()) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      for (std::size_t i = 0; i < batch_size; ++i) {
        const auto j = static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(i), n_records));
        std::swap(order[i], order[j]);
        batch.push_back(train_set.records[order[i]]);
      }
    } else {
      for (std::size_t i = 0; i < batch_size; ++i) {
        batch.push_back(train_set.records[static_cast<std::size_t>(uniform_int(rng, 0, n_records))]);
      }
    }

    auto [next, log] = train_step(result.params, snapshot, batch, hyper, config.env, config.seed,
                                  step, &velocity);
    result.params = std::move(next);
    require(result.params.weights.all_finite(), ErrorKind::degenerate_data,
            "parameters diverged at step " + std::to_string(step));

    if (hooks.eval_every > 0 && hooks.evaluate && (step + 1) % hooks.eval_every == 0) {
      log.eval = hooks.evaluate(step + 1, result.params);
    }
    if (hooks.checkpoint_every > 0 && hooks.checkpoint && (step + 1) % hooks.checkpoint_every == 0) {
      hooks.checkpoint(step + 1, result.params);
    }
    if (hooks.on_step) hooks.on_step(log);
    result.log.push_back(std::move(log));
  }
  return result;
}

}  // namespace gspo_lab
