#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gspo_lab/gspo_lab.h"

namespace {

int report(gl_status s) {
  if (s != GL_OK) std::fprintf(stderr, "gspo-lab: %s\n", gl_last_error_message());
  return static_cast<int>(s);
}

const std::map<std::string, int> kAlgorithms{{"grpo", 0}, {"gspo", 1}};
const std::map<std::string, int> kModes{{"standard", 0}, {"compressed", 1}};

struct CommonFlags {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  int algorithm = -1;
  int mode = -1;
  CLI::Option* seed_opt = nullptr;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool with_policy_flags) {
  cmd->add_option("--config", f.config, "JSON config file")->required();
  f.seed_opt = cmd->add_option("--seed", f.seed, "Seed (overrides config)");
  cmd->add_option("--out", f.out, "Output directory (overrides config)");
  if (with_policy_flags) {
    cmd->add_option("--algorithm", f.algorithm, "grpo or gspo")
        ->transform(CLI::CheckedTransformer(kAlgorithms));
    cmd->add_option("--mode", f.mode, "standard or compressed")
        ->transform(CLI::CheckedTransformer(kModes));
  }
}

gl_run_options options_of(const CommonFlags& f) {
  gl_run_options o;
  gl_run_options_init(&o);
  if (!f.out.empty()) o.out = f.out.c_str();
  if (f.seed_opt && f.seed_opt->count() > 0) {
    o.has_seed = 1;
    o.seed = f.seed;
  }
  o.algorithm = f.algorithm;
  o.mode = f.mode;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Group-relative policy optimization lab for fraud verdicts"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(gl_version()));

  CommonFlags gen, train, compare;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate train/test JSONL datasets");
  add_common(gen_cmd, gen, false);
  auto* train_cmd = app.add_subcommand("train", "Train a policy");
  add_common(train_cmd, train, true);
  auto* compare_cmd = app.add_subcommand("compare", "Run algorithm x mode arms over seeds");
  add_common(compare_cmd, compare, true);

  gl_eval_args eval;
  gl_eval_args_init(&eval);
  std::string checkpoint, data, eval_out = "eval", name = "policy";
  std::size_t n_fillers = 4;
  int eval_mode = 0;
  bool sample = false;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint JSON")->required();
  eval_cmd->add_option("--data", data, "Dataset JSONL")->required();
  eval_cmd->add_option("--out", eval_out, "Output directory");
  eval_cmd->add_option("--mode", eval_mode, "standard or compressed")
      ->transform(CLI::CheckedTransformer(kModes));
  eval_cmd->add_option("--n-fillers", n_fillers, "Filler tokens in the vocabulary");
  eval_cmd->add_flag("--sample", sample, "Sampled instead of greedy decoding");
  eval_cmd->add_option("--temperature", eval.options.temperature, "Sampling temperature");
  eval_cmd->add_option("--seed", eval.options.seed, "Sampling seed");
  eval_cmd->add_option("--name", name, "Model column in metrics.csv");

  std::string prompt_data;
  std::size_t index = 0;
  int prompt_mode = 0;
  auto* prompt_cmd = app.add_subcommand("prompt", "Print the prompt for one record");
  prompt_cmd->add_option("--data", prompt_data, "Dataset JSONL")->required();
  prompt_cmd->add_option("--index", index, "Record index");
  prompt_cmd->add_option("--mode", prompt_mode, "standard or compressed")
      ->transform(CLI::CheckedTransformer(kModes));

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return GL_ERR_CONFIG;
  }

  if (*gen_cmd) {
    const auto o = options_of(gen);
    return report(gl_cmd_gen_data(gen.config.c_str(), &o));
  }
  if (*train_cmd) {
    const auto o = options_of(train);
    return report(gl_cmd_train(train.config.c_str(), &o));
  }
  if (*compare_cmd) {
    const auto o = options_of(compare);
    return report(gl_cmd_compare(compare.config.c_str(), &o));
  }
  if (*eval_cmd) {
    eval.checkpoint = checkpoint.c_str();
    eval.data = data.c_str();
    eval.out = eval_out.c_str();
    eval.model_name = name.c_str();
    eval.n_fillers = n_fillers;
    eval.options.mode = eval_mode;
    eval.options.sample = sample ? 1 : 0;
    return report(gl_cmd_eval(&eval));
  }

  gl_dataset* ds = nullptr;
  if (const auto s = gl_dataset_load(prompt_data.c_str(), &ds); s != GL_OK) return report(s);
  std::size_t needed = 0;
  auto s = gl_render_prompt(ds, index, prompt_mode, nullptr, 0, &needed);
  if (s == GL_OK) {
    std::vector<char> buf(needed);
    s = gl_render_prompt(ds, index, prompt_mode, buf.data(), buf.size(), nullptr);
    if (s == GL_OK) std::printf("%s\n", buf.data());
  }
  gl_dataset_free(ds);
  return report(s);
}
