#include "gspo_lab/gspo_lab.h"

#include <cstring>
#include <new>
#include <string>

#include "gspo_lab/eval.hpp"
#include "gspo_lab/runner.hpp"

struct gl_dataset {
  gspo_lab::Dataset data;
};

struct gl_policy {
  std::shared_ptr<const gspo_lab::Vocab> vocab;
  gspo_lab::PolicyParams params;
};

namespace {

thread_local std::string last_error;

gl_status set_error(gl_status s, std::string msg) {
  last_error = std::move(msg);
  return s;
}

template <class Fn>
gl_status guarded(Fn&& fn) {
  last_error.clear();
  try {
    fn();
    return GL_OK;
  } catch (const gspo_lab::Error& e) {
    return set_error(static_cast<gl_status>(gspo_lab::exit_code_for(e.kind())), e.what());
  } catch (const std::bad_alloc&) {
    return set_error(GL_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return set_error(GL_ERR_INTERNAL, e.what());
  }
}

void need(const void* p, const char* what) {
  if (!p) gspo_lab::fail(gspo_lab::ErrorKind::invalid_config, std::string(what) + " is null");
}

gspo_lab::PromptMode mode_of(int m) {
  if (m == 0) return gspo_lab::PromptMode::standard();
  if (m == 1) return gspo_lab::default_compressed_mode();
  gspo_lab::fail(gspo_lab::ErrorKind::invalid_config, "mode must be 0 or 1");
}

gspo_lab::SamplerOptions sampler_of(const gl_eval_options& o) {
  return {o.sample ? gspo_lab::Decoding::sample : gspo_lab::Decoding::greedy, o.temperature};
}

void fill(const gspo_lab::MetricsReport& m, gl_metrics_report* out) {
  out->accuracy = m.accuracy;
  out->recall_tpr = m.recall_tpr;
  out->specificity_tnr = m.specificity_tnr;
  out->precision = m.precision;
  out->fpr = m.fpr;
  out->f1 = m.f1;
  out->avg_tokens = m.avg_tokens;
  out->format_failure_rate = m.format_failure_rate;
  out->faithfulness_pass_rate = m.faithfulness_pass_rate;
  out->n = m.n;
}

gspo_lab::RunOverrides overrides_of(const gl_run_options* o) {
  gspo_lab::RunOverrides r;
  if (!o) return r;
  if (o->out) r.out = o->out;
  if (o->has_seed) r.seed = o->seed;
  if (o->algorithm == 0) r.algorithm = gspo_lab::Algorithm::grpo;
  else if (o->algorithm == 1) r.algorithm = gspo_lab::Algorithm::gspo;
  else if (o->algorithm != -1) gspo_lab::fail(gspo_lab::ErrorKind::invalid_config, "algorithm must be -1, 0 or 1");
  if (o->mode == 0) r.mode = gspo_lab::PromptStyle::standard;
  else if (o->mode == 1) r.mode = gspo_lab::PromptStyle::compressed;
  else if (o->mode != -1) gspo_lab::fail(gspo_lab::ErrorKind::invalid_config, "mode must be -1, 0 or 1");
  return r;
}

std::shared_ptr<const gspo_lab::Vocab> vocab_for(size_t n_fillers) {
  return gspo_lab::Vocab::fraud(n_fillers);
}

}  // namespace

extern "C" {

const char* gl_last_error_message(void) { return last_error.c_str(); }

const char* gl_version(void) { return gspo_lab::kToolVersion; }

gl_status gl_dataset_load(const char* path, gl_dataset** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = nullptr;
    auto ds = std::make_unique<gl_dataset>();
    ds->data = gspo_lab::read_jsonl(path);
    *out = ds.release();
  });
}

size_t gl_dataset_size(const gl_dataset* ds) { return ds ? ds->data.size() : 0; }

size_t gl_dataset_fraud_count(const gl_dataset* ds) {
  return ds ? ds->data.count(gspo_lab::Label::fraudulent) : 0;
}

void gl_dataset_free(gl_dataset* ds) { delete ds; }

gl_status gl_policy_zeros(size_t n_fillers, gl_policy** out) {
  return guarded([&] {
    need(out, "out");
    *out = nullptr;
    auto p = std::make_unique<gl_policy>();
    p->vocab = vocab_for(n_fillers);
    gspo_lab::TrainEnv env;
    env.vocab = p->vocab;
    p->params = env.zero_params();
    *out = p.release();
  });
}

gl_status gl_policy_load(const char* path, size_t n_fillers, gl_policy** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = nullptr;
    auto p = std::make_unique<gl_policy>();
    p->vocab = vocab_for(n_fillers);
    p->params = gspo_lab::load_params(path, *p->vocab);
    *out = p.release();
  });
}

gl_status gl_policy_save(const gl_policy* policy, const char* path) {
  return guarded([&] {
    need(policy, "policy");
    need(path, "path");
    gspo_lab::save_params(path, policy->params, *policy->vocab);
  });
}

gl_status gl_policy_shape(const gl_policy* policy, size_t* rows, size_t* cols) {
  return guarded([&] {
    need(policy, "policy");
    if (rows) *rows = policy->params.weights.rows();
    if (cols) *cols = policy->params.weights.cols();
  });
}

void gl_policy_free(gl_policy* policy) { delete policy; }

gl_status gl_reward(const char* completion, int label_is_fraud, double accuracy_weight,
                    double format_weight, double* accuracy, double* format, double* total) {
  return guarded([&] {
    need(completion, "completion");
    gspo_lab::RewardWeights w{accuracy_weight, format_weight};
    w.validate();
    const auto label = label_is_fraud ? gspo_lab::Label::fraudulent : gspo_lab::Label::legitimate;
    const auto r = gspo_lab::total_reward(completion, label, w);
    if (accuracy) *accuracy = r.accuracy;
    if (format) *format = r.format;
    if (total) *total = r.total;
  });
}

gl_status gl_extract_verdict(const char* completion, int* verdict) {
  return guarded([&] {
    need(completion, "completion");
    need(verdict, "verdict");
    const auto v = gspo_lab::extract_verdict(completion);
    *verdict = !v ? -1 : (*v == gspo_lab::Label::fraudulent ? 1 : 0);
  });
}

gl_status gl_metrics(uint64_t tp, uint64_t fp, uint64_t tn, uint64_t fn, gl_metrics_report* out) {
  return guarded([&] {
    need(out, "out");
    gspo_lab::ConfusionCounts c;
    c.tp = tp;
    c.fp = fp;
    c.tn = tn;
    c.fn = fn;
    fill(gspo_lab::metrics(c), out);
  });
}

gl_status gl_render_prompt(const gl_dataset* ds, size_t index, int mode, char* buf,
                           size_t buf_len, size_t* needed) {
  return guarded([&] {
    need(ds, "dataset");
    if (index >= ds->data.size()) {
      gspo_lab::fail(gspo_lab::ErrorKind::invalid_config, "record index out of range");
    }
    const auto text = gspo_lab::render_prompt(ds->data.records[index].record, mode_of(mode));
    if (needed) *needed = text.size() + 1;
    if (buf && buf_len > 0) {
      const auto n = std::min(buf_len - 1, text.size());
      std::memcpy(buf, text.data(), n);
      buf[n] = '\0';
    }
  });
}

gl_status gl_evaluate(const gl_policy* policy, const gl_dataset* ds, const gl_eval_options* options,
                      gl_metrics_report* out) {
  return guarded([&] {
    need(policy, "policy");
    need(ds, "dataset");
    need(options, "options");
    need(out, "out");
    gspo_lab::TrainEnv env;
    env.vocab = policy->vocab;
    env.mode = mode_of(options->mode);
    const auto report =
        gspo_lab::evaluate(policy->params, ds->data, env, sampler_of(*options), options->seed);
    fill(report.metrics, out);
  });
}

void gl_run_options_init(gl_run_options* options) {
  if (!options) return;
  options->out = nullptr;
  options->has_seed = 0;
  options->seed = 0;
  options->algorithm = -1;
  options->mode = -1;
}

gl_status gl_cmd_gen_data(const char* config_path, const gl_run_options* options) {
  return guarded([&] {
    need(config_path, "config_path");
    gspo_lab::cmd_gen_data(config_path, overrides_of(options));
  });
}

gl_status gl_cmd_train(const char* config_path, const gl_run_options* options) {
  return guarded([&] {
    need(config_path, "config_path");
    gspo_lab::cmd_train(config_path, overrides_of(options));
  });
}

gl_status gl_cmd_compare(const char* config_path, const gl_run_options* options) {
  return guarded([&] {
    need(config_path, "config_path");
    gspo_lab::cmd_compare(config_path, overrides_of(options));
  });
}

void gl_eval_args_init(gl_eval_args* args) {
  if (!args) return;
  args->checkpoint = nullptr;
  args->data = nullptr;
  args->out = nullptr;
  args->model_name = nullptr;
  args->n_fillers = 4;
  args->options = {0, 0, 1.0, 0};
}

gl_status gl_cmd_eval(const gl_eval_args* args) {
  return guarded([&] {
    need(args, "args");
    need(args->checkpoint, "checkpoint");
    need(args->data, "data");
    gspo_lab::EvalArgs a;
    a.checkpoint = args->checkpoint;
    a.data = args->data;
    if (args->out) a.out = args->out;
    if (args->model_name) a.model_name = args->model_name;
    a.n_fillers = args->n_fillers;
    a.mode = mode_of(args->options.mode);
    a.sampler = sampler_of(args->options);
    a.seed = args->options.seed;
    gspo_lab::cmd_eval(a);
  });
}

}  // extern "C"
