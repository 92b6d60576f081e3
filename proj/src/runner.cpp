#include "gspo_lab/runner.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace gspo_lab {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

int exit_code_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::invalid_config:
    case ErrorKind::shape_mismatch:
      return 2;
    case ErrorKind::empty_side:
    case ErrorKind::insufficient_legit:
    case ErrorKind::degenerate_data:
      return 3;
    case ErrorKind::io:
    case ErrorKind::malformed_record:
      return 4;
    case ErrorKind::illegal_sequence:
      break;
  }
  return 1;
}

PromptMode default_compressed_mode() {
  return PromptMode::compressed({Signal::card_is_prepaid, Signal::item_is_virtual}, 8);
}

GenConfig desk_scale_generator() {
  GenConfig g;
  g.n_records = 20000;
  g.fraud_base_rate = kDefaultTestFraudRate;
  return g;
}

SplitProtocol desk_scale_split() {
  SplitProtocol s;
  s.train_fraud_cap = 944;
  s.test_records = 2000;
  return s;
}

namespace {

// ---------------------------------------------------------------------------
// Strict JSON readers.

[[noreturn]] void bad(const std::string& where, const std::string& what) {
  fail(ErrorKind::invalid_config, where + ": " + what);
}

void check_keys(const json& obj, std::initializer_list<std::string_view> allowed,
                const std::string& where) {
  if (!obj.is_object()) bad(where, "expected an object");
  for (const auto& item : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
      bad(where, "unknown key '" + item.key() + "'");
    }
  }
}

void read(const json& obj, const char* key, double& dst, const std::string& where) {
  if (!obj.contains(key)) return;
  const auto& v = obj.at(key);
  if (!v.is_number()) bad(where + "." + key, "expected a number");
  dst = v.get<double>();
}

void read(const json& obj, const char* key, int& dst, const std::string& where) {
  if (!obj.contains(key)) return;
  const auto& v = obj.at(key);
  if (!v.is_number_integer()) bad(where + "." + key, "expected an integer");
  const auto x = v.get<std::int64_t>();
  if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
    bad(where + "." + key, "out of range");
  }
  dst = static_cast<int>(x);
}

void read(const json& obj, const char* key, std::int64_t& dst, const std::string& where) {
  if (!obj.contains(key)) return;
  const auto& v = obj.at(key);
  if (!v.is_number_integer()) bad(where + "." + key, "expected an integer");
  dst = v.get<std::int64_t>();
}

void read(const json& obj, const char* key, std::uint64_t& dst, const std::string& where) {
  if (!obj.contains(key)) return;
  const auto& v = obj.at(key);
  if (!v.is_number_unsigned()) bad(where + "." + key, "expected a non-negative integer");
  dst = v.get<std::uint64_t>();
}

static_assert(std::is_same_v<std::size_t, std::uint64_t>);

void read(const json& obj, const char* key, std::string& dst, const std::string& where) {
  if (!obj.contains(key)) return;
  const auto& v = obj.at(key);
  if (!v.is_string()) bad(where + "." + key, "expected a string");
  dst = v.get<std::string>();
}

void read_path(const json& obj, const char* key, fs::path& dst, const fs::path& base,
               const std::string& where) {
  if (!obj.contains(key)) return;
  std::string s;
  read(obj, key, s, where);
  fs::path p(s);
  dst = (p.is_relative() && !base.empty()) ? base / p : p;
}

Signal parse_signal(const json& v, const std::string& where) {
  if (!v.is_string()) bad(where, "expected a signal name");
  const auto s = signal_from_name(v.get<std::string>());
  if (!s) bad(where, "unknown signal '" + v.get<std::string>() + "'");
  return *s;
}

PromptMode parse_mode(const json& obj, const std::string& where) {
  check_keys(obj, {"style", "predefined_signals", "max_completion_tokens"}, where);
  std::string style = "standard";
  read(obj, "style", style, where);
  PromptMode mode;
  if (style == "standard") {
    mode = PromptMode::standard();
  } else if (style == "compressed") {
    mode = default_compressed_mode();
    if (obj.contains("predefined_signals")) {
      const auto& list = obj.at("predefined_signals");
      if (!list.is_array()) bad(where + ".predefined_signals", "expected an array");
      mode.predefined_signals.clear();
      for (const auto& v : list) mode.predefined_signals.push_back(parse_signal(v, where));
    }
  } else {
    bad(where + ".style", "expected 'standard' or 'compressed'");
  }
  read(obj, "max_completion_tokens", mode.max_completion_tokens, where);
  mode.validate();
  return mode;
}

ojson mode_json(const PromptMode& mode) {
  ojson j;
  j["style"] = to_string(mode.style);
  if (mode.style == PromptStyle::compressed) {
    ojson list = ojson::array();
    for (Signal s : mode.predefined_signals) list.push_back(signal_info(s).name);
    j["predefined_signals"] = list;
  }
  j["max_completion_tokens"] = mode.max_completion_tokens;
  return j;
}

bool same_mode(const PromptMode& a, const PromptMode& b) {
  return a.style == b.style && a.max_completion_tokens == b.max_completion_tokens &&
         a.predefined_set() == b.predefined_set();
}

Algorithm parse_algorithm(const json& v, const std::string& where) {
  if (!v.is_string()) bad(where, "expected 'grpo' or 'gspo'");
  const auto a = algorithm_from_string(v.get<std::string>());
  if (!a) bad(where, "expected 'grpo' or 'gspo'");
  return *a;
}

json parse_text(std::string_view text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::invalid_config, std::string("config is not valid JSON: ") + e.what());
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorKind::io, "write failed for " + path.string());
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

ojson manifest_base(std::string_view command, std::uint64_t seed, const std::string& config_text) {
  ojson m;
  m["tool"] = "gspo-lab";
  m["version"] = kToolVersion;
  m["command"] = command;
  m["seed"] = seed;
  m["config_hash"] = config_hash(config_text);
  m["versions"] = {{"dataset_format", kDatasetFormat},
                   {"checkpoint_format", kCheckpointFormat},
                   {"featurizer", FeatureLayout::kVersion}};
  return m;
}

ojson counts_json(const Dataset& d) {
  ojson j;
  j["records"] = d.size();
  j["fraudulent"] = d.count(Label::fraudulent);
  j["legitimate"] = d.count(Label::legitimate);
  j["fraud_rate"] = d.size() ? static_cast<double>(d.count(Label::fraudulent)) /
                                   static_cast<double>(d.size())
                             : 0.0;
  if (!d.records.empty()) {
    auto [lo, hi] = std::minmax_element(
        d.records.begin(), d.records.end(),
        [](const auto& a, const auto& b) { return a.record.timestamp < b.record.timestamp; });
    j["time_range"] = {lo->record.timestamp, hi->record.timestamp};
  }
  return j;
}

ojson snapshot_json(const EvalSnapshot& s) {
  return {{"accuracy", s.accuracy},
          {"precision", s.precision},
          {"recall", s.recall},
          {"f1", s.f1},
          {"avg_tokens", s.avg_tokens},
          {"format_failure_rate", s.format_failure_rate},
          {"faithfulness_pass_rate", s.faithfulness_pass_rate}};
}

TrainEnv make_env(const TrainRunConfig& c) {
  TrainEnv env = c.train.env;
  env.vocab = Vocab::fraud(c.n_fillers);
  return env;
}

void validate_run(const TrainRunConfig& c) {
  c.train.hyper.validate();
  c.train.env.mode.validate();
  c.train.env.weights.validate();
  require(c.n_fillers <= Vocab::kMaxFillers, ErrorKind::invalid_config, "n_fillers out of range");
  require(c.eval_every >= 0 && c.checkpoint_every >= 0, ErrorKind::invalid_config,
          "eval_every and checkpoint_every must be non-negative");
  require(c.eval_sampler.temperature > 0.0, ErrorKind::invalid_config,
          "eval temperature must be positive");
  require(!c.train_data.empty(), ErrorKind::invalid_config, "train_data is required");
}

const std::vector<std::string_view> kTrainKeys = {
    "seed", "out", "train_data", "eval_data", "algorithm", "hyper", "mode", "reward", "init",
    "eval_every", "checkpoint_every", "n_fillers", "distance_threshold_km", "eval_decoding"};

TrainRunConfig parse_train_object(const json& j, const fs::path& base) {
  const std::string w = "config";
  TrainRunConfig c;
  auto& hyper = c.train.hyper;
  read(j, "seed", c.train.seed, w);
  read_path(j, "out", c.out, base, w);
  read_path(j, "train_data", c.train_data, base, w);
  read_path(j, "eval_data", c.eval_data, base, w);
  if (j.contains("algorithm")) hyper.algorithm = parse_algorithm(j.at("algorithm"), w + ".algorithm");
  if (j.contains("hyper")) {
    const auto& h = j.at("hyper");
    const std::string wh = w + ".hyper";
    check_keys(h, {"group_size", "clip_epsilon", "learning_rate", "prompts_per_batch",
                   "updates_per_snapshot", "total_steps", "adv_std_floor", "momentum"},
               wh);
    read(h, "group_size", hyper.group_size, wh);
    read(h, "clip_epsilon", hyper.clip_epsilon, wh);
    read(h, "learning_rate", hyper.learning_rate, wh);
    read(h, "prompts_per_batch", hyper.prompts_per_batch, wh);
    read(h, "updates_per_snapshot", hyper.updates_per_snapshot, wh);
    read(h, "total_steps", hyper.total_steps, wh);
    read(h, "adv_std_floor", hyper.adv_std_floor, wh);
    read(h, "momentum", hyper.momentum, wh);
  }
  if (j.contains("mode")) c.train.env.mode = parse_mode(j.at("mode"), w + ".mode");
  if (j.contains("reward")) {
    const auto& r = j.at("reward");
    check_keys(r, {"accuracy", "format"}, w + ".reward");
    read(r, "accuracy", c.train.env.weights.accuracy, w + ".reward");
    read(r, "format", c.train.env.weights.format, w + ".reward");
  }
  if (j.contains("init")) {
    const auto& i = j.at("init");
    check_keys(i, {"scheme", "stddev"}, w + ".init");
    std::string scheme = "zeros";
    read(i, "scheme", scheme, w + ".init");
    if (scheme == "zeros") c.train.init = InitScheme::zeros;
    else if (scheme == "gaussian") c.train.init = InitScheme::gaussian;
    else bad(w + ".init.scheme", "expected 'zeros' or 'gaussian'");
    read(i, "stddev", c.train.init_stddev, w + ".init");
  }
  read(j, "eval_every", c.eval_every, w);
  read(j, "checkpoint_every", c.checkpoint_every, w);
  read(j, "n_fillers", c.n_fillers, w);
  read(j, "distance_threshold_km", c.train.env.distance_threshold_km, w);
  if (j.contains("eval_decoding")) {
    const auto& d = j.at("eval_decoding");
    check_keys(d, {"decoding", "temperature"}, w + ".eval_decoding");
    std::string dec = "greedy";
    read(d, "decoding", dec, w + ".eval_decoding");
    if (dec == "greedy") c.eval_sampler.decoding = Decoding::greedy;
    else if (dec == "sample") c.eval_sampler.decoding = Decoding::sample;
    else bad(w + ".eval_decoding.decoding", "expected 'greedy' or 'sample'");
    read(d, "temperature", c.eval_sampler.temperature, w + ".eval_decoding");
  }
  return c;
}

void check_train_keys(const json& j, std::initializer_list<std::string_view> extra) {
  if (!j.is_object()) bad("config", "expected an object");
  for (const auto& item : j.items()) {
    const auto& k = item.key();
    const bool known = std::find(kTrainKeys.begin(), kTrainKeys.end(), k) != kTrainKeys.end() ||
                       std::find(extra.begin(), extra.end(), k) != extra.end();
    if (!known) bad("config", "unknown key '" + k + "'");
  }
}

void apply(TrainRunConfig& c, const RunOverrides& o) {
  if (o.seed) c.train.seed = *o.seed;
  if (o.out) c.out = *o.out;
  if (o.algorithm) c.train.hyper.algorithm = *o.algorithm;
  if (o.mode) {
    c.train.env.mode =
        *o.mode == PromptStyle::standard ? PromptMode::standard() : default_compressed_mode();
  }
}

fs::path parent_of(const fs::path& p) {
  auto parent = p.parent_path();
  return parent.empty() ? fs::path(".") : parent;
}

// ---------------------------------------------------------------------------
// Training core shared by train and compare.

struct TrainOutcome {
  TrainResult result;
  std::optional<EvalReport> initial;
  std::optional<EvalReport> final;
};

TrainOutcome train_into(const TrainRunConfig& c, const Dataset& train_set, const Dataset* eval_set,
                        const fs::path& out) {
  const TrainEnv env = make_env(c);
  TrainConfig tc = c.train;
  tc.env = env;

  make_dir(out);
  std::ofstream log(out / "train_log.jsonl", std::ios::binary | std::ios::trunc);
  if (!log) fail(ErrorKind::io, "cannot write " + (out / "train_log.jsonl").string());

  auto eval_params = [&](const PolicyParams& p) {
    return evaluate(p, *eval_set, env, c.eval_sampler, c.train.seed);
  };

  TrainHooks hooks;
  if (eval_set && c.eval_every > 0) {
    hooks.eval_every = c.eval_every;
    hooks.evaluate = [&](int, const PolicyParams& p) { return snapshot_of(eval_params(p).metrics); };
  }
  if (c.checkpoint_every > 0) {
    make_dir(out / "checkpoints");
    hooks.checkpoint_every = c.checkpoint_every;
    hooks.checkpoint = [&](int step, const PolicyParams& p) {
      char name[32];
      std::snprintf(name, sizeof name, "step_%06d.json", step);
      save_params(out / "checkpoints" / name, p, *env.vocab);
    };
  }
  hooks.on_step = [&](const StepLog& l) {
    log << to_json_line(l) << '\n';
    if (!log) fail(ErrorKind::io, "write failed for train_log.jsonl");
  };

  TrainOutcome o;
  if (eval_set) o.initial = eval_params(initial_params(tc));
  o.result = train(tc, train_set, hooks);
  log.flush();
  save_params(out / "checkpoint.json", o.result.params, *env.vocab);
  if (eval_set) {
    o.final = eval_params(o.result.params);
    write_file(out / "metrics.json", metrics_to_json(o.final->metrics) + "\n");
    write_file(out / "details.jsonl", details_to_jsonl(o.final->details));
    ojson ev;
    ev["initial"] = snapshot_json(snapshot_of(o.initial->metrics));
    ev["final"] = snapshot_json(snapshot_of(o.final->metrics));
    write_file(out / "eval.json", ev.dump(2) + "\n");
  }
  return o;
}

double mean(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

}  // namespace

// ---------------------------------------------------------------------------

std::string config_hash(std::string_view text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return hex64(h);
}

GenDataConfig parse_gen_data_config(std::string_view text) {
  const json j = parse_text(text);
  check_keys(j, {"seed", "out", "generator", "split"}, "config");
  GenDataConfig c;
  read(j, "seed", c.generator.seed, "config");
  std::string out = c.out.string();
  read(j, "out", out, "config");
  c.out = out;
  if (j.contains("generator")) {
    const auto& g = j.at("generator");
    const std::string w = "config.generator";
    check_keys(g, {"n_records", "fraud_base_rate", "label_noise", "start_epoch", "end_epoch",
                   "distance_threshold_km", "id_prefix", "signal_strengths"},
               w);
    read(g, "n_records", c.generator.n_records, w);
    read(g, "fraud_base_rate", c.generator.fraud_base_rate, w);
    read(g, "label_noise", c.generator.label_noise, w);
    read(g, "start_epoch", c.generator.start_epoch, w);
    read(g, "end_epoch", c.generator.end_epoch, w);
    read(g, "distance_threshold_km", c.generator.distance_threshold_km, w);
    read(g, "id_prefix", c.generator.id_prefix, w);
    if (g.contains("signal_strengths")) {
      const auto& ss = g.at("signal_strengths");
      if (!ss.is_object()) bad(w + ".signal_strengths", "expected an object");
      for (const auto& item : ss.items()) {
        const Signal s = parse_signal(item.key(), w + ".signal_strengths");
        const auto& pair = item.value();
        if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number() || !pair[1].is_number()) {
          bad(w + ".signal_strengths." + item.key(), "expected [given_fraud, given_legit]");
        }
        c.generator.signal_strengths[static_cast<std::size_t>(s)] = {pair[0].get<double>(),
                                                                      pair[1].get<double>()};
      }
    }
  }
  if (j.contains("split")) {
    const auto& s = j.at("split");
    const std::string w = "config.split";
    check_keys(s, {"cutoff", "legit_excess", "train_fraud_cap", "test_records"}, w);
    read(s, "cutoff", c.split.cutoff, w);
    read(s, "legit_excess", c.split.legit_excess, w);
    read(s, "train_fraud_cap", c.split.train_fraud_cap, w);
    read(s, "test_records", c.split.test_records, w);
  }
  c.generator.validate();
  require(std::isfinite(c.split.legit_excess) && c.split.legit_excess > 0.0,
          ErrorKind::invalid_config, "legit_excess must be positive");
  return c;
}

TrainRunConfig parse_train_config(std::string_view text, const fs::path& base_dir) {
  const json j = parse_text(text);
  check_train_keys(j, {});
  auto c = parse_train_object(j, base_dir);
  validate_run(c);
  return c;
}

CompareConfig parse_compare_config(std::string_view text, const fs::path& base_dir) {
  const json j = parse_text(text);
  check_train_keys(j, {"arms", "seeds", "tail_window"});
  CompareConfig c;
  c.base = parse_train_object(j, base_dir);
  validate_run(c.base);
  require(!c.base.eval_data.empty(), ErrorKind::invalid_config, "compare needs eval_data");

  if (!j.contains("arms") || !j.at("arms").is_array() || j.at("arms").empty()) {
    bad("config.arms", "expected a non-empty array");
  }
  for (const auto& a : j.at("arms")) {
    const std::string w = "config.arms[" + std::to_string(c.arms.size()) + "]";
    check_keys(a, {"name", "algorithm", "mode"}, w);
    CompareArm arm;
    arm.algorithm = a.contains("algorithm") ? parse_algorithm(a.at("algorithm"), w + ".algorithm")
                                            : c.base.train.hyper.algorithm;
    arm.mode = a.contains("mode") ? parse_mode(a.at("mode"), w + ".mode") : c.base.train.env.mode;
    arm.name = std::string(to_string(arm.algorithm)) + "-" + std::string(to_string(arm.mode.style));
    read(a, "name", arm.name, w);
    for (const auto& other : c.arms) {
      if (other.name == arm.name) bad(w + ".name", "duplicate arm '" + arm.name + "'");
    }
    c.arms.push_back(std::move(arm));
  }

  if (j.contains("seeds")) {
    const auto& s = j.at("seeds");
    if (!s.is_array() || s.empty()) bad("config.seeds", "expected a non-empty array");
    for (const auto& v : s) {
      if (!v.is_number_unsigned()) bad("config.seeds", "expected non-negative integers");
      c.seeds.push_back(v.get<std::uint64_t>());
    }
  } else {
    c.seeds.push_back(c.base.train.seed);
  }
  read(j, "tail_window", c.tail_window, "config");
  require(c.tail_window >= 0, ErrorKind::invalid_config, "tail_window must be non-negative");
  return c;
}

std::string to_json(const GenDataConfig& c) {
  ojson j;
  j["seed"] = c.generator.seed;
  j["out"] = c.out.string();
  ojson g;
  g["n_records"] = c.generator.n_records;
  g["fraud_base_rate"] = c.generator.fraud_base_rate;
  g["label_noise"] = c.generator.label_noise;
  g["start_epoch"] = c.generator.start_epoch;
  g["end_epoch"] = c.generator.end_epoch;
  g["distance_threshold_km"] = c.generator.distance_threshold_km;
  g["id_prefix"] = c.generator.id_prefix;
  ojson ss;
  for (const auto& info : signal_catalogue()) {
    const auto& s = c.generator.signal_strengths[static_cast<std::size_t>(info.id)];
    ss[std::string(info.name)] = ojson::array({s.given_fraud, s.given_legit});
  }
  g["signal_strengths"] = ss;
  j["generator"] = g;
  j["split"] = {{"cutoff", c.split.cutoff},
                {"legit_excess", c.split.legit_excess},
                {"train_fraud_cap", c.split.train_fraud_cap},
                {"test_records", c.split.test_records}};
  return j.dump(2);
}

std::string to_json(const TrainRunConfig& c) {
  const auto& h = c.train.hyper;
  ojson j;
  j["seed"] = c.train.seed;
  j["out"] = c.out.string();
  j["train_data"] = c.train_data.string();
  j["eval_data"] = c.eval_data.string();
  j["algorithm"] = to_string(h.algorithm);
  j["hyper"] = {{"group_size", h.group_size},
                {"clip_epsilon", h.clip_epsilon},
                {"learning_rate", h.learning_rate},
                {"prompts_per_batch", h.prompts_per_batch},
                {"updates_per_snapshot", h.updates_per_snapshot},
                {"total_steps", h.total_steps},
                {"adv_std_floor", h.adv_std_floor},
                {"momentum", h.momentum}};
  j["mode"] = mode_json(c.train.env.mode);
  j["reward"] = {{"accuracy", c.train.env.weights.accuracy},
                 {"format", c.train.env.weights.format}};
  j["init"] = {{"scheme", c.train.init == InitScheme::zeros ? "zeros" : "gaussian"},
               {"stddev", c.train.init_stddev}};
  j["eval_every"] = c.eval_every;
  j["checkpoint_every"] = c.checkpoint_every;
  j["n_fillers"] = c.n_fillers;
  j["distance_threshold_km"] = c.train.env.distance_threshold_km;
  j["eval_decoding"] = {
      {"decoding", c.eval_sampler.decoding == Decoding::greedy ? "greedy" : "sample"},
      {"temperature", c.eval_sampler.temperature}};
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// Commands.

fs::path run_gen_data(const GenDataConfig& c) {
  c.generator.validate();
  const Dataset pool = generate_dataset(c.generator);
  const auto split = build_train_test(pool, c.split, c.generator.seed);

  make_dir(c.out);
  write_jsonl(split.train, c.out / "train.jsonl");
  write_jsonl(split.test, c.out / "test.jsonl");

  const std::string text = to_json(c);
  ojson m = manifest_base("gen-data", c.generator.seed, text);
  m["config"] = ojson::parse(text);
  m["pool"] = counts_json(pool);
  m["train"] = counts_json(split.train);
  m["test"] = counts_json(split.test);
  m["artifacts"] = {"train.jsonl", "test.jsonl"};
  write_file(c.out / "manifest.json", m.dump(2) + "\n");
  return c.out;
}

fs::path cmd_gen_data(const fs::path& config_path, const RunOverrides& o) {
  auto c = parse_gen_data_config(read_file(config_path));
  if (o.seed) c.generator.seed = *o.seed;
  if (o.out) c.out = *o.out;
  require(!o.algorithm && !o.mode, ErrorKind::invalid_config,
          "gen-data takes no --algorithm or --mode");
  return run_gen_data(c);
}

fs::path run_train(const TrainRunConfig& c) {
  validate_run(c);
  const Dataset train_set = read_jsonl(c.train_data);
  std::optional<Dataset> eval_set;
  if (!c.eval_data.empty()) eval_set = read_jsonl(c.eval_data);

  const auto outcome = train_into(c, train_set, eval_set ? &*eval_set : nullptr, c.out);

  const std::string text = to_json(c);
  ojson m = manifest_base("train", c.train.seed, text);
  m["config"] = ojson::parse(text);
  m["vocab_hash"] = hex64(make_env(c).vocab->hash());
  m["train"] = counts_json(train_set);
  if (eval_set) m["eval"] = counts_json(*eval_set);
  m["steps"] = outcome.result.log.size();
  ojson artifacts = {"checkpoint.json", "train_log.jsonl"};
  if (eval_set) {
    artifacts.push_back("metrics.json");
    artifacts.push_back("details.jsonl");
    artifacts.push_back("eval.json");
  }
  m["artifacts"] = artifacts;
  write_file(c.out / "manifest.json", m.dump(2) + "\n");
  return c.out;
}

fs::path cmd_train(const fs::path& config_path, const RunOverrides& o) {
  auto c = parse_train_config(read_file(config_path), parent_of(config_path));
  apply(c, o);
  return run_train(c);
}

fs::path cmd_eval(const EvalArgs& a) {
  a.mode.validate();
  require(a.sampler.temperature > 0.0, ErrorKind::invalid_config, "temperature must be positive");
  TrainEnv env;
  env.vocab = Vocab::fraud(a.n_fillers);
  env.mode = a.mode;
  env.distance_threshold_km = a.distance_threshold_km;
  const PolicyParams params = load_params(a.checkpoint, *env.vocab);
  require(params.weights.rows() == env.vocab->size() && params.weights.cols() == env.feature_dim(),
          ErrorKind::shape_mismatch, "checkpoint shape does not match the featurizer");
  const Dataset test = read_jsonl(a.data);
  const auto report = evaluate(params, test, env, a.sampler, a.seed);

  make_dir(a.out);
  write_file(a.out / "metrics.json", metrics_to_json(report.metrics) + "\n");
  write_file(a.out / "details.jsonl", details_to_jsonl(report.details));
  write_file(a.out / "metrics.csv", metrics_csv_header() + metrics_csv_row(a.model_name, report.metrics));

  ojson cfg;
  cfg["checkpoint"] = a.checkpoint.string();
  cfg["data"] = a.data.string();
  cfg["mode"] = mode_json(a.mode);
  cfg["n_fillers"] = a.n_fillers;
  cfg["distance_threshold_km"] = a.distance_threshold_km;
  cfg["decoding"] = a.sampler.decoding == Decoding::greedy ? "greedy" : "sample";
  cfg["temperature"] = a.sampler.temperature;
  const std::string text = cfg.dump(2);
  ojson m = manifest_base("eval", a.seed, text);
  m["config"] = cfg;
  m["eval"] = counts_json(test);
  m["artifacts"] = {"metrics.json", "details.jsonl", "metrics.csv"};
  write_file(a.out / "manifest.json", m.dump(2) + "\n");
  return a.out;
}

fs::path run_compare(const CompareConfig& c) {
  require(!c.arms.empty() && !c.seeds.empty(), ErrorKind::invalid_config,
          "compare needs at least one arm and one seed");
  validate_run(c.base);
  const Dataset train_set = read_jsonl(c.base.train_data);
  const Dataset eval_set = read_jsonl(c.base.eval_data);
  make_dir(c.base.out);

  const int steps = c.base.train.hyper.total_steps;
  const int tail = c.tail_window > 0 ? c.tail_window : std::max(1, steps / 10);

  struct ArmStats {
    std::vector<double> f1, initial_length, final_length;
  };
  std::map<std::string, ArmStats> stats;

  std::string curves = "arm,seed,step,accuracy_reward,mean_reward,mean_length\n";
  std::string finals =
      "arm,algorithm,mode,seed,accuracy,tpr,tnr,precision,fpr,f1,avg_tokens,"
      "format_failure_rate,faithfulness_pass_rate,initial_length,final_length\n";
  char buf[512];

  for (const auto& arm : c.arms) {
    for (std::uint64_t seed : c.seeds) {
      TrainRunConfig rc = c.base;
      rc.train.hyper.algorithm = arm.algorithm;
      rc.train.env.mode = arm.mode;
      rc.train.seed = seed;
      rc.out = c.base.out / "runs" / arm.name / ("seed_" + std::to_string(seed));
      const auto o = train_into(rc, train_set, &eval_set, rc.out);
      write_file(rc.out / "config.json", to_json(rc) + "\n");

      const auto& log = o.result.log;
      for (const auto& l : log) {
        std::snprintf(buf, sizeof buf, "%s,%llu,%d,%.6f,%.6f,%.4f\n", arm.name.c_str(),
                      static_cast<unsigned long long>(seed), l.step,
                      l.accuracy_hit_rate * rc.train.env.weights.accuracy, l.mean_reward,
                      l.mean_length);
        curves += buf;
      }
      double init_len = 0.0;
      double final_len = 0.0;
      if (!log.empty()) {
        init_len = log.front().mean_length;
        const auto from = log.size() - std::min<std::size_t>(log.size(), static_cast<std::size_t>(tail));
        double s = 0.0;
        for (std::size_t i = from; i < log.size(); ++i) s += log[i].mean_length;
        final_len = s / static_cast<double>(log.size() - from);
      }
      const auto& m = o.final->metrics;
      std::snprintf(buf, sizeof buf, "%s,%s,%s,%llu,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.4f,%.6f,%.6f,%.4f,%.4f\n",
                    arm.name.c_str(), std::string(to_string(arm.algorithm)).c_str(),
                    std::string(to_string(arm.mode.style)).c_str(),
                    static_cast<unsigned long long>(seed), m.accuracy, m.recall_tpr,
                    m.specificity_tnr, m.precision, m.fpr, m.f1, m.avg_tokens,
                    m.format_failure_rate, m.faithfulness_pass_rate, init_len, final_len);
      finals += buf;
      auto& st = stats[arm.name];
      st.f1.push_back(m.f1);
      st.initial_length.push_back(init_len);
      st.final_length.push_back(final_len);
    }
  }
  write_file(c.base.out / "curves.csv", curves);
  write_file(c.base.out / "final_metrics.csv", finals);

  ojson report;
  report["seeds"] = c.seeds;
  report["total_steps"] = steps;
  report["tail_window"] = tail;
  ojson arms = ojson::array();
  for (const auto& arm : c.arms) {
    const auto& st = stats.at(arm.name);
    int shrunk = 0;
    for (std::size_t i = 0; i < st.f1.size(); ++i) shrunk += st.final_length[i] < st.initial_length[i];
    ojson a;
    a["name"] = arm.name;
    a["algorithm"] = to_string(arm.algorithm);
    a["mode"] = mode_json(arm.mode);
    a["final_f1"] = st.f1;
    a["mean_final_f1"] = mean(st.f1);
    a["initial_length"] = st.initial_length;
    a["final_length"] = st.final_length;
    a["mean_initial_length"] = mean(st.initial_length);
    a["mean_final_length"] = mean(st.final_length);
    a["seeds_length_decreased"] = shrunk;
    arms.push_back(a);
  }
  report["arms"] = arms;

  ojson by_mode = ojson::array();
  ojson by_algorithm = ojson::array();
  for (const auto& s : c.arms) {
    for (const auto& t : c.arms) {
      const auto& ss = stats.at(s.name);
      const auto& ts = stats.at(t.name);
      if (s.algorithm == t.algorithm && s.mode.style == PromptStyle::standard &&
          t.mode.style == PromptStyle::compressed) {
        int wins = 0;
        for (std::size_t i = 0; i < ss.f1.size(); ++i) wins += ss.f1[i] > ts.f1[i];
        ojson e;
        e["algorithm"] = to_string(s.algorithm);
        e["standard_arm"] = s.name;
        e["compressed_arm"] = t.name;
        e["standard_mean_f1"] = mean(ss.f1);
        e["compressed_mean_f1"] = mean(ts.f1);
        e["standard_gt_compressed"] = mean(ss.f1) > mean(ts.f1);
        e["paired_seeds_standard_gt"] = wins;
        e["paired_seeds"] = ss.f1.size();
        by_mode.push_back(e);
      }
      if (s.algorithm == Algorithm::grpo && t.algorithm == Algorithm::gspo &&
          same_mode(s.mode, t.mode)) {
        ojson e;
        e["mode"] = to_string(s.mode.style);
        e["grpo_arm"] = s.name;
        e["gspo_arm"] = t.name;
        e["grpo_mean_final_length"] = mean(ss.final_length);
        e["gspo_mean_final_length"] = mean(ts.final_length);
        e["grpo_length_ge_gspo"] = mean(ss.final_length) >= mean(ts.final_length);
        by_algorithm.push_back(e);
      }
    }
  }
  report["mode_comparisons"] = by_mode;
  report["algorithm_comparisons"] = by_algorithm;
  write_file(c.base.out / "report.json", report.dump(2) + "\n");

  const std::string text = to_json(c.base);
  ojson m = manifest_base("compare", c.seeds.front(), text);
  m["config"] = ojson::parse(text);
  ojson arm_list = ojson::array();
  for (const auto& arm : c.arms) {
    arm_list.push_back({{"name", arm.name},
                        {"algorithm", to_string(arm.algorithm)},
                        {"mode", mode_json(arm.mode)}});
  }
  m["arms"] = arm_list;
  m["seeds"] = c.seeds;
  m["artifacts"] = {"curves.csv", "final_metrics.csv", "report.json", "runs/"};
  write_file(c.base.out / "manifest.json", m.dump(2) + "\n");
  return c.base.out;
}

fs::path cmd_compare(const fs::path& config_path, const RunOverrides& o) {
  auto c = parse_compare_config(read_file(config_path), parent_of(config_path));
  if (o.seed) c.seeds = {*o.seed};
  if (o.out) c.base.out = *o.out;
  std::erase_if(c.arms, [&](const CompareArm& a) {
    return (o.algorithm && a.algorithm != *o.algorithm) || (o.mode && a.mode.style != *o.mode);
  });
  require(!c.arms.empty(), ErrorKind::invalid_config, "no arm matches the --algorithm/--mode filter");
  return run_compare(c);
}

}  // namespace gspo_lab
