// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "gspo_lab/eval.hpp"
#include "gspo_lab/rl.hpp"
#include "gspo_lab/runner.hpp"
#include "gspo_lab/synth.hpp"
#include "support/fixtures.hpp"
#include "support/tiny_grammar.hpp"

using namespace gspo_lab;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;
std::map<int, std::string> lines;

std::string fmt(const char* f, auto... args) {
  char buf[1024];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void verdict(int id, const char* name, bool pass, const std::string& detail) {
  lines[id] = fmt("%s  %2d  %-28s %s", pass ? "PASS" : "FAIL", id, name, detail.c_str());
  std::fprintf(stderr, "[%d done]\n", id);
  failures += pass ? 0 : 1;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double max_abs(const Matrix& m) {
  double w = 0.0;
  for (double x : m.flat()) w = std::max(w, std::abs(x));
  return w;
}

double max_diff(const Matrix& a, const Matrix& b) {
  double w = 0.0;
  for (std::size_t i = 0; i < a.flat().size(); ++i) w = std::max(w, std::abs(a.flat()[i] - b.flat()[i]));
  return w;
}

bool near_clip_edge(const std::vector<GroupRollout>& groups, const PolicyParams& p, double eps) {
  auto near = [&](double r) { return std::abs(r - 1 - eps) < 1e-3 || std::abs(r - 1 + eps) < 1e-3; };
  for (const auto& g : groups) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto lp = sequence_logprob(p, *g.context, g.completions[i].token_ids);
      if (near(sequence_importance_weight(lp.total, g.old_totals[i], g.completions[i].length()))) return true;
      for (std::size_t t = 0; t < lp.per_token.size(); ++t) {
        if (near(std::exp(lp.per_token[t] - g.old_logprobs[i][t]))) return true;
      }
    }
  }
  return false;
}

// ---------------------------------------------------------------------------

// Relative-error denominator floor. Entries whose analytic gradient is exactly
// zero see ~1e-13 of round-off in the central difference.
constexpr double kRelFloor = 1e-6;

void gradient_correctness() {
  const auto t0 = Clock::now();
  int counted[2] = {0, 0};
  double worst[2] = {0.0, 0.0};
  for (std::uint64_t seed = 0; counted[0] < 120 && seed < 400; ++seed) {
    const auto old = test::random_params(5, test::TinyGrammar::kF, 0.6, seed);
    const auto now = test::jitter(old, 0.15, seed + 5000);
    std::vector<GroupRollout> groups;
    for (std::uint64_t g = 0; g < 3; ++g) {
      const auto s = seed * 11 + g;
      groups.push_back(test::make_group(std::make_shared<test::TinyGrammar>(s), old, 6, s));
    }
    if (near_clip_edge(groups, now, 0.2)) continue;
    const auto entries = sample_entries(now.weights.size(), now.weights.size(), 0);
    int k = 0;
    for (auto alg : {Algorithm::grpo, Algorithm::gspo}) {
      const auto r = surrogate_objective(alg, groups, now, 0.2);
      const double err = finite_diff_max_rel_error(
          [&](const PolicyParams& q) { return surrogate_objective(alg, groups, q, 0.2).value; }, now,
          r.gradient, 1e-5, entries, kRelFloor);
      worst[k] = std::max(worst[k], err);
      ++counted[k++];
    }
  }
  const double secs = seconds_since(t0);
  verdict(1, "gradient correctness",
          counted[0] >= 100 && counted[1] >= 100 && worst[0] < 1e-5 && worst[1] < 1e-5 && secs < 60,
          fmt("instances %d/%d, max rel err grpo %.2e gspo %.2e (floor %.0e), %.1fs", counted[0],
              counted[1], worst[0], worst[1], kRelFloor, secs));
}

void advantage_contract() {
  Rng rng(2024);
  double worst_sum = 0.0, worst_std = 0.0;
  bool zeros_exact = true;
  int normalized = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t g = 2 + rng() % 15;
    std::vector<double> r(g);
    if (trial % 10 == 0) {
      std::fill(r.begin(), r.end(), uniform_real(rng, -5.0, 5.0));
      const auto a = group_advantages(r, 1e-8);
      zeros_exact &= std::all_of(a.begin(), a.end(), [](double x) { return x == 0.0; });
      continue;
    }
    for (auto& x : r) x = uniform_real(rng, -10.0, 10.0);
    const auto a = group_advantages(r, 1e-8);
    const double sum = std::accumulate(a.begin(), a.end(), 0.0);
    double ss = 0.0;
    for (double x : a) ss += x * x;
    worst_sum = std::max(worst_sum, std::abs(sum));
    worst_std = std::max(worst_std, std::abs(std::sqrt(ss / static_cast<double>(g)) - 1.0));
    ++normalized;
  }
  verdict(2, "advantage contract", worst_sum < 1e-12 && worst_std < 1e-9 && zeros_exact,
          fmt("%d groups, max |sum A| %.2e, max |std-1| %.2e, constant groups zero: %s", normalized,
              worst_sum, worst_std, zeros_exact ? "yes" : "no"));
}

void baseline_unbiasedness() {
  const auto t0 = Clock::now();
  double worst = 0.0, mass_err = 0.0;
  Rng rng(77);
  for (std::uint64_t k = 0; k < 10; ++k) {
    const double b = uniform_real(rng, -10.0, 10.0);
    const test::TinyGrammar ctx(k, 3);
    const auto p = test::random_params(test::TinyGrammar::kV, test::TinyGrammar::kF, 1.0, 100 + k);
    Matrix acc(p.weights.rows(), p.weights.cols());
    double mass = 0.0;
    enumerate_completions(ctx, [&](std::span<const TokenId> y) {
      const double prob = std::exp(sequence_logprob(p, ctx, y).total);
      mass += prob;
      const auto g = grad_sequence_logprob(p, ctx, y);
      for (std::size_t i = 0; i < acc.flat().size(); ++i) acc.flat()[i] += prob * b * g.flat()[i];
    });
    worst = std::max(worst, max_abs(acc));
    mass_err = std::max(mass_err, std::abs(mass - 1.0));
  }
  const double secs = seconds_since(t0);
  verdict(3, "baseline unbiasedness", worst < 1e-8 && mass_err < 1e-12 && secs < 30,
          fmt("10 baselines, max |E[b grad log pi]| %.2e, |sum pi - 1| %.2e, %.2fs", worst, mass_err,
              secs));
}

void length_one_equivalence() {
  double worst_value = 0.0, worst_grad = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto old = test::random_params(5, test::TinyGrammar::kF, 0.8, seed);
    const auto now = test::jitter(old, 0.3, seed + 900);
    std::vector<GroupRollout> groups;
    groups.push_back(test::make_group(std::make_shared<test::OneShotGrammar>(seed), old, 6, seed));
    const auto a = grpo_objective(groups, now, 0.2);
    const auto b = gspo_objective(groups, now, 0.2);
    worst_value = std::max(worst_value, std::abs(a.value - b.value));
    worst_grad = std::max(worst_grad, max_diff(a.gradient, b.gradient));
  }
  verdict(4, "GRPO = GSPO at length 1", worst_value < 1e-10 && worst_grad < 1e-10,
          fmt("100 groups, max |dJ| %.2e, max |d grad| %.2e", worst_value, worst_grad));
}

void metric_reconstruction() {
  ConfusionCounts c;
  c.tp = 204;
  c.fp = 451;
  c.fn = 276;
  c.tn = 4069;
  const auto m = metrics(c);
  const double got[] = {m.accuracy, m.recall_tpr, m.specificity_tnr, m.precision, m.fpr, m.f1};
  const double want[] = {0.8545, 0.4250, 0.9002, 0.3119, 0.0998, 0.3598};
  double worst = 0.0;
  for (int i = 0; i < 6; ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
  verdict(5, "metric reconstruction", worst <= 0.002,
          fmt("acc %.4f tpr %.4f tnr %.4f prec %.4f fpr %.4f f1 %.4f, max dev %.4f", got[0], got[1],
              got[2], got[3], got[4], got[5], worst));
}

// ---------------------------------------------------------------------------
// Training experiments.

struct DeskData {
  GenConfig gen;
  Dataset train;
  Dataset test;
};

DeskData desk_data(std::uint64_t seed) {
  DeskData d;
  d.gen = desk_scale_generator();
  d.gen.seed = seed;
  const auto split = build_train_test(generate_dataset(d.gen), desk_scale_split(), seed);
  d.train = split.train;
  d.test = split.test;
  return d;
}

// Best F1 over thresholds of the true posterior: the noise-limited ceiling.
double oracle_max_f1(const DeskData& d) {
  std::vector<std::pair<double, bool>> scored;
  std::size_t positives = 0;
  for (const auto& r : d.test.records) {
    const bool fraud = r.label == Label::fraudulent;
    positives += fraud;
    scored.emplace_back(fraud_posterior(r.record, d.gen), fraud);
  }
  std::sort(scored.begin(), scored.end(), [](auto& a, auto& b) { return a.first > b.first; });
  double best = 0.0;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    tp += scored[i].second;
    if (i + 1 < scored.size() && scored[i + 1].first == scored[i].first) continue;
    best = std::max(best, 2.0 * static_cast<double>(tp) / static_cast<double>(i + 1 + positives));
  }
  return best;
}

struct RunSummary {
  double initial_f1 = 0.0;
  double final_f1 = 0.0;
  double initial_length = 0.0;
  double final_length = 0.0;
};

RunSummary run(const DeskData& d, Algorithm alg, const PromptMode& mode, std::size_t fillers,
               int steps, int updates_per_snapshot, std::uint64_t seed) {
  TrainConfig tc;
  tc.hyper.algorithm = alg;
  tc.hyper.total_steps = steps;
  tc.hyper.updates_per_snapshot = updates_per_snapshot;
  tc.env.vocab = Vocab::fraud(fillers);
  tc.env.mode = mode;
  tc.seed = seed;
  RunSummary s;
  // Random-policy baseline: sampling from the initial (uniform) policy.
  s.initial_f1 =
      evaluate(initial_params(tc), d.test, tc.env, {Decoding::sample, 1.0}, seed).metrics.f1;
  const auto result = train(tc, d.train);
  s.final_f1 = evaluate(result.params, d.test, tc.env).metrics.f1;
  const auto& log = result.log;
  const std::size_t tail = std::max<std::size_t>(1, log.size() / 10);
  s.initial_length = log.front().mean_length;
  for (std::size_t i = log.size() - tail; i < log.size(); ++i) s.final_length += log[i].mean_length;
  s.final_length /= static_cast<double>(tail);
  return s;
}

constexpr std::uint64_t kSeeds[] = {1, 2, 3, 4, 5};

void learning_and_exploration() {
  const auto t0 = Clock::now();
  int efficacy_ok = 0, collapse_ok = 0;
  std::string eff_detail, abl_detail;
  double slowest = 0.0;
  for (auto seed : kSeeds) {
    const auto d = desk_data(seed);
    const double oracle = oracle_max_f1(d);
    const auto t_run = Clock::now();
    const auto std_run = run(d, Algorithm::gspo, PromptMode::standard(), 4, 1500, 1, seed);
    slowest = std::max(slowest, seconds_since(t_run));
    const bool ok = std_run.final_f1 > std_run.initial_f1 && std_run.final_f1 >= 0.8 * oracle;
    efficacy_ok += ok;
    eff_detail += fmt(" s%llu:%.3f->%.3f/%.3f", static_cast<unsigned long long>(seed),
                      std_run.initial_f1, std_run.final_f1, oracle);

    const auto cmp_run = run(d, Algorithm::gspo, default_compressed_mode(), 4, 1500, 1, seed);
    collapse_ok += cmp_run.final_f1 < std_run.final_f1;
    abl_detail += fmt(" s%llu:%.3f<%.3f", static_cast<unsigned long long>(seed), cmp_run.final_f1,
                      std_run.final_f1);
  }
  verdict(6, "learning efficacy", efficacy_ok >= 4 && slowest < 600,
          fmt("%d/5 seeds reach 0.8x oracle (random->final/oracle)%s, slowest run %.1fs", efficacy_ok,
              eff_detail.c_str(), slowest));
  verdict(8, "exploration ablation", collapse_ok == 5,
          fmt("%d/5 compressed < standard%s", collapse_ok, abl_detail.c_str()));
  std::fprintf(stderr, "criteria 6 and 8: %.1fs\n", seconds_since(t0));
}

void length_dynamics() {
  const auto t0 = Clock::now();
  double grpo_len = 0.0, gspo_len = 0.0;
  int shrunk = 0;
  std::string detail;
  for (auto seed : kSeeds) {
    const auto d = desk_data(seed);
    const auto g = run(d, Algorithm::grpo, PromptMode::standard(), 30, 2000, 8, seed);
    const auto s = run(d, Algorithm::gspo, PromptMode::standard(), 30, 2000, 8, seed);
    grpo_len += g.final_length / 5.0;
    gspo_len += s.final_length / 5.0;
    shrunk += s.final_length < s.initial_length;
    detail += fmt(" s%llu:%.1f/%.1f(%.1f)", static_cast<unsigned long long>(seed), g.final_length,
                  s.final_length, s.initial_length);
  }
  verdict(7, "length dynamics", grpo_len >= gspo_len && shrunk >= 4,
          fmt("mean length grpo %.2f >= gspo %.2f, gspo shrank %d/5 (grpo/gspo(init))%s, %.1fs",
              grpo_len, gspo_len, shrunk, detail.c_str(), seconds_since(t0)));
}

// ---------------------------------------------------------------------------

Completion completion_of(const Vocab& vocab, std::vector<TokenId> ids) {
  Completion c;
  c.token_ids = std::move(ids);
  c.token_ids.push_back(vocab.eos());
  const FraudContext ctx(std::shared_ptr<const Vocab>(&vocab, [](const Vocab*) {}),
                         test::clean_record(), PromptMode::standard());
  c.text = ctx.detokenize(c.token_ids);
  return c;
}

void faithfulness_oracle() {
  GenConfig cfg;
  cfg.n_records = 10000;
  cfg.seed = 9;
  const auto g = generate_with_trace(cfg);
  const auto vocab = Vocab::fraud(4);
  std::size_t disagreements = 0, checks = 0;
  for (std::size_t i = 0; i < g.dataset.size(); ++i) {
    const auto& rec = g.dataset.records[i].record;
    for (const auto& info : signal_catalogue()) {
      const bool sampled = contains(g.trace[i].sampled_signals, info.id);
      const auto c = completion_of(
          *vocab, {Vocab::kReasonOpen, vocab->mention(info.id, info.polarity), Vocab::kReasonClose});
      disagreements += faithfulness_check(c, *vocab, rec).pass != sampled;
      ++checks;
    }
  }

  // Stub: one inactive signal per completion, with the right polarity and verdict.
  std::size_t skipped = 0;
  Dataset cited;
  for (const auto& r : g.dataset.records) {
    if (active_signals(r.record) == (SignalSet{1} << kSignalCount) - 1) {
      ++skipped;
      continue;
    }
    cited.records.push_back(r);
  }
  const Decoder stub = [&](const TransactionRecord& r) {
    const auto active = active_signals(r);
    std::vector<TokenId> ids{Vocab::kReasonOpen};
    for (const auto& info : signal_catalogue()) {
      if (!contains(active, info.id)) {
        ids.push_back(vocab->mention(info.id, info.polarity));
        break;
      }
    }
    ids.insert(ids.end(), {Vocab::kReasonClose, Vocab::kRiskOpen, Vocab::kFraudulent, Vocab::kRiskClose});
    return completion_of(*vocab, ids);
  };
  const auto report = evaluate(stub, cited, *vocab);
  verdict(9, "faithfulness oracle",
          disagreements == 0 && report.metrics.faithfulness_pass_rate == 0.0,
          fmt("%zu disagreements in %zu checks over %zu records; stub pass rate %.3f (%zu records)",
              disagreements, checks, g.dataset.size(), report.metrics.faithfulness_pass_rate,
              cited.size()));
}

void determinism() {
  test::ScratchDir dir("acceptance_det");
  test::spit(dir / "gen.json",
             R"({"seed": 5, "generator": {"n_records": 4000}, "split": {"train_fraud_cap": 150, "test_records": 400}})");
  cmd_gen_data(dir / "gen.json", {.out = dir / "data"});
  test::spit(dir / "t.json", R"({"seed": 6, "train_data": "data/train.jsonl", "eval_data": "data/test.jsonl",
                                 "hyper": {"total_steps": 200}, "eval_every": 50})");
  cmd_train(dir / "t.json", {.out = dir / "a"});
  cmd_train(dir / "t.json", {.out = dir / "a2"});
  const auto a = test::slurp(dir / "a" / "train_log.jsonl");
  const auto b = test::slurp(dir / "a2" / "train_log.jsonl");
  verdict(10, "determinism", !a.empty() && a == b,
          fmt("train_log %zu bytes, identical: %s", a.size(), a == b ? "yes" : "no"));
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  gradient_correctness();
  advantage_contract();
  baseline_unbiasedness();
  length_one_equivalence();
  metric_reconstruction();
  learning_and_exploration();
  length_dynamics();
  faithfulness_oracle();
  determinism();
  for (const auto& [id, line] : lines) std::printf("%s\n", line.c_str());
  std::printf("%s  %d failing, %.1fs total\n", failures ? "FAIL" : "PASS", failures, seconds_since(t0));
  return failures ? 1 : 0;
}
