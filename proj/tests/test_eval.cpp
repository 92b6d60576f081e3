#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <random>
#include <type_traits>

#include "gspo_lab/errors.hpp"
#include "gspo_lab/eval.hpp"
#include "gspo_lab/synth.hpp"
#include "support/fixtures.hpp"

using namespace gspo_lab;

namespace {

Completion completion_of(const Vocab& vocab, std::vector<TokenId> ids) {
  Completion c;
  c.token_ids = std::move(ids);
  c.token_ids.push_back(vocab.eos());
  // Detokenization needs a context; any record will do.
  const FraudContext ctx(std::shared_ptr<const Vocab>(&vocab, [](const Vocab*) {}),
                         test::clean_record(), PromptMode::standard());
  c.text = ctx.detokenize(c.token_ids);
  return c;
}

// P(a completion closes a risk block holding `fraudulent`) under the uniform
// masked policy, from the grammar's phase recurrences.
double uniform_fraud_verdict_probability(int budget, int mentions, int fillers) {
  const double k_out = 3.0 + fillers;       // <reason>, <risk>, fillers, EOS
  const double k_reason = mentions + fillers + 1.0;
  std::vector<double> out(budget + 2, 0.0), reason(budget + 2, 0.0), risk(budget + 2, 0.0),
      after_fraud(budget + 2, 0.0);
  for (int e = budget - 1; e >= 0; --e) {
    after_fraud[e] = 1.0;  // </risk> fits
    risk[e] = 0.5 * after_fraud[e + 1];
    reason[e] = ((mentions + fillers) * reason[e + 1] + out[e + 1]) / k_reason;
    out[e] = (reason[e + 1] + risk[e + 1] + fillers * out[e + 1]) / k_out;
  }
  return out[0];
}

}  // namespace

static_assert(!std::is_invocable_v<Decoder, const LabeledRecord&>,
              "decoders must not see labels");

TEST_CASE("metrics reproduce the published row from reconstructed counts") {
  ConfusionCounts c;
  c.tp = 204;
  c.fp = 451;
  c.fn = 276;
  c.tn = 4069;
  const auto m = metrics(c);
  CHECK(std::abs(m.accuracy - 0.8545) <= 0.002);
  CHECK(std::abs(m.recall_tpr - 0.4250) <= 0.002);
  CHECK(std::abs(m.specificity_tnr - 0.9002) <= 0.002);
  CHECK(std::abs(m.precision - 0.3119) <= 0.002);
  CHECK(std::abs(m.fpr - 0.0998) <= 0.002);
  CHECK(std::abs(m.f1 - 0.3598) <= 0.002);
  CHECK(m.n == 5000);
}

TEST_CASE("zero denominators report 0") {
  ConfusionCounts c;
  c.tn = 10;
  const auto m = metrics(c);
  CHECK(m.precision == 0.0);
  CHECK(m.recall_tpr == 0.0);
  CHECK(m.f1 == 0.0);
  CHECK(m.accuracy == 1.0);
  ConfusionCounts only_pos;
  only_pos.fn = 3;
  CHECK(metrics(only_pos).specificity_tnr == 0.0);
  CHECK(metrics(only_pos).fpr == 0.0);
  CHECK_THROWS_AS(metrics(ConfusionCounts{}), Error);
}

TEST_CASE("metric identities on fuzzed counts") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 5000; ++trial) {
    ConfusionCounts c;
    c.tp = rng() % 500;
    c.fp = rng() % 500;
    c.tn = 1 + rng() % 500;
    c.fn = 1 + rng() % 500;
    const auto m = metrics(c);
    REQUIRE(std::abs(m.fpr + m.specificity_tnr - 1.0) < 1e-12);
    REQUIRE(m.accuracy == doctest::Approx(double(c.tp + c.tn) / c.n()).epsilon(1e-14));
    if (m.precision + m.recall_tpr > 0) {
      REQUIRE(std::abs(m.f1 - 2 * m.precision * m.recall_tpr / (m.precision + m.recall_tpr)) < 1e-12);
    }
  }
  ConfusionCounts sym;
  sym.tp = sym.tn = 37;
  sym.fp = sym.fn = 11;
  CHECK(metrics(sym).accuracy == doctest::Approx(74.0 / 96.0));
}

TEST_CASE("confusion matches a direct count") {
  SUBCASE("perfect predictions") {
    std::vector<std::optional<Label>> pred;
    std::vector<Label> labels;
    for (int i = 0; i < 5000; ++i) {
      labels.push_back(i < 480 ? Label::fraudulent : Label::legitimate);
      pred.push_back(labels.back());
    }
    const auto c = confusion(pred, labels);
    CHECK(c.tp == 480);
    CHECK(c.tn == 4520);
    CHECK(c.fp == 0);
    CHECK(c.fn == 0);
  }
  SUBCASE("all none") {
    std::vector<std::optional<Label>> pred(10);
    std::vector<Label> labels(10, Label::legitimate);
    labels[0] = labels[1] = Label::fraudulent;
    auto c = confusion(pred, labels);
    CHECK(c.tp == 0);
    CHECK(c.fn == 2);
    CHECK(c.tn == 8);
    CHECK(c.format_failures == 10);
    c = confusion(pred, labels, NonePolicy::as_fraudulent);
    CHECK(c.tp == 2);
    CHECK(c.fp == 8);
  }
  SUBCASE("random") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t n = 1 + rng() % 300;
      std::vector<std::optional<Label>> pred(n);
      std::vector<Label> labels(n);
      std::size_t tp = 0, fp = 0, tn = 0, fn = 0, none = 0;
      for (std::size_t i = 0; i < n; ++i) {
        labels[i] = rng() % 2 ? Label::fraudulent : Label::legitimate;
        const auto r = rng() % 3;
        if (r < 2) pred[i] = r ? Label::fraudulent : Label::legitimate;
        const bool says_fraud = pred[i] == Label::fraudulent;
        none += !pred[i];
        if (labels[i] == Label::fraudulent) (says_fraud ? tp : fn)++;
        else (says_fraud ? fp : tn)++;
      }
      const auto c = confusion(pred, labels);
      REQUIRE(c.tp == tp);
      REQUIRE(c.fp == fp);
      REQUIRE(c.tn == tn);
      REQUIRE(c.fn == fn);
      REQUIRE(c.format_failures == none);
    }
  }
  SUBCASE("length mismatch") {
    std::vector<std::optional<Label>> pred(3);
    std::vector<Label> labels(2);
    CHECK_THROWS_AS(confusion(pred, labels), Error);
  }
}

TEST_CASE("avg_completion_tokens") {
  Completion a, b;
  a.token_ids = {1};
  b.token_ids = {1, 2, 3};
  CHECK(avg_completion_tokens(std::vector<Completion>{a, b}) == 2.0);
  std::vector<Completion> five(4);
  for (auto& c : five) c.token_ids.assign(5, 0);
  CHECK(avg_completion_tokens(five) == 5.0);
  CHECK_THROWS_AS(avg_completion_tokens({}), Error);
}

TEST_CASE("faithfulness_check") {
  const auto vocab = Vocab::fraud(4);
  auto r = test::clean_record();
  r.ip_is_hosting = true;
  r.email_matches_name = true;
  const auto hosting = vocab->mention(Signal::ip_is_hosting, Polarity::risk);
  const auto email = vocab->mention(Signal::email_matches_name, Polarity::trust);
  const auto proxy = vocab->mention(Signal::ip_is_proxy, Polarity::risk);

  auto ok = faithfulness_check(completion_of(*vocab, {Vocab::kReasonOpen, hosting, email, Vocab::kReasonClose}),
                               *vocab, r);
  CHECK(ok.pass);
  CHECK(ok.violations.empty());

  auto bad = faithfulness_check(completion_of(*vocab, {Vocab::kReasonOpen, proxy, hosting, Vocab::kReasonClose}),
                                *vocab, r);
  CHECK_FALSE(bad.pass);
  REQUIRE(bad.violations.size() == 1);
  CHECK(bad.violations[0].signal == Signal::ip_is_proxy);
  CHECK(bad.violations[0].kind == ViolationKind::inactive_signal);
  CHECK(bad.violations[0].describe().find("ip_is_proxy") != std::string::npos);

  // An active signal cited with the wrong polarity is not faithful either.
  const auto flipped = vocab->mention(Signal::ip_is_hosting, Polarity::trust);
  auto pol = faithfulness_check(completion_of(*vocab, {Vocab::kReasonOpen, flipped, Vocab::kReasonClose}),
                                *vocab, r);
  CHECK_FALSE(pol.pass);
  CHECK(pol.violations[0].kind == ViolationKind::wrong_polarity);

  // No citations at all: nothing to contradict.
  CHECK(faithfulness_check(completion_of(*vocab, {Vocab::kRiskOpen, Vocab::kLegitimate, Vocab::kRiskClose}),
                           *vocab, r)
            .pass);
}

TEST_CASE("oracle stub reaches F1 = 1 on noise-free separable data") {
  GenConfig cfg;
  cfg.n_records = 3000;
  cfg.fraud_base_rate = 0.2;
  cfg.label_noise = 0.0;
  cfg.seed = 31;
  cfg.signal_strengths[static_cast<std::size_t>(Signal::ip_is_proxy)] = {1.0, 0.0};
  const auto test = generate_dataset(cfg);
  const auto vocab = Vocab::fraud(4);
  const Decoder oracle = [&](const TransactionRecord& r) {
    const auto active = active_signals(r);
    std::vector<TokenId> ids{Vocab::kReasonOpen};
    for (const auto& info : signal_catalogue()) {
      if (contains(active, info.id)) ids.push_back(vocab->mention(info.id, info.polarity));
    }
    ids.push_back(Vocab::kReasonClose);
    ids.push_back(Vocab::kRiskOpen);
    ids.push_back(r.ip_is_proxy ? Vocab::kFraudulent : Vocab::kLegitimate);
    ids.push_back(Vocab::kRiskClose);
    return completion_of(*vocab, ids);
  };
  const auto report = evaluate(oracle, test, *vocab);
  CHECK(report.metrics.f1 == 1.0);
  CHECK(report.metrics.accuracy == 1.0);
  CHECK(report.metrics.faithfulness_pass_rate == 1.0);
  CHECK(report.metrics.format_failure_rate == 0.0);
}

TEST_CASE("uniform policy F1 sits inside the closed-form random band") {
  GenConfig cfg;
  cfg.n_records = 2000;
  cfg.fraud_base_rate = kDefaultTestFraudRate;
  cfg.seed = 41;
  const auto test = generate_dataset(cfg);
  const double n_pos = static_cast<double>(test.count(Label::fraudulent));
  const double n_neg = static_cast<double>(test.size()) - n_pos;

  TrainEnv env;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const double p = uniform_fraud_verdict_probability(PromptMode::kStandardCeiling, 20, 4);
    const auto report = evaluate(env.zero_params(), test, env, {Decoding::sample, 1.0}, seed);
    // tp ~ Bin(n_pos, p), fp ~ Bin(n_neg, p); F1 = 2 tp / (n_pos + tp + fp).
    const double sd_tp = std::sqrt(n_pos * p * (1 - p)), sd_fp = std::sqrt(n_neg * p * (1 - p));
    const double tp_lo = n_pos * p - 4 * sd_tp, tp_hi = n_pos * p + 4 * sd_tp;
    const double fp_lo = n_neg * p - 4 * sd_fp, fp_hi = n_neg * p + 4 * sd_fp;
    const double f1_lo = 2 * tp_lo / (n_pos + tp_lo + fp_hi);
    const double f1_hi = 2 * tp_hi / (n_pos + tp_hi + fp_lo);
    MESSAGE("p(fraud verdict) " << p << ", band [" << f1_lo << ", " << f1_hi << "], f1 "
                                << report.metrics.f1);
    CHECK(report.metrics.f1 >= f1_lo);
    CHECK(report.metrics.f1 <= f1_hi);
    // The verdict rate itself.
    const double flagged = static_cast<double>(report.metrics.counts.tp + report.metrics.counts.fp);
    const double sd = std::sqrt(test.size() * p * (1 - p));
    CHECK(std::abs(flagged - test.size() * p) < 4 * sd);
  }
}

TEST_CASE("evaluation is deterministic and thread-count independent") {
  GenConfig cfg;
  cfg.n_records = 300;
  cfg.seed = 51;
  const auto test = generate_dataset(cfg);
  TrainEnv env;
  const auto p = PolicyParams::gaussian(env.vocab->size(), env.feature_dim(), 0.5, 2);
  std::string json[2], jsonl[2];
  for (int k = 0; k < 2; ++k) {
    ::setenv("GSPO_LAB_THREADS", k ? "3" : "1", 1);
    const auto r = evaluate(p, test, env, {Decoding::sample, 1.0}, 9);
    json[k] = metrics_to_json(r.metrics);
    jsonl[k] = details_to_jsonl(r.details);
  }
  ::unsetenv("GSPO_LAB_THREADS");
  CHECK(json[0] == json[1]);
  CHECK(jsonl[0] == jsonl[1]);
  const auto g1 = evaluate(p, test, env);
  const auto g2 = evaluate(p, test, env);
  CHECK(metrics_to_json(g1.metrics) == metrics_to_json(g2.metrics));
  CHECK(details_to_jsonl(g1.details) == details_to_jsonl(g2.details));
  for (std::size_t i = 1; i < g1.details.size(); ++i) {
    CHECK(g1.details[i - 1].order_id < g1.details[i].order_id);
  }
}

TEST_CASE("report serialization") {
  ConfusionCounts c;
  c.tp = 1;
  c.fp = 2;
  c.tn = 3;
  c.fn = 4;
  const auto m = metrics(c);
  CHECK(metrics_csv_header() == "model,accuracy,tpr,tnr,precision,fpr,f1,avg_tokens\n");
  const auto row = metrics_csv_row("x", m);
  CHECK(row.rfind("x,", 0) == 0);
  CHECK(std::count(row.begin(), row.end(), ',') == 7);
  CHECK(row.back() == '\n');
  const auto j = metrics_to_json(m);
  CHECK(j.find("\"f1\"") != std::string::npos);
  CHECK(j.find("\"counts\"") != std::string::npos);
  const auto snap = snapshot_of(m);
  CHECK(snap.f1 == m.f1);
  CHECK(snap.recall == m.recall_tpr);
}

TEST_CASE("evaluate rejects an empty test set") {
  TrainEnv env;
  CHECK_THROWS_AS(evaluate(env.zero_params(), Dataset{}, env), Error);
}
