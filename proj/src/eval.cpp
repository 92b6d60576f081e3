#include "gspo_lab/eval.hpp"

#include <algorithm>
#include <cstdio>

#include <json.hpp>

#include "gspo_lab/errors.hpp"
#include "gspo_lab/parallel.hpp"
#include "gspo_lab/reward.hpp"
#include "gspo_lab/rng.hpp"

namespace gspo_lab {

ConfusionCounts confusion(std::span<const std::optional<Label>> predictions,
                          std::span<const Label> labels, NonePolicy none_policy) {
  require(predictions.size() == labels.size(), ErrorKind::shape_mismatch,
          "predictions and labels differ in length");
  ConfusionCounts c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    Label predicted;
    if (predictions[i]) {
      predicted = *predictions[i];
    } else {
      ++c.format_failures;
      predicted = none_policy == NonePolicy::as_fraudulent ? Label::fraudulent : Label::legitimate;
    }
    const bool pos_pred = predicted == Label::fraudulent;
    const bool pos_true = labels[i] == Label::fraudulent;
    if (pos_pred && pos_true) ++c.tp;
    else if (pos_pred) ++c.fp;
    else if (pos_true) ++c.fn;
    else ++c.tn;
  }
  return c;
}

MetricsReport metrics(const ConfusionCounts& c) {
  require(c.n() > 0, ErrorKind::invalid_config, "metrics need at least one evaluated record");
  auto ratio = [](std::size_t num, std::size_t den) {
    return den ? static_cast<double>(num) / static_cast<double>(den) : 0.0;
  };
  MetricsReport m;
  m.counts = c;
  m.n = c.n();
  m.accuracy = ratio(c.tp + c.tn, m.n);
  m.recall_tpr = ratio(c.tp, c.tp + c.fn);
  m.specificity_tnr = ratio(c.tn, c.tn + c.fp);
  m.precision = ratio(c.tp, c.tp + c.fp);
  m.fpr = ratio(c.fp, c.fp + c.tn);
  const double pr = m.precision + m.recall_tpr;
  m.f1 = pr > 0.0 ? 2.0 * m.precision * m.recall_tpr / pr : 0.0;
  m.format_failure_rate = ratio(c.format_failures, m.n);
  return m;
}

double avg_completion_tokens(std::span<const Completion> completions) {
  require(!completions.empty(), ErrorKind::invalid_config, "no completions to average");
  double sum = 0.0;
  for (const auto& c : completions) sum += static_cast<double>(c.length());
  return sum / static_cast<double>(completions.size());
}

std::string Violation::describe() const {
  const auto& info = signal_info(signal);
  std::string s = std::string(to_string(cited_as)) + ":" + std::string(info.name);
  return s + (kind == ViolationKind::inactive_signal ? " (signal not present in order)"
                                                     : " (cited with wrong polarity)");
}

FaithfulnessResult faithfulness_check(const Completion& completion, const Vocab& vocab,
                                      const TransactionRecord& record,
                                      double distance_threshold_km) {
  const SignalSet active = active_signals(record, distance_threshold_km);
  FaithfulnessResult out;
  bool inside_reason = false;
  for (TokenId id : completion.token_ids) {
    const Token& t = vocab.token(id);
    if (t.kind == TokenKind::reason_open) inside_reason = true;
    if (t.kind == TokenKind::reason_close) inside_reason = false;
    if (!inside_reason || t.kind != TokenKind::signal_mention) continue;
    if (!contains(active, t.signal)) {
      out.violations.push_back({t.signal, t.polarity, ViolationKind::inactive_signal});
    } else if (signal_info(t.signal).polarity != t.polarity) {
      out.violations.push_back({t.signal, t.polarity, ViolationKind::wrong_polarity});
    }
  }
  out.pass = out.violations.empty();
  return out;
}

EvalReport evaluate(const Decoder& decoder, const Dataset& test, const Vocab& vocab,
                    double distance_threshold_km, NonePolicy none_policy) {
  require(!test.records.empty(), ErrorKind::degenerate_data, "test set is empty");
  const auto n = test.records.size();
  std::vector<Completion> completions(n);
  parallel_for(n, [&](std::size_t i) { completions[i] = decoder(test.records[i].record); });

  EvalReport report;
  std::vector<std::optional<Label>> predictions(n);
  std::vector<Label> labels(n);
  std::size_t faithful = 0;
  report.details.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& item = test.records[i];
    auto& d = report.details[i];
    predictions[i] = extract_verdict(completions[i].text);
    labels[i] = item.label;
    const auto f = faithfulness_check(completions[i], vocab, item.record, distance_threshold_km);
    d.order_id = item.record.order_id;
    d.prediction = predictions[i];
    d.label = item.label;
    d.tokens = completions[i].length();
    d.faithful = f.pass;
    for (const auto& v : f.violations) d.violations.push_back(v.describe());
    d.text = completions[i].text;
    faithful += f.pass ? 1 : 0;
  }
  std::sort(report.details.begin(), report.details.end(),
            [](const auto& a, const auto& b) { return a.order_id < b.order_id; });

  report.metrics = metrics(confusion(predictions, labels, none_policy));
  report.metrics.avg_tokens = avg_completion_tokens(completions);
  report.metrics.faithfulness_pass_rate = static_cast<double>(faithful) / static_cast<double>(n);
  return report;
}

EvalReport evaluate(const PolicyParams& params, const Dataset& test, const TrainEnv& env,
                    const SamplerOptions& sampler, std::uint64_t seed) {
  // Stream keyed by order_id, independent of record order.
  const Decoder decoder = [&](const TransactionRecord& record) {
    const auto ctx = env.context_for(record);
    std::uint64_t h = 0;
    for (unsigned char c : record.order_id) h = splitmix64(h ^ c);
    return sample_completion(params, *ctx, derive_seed(seed, {h}), sampler);
  };
  return evaluate(decoder, test, *env.vocab, env.distance_threshold_km);
}

EvalSnapshot snapshot_of(const MetricsReport& m) {
  return {m.accuracy, m.precision, m.recall_tpr, m.f1, m.avg_tokens, m.format_failure_rate,
          m.faithfulness_pass_rate};
}

std::string metrics_to_json(const MetricsReport& m) {
  nlohmann::ordered_json j;
  j["n"] = m.n;
  j["accuracy"] = m.accuracy;
  j["recall_tpr"] = m.recall_tpr;
  j["specificity_tnr"] = m.specificity_tnr;
  j["precision"] = m.precision;
  j["fpr"] = m.fpr;
  j["f1"] = m.f1;
  j["avg_tokens"] = m.avg_tokens;
  j["format_failure_rate"] = m.format_failure_rate;
  j["faithfulness_pass_rate"] = m.faithfulness_pass_rate;
  j["counts"] = {{"tp", m.counts.tp},
                 {"fp", m.counts.fp},
                 {"tn", m.counts.tn},
                 {"fn", m.counts.fn},
                 {"format_failures", m.counts.format_failures}};
  return j.dump(2);
}

std::string details_to_jsonl(std::span<const RecordDetail> details) {
  std::string out;
  for (const auto& d : details) {
    nlohmann::ordered_json j;
    j["order_id"] = d.order_id;
    j["prediction"] = d.prediction ? nlohmann::ordered_json(to_string(*d.prediction))
                                   : nlohmann::ordered_json(nullptr);
    j["label"] = to_string(d.label);
    j["tokens"] = d.tokens;
    j["faithful"] = d.faithful;
    j["violations"] = d.violations;
    j["completion"] = d.text;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::string metrics_csv_header() {
  return "model,accuracy,tpr,tnr,precision,fpr,f1,avg_tokens\n";
}

std::string metrics_csv_row(const std::string& model, const MetricsReport& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.1f\n", model.c_str(),
                m.accuracy, m.recall_tpr, m.specificity_tnr, m.precision, m.fpr, m.f1,
                m.avg_tokens);
  return buf;
}

}  // namespace gspo_lab
