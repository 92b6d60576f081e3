#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gspo_lab/policy.hpp"
#include "gspo_lab/rl.hpp"
#include "gspo_lab/transaction.hpp"

namespace gspo_lab {

// How an unparseable verdict is scored. Default: the transaction is let
// through (predicted legitimate) and a format failure is counted.
enum class NonePolicy : std::uint8_t { as_legitimate, as_fraudulent };

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;
  std::size_t format_failures = 0;

  std::size_t n() const noexcept { return tp + fp + tn + fn; }
  bool operator==(const ConfusionCounts&) const = default;
};

// Positive class: fraudulent.
ConfusionCounts confusion(std::span<const std::optional<Label>> predictions,
                          std::span<const Label> labels,
                          NonePolicy none_policy = NonePolicy::as_legitimate);

struct MetricsReport {
  double accuracy = 0.0;
  double recall_tpr = 0.0;
  double specificity_tnr = 0.0;
  double precision = 0.0;
  double fpr = 0.0;
  double f1 = 0.0;
  double avg_tokens = 0.0;
  std::size_t n = 0;
  double format_failure_rate = 0.0;
  double faithfulness_pass_rate = 0.0;
  ConfusionCounts counts;
};

// Metric fields only. Undefined ratios (zero denominators) are reported as 0.
// Throws Error(invalid_config) when counts are empty.
MetricsReport metrics(const ConfusionCounts& counts);

double avg_completion_tokens(std::span<const Completion> completions);

enum class ViolationKind : std::uint8_t { inactive_signal, wrong_polarity };

struct Violation {
  Signal signal = Signal::ip_is_proxy;
  Polarity cited_as = Polarity::risk;
  ViolationKind kind = ViolationKind::inactive_signal;

  std::string describe() const;
  bool operator==(const Violation&) const = default;
};

struct FaithfulnessResult {
  bool pass = true;
  std::vector<Violation> violations;
};

// Every mention inside a <reason> block must name a signal that is active in
// the record, cited with that signal's polarity. One violation fails.
FaithfulnessResult faithfulness_check(const Completion& completion, const Vocab& vocab,
                                      const TransactionRecord& record,
                                      double distance_threshold_km = kDefaultDistanceThresholdKm);

// A decoder sees the record only; labels are joined afterwards.
using Decoder = std::function<Completion(const TransactionRecord&)>;

struct RecordDetail {
  std::string order_id;
  std::optional<Label> prediction;
  Label label = Label::legitimate;
  std::size_t tokens = 0;
  bool faithful = true;
  std::vector<std::string> violations;
  std::string text;
};

struct EvalReport {
  MetricsReport metrics;
  std::vector<RecordDetail> details;  // sorted by order_id
};

EvalReport evaluate(const Decoder& decoder, const Dataset& test, const Vocab& vocab,
                    double distance_threshold_km = kDefaultDistanceThresholdKm,
                    NonePolicy none_policy = NonePolicy::as_legitimate);

// Greedy decoding by default; sampled decoding derives one stream per record.
EvalReport evaluate(const PolicyParams& params, const Dataset& test, const TrainEnv& env,
                    const SamplerOptions& sampler = {Decoding::greedy, 1.0},
                    std::uint64_t seed = 0);

EvalSnapshot snapshot_of(const MetricsReport& m);

std::string metrics_to_json(const MetricsReport& m);
std::string details_to_jsonl(std::span<const RecordDetail> details);
// Columns: model,accuracy,tpr,tnr,precision,fpr,f1,avg_tokens
std::string metrics_csv_header();
std::string metrics_csv_row(const std::string& model, const MetricsReport& m);

}  // namespace gspo_lab
