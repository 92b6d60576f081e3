#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "gspo_lab/transaction.hpp"

namespace gspo_lab {

struct SignalStrength {
  double given_fraud = 0.5;
  double given_legit = 0.5;
};

using SignalStrengths = std::array<SignalStrength, kSignalCount>;

// Informative risk and trust signals plus two near-inert ones
// (card_is_prepaid is weak, item_is_virtual carries no information).
SignalStrengths default_signal_strengths();

// Reference test split: 480 fraudulent of 5000.
inline constexpr double kDefaultTestFraudRate = 0.096;
// Reference training split: 2586 legitimate per 2314 fraudulent.
inline constexpr double kReferenceLegitExcess = 2586.0 / 2314.0;

struct GenConfig {
  std::size_t n_records = 1000;
  double fraud_base_rate = 0.5;
  SignalStrengths signal_strengths = default_signal_strengths();
  std::int64_t start_epoch = 1685577600;  // 2023-06-01T00:00:00Z
  std::int64_t end_epoch = 1719792000;    // 2024-07-01T00:00:00Z
  std::uint64_t seed = 0;
  // Probability that a record's signals are drawn from the opposite class's
  // conditionals while keeping its label; caps attainable F1 below 1.
  double label_noise = 0.05;
  double distance_threshold_km = kDefaultDistanceThresholdKm;
  std::string id_prefix = "ord-";

  // Throws Error(invalid_config).
  void validate() const;
};

struct OracleExplanation {
  SignalSet active_signals = 0;
  Label generative_label = Label::legitimate;
};

// What the generator decided for each record, kept for cross-checks.
struct GenerationTrace {
  SignalSet sampled_signals = 0;
  Label label = Label::legitimate;
  // Class whose conditionals produced the signals (differs from label on noise).
  Label feature_class = Label::legitimate;
};

struct GeneratedDataset {
  Dataset dataset;
  std::vector<GenerationTrace> trace;
};

GeneratedDataset generate_with_trace(const GenConfig& config);
Dataset generate_dataset(const GenConfig& config);

// train: timestamp < cutoff; test: timestamp >= cutoff. Throws
// Error(empty_side) if either side would be empty.
std::pair<Dataset, Dataset> chronological_split(const Dataset& dataset, std::int64_t cutoff);

// Keeps every fraudulent record and round(n_fraud * legit_excess) legitimate
// ones, then shuffles. Throws Error(insufficient_legit) or
// Error(degenerate_data) when a class is missing.
Dataset balance_training(const Dataset& train, double legit_excess, std::uint64_t seed);

// Recomputes active signals from the record fields alone. The label slot is
// only meaningful when a label is supplied.
OracleExplanation oracle_explanation(const TransactionRecord& record,
                                     double distance_threshold_km = kDefaultDistanceThresholdKm,
                                     Label label = Label::legitimate);

// Full train/test protocol: chronological split, balanced training side,
// naturally imbalanced test side.
struct SplitProtocol {
  std::int64_t cutoff = 1704067200;  // 2024-01-01T00:00:00Z
  double legit_excess = kReferenceLegitExcess;
  // 0 = keep every fraudulent training record.
  std::size_t train_fraud_cap = 0;
  // 0 = keep the whole test window; otherwise a uniform subsample.
  std::size_t test_records = 0;
};

struct TrainTestSplit {
  Dataset train;
  Dataset test;
};

TrainTestSplit build_train_test(const Dataset& pool, const SplitProtocol& protocol,
                                std::uint64_t seed);

// Bayes posterior P(fraud | record) under the generator's model.
double fraud_posterior(const TransactionRecord& record, const GenConfig& config);

}  // namespace gspo_lab
