#pragma once

#include <optional>
#include <string_view>

#include "gspo_lab/transaction.hpp"

namespace gspo_lab {

// Accuracy is weighted 2.5x the format component; the absolute scale does not
// matter after group normalization.
struct RewardWeights {
  double accuracy = 2.5;
  double format = 1.0;

  // Throws Error(invalid_config) on negative or non-finite weights.
  void validate() const;
};

struct RewardBreakdown {
  double accuracy = 0.0;
  double format = 0.0;
  double total = 0.0;

  bool operator==(const RewardBreakdown&) const = default;
};

// Tag matching is case-sensitive and exact; block contents are trimmed.

// The verdict iff there is exactly one <risk>...</risk> block and its content
// is exactly one verdict word.
std::optional<Label> extract_verdict(std::string_view text);

// w_format iff exactly one non-empty <reason> block closes before exactly
// one well-formed <risk> block opens.
double format_reward(std::string_view text, const RewardWeights& weights = {});

double accuracy_reward(std::string_view text, Label label, const RewardWeights& weights = {});

RewardBreakdown total_reward(std::string_view text, Label label,
                             const RewardWeights& weights = {});

}  // namespace gspo_lab
