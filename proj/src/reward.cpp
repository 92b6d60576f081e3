#include "gspo_lab/reward.hpp"

#include <cmath>
#include <vector>

#include "gspo_lab/errors.hpp"

namespace gspo_lab {

namespace {

std::vector<std::size_t> find_all(std::string_view text, std::string_view needle) {
  std::vector<std::size_t> at;
  for (auto pos = text.find(needle); pos != std::string_view::npos;
       pos = text.find(needle, pos + needle.size())) {
    at.push_back(pos);
  }
  return at;
}

std::string_view trim(std::string_view s) {
  constexpr std::string_view ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

struct Block {
  std::size_t open = 0;       // position of the opening tag
  std::size_t close_end = 0;  // one past the closing tag
  std::string_view content;
};

// The single well-formed block delimited by open/close tags, if any.
std::optional<Block> single_block(std::string_view text, std::string_view open_tag,
                                  std::string_view close_tag) {
  const auto opens = find_all(text, open_tag);
  const auto closes = find_all(text, close_tag);
  if (opens.size() != 1 || closes.size() != 1) return std::nullopt;
  const auto content_begin = opens[0] + open_tag.size();
  if (closes[0] < content_begin) return std::nullopt;
  return Block{opens[0], closes[0] + close_tag.size(),
               trim(text.substr(content_begin, closes[0] - content_begin))};
}

}  // namespace

void RewardWeights::validate() const {
  require(std::isfinite(accuracy) && accuracy >= 0.0 && std::isfinite(format) && format >= 0.0,
          ErrorKind::invalid_config, "reward weights must be finite and non-negative");
}

std::optional<Label> extract_verdict(std::string_view text) {
  const auto risk = single_block(text, "<risk>", "</risk>");
  if (!risk) return std::nullopt;
  return label_from_string(risk->content);
}

double format_reward(std::string_view text, const RewardWeights& weights) {
  const auto reason = single_block(text, "<reason>", "</reason>");
  const auto risk = single_block(text, "<risk>", "</risk>");
  if (!reason || !risk || reason->content.empty()) return 0.0;
  return reason->close_end <= risk->open ? weights.format : 0.0;
}

double accuracy_reward(std::string_view text, Label label, const RewardWeights& weights) {
  const auto verdict = extract_verdict(text);
  return verdict && *verdict == label ? weights.accuracy : 0.0;
}

RewardBreakdown total_reward(std::string_view text, Label label, const RewardWeights& weights) {
  RewardBreakdown r;
  r.accuracy = accuracy_reward(text, label, weights);
  r.format = format_reward(text, weights);
  r.total = r.accuracy + r.format;
  return r;
}

}  // namespace gspo_lab
