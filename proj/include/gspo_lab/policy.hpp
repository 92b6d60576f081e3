#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gspo_lab/matrix.hpp"
#include "gspo_lab/transaction.hpp"

namespace gspo_lab {

using TokenId = int;
// Bit k set iff token k is legal. Vocabularies are capped at 64 tokens.
using TokenMask = std::uint64_t;

inline constexpr TokenId kBos = -1;
inline constexpr std::size_t kMaxVocab = 64;

inline bool mask_has(TokenMask m, TokenId t) noexcept { return (m >> t) & 1u; }
inline TokenMask mask_of(TokenId t) noexcept { return TokenMask{1} << t; }

enum class TokenKind : std::uint8_t {
  reason_open,
  reason_close,
  risk_open,
  risk_close,
  verdict,
  signal_mention,
  filler,
  eos,
};

struct Token {
  std::string text;
  TokenKind kind = TokenKind::filler;
  Signal signal = Signal::ip_is_proxy;      // signal_mention only
  Polarity polarity = Polarity::risk;       // signal_mention only
  Label verdict = Label::legitimate;        // verdict only
};

// Completion alphabet: tags, verdict words, one risk-polarity and one
// trust-polarity mention per signal, inert fillers, EOS (always last).
class Vocab {
 public:
  static constexpr TokenId kReasonOpen = 0;
  static constexpr TokenId kReasonClose = 1;
  static constexpr TokenId kRiskOpen = 2;
  static constexpr TokenId kRiskClose = 3;
  static constexpr TokenId kFraudulent = 4;
  static constexpr TokenId kLegitimate = 5;
  static constexpr TokenId kFirstMention = 6;
  // Whatever the 64-token cap leaves after tags, verdicts, mentions and EOS.
  static constexpr std::size_t kMaxFillers = kMaxVocab - 6 - 2 * kSignalCount - 1;

  static std::shared_ptr<const Vocab> fraud(std::size_t n_fillers = 4);

  std::size_t size() const noexcept { return tokens_.size(); }
  const Token& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::span<const Token> tokens() const noexcept { return tokens_; }

  TokenId eos() const noexcept { return static_cast<TokenId>(tokens_.size()) - 1; }
  TokenId verdict(Label l) const noexcept { return l == Label::fraudulent ? kFraudulent : kLegitimate; }
  TokenId mention(Signal s, Polarity p) const noexcept {
    return kFirstMention + 2 * static_cast<TokenId>(s) + (p == Polarity::trust ? 1 : 0);
  }
  TokenId filler(std::size_t i) const noexcept {
    return kFirstMention + static_cast<TokenId>(2 * kSignalCount + i);
  }
  std::size_t filler_count() const noexcept { return n_fillers_; }

  std::optional<TokenId> find(std::string_view text) const noexcept;
  // FNV-1a over the token texts; guards checkpoint compatibility.
  std::uint64_t hash() const noexcept;

 private:
  std::vector<Token> tokens_;
  std::size_t n_fillers_ = 0;
};

// Markov summary of the emitted prefix.
struct PrefixState {
  TokenId last_token = kBos;
  int tokens_emitted = 0;  // EOS not counted
  bool inside_reason = false;
  bool inside_risk = false;
  bool verdict_emitted = false;
  bool finished = false;
  SignalSet cited = 0;  // signals mentioned so far, either polarity

  bool operator==(const PrefixState&) const = default;
};

// Everything the policy needs to decode for one prompt: legality mask,
// featurizer and state transition. Implementations are immutable.
class DecodingContext {
 public:
  virtual ~DecodingContext() = default;

  virtual std::size_t vocab_size() const = 0;
  virtual std::size_t feature_dim() const = 0;
  virtual TokenId eos() const = 0;
  virtual PrefixState initial_state() const { return {}; }
  virtual TokenMask legal_tokens(const PrefixState& state) const = 0;
  virtual void featurize(const PrefixState& state, std::span<double> out) const = 0;
  virtual PrefixState advance(const PrefixState& state, TokenId token) const = 0;
  virtual std::string detokenize(std::span<const TokenId> tokens) const = 0;
};

// Feature layout of the fraud featurizer:
//   [record view | amount, email-age, distance buckets | one-hot(last token, BOS first)
//    | progress | inside_reason, inside_risk, verdict_emitted | bias]
// Outside the risk block the record view holds the active signals not yet
// cited; inside it, the active signals that were cited, and the buckets are
// zero. The verdict is thus a function of the evidence put forward.
struct FeatureLayout {
  static constexpr const char* kVersion = "fraud-featurizer/1";
  static constexpr std::size_t kAmountBuckets = 3;
  static constexpr std::size_t kEmailAgeBuckets = 2;
  static constexpr std::size_t kDistanceBuckets = 3;

  std::size_t vocab_size = 0;

  std::size_t record_view() const noexcept { return 0; }
  std::size_t amount() const noexcept { return kSignalCount; }
  std::size_t email_age() const noexcept { return amount() + kAmountBuckets; }
  std::size_t distance() const noexcept { return email_age() + kEmailAgeBuckets; }
  std::size_t last_token() const noexcept { return distance() + kDistanceBuckets; }
  std::size_t progress() const noexcept { return last_token() + vocab_size + 1; }
  std::size_t inside_reason() const noexcept { return progress() + 1; }
  std::size_t inside_risk() const noexcept { return inside_reason() + 1; }
  std::size_t verdict_emitted() const noexcept { return inside_risk() + 1; }
  std::size_t bias() const noexcept { return verdict_emitted() + 1; }
  std::size_t dim() const noexcept { return bias() + 1; }
};

// Grammar: blocks do not nest, the risk block holds exactly one verdict, and
// closing it ends the completion. Tags themselves are optional.
class FraudContext final : public DecodingContext {
 public:
  FraudContext(std::shared_ptr<const Vocab> vocab, const TransactionRecord& record,
               PromptMode mode, double distance_threshold_km = kDefaultDistanceThresholdKm);

  std::size_t vocab_size() const override { return vocab_->size(); }
  std::size_t feature_dim() const override { return layout_.dim(); }
  TokenId eos() const override { return vocab_->eos(); }
  TokenMask legal_tokens(const PrefixState& state) const override;
  void featurize(const PrefixState& state, std::span<double> out) const override;
  PrefixState advance(const PrefixState& state, TokenId token) const override;
  std::string detokenize(std::span<const TokenId> tokens) const override;

  const Vocab& vocab() const noexcept { return *vocab_; }
  const PromptMode& mode() const noexcept { return mode_; }
  SignalSet record_signals() const noexcept { return signals_; }
  const FeatureLayout& layout() const noexcept { return layout_; }

 private:
  std::shared_ptr<const Vocab> vocab_;
  PromptMode mode_;
  FeatureLayout layout_;
  SignalSet signals_ = 0;
  std::array<double, FeatureLayout::kAmountBuckets + FeatureLayout::kEmailAgeBuckets +
                         FeatureLayout::kDistanceBuckets>
      buckets_{};
  TokenMask mention_mask_ = 0;  // mentions allowed by the mode
  TokenMask filler_mask_ = 0;
};

// Linear-softmax policy weights W (V x F): logits = W * features.
struct PolicyParams {
  Matrix weights;

  static PolicyParams zeros(std::size_t vocab_size, std::size_t feature_dim) {
    return {Matrix(vocab_size, feature_dim)};
  }
  static PolicyParams gaussian(std::size_t vocab_size, std::size_t feature_dim, double stddev,
                               std::uint64_t seed);

  bool operator==(const PolicyParams&) const = default;
};

struct Completion {
  std::vector<TokenId> token_ids;
  std::string text;
  std::vector<double> logprobs;

  // |y|: token count including EOS.
  std::size_t length() const noexcept { return token_ids.size(); }

  bool operator==(const Completion&) const = default;
};

// Masked softmax of W * features. Illegal tokens get probability exactly 0.
std::vector<double> token_distribution(const PolicyParams& params,
                                       std::span<const double> features, TokenMask mask);

enum class Decoding : std::uint8_t { sample, greedy };

struct SamplerOptions {
  Decoding decoding = Decoding::sample;
  double temperature = 1.0;
};

// Samples until EOS; EOS is forced once the budget is spent. Deterministic in
// the seed. Logprobs are recorded under the sampling distribution (the
// temperature-1 policy when greedy).
Completion sample_completion(const PolicyParams& params, const DecodingContext& ctx,
                             std::uint64_t seed, const SamplerOptions& options = {});

struct SequenceLogprob {
  double total = 0.0;
  std::vector<double> per_token;
};

// Throws Error(illegal_sequence) when a token violates the mask.
SequenceLogprob sequence_logprob(const PolicyParams& params, const DecodingContext& ctx,
                                 std::span<const TokenId> tokens);

// Per-step cache of a scored sequence, reused to assemble weighted gradients.
class SequenceTrace {
 public:
  SequenceTrace(const PolicyParams& params, const DecodingContext& ctx,
                std::span<const TokenId> tokens);

  const std::vector<double>& logprobs() const noexcept { return logprobs_; }
  double total() const noexcept;
  std::size_t length() const noexcept { return steps_.size(); }

  // grad += sum_t coeffs[t] * d log pi(y_t | s_t) / dW
  void accumulate_score(std::span<const double> coeffs, Matrix& grad) const;
  // Same with a single coefficient for every step.
  void accumulate_score(double coeff, Matrix& grad) const;

 private:
  struct Step {
    std::vector<std::uint16_t> feature_index;  // non-zero features
    std::vector<double> feature_value;
    std::vector<TokenId> legal;
    std::vector<double> probs;  // aligned with legal
    TokenId chosen = 0;
  };
  std::vector<Step> steps_;
  std::vector<double> logprobs_;
};

// sum_t (e_{y_t} - pi(.|s_t)) outer phi(s_t)
Matrix grad_sequence_logprob(const PolicyParams& params, const DecodingContext& ctx,
                             std::span<const TokenId> tokens);

// Indices of `count` distinct flat entries out of `total` (all when total <= count).
std::vector<std::size_t> sample_entries(std::size_t total, std::size_t count, std::uint64_t seed);

// max |fd - analytic| / max(|analytic|, floor) over the chosen entries, where
// fd is the central difference (f(W + h e) - f(W - h e)) / 2h.
double finite_diff_max_rel_error(const std::function<double(const PolicyParams&)>& f,
                                 const PolicyParams& at, const Matrix& analytic, double h,
                                 std::span<const std::size_t> entries, double floor = 1e-8);

// Gradient check of the sequence log-probability on at least 50 entries.
// h must lie in [1e-7, 1e-3].
double finite_diff_check(const PolicyParams& params, const DecodingContext& ctx,
                         std::span<const TokenId> tokens, double h, std::uint64_t seed = 0);

// Depth-first enumeration of every terminated legal completion. Test-scale only.
void enumerate_completions(const DecodingContext& ctx,
                           const std::function<void(std::span<const TokenId>)>& visit);

inline constexpr const char* kCheckpointFormat = "gspo-lab-policy/1";

// Checkpoints: JSON with a header (format, featurizer version, vocab hash, V, F).
void save_params(const std::filesystem::path& path, const PolicyParams& params,
                 const Vocab& vocab);
// Throws Error(shape_mismatch) on header mismatch, Error(io) when unreadable.
PolicyParams load_params(const std::filesystem::path& path, const Vocab& vocab);

}  // namespace gspo_lab
