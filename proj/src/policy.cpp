#include "gspo_lab/policy.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>

#include "gspo_lab/errors.hpp"
#include "gspo_lab/rng.hpp"

namespace gspo_lab {

namespace {

constexpr std::array<std::string_view, Vocab::kMaxFillers> kFillerWords{
    "hmm",    "well",   "also",  "note",    "then",   "so",      "okay",    "anyway",
    "first",  "next",   "now",   "let",     "me",     "see",     "check",   "the",
    "order",  "looks",  "like",  "it",      "is",     "quite",   "maybe",   "perhaps",
    "overall", "given", "this",  "that",    "and",    "but",     "still",   "just",
    "really", "indeed", "right", "actually", "basically"};

bool is_word(const Token& t) {
  return t.kind == TokenKind::verdict || t.kind == TokenKind::signal_mention ||
         t.kind == TokenKind::filler;
}

// Log-probabilities of the legal tokens, in ascending token order.
void masked_log_softmax(const Matrix& w, std::span<const std::uint16_t> idx,
                        std::span<const double> val, TokenMask mask, double inv_temperature,
                        std::vector<TokenId>& legal, std::vector<double>& logp) {
  legal.clear();
  logp.clear();
  double max_logit = -std::numeric_limits<double>::infinity();
  for (TokenMask m = mask; m; m &= m - 1) {
    const auto k = static_cast<TokenId>(std::countr_zero(m));
    const auto row = w.row(static_cast<std::size_t>(k));
    double z = 0.0;
    for (std::size_t j = 0; j < idx.size(); ++j) z += row[idx[j]] * val[j];
    z *= inv_temperature;
    legal.push_back(k);
    logp.push_back(z);
    max_logit = std::max(max_logit, z);
  }
  double sum = 0.0;
  for (double z : logp) sum += std::exp(z - max_logit);
  const double log_norm = max_logit + std::log(sum);
  for (double& z : logp) z -= log_norm;
  if (legal.size() == 1) logp[0] = 0.0;
}

struct SparseFeatures {
  std::vector<double> dense;
  std::vector<std::uint16_t> idx;
  std::vector<double> val;

  void build(const DecodingContext& ctx, const PrefixState& state) {
    dense.assign(ctx.feature_dim(), 0.0);
    ctx.featurize(state, dense);
    idx.clear();
    val.clear();
    for (std::size_t j = 0; j < dense.size(); ++j) {
      if (dense[j] != 0.0) {
        idx.push_back(static_cast<std::uint16_t>(j));
        val.push_back(dense[j]);
      }
    }
  }
};

void check_shape(const PolicyParams& params, const DecodingContext& ctx) {
  require(params.weights.rows() == ctx.vocab_size() && params.weights.cols() == ctx.feature_dim(),
          ErrorKind::shape_mismatch,
          "policy is " + std::to_string(params.weights.rows()) + "x" +
              std::to_string(params.weights.cols()) + ", context needs " +
              std::to_string(ctx.vocab_size()) + "x" + std::to_string(ctx.feature_dim()));
}

}  // namespace

// ---------------------------------------------------------------------------
// Vocab

std::shared_ptr<const Vocab> Vocab::fraud(std::size_t n_fillers) {
  require(n_fillers <= kMaxFillers, ErrorKind::invalid_config,
          "at most " + std::to_string(kMaxFillers) + " filler tokens");
  auto v = std::make_shared<Vocab>();
  v->n_fillers_ = n_fillers;
  auto add = [&](std::string text, TokenKind kind) -> Token& {
    v->tokens_.push_back(Token{std::move(text), kind});
    return v->tokens_.back();
  };
  add("<reason>", TokenKind::reason_open);
  add("</reason>", TokenKind::reason_close);
  add("<risk>", TokenKind::risk_open);
  add("</risk>", TokenKind::risk_close);
  add("fraudulent", TokenKind::verdict).verdict = Label::fraudulent;
  add("legitimate", TokenKind::verdict).verdict = Label::legitimate;
  for (const auto& info : signal_catalogue()) {
    for (auto p : {Polarity::risk, Polarity::trust}) {
      auto& t = add(std::string(to_string(p)) + ":" + std::string(info.name),
                    TokenKind::signal_mention);
      t.signal = info.id;
      t.polarity = p;
    }
  }
  for (std::size_t i = 0; i < n_fillers; ++i) add(std::string(kFillerWords[i]), TokenKind::filler);
  add("<eos>", TokenKind::eos);
  require(v->tokens_.size() <= kMaxVocab, ErrorKind::invalid_config, "vocabulary too large");
  return v;
}

std::optional<TokenId> Vocab::find(std::string_view text) const noexcept {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].text == text) return static_cast<TokenId>(i);
  }
  return std::nullopt;
}

std::uint64_t Vocab::hash() const noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : tokens_) {
    for (unsigned char c : t.text) h = (h ^ c) * 0x100000001b3ULL;
    h = (h ^ 0xff) * 0x100000001b3ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// FraudContext

FraudContext::FraudContext(std::shared_ptr<const Vocab> vocab, const TransactionRecord& record,
                           PromptMode mode, double distance_threshold_km)
    : vocab_(std::move(vocab)), mode_(std::move(mode)) {
  mode_.validate();
  layout_.vocab_size = vocab_->size();
  signals_ = active_signals(record, distance_threshold_km);

  std::size_t b = 0;
  for (double t : {100.0, 500.0, 2000.0}) buckets_[b++] = record.amount >= t ? 1.0 : 0.0;
  for (std::int64_t t : {30, 365}) buckets_[b++] = record.email_age_days >= t ? 1.0 : 0.0;
  for (double t : {100.0, 500.0, 2000.0}) buckets_[b++] = record.ip_to_shipping_km >= t ? 1.0 : 0.0;

  const SignalSet allowed = mode_.style == PromptStyle::compressed
                                ? mode_.predefined_set()
                                : (SignalSet{1} << kSignalCount) - 1;
  for (const auto& info : signal_catalogue()) {
    if (!contains(allowed, info.id)) continue;
    mention_mask_ |= mask_of(vocab_->mention(info.id, Polarity::risk));
    mention_mask_ |= mask_of(vocab_->mention(info.id, Polarity::trust));
  }
  for (std::size_t i = 0; i < vocab_->filler_count(); ++i) filler_mask_ |= mask_of(vocab_->filler(i));
}

TokenMask FraudContext::legal_tokens(const PrefixState& s) const {
  if (s.finished) return 0;
  if (s.tokens_emitted >= mode_.max_completion_tokens) return mask_of(vocab_->eos());
  if (s.inside_reason) return mention_mask_ | filler_mask_ | mask_of(Vocab::kReasonClose);
  if (s.inside_risk) {
    return s.verdict_emitted ? mask_of(Vocab::kRiskClose)
                             : mask_of(Vocab::kFraudulent) | mask_of(Vocab::kLegitimate);
  }
  // A closed risk block ends the completion.
  if (s.verdict_emitted) return mask_of(vocab_->eos());
  return mask_of(Vocab::kReasonOpen) | mask_of(Vocab::kRiskOpen) | filler_mask_ |
         mask_of(vocab_->eos());
}

void FraudContext::featurize(const PrefixState& s, std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
  const SignalSet view = s.inside_risk ? (signals_ & s.cited) : (signals_ & ~s.cited);
  for (std::size_t i = 0; i < kSignalCount; ++i) {
    out[layout_.record_view() + i] = ((view >> i) & 1u) ? 1.0 : 0.0;
  }
  if (!s.inside_risk) {
    std::copy(buckets_.begin(), buckets_.end(), out.begin() + static_cast<long>(layout_.amount()));
  }
  out[layout_.last_token() + static_cast<std::size_t>(s.last_token + 1)] = 1.0;
  out[layout_.progress()] =
      static_cast<double>(s.tokens_emitted) / static_cast<double>(mode_.max_completion_tokens);
  out[layout_.inside_reason()] = s.inside_reason ? 1.0 : 0.0;
  out[layout_.inside_risk()] = s.inside_risk ? 1.0 : 0.0;
  out[layout_.verdict_emitted()] = s.verdict_emitted ? 1.0 : 0.0;
  out[layout_.bias()] = 1.0;
}

PrefixState FraudContext::advance(const PrefixState& s, TokenId token) const {
  if (token < 0 || static_cast<std::size_t>(token) >= vocab_->size()) {
    fail(ErrorKind::illegal_sequence, "token id " + std::to_string(token) + " out of range");
  }
  if (!mask_has(legal_tokens(s), token)) {
    fail(ErrorKind::illegal_sequence, "token '" + vocab_->token(token).text + "' is not legal here");
  }
  PrefixState next = s;
  next.last_token = token;
  const Token& t = vocab_->token(token);
  switch (t.kind) {
    case TokenKind::eos: next.finished = true; return next;
    case TokenKind::reason_open: next.inside_reason = true; break;
    case TokenKind::reason_close: next.inside_reason = false; break;
    case TokenKind::risk_open: next.inside_risk = true; break;
    case TokenKind::risk_close: next.inside_risk = false; break;
    case TokenKind::verdict: next.verdict_emitted = true; break;
    case TokenKind::signal_mention: next.cited |= SignalSet{1} << static_cast<unsigned>(t.signal); break;
    case TokenKind::filler: break;
  }
  ++next.tokens_emitted;
  return next;
}

std::string FraudContext::detokenize(std::span<const TokenId> tokens) const {
  std::string out;
  bool prev_word = false;
  for (TokenId id : tokens) {
    const Token& t = vocab_->token(id);
    if (t.kind == TokenKind::eos) break;
    const bool word = is_word(t);
    if (word && prev_word) out += ' ';
    out += t.text;
    prev_word = word;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Policy

PolicyParams PolicyParams::gaussian(std::size_t vocab_size, std::size_t feature_dim,
                                    double stddev, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x1417}));
  std::normal_distribution<double> normal(0.0, stddev);
  PolicyParams p = zeros(vocab_size, feature_dim);
  for (double& w : p.weights.flat()) w = normal(rng);
  return p;
}

std::vector<double> token_distribution(const PolicyParams& params,
                                       std::span<const double> features, TokenMask mask) {
  require(mask != 0, ErrorKind::illegal_sequence, "empty token mask");
  require(features.size() == params.weights.cols(), ErrorKind::shape_mismatch,
          "feature vector does not match policy width");
  std::vector<std::uint16_t> idx;
  std::vector<double> val;
  for (std::size_t j = 0; j < features.size(); ++j) {
    if (features[j] != 0.0) {
      idx.push_back(static_cast<std::uint16_t>(j));
      val.push_back(features[j]);
    }
  }
  std::vector<TokenId> legal;
  std::vector<double> logp;
  masked_log_softmax(params.weights, idx, val, mask, 1.0, legal, logp);
  std::vector<double> probs(params.weights.rows(), 0.0);
  for (std::size_t i = 0; i < legal.size(); ++i) {
    probs[static_cast<std::size_t>(legal[i])] = std::exp(logp[i]);
  }
  return probs;
}

Completion sample_completion(const PolicyParams& params, const DecodingContext& ctx,
                             std::uint64_t seed, const SamplerOptions& options) {
  check_shape(params, ctx);
  require(options.temperature > 0.0, ErrorKind::invalid_config, "temperature must be positive");
  Rng rng(seed);
  Completion c;
  SparseFeatures feats;
  std::vector<TokenId> legal;
  std::vector<double> logp;
  PrefixState state = ctx.initial_state();
  const bool greedy = options.decoding == Decoding::greedy;
  const double inv_t = greedy ? 1.0 : 1.0 / options.temperature;
  while (!state.finished) {
    feats.build(ctx, state);
    masked_log_softmax(params.weights, feats.idx, feats.val, ctx.legal_tokens(state), inv_t, legal,
                       logp);
    std::size_t pick = 0;
    if (greedy) {
      for (std::size_t i = 1; i < legal.size(); ++i) {
        if (logp[i] > logp[pick]) pick = i;
      }
    } else {
      const double u = uniform01(rng);
      double acc = 0.0;
      pick = legal.size() - 1;
      for (std::size_t i = 0; i < legal.size(); ++i) {
        acc += std::exp(logp[i]);
        if (u < acc) {
          pick = i;
          break;
        }
      }
    }
    c.token_ids.push_back(legal[pick]);
    c.logprobs.push_back(logp[pick]);
    state = ctx.advance(state, legal[pick]);
  }
  c.text = ctx.detokenize(c.token_ids);
  return c;
}

SequenceTrace::SequenceTrace(const PolicyParams& params, const DecodingContext& ctx,
                             std::span<const TokenId> tokens) {
  check_shape(params, ctx);
  SparseFeatures feats;
  PrefixState state = ctx.initial_state();
  std::vector<double> logp;
  steps_.reserve(tokens.size());
  logprobs_.reserve(tokens.size());
  for (TokenId tok : tokens) {
    const TokenMask mask = ctx.legal_tokens(state);
    require(tok >= 0 && static_cast<std::size_t>(tok) < ctx.vocab_size() && mask_has(mask, tok),
            ErrorKind::illegal_sequence,
            "token " + std::to_string(tok) + " illegal at position " +
                std::to_string(steps_.size()));
    feats.build(ctx, state);
    Step step;
    step.feature_index = feats.idx;
    step.feature_value = feats.val;
    step.chosen = tok;
    masked_log_softmax(params.weights, feats.idx, feats.val, mask, 1.0, step.legal, logp);
    step.probs.resize(logp.size());
    double chosen_logp = 0.0;
    for (std::size_t i = 0; i < logp.size(); ++i) {
      step.probs[i] = std::exp(logp[i]);
      if (step.legal[i] == tok) chosen_logp = logp[i];
    }
    logprobs_.push_back(chosen_logp);
    steps_.push_back(std::move(step));
    state = ctx.advance(state, tok);
  }
}

double SequenceTrace::total() const noexcept {
  return std::accumulate(logprobs_.begin(), logprobs_.end(), 0.0);
}

void SequenceTrace::accumulate_score(std::span<const double> coeffs, Matrix& grad) const {
  require(coeffs.size() == steps_.size(), ErrorKind::shape_mismatch,
          "one coefficient per step required");
  for (std::size_t t = 0; t < steps_.size(); ++t) {
    const Step& s = steps_[t];
    if (s.legal.size() == 1 || coeffs[t] == 0.0) continue;
    for (std::size_t i = 0; i < s.legal.size(); ++i) {
      const double g = coeffs[t] * ((s.legal[i] == s.chosen ? 1.0 : 0.0) - s.probs[i]);
      auto row = grad.row(static_cast<std::size_t>(s.legal[i]));
      for (std::size_t j = 0; j < s.feature_index.size(); ++j) {
        row[s.feature_index[j]] += g * s.feature_value[j];
      }
    }
  }
}

void SequenceTrace::accumulate_score(double coeff, Matrix& grad) const {
  const std::vector<double> coeffs(steps_.size(), coeff);
  accumulate_score(coeffs, grad);
}

SequenceLogprob sequence_logprob(const PolicyParams& params, const DecodingContext& ctx,
                                 std::span<const TokenId> tokens) {
  SequenceTrace trace(params, ctx, tokens);
  return {trace.total(), trace.logprobs()};
}

Matrix grad_sequence_logprob(const PolicyParams& params, const DecodingContext& ctx,
                             std::span<const TokenId> tokens) {
  SequenceTrace trace(params, ctx, tokens);
  Matrix grad(params.weights.rows(), params.weights.cols());
  trace.accumulate_score(1.0, grad);
  return grad;
}

std::vector<std::size_t> sample_entries(std::size_t total, std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> all(total);
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (total <= count) return all;
  Rng rng(derive_seed(seed, {0xfd}));
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = static_cast<std::size_t>(
        uniform_int(rng, static_cast<std::int64_t>(i), static_cast<std::int64_t>(total)));
    std::swap(all[i], all[j]);
  }
  all.resize(count);
  std::sort(all.begin(), all.end());
  return all;
}

double finite_diff_max_rel_error(const std::function<double(const PolicyParams&)>& f,
                                 const PolicyParams& at, const Matrix& analytic, double h,
                                 std::span<const std::size_t> entries, double floor) {
  require(analytic.same_shape(at.weights), ErrorKind::shape_mismatch,
          "analytic gradient shape differs from parameters");
  PolicyParams probe = at;
  double worst = 0.0;
  for (std::size_t e : entries) {
    double& w = probe.weights.flat()[e];
    const double saved = w;
    w = saved + h;
    const double up = f(probe);
    w = saved - h;
    const double down = f(probe);
    w = saved;
    const double fd = (up - down) / (2.0 * h);
    const double an = analytic.flat()[e];
    worst = std::max(worst, std::abs(fd - an) / std::max(std::abs(an), floor));
  }
  return worst;
}

double finite_diff_check(const PolicyParams& params, const DecodingContext& ctx,
                         std::span<const TokenId> tokens, double h, std::uint64_t seed) {
  require(h >= 1e-7 && h <= 1e-3, ErrorKind::invalid_config, "h must lie in [1e-7, 1e-3]");
  const Matrix analytic = grad_sequence_logprob(params, ctx, tokens);
  const auto entries = sample_entries(params.weights.size(), 64, seed);
  return finite_diff_max_rel_error(
      [&](const PolicyParams& p) { return sequence_logprob(p, ctx, tokens).total; }, params,
      analytic, h, entries);
}

void enumerate_completions(const DecodingContext& ctx,
                           const std::function<void(std::span<const TokenId>)>& visit) {
  std::vector<TokenId> prefix;
  std::function<void(const PrefixState&)> walk = [&](const PrefixState& s) {
    if (s.finished) {
      visit(prefix);
      return;
    }
    for (TokenMask m = ctx.legal_tokens(s); m; m &= m - 1) {
      const auto tok = static_cast<TokenId>(std::countr_zero(m));
      prefix.push_back(tok);
      walk(ctx.advance(s, tok));
      prefix.pop_back();
    }
  };
  walk(ctx.initial_state());
}

}  // namespace gspo_lab
