#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gspo_lab/policy.hpp"
#include "gspo_lab/rng.hpp"

namespace gspo_lab::test {

// Five tokens {a, b, c, d, EOS}, at most `max_len` tokens before EOS.
//   start: a, b, c (no EOS, no d)
//   after d: a or EOS
//   otherwise: anything
// Features: a per-context random vector, one-hot of the last token, progress, bias.
class TinyGrammar final : public DecodingContext {
 public:
  static constexpr std::size_t kV = 5;
  static constexpr std::size_t kContext = 3;
  static constexpr std::size_t kF = kContext + (kV + 1) + 2;

  explicit TinyGrammar(std::uint64_t seed, int max_len = 3) : max_len_(max_len) {
    Rng rng(seed);
    for (auto& x : context_) x = uniform_real(rng, -1.0, 1.0);
  }

  std::size_t vocab_size() const override { return kV; }
  std::size_t feature_dim() const override { return kF; }
  TokenId eos() const override { return kV - 1; }

  TokenMask legal_tokens(const PrefixState& s) const override {
    if (s.finished) return 0;
    if (s.tokens_emitted >= max_len_) return mask_of(eos());
    if (s.last_token == kBos) return mask_of(0) | mask_of(1) | mask_of(2);
    if (s.last_token == 3) return mask_of(0) | mask_of(eos());
    return (TokenMask{1} << kV) - 1;
  }

  void featurize(const PrefixState& s, std::span<double> out) const override {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t i = 0; i < kContext; ++i) out[i] = context_[i];
    out[kContext + static_cast<std::size_t>(s.last_token + 1)] = 1.0;
    out[kF - 2] = static_cast<double>(s.tokens_emitted) / max_len_;
    out[kF - 1] = 1.0;
  }

  PrefixState advance(const PrefixState& s, TokenId t) const override {
    PrefixState n = s;
    if (t == eos()) {
      n.finished = true;
    } else {
      ++n.tokens_emitted;
    }
    n.last_token = t;
    return n;
  }

  std::string detokenize(std::span<const TokenId> tokens) const override {
    std::string out;
    for (auto t : tokens) {
      if (t != eos()) out += static_cast<char>('a' + t);
    }
    return out;
  }

 private:
  int max_len_;
  std::array<double, kContext> context_{};
};

// Same alphabet; every token ends the completion, so |y| = 1.
class OneShotGrammar final : public DecodingContext {
 public:
  explicit OneShotGrammar(std::uint64_t seed) : inner_(seed, 1) {}

  std::size_t vocab_size() const override { return inner_.vocab_size(); }
  std::size_t feature_dim() const override { return inner_.feature_dim(); }
  TokenId eos() const override { return inner_.eos(); }
  TokenMask legal_tokens(const PrefixState& s) const override {
    return s.finished ? 0 : (TokenMask{1} << TinyGrammar::kV) - 1;
  }
  void featurize(const PrefixState& s, std::span<double> out) const override {
    inner_.featurize(s, out);
  }
  PrefixState advance(const PrefixState& s, TokenId t) const override {
    PrefixState n = inner_.advance(s, t);
    n.finished = true;
    return n;
  }
  std::string detokenize(std::span<const TokenId> t) const override { return inner_.detokenize(t); }

 private:
  TinyGrammar inner_;
};

inline PolicyParams random_params(std::size_t v, std::size_t f, double stddev, std::uint64_t seed) {
  return PolicyParams::gaussian(v, f, stddev, seed);
}

}  // namespace gspo_lab::test
