#pragma once

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "gspo_lab/rl.hpp"
#include "gspo_lab/rng.hpp"
#include "gspo_lab/transaction.hpp"

namespace gspo_lab::test {

// Every signal off, distance 0, no history.
inline TransactionRecord clean_record(std::string id = "ord-1") {
  TransactionRecord r;
  r.order_id = std::move(id);
  r.timestamp = 1700000000;
  r.amount = 0.0;
  r.consignee_name = "Ada Park";
  r.email = "ada@example.com";
  r.email_age_days = 0;
  r.ip_country = "US";
  r.shipping_country = "US";
  return r;
}

// Fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("gspo_lab_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

inline void spit(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f << text;
}

// G completions sampled under `old`, scored with the given rewards (random
// from the reward lattice when empty), advantages from group normalization.
inline GroupRollout make_group(std::shared_ptr<const DecodingContext> ctx, const PolicyParams& old,
                               int g, std::uint64_t seed, std::vector<double> rewards = {}) {
  GroupRollout group;
  group.prompt_key = "g" + std::to_string(seed);
  group.context = ctx;
  Rng rng(derive_seed(seed, {0xabc}));
  static constexpr double kLattice[] = {0.0, 1.0, 2.5, 3.5};
  if (rewards.empty()) {
    for (int i = 0; i < g; ++i) rewards.push_back(kLattice[rng() % 4]);
    if (std::all_of(rewards.begin(), rewards.end(), [&](double r) { return r == rewards[0]; })) {
      rewards[0] = rewards[0] == 0.0 ? 3.5 : 0.0;
    }
  }
  for (int i = 0; i < g; ++i) {
    auto c = sample_completion(old, *ctx, derive_seed(seed, {static_cast<std::uint64_t>(i)}));
    double total = 0.0;
    for (double lp : c.logprobs) total += lp;
    group.old_logprobs.push_back(c.logprobs);
    group.old_totals.push_back(total);
    group.completions.push_back(std::move(c));
  }
  group.rewards = std::move(rewards);
  group.advantages = group_advantages(group.rewards, 1e-8);
  return group;
}

// W + N(0, stddev) entrywise.
inline PolicyParams jitter(const PolicyParams& p, double stddev, std::uint64_t seed) {
  auto noise = PolicyParams::gaussian(p.weights.rows(), p.weights.cols(), stddev, seed);
  noise.weights += p.weights;
  return noise;
}

}  // namespace gspo_lab::test
