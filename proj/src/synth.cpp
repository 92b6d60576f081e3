#include "gspo_lab/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "gspo_lab/errors.hpp"
#include "gspo_lab/rng.hpp"

namespace gspo_lab {

namespace {

constexpr std::array<std::string_view, 12> kFirstNames{
    "wei", "li", "maria", "james", "anna", "omar", "yuki", "lucas", "fatima", "ivan", "chloe", "raj"};
constexpr std::array<std::string_view, 12> kLastNames{
    "zhang", "garcia", "smith", "kim", "müller", "rossi", "tanaka", "silva", "khan", "novak",
    "dubois", "patel"};
constexpr std::array<std::string_view, 10> kCountries{"US", "GB", "DE", "FR", "BR",
                                                      "JP", "CN", "IN", "CA", "AU"};
constexpr std::array<std::string_view, 4> kDomains{"mail.com", "inbox.net", "post.org", "webmail.io"};

constexpr std::int64_t kDay = 86400;

template <typename T, std::size_t N>
const T& pick(Rng& rng, const std::array<T, N>& items) {
  return items[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(N)))];
}

TransactionRecord make_record(const GenConfig& cfg, std::size_t index, SignalSet signals,
                              Rng& rng) {
  auto on = [&](Signal s) { return contains(signals, s); };
  TransactionRecord r;
  char id[32];
  std::snprintf(id, sizeof id, "%06zu", index);
  r.order_id = cfg.id_prefix + id;
  r.timestamp = uniform_int(rng, cfg.start_epoch, cfg.end_epoch);
  r.amount = std::round(std::exp(4.5 + 1.0 * (uniform01(rng) + uniform01(rng) + uniform01(rng) - 1.5) * 2.0) * 100.0) / 100.0;

  const std::string first(pick(rng, kFirstNames));
  const std::string last(pick(rng, kLastNames));
  r.consignee_name = first + " " + last;
  const std::string domain(pick(rng, kDomains));
  if (on(Signal::email_matches_name)) {
    r.email = first + "." + last + "@" + domain;
  } else {
    r.email = "user" + std::to_string(uniform_int(rng, 1000, 99999)) + "@" + domain;
  }
  r.email_age_days = uniform_int(rng, 0, 3000);

  r.shipping_country = std::string(pick(rng, kCountries));
  r.ip_is_proxy = on(Signal::ip_is_proxy);
  r.ip_is_hosting = on(Signal::ip_is_hosting);
  r.ip_type = r.ip_is_hosting ? IpType::hosting
                              : (bernoulli(rng, 0.6) ? IpType::residential : IpType::cellular);
  r.card_brand = static_cast<CardBrand>(uniform_int(rng, 0, 6));
  r.card_is_prepaid = on(Signal::card_is_prepaid);
  r.address_is_freight_forwarder = on(Signal::address_is_freight_forwarder);
  r.phone_matches_address = on(Signal::phone_matches_address);
  r.email_matches_name = on(Signal::email_matches_name);

  const double threshold = cfg.distance_threshold_km;
  if (on(Signal::far_shipping_distance)) {
    r.ip_to_shipping_km = std::round(uniform_real(rng, threshold + 1.0, threshold * 8.0 + 1.0));
    r.ip_country = std::string(pick(rng, kCountries));
  } else {
    r.ip_to_shipping_km = std::floor(uniform_real(rng, 0.0, threshold));
    r.ip_country = r.shipping_country;
  }

  auto past = [&] {
    return std::max<std::int64_t>(1, r.timestamp - uniform_int(rng, 3600, 365 * kDay));
  };
  auto past_amount = [&] { return std::round(uniform_real(rng, 5.0, 800.0) * 100.0) / 100.0; };
  if (on(Signal::failed_history)) {
    const auto n = uniform_int(rng, 1, 3);
    for (std::int64_t i = 0; i < n; ++i) {
      const auto status = bernoulli(rng, 0.5) ? OrderStatus::failed : OrderStatus::canceled;
      r.history.push_back({past_amount(), status, past()});
    }
  }
  if (on(Signal::established_history)) {
    const auto n = uniform_int(rng, 1, 4);
    for (std::int64_t i = 0; i < n; ++i) {
      r.history.push_back({past_amount(), OrderStatus::successful, past()});
    }
  }
  std::sort(r.history.begin(), r.history.end(),
            [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
  r.item_is_virtual = on(Signal::item_is_virtual);
  return r;
}

void shuffle(std::vector<LabeledRecord>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(i)));
    std::swap(v[i - 1], v[j]);
  }
}

void sort_by_id(std::vector<LabeledRecord>& v) {
  std::sort(v.begin(), v.end(),
            [](const auto& a, const auto& b) { return a.record.order_id < b.record.order_id; });
}

}  // namespace

SignalStrengths default_signal_strengths() {
  SignalStrengths s{};
  auto set = [&](Signal id, double f, double l) { s[static_cast<std::size_t>(id)] = {f, l}; };
  set(Signal::ip_is_proxy, 0.75, 0.06);
  set(Signal::ip_is_hosting, 0.40, 0.04);
  set(Signal::card_is_prepaid, 0.30, 0.25);
  set(Signal::address_is_freight_forwarder, 0.50, 0.05);
  set(Signal::item_is_virtual, 0.30, 0.30);
  set(Signal::far_shipping_distance, 0.70, 0.10);
  set(Signal::failed_history, 0.55, 0.08);
  set(Signal::phone_matches_address, 0.20, 0.80);
  set(Signal::email_matches_name, 0.25, 0.75);
  set(Signal::established_history, 0.10, 0.60);
  return s;
}

void GenConfig::validate() const {
  auto prob = [](double p) { return std::isfinite(p) && p >= 0.0 && p <= 1.0; };
  require(n_records > 0, ErrorKind::invalid_config, "n_records must be positive");
  require(prob(fraud_base_rate), ErrorKind::invalid_config, "fraud_base_rate must be in [0,1]");
  require(prob(label_noise), ErrorKind::invalid_config, "label_noise must be in [0,1]");
  require(start_epoch > 0 && start_epoch < end_epoch, ErrorKind::invalid_config,
          "time_range must satisfy 0 < start < end");
  require(start_epoch > 366 * kDay, ErrorKind::invalid_config,
          "start_epoch must leave room for a year of order history");
  require(std::isfinite(distance_threshold_km) && distance_threshold_km > 0.0,
          ErrorKind::invalid_config, "distance_threshold_km must be positive");
  bool separable = false;
  for (const auto& s : signal_strengths) {
    require(prob(s.given_fraud) && prob(s.given_legit), ErrorKind::invalid_config,
            "signal probabilities must be in [0,1]");
    separable |= s.given_fraud != s.given_legit;
  }
  require(separable, ErrorKind::invalid_config,
          "at least one signal must differ between classes");
}

GeneratedDataset generate_with_trace(const GenConfig& cfg) {
  cfg.validate();
  GeneratedDataset out;
  out.dataset.name = "synthetic-" + std::to_string(cfg.seed);
  out.dataset.records.reserve(cfg.n_records);
  out.trace.reserve(cfg.n_records);
  for (std::size_t i = 0; i < cfg.n_records; ++i) {
    Rng rng(derive_seed(cfg.seed, {i}));
    GenerationTrace t;
    t.label = bernoulli(rng, cfg.fraud_base_rate) ? Label::fraudulent : Label::legitimate;
    t.feature_class = t.label;
    if (bernoulli(rng, cfg.label_noise)) {
      t.feature_class = t.label == Label::fraudulent ? Label::legitimate : Label::fraudulent;
    }
    for (std::size_t s = 0; s < kSignalCount; ++s) {
      const auto& strength = cfg.signal_strengths[s];
      const double p = t.feature_class == Label::fraudulent ? strength.given_fraud
                                                            : strength.given_legit;
      if (bernoulli(rng, p)) t.sampled_signals |= SignalSet{1} << s;
    }
    out.dataset.records.push_back({make_record(cfg, i, t.sampled_signals, rng), t.label});
    out.trace.push_back(t);
  }
  return out;
}

Dataset generate_dataset(const GenConfig& config) {
  return std::move(generate_with_trace(config).dataset);
}

std::pair<Dataset, Dataset> chronological_split(const Dataset& dataset, std::int64_t cutoff) {
  Dataset train{dataset.name + "-train", {}};
  Dataset test{dataset.name + "-test", {}};
  for (const auto& r : dataset.records) {
    (r.record.timestamp < cutoff ? train : test).records.push_back(r);
  }
  require(!train.records.empty(), ErrorKind::empty_side, "no records before the cutoff");
  require(!test.records.empty(), ErrorKind::empty_side, "no records at or after the cutoff");
  train.sort_by_timestamp();
  test.sort_by_timestamp();
  return {std::move(train), std::move(test)};
}

Dataset balance_training(const Dataset& train, double legit_excess, std::uint64_t seed) {
  require(std::isfinite(legit_excess) && legit_excess > 0.0, ErrorKind::invalid_config,
          "legit_excess must be positive");
  std::vector<LabeledRecord> fraud;
  std::vector<LabeledRecord> legit;
  for (const auto& r : train.records) {
    (r.label == Label::fraudulent ? fraud : legit).push_back(r);
  }
  require(!fraud.empty() && !legit.empty(), ErrorKind::degenerate_data,
          "training data must contain both classes");
  const auto target = static_cast<std::size_t>(std::llround(fraud.size() * legit_excess));
  require(legit.size() >= target, ErrorKind::insufficient_legit,
          "need " + std::to_string(target) + " legitimate records, have " +
              std::to_string(legit.size()));

  Rng rng(derive_seed(seed, {0xba1a}));
  sort_by_id(legit);
  shuffle(legit, rng);
  legit.resize(target);

  Dataset out{train.name + "-balanced", std::move(fraud)};
  out.records.insert(out.records.end(), legit.begin(), legit.end());
  sort_by_id(out.records);
  shuffle(out.records, rng);
  return out;
}

OracleExplanation oracle_explanation(const TransactionRecord& record,
                                     double distance_threshold_km, Label label) {
  return {active_signals(record, distance_threshold_km), label};
}

TrainTestSplit build_train_test(const Dataset& pool, const SplitProtocol& protocol,
                                std::uint64_t seed) {
  auto [train_window, test_window] = chronological_split(pool, protocol.cutoff);

  if (protocol.train_fraud_cap > 0) {
    std::vector<LabeledRecord> fraud;
    std::vector<LabeledRecord> legit;
    for (auto& r : train_window.records) {
      (r.label == Label::fraudulent ? fraud : legit).push_back(std::move(r));
    }
    if (fraud.size() > protocol.train_fraud_cap) {
      Rng rng(derive_seed(seed, {0xcab}));
      sort_by_id(fraud);
      shuffle(fraud, rng);
      fraud.resize(protocol.train_fraud_cap);
    }
    train_window.records = std::move(fraud);
    train_window.records.insert(train_window.records.end(), legit.begin(), legit.end());
  }

  TrainTestSplit out;
  out.train = balance_training(train_window, protocol.legit_excess, seed);
  out.train.name = "train";

  if (protocol.test_records > 0 && protocol.test_records < test_window.records.size()) {
    Rng rng(derive_seed(seed, {0x7e57}));
    sort_by_id(test_window.records);
    shuffle(test_window.records, rng);
    test_window.records.resize(protocol.test_records);
    test_window.sort_by_timestamp();
  }
  out.test = std::move(test_window);
  out.test.name = "test";
  return out;
}

double fraud_posterior(const TransactionRecord& record, const GenConfig& config) {
  const SignalSet active = active_signals(record, config.distance_threshold_km);
  double like_f = 1.0;
  double like_l = 1.0;
  for (std::size_t s = 0; s < kSignalCount; ++s) {
    const bool on = (active >> s) & 1u;
    const auto& st = config.signal_strengths[s];
    like_f *= on ? st.given_fraud : 1.0 - st.given_fraud;
    like_l *= on ? st.given_legit : 1.0 - st.given_legit;
  }
  const double eta = config.label_noise;
  const double given_fraud = (1.0 - eta) * like_f + eta * like_l;
  const double given_legit = (1.0 - eta) * like_l + eta * like_f;
  const double num = config.fraud_base_rate * given_fraud;
  const double den = num + (1.0 - config.fraud_base_rate) * given_legit;
  return den > 0.0 ? num / den : 0.0;
}

}  // namespace gspo_lab
