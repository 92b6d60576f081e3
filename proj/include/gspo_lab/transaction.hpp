#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gspo_lab {

// Positive class is fraudulent. Declaration order gives the total order
// legitimate < fraudulent used for deterministic sorting.
enum class Label : std::uint8_t { legitimate = 0, fraudulent = 1 };

std::string_view to_string(Label label) noexcept;
std::optional<Label> label_from_string(std::string_view text) noexcept;

enum class IpType : std::uint8_t { residential, cellular, hosting };
enum class CardBrand : std::uint8_t { visa, mastercard, amex, unionpay, jcb, discover };
enum class OrderStatus : std::uint8_t { successful, canceled, failed };

std::string_view to_string(IpType v) noexcept;
std::string_view to_string(CardBrand v) noexcept;
std::string_view to_string(OrderStatus v) noexcept;

struct HistoricalOrder {
  double amount = 0.0;
  OrderStatus status = OrderStatus::successful;
  std::int64_t timestamp = 0;

  bool operator==(const HistoricalOrder&) const = default;
};

// One e-commerce order, reduced to a representative field per feature
// category: transaction details, network, payment, shipping, identity,
// distance/consistency and historical context.
struct TransactionRecord {
  std::string order_id;
  std::int64_t timestamp = 0;
  double amount = 0.0;
  std::string consignee_name;
  std::string email;
  std::int64_t email_age_days = 0;
  std::string ip_country;
  std::string shipping_country;
  bool ip_is_proxy = false;
  bool ip_is_hosting = false;
  IpType ip_type = IpType::residential;
  CardBrand card_brand = CardBrand::visa;
  bool card_is_prepaid = false;
  bool address_is_freight_forwarder = false;
  bool phone_matches_address = false;
  bool email_matches_name = false;
  double ip_to_shipping_km = 0.0;
  std::vector<HistoricalOrder> history;
  bool item_is_virtual = false;

  bool operator==(const TransactionRecord&) const = default;
};

// Throws Error(malformed_record) when an invariant does not hold.
void validate(const TransactionRecord& record);

struct LabeledRecord {
  TransactionRecord record;
  Label label = Label::legitimate;

  bool operator==(const LabeledRecord&) const = default;
};

struct Dataset {
  std::string name;
  std::vector<LabeledRecord> records;

  std::size_t size() const noexcept { return records.size(); }
  std::size_t count(Label label) const noexcept;
  // Stable: ties on timestamp are broken by order_id.
  void sort_by_timestamp();
  // Throws Error(malformed_record) on a duplicate order_id or invalid record.
  void validate() const;
};

// ---------------------------------------------------------------------------
// Signal catalogue. Each signal is a named predicate over a record with a
// fixed polarity: risk signals point towards fraud, trust signals away.

enum class Polarity : std::uint8_t { risk, trust };

std::string_view to_string(Polarity p) noexcept;

enum class Signal : std::uint8_t {
  ip_is_proxy,
  ip_is_hosting,
  card_is_prepaid,
  address_is_freight_forwarder,
  item_is_virtual,
  far_shipping_distance,
  failed_history,
  phone_matches_address,
  email_matches_name,
  established_history,
};

inline constexpr std::size_t kSignalCount = 10;

struct SignalInfo {
  Signal id;
  std::string_view name;
  Polarity polarity;
};

std::span<const SignalInfo> signal_catalogue() noexcept;
const SignalInfo& signal_info(Signal s) noexcept;
std::optional<Signal> signal_from_name(std::string_view name) noexcept;

// Bit i set iff signal i is active. Pure function of the record fields.
using SignalSet = std::uint32_t;

inline constexpr double kDefaultDistanceThresholdKm = 500.0;

SignalSet active_signals(const TransactionRecord& record,
                         double distance_threshold_km = kDefaultDistanceThresholdKm);

inline bool contains(SignalSet set, Signal s) noexcept {
  return (set >> static_cast<unsigned>(s)) & 1u;
}

// ---------------------------------------------------------------------------
// Prompt modes.

enum class PromptStyle : std::uint8_t { standard, compressed };

std::string_view to_string(PromptStyle s) noexcept;

struct PromptMode {
  // Budget ceiling of the standard setup; compressed budgets sit strictly
  // below it.
  static constexpr int kStandardCeiling = 24;

  PromptStyle style = PromptStyle::standard;
  std::vector<Signal> predefined_signals;
  int max_completion_tokens = kStandardCeiling;

  static PromptMode standard(int max_tokens = kStandardCeiling);
  static PromptMode compressed(std::vector<Signal> signals, int max_tokens);

  // Throws Error(invalid_config).
  void validate() const;
  SignalSet predefined_set() const noexcept;
};

// ---------------------------------------------------------------------------
// JSONL serialization and prompt rendering.

// Single-line JSON object, keys in declaration order, label under "label".
std::string serialize_record(const TransactionRecord& record, Label label);

// Rejects unknown keys, missing keys, type mismatches and invariant violations
// with Error(malformed_record).
LabeledRecord parse_record(std::string_view line);

// The order as shown to the model: declaration-ordered JSON without the label.
std::string order_json(const TransactionRecord& record);

std::string render_prompt(const TransactionRecord& record, const PromptMode& mode);

Dataset read_jsonl(const std::filesystem::path& path);
void write_jsonl(const Dataset& dataset, const std::filesystem::path& path);
std::string to_jsonl(const Dataset& dataset);

}  // namespace gspo_lab
