#include "gspo_lab/transaction.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "gspo_lab/errors.hpp"

namespace gspo_lab {

using ordered_json = nlohmann::ordered_json;

namespace {

constexpr std::array<std::string_view, 3> kIpTypeNames{"residential", "cellular", "hosting"};
constexpr std::array<std::string_view, 6> kCardBrandNames{"visa", "mastercard", "amex",
                                                          "unionpay", "jcb", "discover"};
constexpr std::array<std::string_view, 3> kStatusNames{"successful", "canceled", "failed"};

constexpr std::array<SignalInfo, kSignalCount> kSignals{{
    {Signal::ip_is_proxy, "ip_is_proxy", Polarity::risk},
    {Signal::ip_is_hosting, "ip_is_hosting", Polarity::risk},
    {Signal::card_is_prepaid, "card_is_prepaid", Polarity::risk},
    {Signal::address_is_freight_forwarder, "address_is_freight_forwarder", Polarity::risk},
    {Signal::item_is_virtual, "item_is_virtual", Polarity::risk},
    {Signal::far_shipping_distance, "far_shipping_distance", Polarity::risk},
    {Signal::failed_history, "failed_history", Polarity::risk},
    {Signal::phone_matches_address, "phone_matches_address", Polarity::trust},
    {Signal::email_matches_name, "email_matches_name", Polarity::trust},
    {Signal::established_history, "established_history", Polarity::trust},
}};

template <typename Enum, std::size_t N>
Enum enum_from(const std::array<std::string_view, N>& names, std::string_view text,
               const char* field) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == text) return static_cast<Enum>(i);
  }
  fail(ErrorKind::malformed_record,
       std::string("unknown value '") + std::string(text) + "' for " + field);
}

[[noreturn]] void malformed(const std::string& why) { fail(ErrorKind::malformed_record, why); }

const ordered_json& field(const ordered_json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) malformed(std::string("missing field '") + key + "'");
  return *it;
}

std::string get_string(const ordered_json& obj, const char* key) {
  const auto& v = field(obj, key);
  if (!v.is_string()) malformed(std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

bool get_bool(const ordered_json& obj, const char* key) {
  const auto& v = field(obj, key);
  if (!v.is_boolean()) malformed(std::string("field '") + key + "' must be a boolean");
  return v.get<bool>();
}

std::int64_t get_int(const ordered_json& obj, const char* key) {
  const auto& v = field(obj, key);
  if (!v.is_number_integer()) malformed(std::string("field '") + key + "' must be an integer");
  return v.get<std::int64_t>();
}

double get_number(const ordered_json& obj, const char* key) {
  const auto& v = field(obj, key);
  if (!v.is_number()) malformed(std::string("field '") + key + "' must be a number");
  return v.get<double>();
}

void reject_unknown_keys(const ordered_json& obj, std::initializer_list<std::string_view> keys,
                         const char* what) {
  for (const auto& [key, _] : obj.items()) {
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      malformed(std::string("unknown key '") + key + "' in " + what);
    }
  }
}

ordered_json record_object(const TransactionRecord& r) {
  ordered_json history = ordered_json::array();
  for (const auto& h : r.history) {
    ordered_json o;
    o["amount"] = h.amount;
    o["status"] = to_string(h.status);
    o["timestamp"] = h.timestamp;
    history.push_back(std::move(o));
  }
  ordered_json o;
  o["order_id"] = r.order_id;
  o["timestamp"] = r.timestamp;
  o["amount"] = r.amount;
  o["consignee_name"] = r.consignee_name;
  o["email"] = r.email;
  o["email_age_days"] = r.email_age_days;
  o["ip_country"] = r.ip_country;
  o["shipping_country"] = r.shipping_country;
  o["ip_is_proxy"] = r.ip_is_proxy;
  o["ip_is_hosting"] = r.ip_is_hosting;
  o["ip_type"] = to_string(r.ip_type);
  o["card_brand"] = to_string(r.card_brand);
  o["card_is_prepaid"] = r.card_is_prepaid;
  o["address_is_freight_forwarder"] = r.address_is_freight_forwarder;
  o["phone_matches_address"] = r.phone_matches_address;
  o["email_matches_name"] = r.email_matches_name;
  o["ip_to_shipping_km"] = r.ip_to_shipping_km;
  o["history"] = std::move(history);
  o["item_is_virtual"] = r.item_is_virtual;
  return o;
}

}  // namespace

std::string_view to_string(Label label) noexcept {
  return label == Label::fraudulent ? "fraudulent" : "legitimate";
}

std::optional<Label> label_from_string(std::string_view text) noexcept {
  if (text == "fraudulent") return Label::fraudulent;
  if (text == "legitimate") return Label::legitimate;
  return std::nullopt;
}

std::string_view to_string(IpType v) noexcept { return kIpTypeNames[static_cast<std::size_t>(v)]; }
std::string_view to_string(CardBrand v) noexcept {
  return kCardBrandNames[static_cast<std::size_t>(v)];
}
std::string_view to_string(OrderStatus v) noexcept {
  return kStatusNames[static_cast<std::size_t>(v)];
}
std::string_view to_string(Polarity p) noexcept { return p == Polarity::risk ? "risk" : "trust"; }
std::string_view to_string(PromptStyle s) noexcept {
  return s == PromptStyle::standard ? "standard" : "compressed";
}

void validate(const TransactionRecord& r) {
  if (r.order_id.empty()) malformed("order_id is empty");
  if (r.timestamp <= 0) malformed("timestamp must be strictly positive");
  if (!std::isfinite(r.amount) || r.amount < 0.0) malformed("amount must be finite and >= 0");
  if (r.email_age_days < 0) malformed("email_age_days must be >= 0");
  if (!std::isfinite(r.ip_to_shipping_km) || r.ip_to_shipping_km < 0.0) {
    malformed("ip_to_shipping_km must be finite and >= 0");
  }
  for (const auto& h : r.history) {
    if (h.timestamp >= r.timestamp) malformed("history timestamp not before order timestamp");
    if (!std::isfinite(h.amount) || h.amount < 0.0) malformed("history amount must be >= 0");
  }
}

std::size_t Dataset::count(Label label) const noexcept {
  return static_cast<std::size_t>(std::count_if(
      records.begin(), records.end(), [label](const auto& r) { return r.label == label; }));
}

void Dataset::sort_by_timestamp() {
  std::stable_sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
    if (a.record.timestamp != b.record.timestamp) return a.record.timestamp < b.record.timestamp;
    return a.record.order_id < b.record.order_id;
  });
}

void Dataset::validate() const {
  std::set<std::string_view> ids;
  for (const auto& r : records) {
    gspo_lab::validate(r.record);
    if (!ids.insert(r.record.order_id).second) {
      malformed("duplicate order_id '" + r.record.order_id + "' in dataset " + name);
    }
  }
}

std::span<const SignalInfo> signal_catalogue() noexcept { return kSignals; }

const SignalInfo& signal_info(Signal s) noexcept { return kSignals[static_cast<std::size_t>(s)]; }

std::optional<Signal> signal_from_name(std::string_view name) noexcept {
  for (const auto& info : kSignals) {
    if (info.name == name) return info.id;
  }
  return std::nullopt;
}

SignalSet active_signals(const TransactionRecord& r, double distance_threshold_km) {
  bool failed = false;
  bool established = false;
  for (const auto& h : r.history) {
    failed |= h.status != OrderStatus::successful;
    established |= h.status == OrderStatus::successful;
  }
  const std::array<bool, kSignalCount> active{
      r.ip_is_proxy,
      r.ip_is_hosting,
      r.card_is_prepaid,
      r.address_is_freight_forwarder,
      r.item_is_virtual,
      r.ip_to_shipping_km > distance_threshold_km,
      failed,
      r.phone_matches_address,
      r.email_matches_name,
      established,
  };
  SignalSet set = 0;
  for (std::size_t i = 0; i < kSignalCount; ++i) {
    if (active[i]) set |= SignalSet{1} << i;
  }
  return set;
}

PromptMode PromptMode::standard(int max_tokens) {
  PromptMode m;
  m.max_completion_tokens = max_tokens;
  m.validate();
  return m;
}

PromptMode PromptMode::compressed(std::vector<Signal> signals, int max_tokens) {
  PromptMode m;
  m.style = PromptStyle::compressed;
  m.predefined_signals = std::move(signals);
  m.max_completion_tokens = max_tokens;
  m.validate();
  return m;
}

void PromptMode::validate() const {
  require(max_completion_tokens > 0, ErrorKind::invalid_config,
          "max_completion_tokens must be positive");
  if (style == PromptStyle::standard) {
    require(predefined_signals.empty(), ErrorKind::invalid_config,
            "standard mode takes no predefined signals");
    return;
  }
  require(!predefined_signals.empty(), ErrorKind::invalid_config,
          "compressed mode needs predefined signals");
  require(max_completion_tokens < kStandardCeiling, ErrorKind::invalid_config,
          "compressed max_completion_tokens must be below the standard ceiling");
}

SignalSet PromptMode::predefined_set() const noexcept {
  SignalSet set = 0;
  for (auto s : predefined_signals) set |= SignalSet{1} << static_cast<unsigned>(s);
  return set;
}

std::string serialize_record(const TransactionRecord& record, Label label) {
  auto o = record_object(record);
  o["label"] = to_string(label);
  return o.dump();
}

std::string order_json(const TransactionRecord& record) { return record_object(record).dump(); }

LabeledRecord parse_record(std::string_view line) {
  ordered_json o;
  try {
    o = ordered_json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    malformed(std::string("invalid JSON: ") + e.what());
  }
  if (!o.is_object()) malformed("record must be a JSON object");
  reject_unknown_keys(o,
                      {"order_id", "timestamp", "amount", "consignee_name", "email",
                       "email_age_days", "ip_country", "shipping_country", "ip_is_proxy",
                       "ip_is_hosting", "ip_type", "card_brand", "card_is_prepaid",
                       "address_is_freight_forwarder", "phone_matches_address",
                       "email_matches_name", "ip_to_shipping_km", "history", "item_is_virtual",
                       "label"},
                      "record");

  LabeledRecord out;
  auto& r = out.record;
  r.order_id = get_string(o, "order_id");
  r.timestamp = get_int(o, "timestamp");
  r.amount = get_number(o, "amount");
  r.consignee_name = get_string(o, "consignee_name");
  r.email = get_string(o, "email");
  r.email_age_days = get_int(o, "email_age_days");
  r.ip_country = get_string(o, "ip_country");
  r.shipping_country = get_string(o, "shipping_country");
  r.ip_is_proxy = get_bool(o, "ip_is_proxy");
  r.ip_is_hosting = get_bool(o, "ip_is_hosting");
  r.ip_type = enum_from<IpType>(kIpTypeNames, get_string(o, "ip_type"), "ip_type");
  r.card_brand = enum_from<CardBrand>(kCardBrandNames, get_string(o, "card_brand"), "card_brand");
  r.card_is_prepaid = get_bool(o, "card_is_prepaid");
  r.address_is_freight_forwarder = get_bool(o, "address_is_freight_forwarder");
  r.phone_matches_address = get_bool(o, "phone_matches_address");
  r.email_matches_name = get_bool(o, "email_matches_name");
  r.ip_to_shipping_km = get_number(o, "ip_to_shipping_km");
  r.item_is_virtual = get_bool(o, "item_is_virtual");

  const auto& history = field(o, "history");
  if (!history.is_array()) malformed("field 'history' must be an array");
  for (const auto& h : history) {
    if (!h.is_object()) malformed("history entries must be objects");
    reject_unknown_keys(h, {"amount", "status", "timestamp"}, "history entry");
    HistoricalOrder order;
    order.amount = get_number(h, "amount");
    order.status = enum_from<OrderStatus>(kStatusNames, get_string(h, "status"), "status");
    order.timestamp = get_int(h, "timestamp");
    r.history.push_back(order);
  }

  auto label = label_from_string(get_string(o, "label"));
  if (!label) malformed("label must be 'fraudulent' or 'legitimate'");
  out.label = *label;

  validate(r);
  return out;
}

std::string render_prompt(const TransactionRecord& record, const PromptMode& mode) {
  std::ostringstream out;
  out << "You are a payment risk analyst reviewing a card-not-present e-commerce order.\n"
         "Decide whether the order is fraudulent or legitimate.\n\n"
         "Order details (JSON):\n"
      << order_json(record) << "\n\n";
  if (mode.style == PromptStyle::standard) {
    out << "Study the order and identify the risk signals that suggest fraud and the trust "
           "signals that support its authenticity. Use your own judgement about which details "
           "matter, then weigh all the evidence before deciding.\n\n";
  } else {
    out << "Predefined signals to check:\n";
    for (auto s : mode.predefined_signals) {
      const auto& info = signal_info(s);
      out << "- " << info.name << " (" << to_string(info.polarity) << ")\n";
    }
    out << "\nCheck only the predefined signals above. Be brief and decisive: use at most "
        << mode.max_completion_tokens << " tokens.\n\n";
  }
  out << "Output format: list the signals you identified inside <reason></reason>, then give "
         "exactly one verdict, fraudulent or legitimate, inside <risk></risk>.\n";
  return out.str();
}

std::string to_jsonl(const Dataset& dataset) {
  std::string out;
  for (const auto& r : dataset.records) {
    out += serialize_record(r.record, r.label);
    out += '\n';
  }
  return out;
}

void write_jsonl(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorKind::io, "cannot open '" + path.string() + "' for writing");
  f << to_jsonl(dataset);
  if (!f) fail(ErrorKind::io, "write failed for '" + path.string() + "'");
}

Dataset read_jsonl(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::io, "cannot open dataset '" + path.string() + "'");
  Dataset ds;
  ds.name = path.stem().string();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      ds.records.push_back(parse_record(line));
    } catch (const Error& e) {
      fail(ErrorKind::malformed_record,
           path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  ds.validate();
  return ds;
}

}  // namespace gspo_lab
