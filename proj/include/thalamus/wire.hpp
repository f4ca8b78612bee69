#pragma once

// Line-delimited JSON protocol. Every frame is one UTF-8 JSON object on a
// single line terminated by one 0x0A byte. Keys are written canonically:
// "type" first, the rest in lexicographic order (nested objects sorted too),
// so equal messages always encode to equal bytes.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "thalamus/model.hpp"

namespace thalamus::wire {

using json = nlohmann::json;

inline constexpr std::size_t kDefaultMaxFrameBytes = 1u << 20;

/// The string that stands for a Missing value on the wire.
inline constexpr std::string_view kMissingToken = "NA";

class EncodeError : public Error {
 public:
  explicit EncodeError(const std::string& reason) : Error("encode_error", reason) {}
};

class DecodeError : public Error {
 public:
  explicit DecodeError(const std::string& reason)
      : Error("decode_error", reason), reason_(reason) {}
  const std::string& reason() const noexcept { return reason_; }

 private:
  std::string reason_;
};

class FrameTooLarge : public Error {
 public:
  explicit FrameTooLarge(std::size_t limit)
      : Error("frame_too_large", "frame exceeds " + std::to_string(limit) + " bytes") {}
};

enum class Role { device, client };

struct Hello {
  Role role = Role::client;
  std::string id;
  std::vector<SignalDescriptor> signals;
  friend bool operator==(const Hello&, const Hello&) = default;
};

struct Catalog {
  std::vector<SignalDescriptor> signals;
  friend bool operator==(const Catalog&, const Catalog&) = default;
};

struct Subscribe {
  std::vector<SignalKey> selection;
  std::vector<TransformSpec> transforms;
  friend bool operator==(const Subscribe&, const Subscribe&) = default;
};

struct Ack {
  std::string of;
  bool ok = true;
  std::string detail;
  friend bool operator==(const Ack&, const Ack&) = default;
};

/// A data frame. `label` is only set on frames produced by epoch extraction.
struct Data {
  Sample sample;
  std::string label;
  friend bool operator==(const Data&, const Data&) = default;
};

struct Control {
  std::string action;
  Params params;
  friend bool operator==(const Control&, const Control&) = default;
};

struct ErrorMsg {
  std::string code;
  std::string message;
  friend bool operator==(const ErrorMsg&, const ErrorMsg&) = default;
};

using Message = std::variant<Hello, Catalog, Subscribe, Ack, Data, Control, ErrorMsg>;

inline const char* type_name(const Message& m) {
  static constexpr const char* kNames[] = {"hello", "catalog", "subscribe", "ack",
                                           "data",  "control", "error"};
  return kNames[m.index()];
}

// ---------------------------------------------------------------------------
// JSON conversion helpers (also used by the config and dataset formats)

namespace detail {

inline json param_to_json(const ParamValue& v) {
  return std::visit(
      [](const auto& x) -> json {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, double>) {
          if (!std::isfinite(x)) throw EncodeError("non-finite parameter");
        }
        return json(x);
      },
      v);
}

inline ParamValue param_from_json(const json& j, const std::string& name) {
  switch (j.type()) {
    case json::value_t::boolean: return j.get<bool>();
    case json::value_t::number_integer: return j.get<std::int64_t>();
    case json::value_t::number_unsigned: {
      auto u = j.get<std::uint64_t>();
      if (u > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max()))
        throw DecodeError("parameter out of range: " + name);
      return static_cast<std::int64_t>(u);
    }
    case json::value_t::number_float: {
      double d = j.get<double>();
      if (!std::isfinite(d)) throw DecodeError("non-finite number in " + name);
      return d;
    }
    case json::value_t::string: return j.get<std::string>();
    default: throw DecodeError("wrong field type: " + name);
  }
}

inline const json& field(const json& obj, const char* name) {
  auto it = obj.find(name);
  if (it == obj.end()) throw DecodeError(std::string("missing field: ") + name);
  return *it;
}

inline std::string string_field(const json& obj, const char* name) {
  const json& j = field(obj, name);
  if (!j.is_string()) throw DecodeError(std::string("wrong field type: ") + name);
  return j.get<std::string>();
}

inline bool bool_field(const json& obj, const char* name) {
  const json& j = field(obj, name);
  if (!j.is_boolean()) throw DecodeError(std::string("wrong field type: ") + name);
  return j.get<bool>();
}

inline double finite_number(const json& j, const char* name) {
  if (!j.is_number()) throw DecodeError(std::string("wrong field type: ") + name);
  double d = j.get<double>();
  if (!std::isfinite(d)) throw DecodeError(std::string("non-finite number in ") + name);
  return d;
}

inline std::int64_t integer_value(const json& j, const char* name) {
  if (j.is_number_unsigned()) {
    auto u = j.get<std::uint64_t>();
    if (u > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max()))
      throw DecodeError(std::string("integer out of range: ") + name);
    return static_cast<std::int64_t>(u);
  }
  if (j.is_number_integer()) return j.get<std::int64_t>();
  throw DecodeError(std::string("wrong field type: ") + name);
}

inline const json& array_field(const json& obj, const char* name) {
  const json& j = field(obj, name);
  if (!j.is_array()) throw DecodeError(std::string("wrong field type: ") + name);
  return j;
}

}  // namespace detail

inline json to_json(const SignalDescriptor& d) {
  if (!std::isfinite(d.rate_hz)) throw EncodeError("non-finite rate_hz");
  return json{{"device_id", d.device_id}, {"signal", d.signal}, {"unit", d.unit},
              {"rate_hz", d.rate_hz},     {"channels", d.channels}};
}

inline SignalDescriptor descriptor_from_json(const json& j) {
  using namespace detail;
  if (!j.is_object()) throw DecodeError("descriptor must be an object");
  SignalDescriptor d;
  d.device_id = string_field(j, "device_id");
  d.signal = string_field(j, "signal");
  d.unit = j.contains("unit") ? string_field(j, "unit") : std::string{};
  d.rate_hz = finite_number(field(j, "rate_hz"), "rate_hz");
  auto channels = integer_value(field(j, "channels"), "channels");
  if (channels > std::numeric_limits<int>::max() || channels < std::numeric_limits<int>::min())
    throw DecodeError("channels out of range");
  d.channels = static_cast<int>(channels);
  return d;
}

inline json to_json(const TransformSpec& s) {
  json params = json::object();
  for (const auto& [k, v] : s.params) params[k] = detail::param_to_json(v);
  json j = json::object();
  j["kind"] = to_string(s.kind);
  j["params"] = std::move(params);
  return j;
}

/// {"kind":"savgol","params":{"window":5,"order":2}}; "params" may be omitted.
inline TransformSpec transform_from_json(const json& j) {
  if (!j.is_object()) throw DecodeError("transform must be an object");
  auto kind = transform_kind_from_string(detail::string_field(j, "kind"));
  if (!kind) throw DecodeError("unknown transform kind: " + j["kind"].get<std::string>());
  TransformSpec s{*kind, {}};
  if (auto it = j.find("params"); it != j.end()) {
    if (!it->is_object()) throw DecodeError("params must be an object");
    for (const auto& [k, v] : it->items()) s.params.emplace(k, detail::param_from_json(v, k));
  }
  return s;
}

inline json values_to_json(const Values& values) {
  json arr = json::array();
  for (const auto& v : values) {
    if (v.is_missing()) {
      arr.push_back(kMissingToken);
    } else {
      if (!std::isfinite(v.number())) throw EncodeError("non-finite sample value");
      arr.push_back(v.number());
    }
  }
  return arr;
}

inline Values values_from_json(const json& arr) {
  if (!arr.is_array()) throw DecodeError("wrong field type: values");
  Values out;
  out.reserve(arr.size());
  for (const auto& v : arr) {
    if (v.is_string()) {
      if (v.get_ref<const std::string&>() != kMissingToken)
        throw DecodeError("wrong field type: values");
      out.push_back(SampleValue::missing());
    } else {
      out.emplace_back(detail::finite_number(v, "values"));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// encode / decode

namespace detail {

inline json body_of(const Hello& m) {
  json j{{"role", m.role == Role::device ? "device" : "client"}, {"id", m.id}};
  if (m.role == Role::device || !m.signals.empty()) {
    json sigs = json::array();
    for (const auto& d : m.signals) sigs.push_back(to_json(d));
    j["signals"] = std::move(sigs);
  }
  return j;
}

inline json body_of(const Catalog& m) {
  json sigs = json::array();
  for (const auto& d : m.signals) sigs.push_back(to_json(d));
  return json{{"signals", std::move(sigs)}};
}

inline json body_of(const Subscribe& m) {
  json sel = json::array();
  for (const auto& k : m.selection) sel.push_back(json{{"device_id", k.device_id}, {"signal", k.signal}});
  json tr = json::array();
  for (const auto& t : m.transforms) tr.push_back(to_json(t));
  return json{{"selection", std::move(sel)}, {"transforms", std::move(tr)}};
}

inline json body_of(const Ack& m) {
  return json{{"of", m.of}, {"ok", m.ok}, {"detail", m.detail}};
}

inline json body_of(const Data& m) {
  if (m.sample.t < 0) throw EncodeError("negative timestamp");
  if (m.sample.values.empty()) throw EncodeError("empty values");
  json j{{"device_id", m.sample.device_id},
         {"signal", m.sample.signal},
         {"t", m.sample.t},
         {"values", values_to_json(m.sample.values)}};
  if (!m.label.empty()) j["label"] = m.label;
  return j;
}

inline json body_of(const Control& m) {
  json params = json::object();
  for (const auto& [k, v] : m.params) params[k] = param_to_json(v);
  return json{{"action", m.action}, {"params", std::move(params)}};
}

inline json body_of(const ErrorMsg& m) {
  return json{{"code", m.code}, {"message", m.message}};
}

inline Hello decode_hello(const json& j) {
  Hello m;
  auto role = string_field(j, "role");
  if (role == "device") m.role = Role::device;
  else if (role == "client") m.role = Role::client;
  else throw DecodeError("unknown role: " + role);
  m.id = string_field(j, "id");
  if (auto it = j.find("signals"); it != j.end()) {
    if (!it->is_array()) throw DecodeError("wrong field type: signals");
    for (const auto& d : *it) m.signals.push_back(descriptor_from_json(d));
  } else if (m.role == Role::device) {
    throw DecodeError("missing field: signals");
  }
  return m;
}

inline Catalog decode_catalog(const json& j) {
  Catalog m;
  for (const auto& d : array_field(j, "signals")) m.signals.push_back(descriptor_from_json(d));
  return m;
}

inline Subscribe decode_subscribe(const json& j) {
  Subscribe m;
  for (const auto& s : array_field(j, "selection")) {
    if (!s.is_object()) throw DecodeError("wrong field type: selection");
    m.selection.push_back({string_field(s, "device_id"), string_field(s, "signal")});
  }
  if (auto it = j.find("transforms"); it != j.end()) {
    if (!it->is_array()) throw DecodeError("wrong field type: transforms");
    for (const auto& t : *it) m.transforms.push_back(transform_from_json(t));
  }
  return m;
}

inline Ack decode_ack(const json& j) {
  Ack m;
  m.of = string_field(j, "of");
  m.ok = bool_field(j, "ok");
  m.detail = j.contains("detail") ? string_field(j, "detail") : std::string{};
  return m;
}

inline Data decode_data(const json& j) {
  Data m;
  m.sample.device_id = string_field(j, "device_id");
  m.sample.signal = string_field(j, "signal");
  m.sample.t = integer_value(field(j, "t"), "t");
  if (m.sample.t < 0) throw DecodeError("negative timestamp");
  m.sample.values = values_from_json(field(j, "values"));
  if (m.sample.values.empty()) throw DecodeError("empty values");
  if (auto it = j.find("label"); it != j.end()) {
    if (!it->is_string()) throw DecodeError("wrong field type: label");
    m.label = it->get<std::string>();
  }
  return m;
}

inline Control decode_control(const json& j) {
  Control m;
  m.action = string_field(j, "action");
  if (auto it = j.find("params"); it != j.end()) {
    if (!it->is_object()) throw DecodeError("wrong field type: params");
    for (const auto& [k, v] : it->items()) m.params.emplace(k, param_from_json(v, k));
  }
  return m;
}

inline ErrorMsg decode_error_msg(const json& j) {
  return ErrorMsg{string_field(j, "code"), string_field(j, "message")};
}

}  // namespace detail

/// Serializes `m` followed by exactly one newline byte.
inline std::string encode_frame(const Message& m) {
  json body = std::visit([](const auto& x) { return detail::body_of(x); }, m);
  std::string out;
  out.reserve(96);
  out += "{\"type\":\"";
  out += type_name(m);
  out += '"';
  try {
    for (const auto& [k, v] : body.items()) {
      out += ',';
      out += json(k).dump();
      out += ':';
      out += v.dump();
    }
  } catch (const json::exception& e) {
    throw EncodeError(e.what());
  }
  out += "}\n";
  return out;
}

/// Decodes one frame (without its trailing newline).
inline Message decode_frame(std::string_view line) {
  json j = json::parse(line.begin(), line.end(), nullptr, false);
  if (j.is_discarded()) throw DecodeError("malformed JSON");
  if (!j.is_object()) throw DecodeError("frame is not an object");
  auto it = j.find("type");
  if (it == j.end()) throw DecodeError("missing field: type");
  if (!it->is_string()) throw DecodeError("wrong field type: type");
  const auto& type = it->get_ref<const std::string&>();
  if (type == "hello") return detail::decode_hello(j);
  if (type == "catalog") return detail::decode_catalog(j);
  if (type == "subscribe") return detail::decode_subscribe(j);
  if (type == "ack") return detail::decode_ack(j);
  if (type == "data") return detail::decode_data(j);
  if (type == "control") return detail::decode_control(j);
  if (type == "error") return detail::decode_error_msg(j);
  throw DecodeError("unknown type");
}

/// Re-frames an arbitrarily chunked byte stream on 0x0A. One instance per
/// connection. Once a frame exceeds the limit the reader is poisoned and
/// every later call throws FrameTooLarge.
class FrameReader {
 public:
  explicit FrameReader(std::size_t max_frame_bytes = kDefaultMaxFrameBytes)
      : max_frame_bytes_(max_frame_bytes) {}

  /// Returns every complete line in `chunk` plus previously buffered bytes.
  /// Empty lines are skipped; a trailing '\r' is stripped.
  std::vector<std::string> feed(std::string_view chunk) {
    if (poisoned_) throw FrameTooLarge(max_frame_bytes_);
    std::vector<std::string> lines;
    std::size_t pos = 0;
    while (pos < chunk.size()) {
      auto nl = chunk.find('\n', pos);
      if (nl == std::string_view::npos) {
        buffer_.append(chunk.substr(pos));
        check_size(buffer_.size());
        break;
      }
      check_size(buffer_.size() + (nl - pos));
      buffer_.append(chunk.substr(pos, nl - pos));
      if (!buffer_.empty() && buffer_.back() == '\r') buffer_.pop_back();
      if (!buffer_.empty()) lines.push_back(std::move(buffer_));
      buffer_.clear();
      pos = nl + 1;
    }
    return lines;
  }

  bool poisoned() const noexcept { return poisoned_; }
  std::size_t buffered() const noexcept { return buffer_.size(); }

 private:
  void check_size(std::size_t n) {
    if (n > max_frame_bytes_) {
      poisoned_ = true;
      buffer_.clear();
      throw FrameTooLarge(max_frame_bytes_);
    }
  }

  std::size_t max_frame_bytes_;
  std::string buffer_;
  bool poisoned_ = false;
};

using FrameResult = std::variant<Message, DecodeError>;

/// Feeds `chunk` and decodes every completed frame. A malformed frame yields
/// a DecodeError entry; following frames are still decoded.
inline std::vector<FrameResult> read_frames(FrameReader& reader, std::string_view chunk) {
  std::vector<FrameResult> out;
  for (auto& line : reader.feed(chunk)) {
    try {
      out.emplace_back(decode_frame(line));
    } catch (const DecodeError& e) {
      out.emplace_back(e);
    }
  }
  return out;
}

}  // namespace thalamus::wire
