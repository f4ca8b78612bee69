#pragma once

// Domain types shared by every module: timestamps, sample values, samples,
// signal descriptors and the declarative transform specification.

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace thalamus {

/// Milliseconds since the Unix epoch (UTC). Never negative.
using Timestamp = std::int64_t;

/// Base error. `code()` is a short machine-readable tag such as
/// "parse_error" or "invalid_pipeline".
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& reason)
      : Error("validation_error", field + ": " + reason), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// A single channel reading: a finite number, or an explicit Missing marker.
/// Missing is never folded into a numeric sentinel in memory.
class SampleValue {
 public:
  SampleValue() = default;  // Missing
  SampleValue(double v) : value_(v) {}  // NOLINT(google-explicit-constructor)

  static SampleValue missing() { return SampleValue{}; }

  bool is_missing() const noexcept { return !value_.has_value(); }
  double number() const { return value_.value(); }
  const std::optional<double>& raw() const noexcept { return value_; }

  friend bool operator==(const SampleValue&, const SampleValue&) = default;

 private:
  std::optional<double> value_;
};

inline bool is_missing(const SampleValue& v) noexcept { return v.is_missing(); }

using Values = std::vector<SampleValue>;

struct SignalKey {
  std::string device_id;
  std::string signal;

  friend auto operator<=>(const SignalKey&, const SignalKey&) = default;
  friend bool operator==(const SignalKey&, const SignalKey&) = default;

  std::string str() const { return device_id + "/" + signal; }
};

struct Sample {
  std::string device_id;
  std::string signal;
  Timestamp t = 0;
  Values values;

  SignalKey key() const { return {device_id, signal}; }
  friend bool operator==(const Sample&, const Sample&) = default;
};

struct SignalDescriptor {
  std::string device_id;
  std::string signal;
  std::string unit;
  double rate_hz = 1.0;
  int channels = 1;

  SignalKey key() const { return {device_id, signal}; }
  friend bool operator==(const SignalDescriptor&, const SignalDescriptor&) = default;
};

/// Throws ValidationError naming the first violated field.
inline void validate_descriptor(const SignalDescriptor& d) {
  if (d.device_id.empty()) throw ValidationError("device_id", "must not be empty");
  if (d.signal.empty()) throw ValidationError("signal", "must not be empty");
  if (!(d.rate_hz > 0.0) || !std::isfinite(d.rate_hz))
    throw ValidationError("rate_hz", "must be a positive finite number");
  if (d.channels < 1) throw ValidationError("channels", "must be >= 1");
}

/// Scalar parameter used by transform specs and control actions.
using ParamValue = std::variant<bool, std::int64_t, double, std::string>;
using Params = std::map<std::string, ParamValue>;

enum class TransformKind { missing_policy, savgol, kalman, noise, delay };

inline const char* to_string(TransformKind k) {
  switch (k) {
    case TransformKind::missing_policy: return "missing_policy";
    case TransformKind::savgol: return "savgol";
    case TransformKind::kalman: return "kalman";
    case TransformKind::noise: return "noise";
    case TransformKind::delay: return "delay";
  }
  return "?";
}

inline std::optional<TransformKind> transform_kind_from_string(const std::string& s) {
  if (s == "missing_policy") return TransformKind::missing_policy;
  if (s == "savgol") return TransformKind::savgol;
  if (s == "kalman") return TransformKind::kalman;
  if (s == "noise") return TransformKind::noise;
  if (s == "delay") return TransformKind::delay;
  return std::nullopt;
}

struct TransformSpec {
  TransformKind kind = TransformKind::missing_policy;
  Params params;

  friend bool operator==(const TransformSpec&, const TransformSpec&) = default;
};

// Typed access to Params. Integers are accepted where reals are expected.

inline std::optional<double> param_number(const Params& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) return std::nullopt;
  if (auto* i = std::get_if<std::int64_t>(&it->second)) return static_cast<double>(*i);
  if (auto* d = std::get_if<double>(&it->second)) return *d;
  throw ValidationError(name, "must be a number");
}

inline std::optional<std::int64_t> param_integer(const Params& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) return std::nullopt;
  if (auto* i = std::get_if<std::int64_t>(&it->second)) return *i;
  if (auto* d = std::get_if<double>(&it->second)) {
    if (std::isfinite(*d) && std::floor(*d) == *d && std::fabs(*d) < 9.0e15)
      return static_cast<std::int64_t>(*d);
  }
  throw ValidationError(name, "must be an integer");
}

inline std::optional<std::string> param_string(const Params& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) return std::nullopt;
  if (auto* s = std::get_if<std::string>(&it->second)) return *s;
  throw ValidationError(name, "must be a string");
}

template <class T>
T require(std::optional<T> v, const std::string& name) {
  if (!v) throw ValidationError(name, "is required");
  return *std::move(v);
}

}  // namespace thalamus
