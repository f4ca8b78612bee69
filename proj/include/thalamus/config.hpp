#pragma once

// Hub configuration file (JSON). Relative dataset paths resolve against
// the directory holding the config file.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "thalamus/ingest.hpp"
#include "thalamus/model.hpp"
#include "thalamus/wire.hpp"

namespace thalamus {

class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& reason)
      : Error("config_error", field + ": " + reason), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

enum class DatasetFormat { csv, json };

struct DeviceSource {
  DatasetFormat format = DatasetFormat::csv;
  std::filesystem::path path;
  ingest::CsvMapping mapping;  // csv only
};

struct ReplaySettings {
  double speed = 1.0;
  bool rebase = true;
  bool loop = false;
  std::int64_t start_delay_ms = 0;  // hold emission after hub start
};

struct DeviceConfig {
  SignalDescriptor descriptor;
  DeviceSource source;
  ReplaySettings replay;
};

struct Limits {
  std::size_t queue_capacity = 1024;
  std::size_t max_frame_bytes = wire::kDefaultMaxFrameBytes;
  std::int64_t history_seconds = 60;
  std::int64_t idle_timeout_ms = 30000;
  int send_buffer_bytes = 0;  // 0 = OS default
};

struct HubConfig {
  std::string host = "0.0.0.0";
  std::uint16_t port = 7331;
  std::string admin_token;
  std::vector<DeviceConfig> devices;
  Limits limits;
  std::int64_t seed = 0;
  std::filesystem::path base_dir;  // not serialized
};

namespace detail {

using json = nlohmann::json;

inline const json* opt(const json& j, const char* key) {
  auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

template <class T>
T get_as(const json& j, const std::string& field) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(field, "wrong type");
  }
}

inline std::int64_t get_int(const json& j, const std::string& field) {
  if (!j.is_number_integer()) throw ConfigError(field, "must be an integer");
  return j.get<std::int64_t>();
}

inline double get_number(const json& j, const std::string& field) {
  if (!j.is_number()) throw ConfigError(field, "must be a number");
  return j.get<double>();
}

}  // namespace detail

/// "host:port" or ":port" or "port".
inline std::pair<std::string, std::uint16_t> parse_endpoint(const std::string& s, const std::string& field) {
  auto colon = s.rfind(':');
  std::string host = colon == std::string::npos ? "0.0.0.0" : s.substr(0, colon);
  std::string port_s = colon == std::string::npos ? s : s.substr(colon + 1);
  if (host.empty()) host = "0.0.0.0";
  int port = -1;
  try {
    std::size_t used = 0;
    port = std::stoi(port_s, &used);
    if (used != port_s.size()) port = -1;
  } catch (const std::exception&) {
  }
  if (port < 0 || port > 65535) throw ConfigError(field, "invalid port in '" + s + "'");
  return {host, static_cast<std::uint16_t>(port)};
}

/// Parses without touching the filesystem; see validate_config.
inline HubConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  using namespace detail;
  if (!j.is_object()) throw ConfigError("<root>", "must be an object");
  HubConfig c;
  c.base_dir = base_dir;
  if (auto* v = opt(j, "listen")) std::tie(c.host, c.port) = parse_endpoint(get_as<std::string>(*v, "listen"), "listen");
  if (auto* v = opt(j, "admin_token")) c.admin_token = get_as<std::string>(*v, "admin_token");
  if (auto* v = opt(j, "seed")) c.seed = get_int(*v, "seed");
  if (auto* l = opt(j, "limits")) {
    if (!l->is_object()) throw ConfigError("limits", "must be an object");
    auto pos_int = [&](const char* key, auto& target) {
      if (auto* v = opt(*l, key)) {
        auto x = get_int(*v, std::string("limits.") + key);
        if (x <= 0) throw ConfigError(std::string("limits.") + key, "must be > 0");
        target = static_cast<std::remove_reference_t<decltype(target)>>(x);
      }
    };
    pos_int("queue_capacity", c.limits.queue_capacity);
    pos_int("max_frame_bytes", c.limits.max_frame_bytes);
    pos_int("history_seconds", c.limits.history_seconds);
    pos_int("idle_timeout_ms", c.limits.idle_timeout_ms);
    if (auto* v = opt(*l, "send_buffer_bytes")) {
      auto x = get_int(*v, "limits.send_buffer_bytes");
      if (x < 0 || x > (1 << 30)) throw ConfigError("limits.send_buffer_bytes", "out of range");
      c.limits.send_buffer_bytes = static_cast<int>(x);
    }
  }
  if (auto* devs = opt(j, "devices")) {
    if (!devs->is_array()) throw ConfigError("devices", "must be an array");
    for (std::size_t i = 0; i < devs->size(); ++i) {
      const std::string at = "devices[" + std::to_string(i) + "]";
      const json& d = (*devs)[i];
      if (!d.is_object()) throw ConfigError(at, "must be an object");
      DeviceConfig dc;
      auto* desc = opt(d, "descriptor");
      if (!desc) throw ConfigError(at + ".descriptor", "is required");
      try {
        dc.descriptor = wire::descriptor_from_json(*desc);
      } catch (const Error& e) {
        throw ConfigError(at + ".descriptor", e.what());
      }
      auto* src = opt(d, "source");
      if (!src || !src->is_object()) throw ConfigError(at + ".source", "is required");
      auto* fmt = opt(*src, "format");
      if (!fmt) throw ConfigError(at + ".source.format", "is required");
      auto f = get_as<std::string>(*fmt, at + ".source.format");
      if (f == "csv") dc.source.format = DatasetFormat::csv;
      else if (f == "json") dc.source.format = DatasetFormat::json;
      else throw ConfigError(at + ".source.format", "must be csv or json");
      auto* path = opt(*src, "path");
      if (!path) throw ConfigError(at + ".source.path", "is required");
      dc.source.path = get_as<std::string>(*path, at + ".source.path");
      if (auto* m = opt(*src, "mapping")) {
        if (!m->is_object()) throw ConfigError(at + ".source.mapping", "must be an object");
        if (auto* v = opt(*m, "timestamp_column"))
          dc.source.mapping.timestamp_column = get_as<std::string>(*v, at + ".source.mapping.timestamp_column");
        if (auto* v = opt(*m, "value_columns"))
          dc.source.mapping.value_columns = get_as<std::vector<std::string>>(*v, at + ".source.mapping.value_columns");
        if (auto* v = opt(*m, "na_tokens"))
          dc.source.mapping.na_tokens = get_as<std::vector<std::string>>(*v, at + ".source.mapping.na_tokens");
      }
      if (auto* r = opt(d, "replay")) {
        if (!r->is_object()) throw ConfigError(at + ".replay", "must be an object");
        if (auto* v = opt(*r, "speed")) dc.replay.speed = get_number(*v, at + ".replay.speed");
        if (auto* v = opt(*r, "rebase")) dc.replay.rebase = get_as<bool>(*v, at + ".replay.rebase");
        if (auto* v = opt(*r, "loop")) dc.replay.loop = get_as<bool>(*v, at + ".replay.loop");
        if (auto* v = opt(*r, "start_delay_ms")) {
          dc.replay.start_delay_ms = get_int(*v, at + ".replay.start_delay_ms");
          if (dc.replay.start_delay_ms < 0) throw ConfigError(at + ".replay.start_delay_ms", "must be >= 0");
        }
      }
      c.devices.push_back(std::move(dc));
    }
  }
  return c;
}

inline std::filesystem::path resolve(const HubConfig& c, const std::filesystem::path& p) {
  if (p.is_absolute() || c.base_dir.empty()) return p;
  return c.base_dir / p;
}

/// Semantic checks: descriptors, unique signals, speeds, referenced files.
inline void validate_config(const HubConfig& c) {
  std::vector<SignalKey> seen;
  for (std::size_t i = 0; i < c.devices.size(); ++i) {
    const std::string at = "devices[" + std::to_string(i) + "]";
    const auto& d = c.devices[i];
    try {
      validate_descriptor(d.descriptor);
    } catch (const ValidationError& e) {
      throw ConfigError(at + ".descriptor." + e.field(), e.what());
    }
    if (std::find(seen.begin(), seen.end(), d.descriptor.key()) != seen.end())
      throw ConfigError(at + ".descriptor", "duplicate signal " + d.descriptor.key().str());
    seen.push_back(d.descriptor.key());
    if (!(d.replay.speed > 0)) throw ConfigError(at + ".replay.speed", "must be > 0");
    auto path = resolve(c, d.source.path);
    if (!std::filesystem::is_regular_file(path))
      throw ConfigError(at + ".source.path", "file not found: " + path.string());
  }
}

inline nlohmann::json to_json(const HubConfig& c) {
  using json = nlohmann::json;
  json devices = json::array();
  for (const auto& d : c.devices) {
    json src{{"format", d.source.format == DatasetFormat::csv ? "csv" : "json"},
             {"path", d.source.path.string()}};
    if (d.source.format == DatasetFormat::csv)
      src["mapping"] = json{{"timestamp_column", d.source.mapping.timestamp_column},
                            {"value_columns", d.source.mapping.value_columns},
                            {"na_tokens", d.source.mapping.na_tokens}};
    devices.push_back(json{{"descriptor", wire::to_json(d.descriptor)},
                           {"source", std::move(src)},
                           {"replay",
                            {{"speed", d.replay.speed},
                             {"rebase", d.replay.rebase},
                             {"loop", d.replay.loop},
                             {"start_delay_ms", d.replay.start_delay_ms}}}});
  }
  return json{{"listen", c.host + ":" + std::to_string(c.port)},
              {"admin_token", c.admin_token},
              {"seed", c.seed},
              {"limits",
               {{"queue_capacity", c.limits.queue_capacity},
                {"max_frame_bytes", c.limits.max_frame_bytes},
                {"history_seconds", c.limits.history_seconds},
                {"idle_timeout_ms", c.limits.idle_timeout_ms},
                {"send_buffer_bytes", c.limits.send_buffer_bytes}}},
              {"devices", std::move(devices)}};
}

inline HubConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config", "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  auto j = nlohmann::json::parse(ss.str(), nullptr, false);
  if (j.is_discarded()) throw ConfigError("--config", "malformed JSON in " + path.string());
  auto c = parse_config(j, path.parent_path());
  validate_config(c);
  return c;
}

/// Loads the dataset referenced by a device entry.
inline ingest::RecordedStream load_device_stream(const HubConfig& c, const DeviceConfig& d) {
  auto path = resolve(c, d.source.path);
  if (d.source.format == DatasetFormat::csv) return ingest::load_csv(path, d.source.mapping, d.descriptor).stream;
  return ingest::load_json(path, d.descriptor).stream;
}

}  // namespace thalamus
