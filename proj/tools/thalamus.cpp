// thalamus: hub launcher and operator tools.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "thalamus/commands.hpp"
#include "thalamus/log.hpp"

namespace {

using namespace thalamus;

struct DatasetFlags {
  std::string format;
  std::string timestamp_column = "t";
  std::vector<std::string> value_columns;
  std::vector<std::string> na_tokens;

  void attach(CLI::App* cmd) {
    cmd->add_option("--format", format, "csv or json (default: from extension)")->check(CLI::IsMember({"csv", "json"}));
    cmd->add_option("--timestamp-column", timestamp_column, "CSV timestamp column")->capture_default_str();
    cmd->add_option("--value-columns", value_columns, "CSV value columns (default: all others)")->delimiter(',');
    cmd->add_option("--na-tokens", na_tokens, "cells read as Missing (default: NA,NaN,empty)")->delimiter(',');
  }

  cli::DatasetOptions to_options(const std::string& path) const {
    cli::DatasetOptions o;
    o.path = path;
    if (format == "csv") o.format = DatasetFormat::csv;
    if (format == "json") o.format = DatasetFormat::json;
    o.mapping.timestamp_column = timestamp_column;
    o.mapping.value_columns = value_columns;
    if (!na_tokens.empty()) o.mapping.na_tokens = na_tokens;
    return o;
  }
};

std::optional<std::string> opt_string(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"thalamus - multimodal sensor stream hub"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "debug, info, warn or error")
      ->check(CLI::IsMember({"debug", "info", "warn", "error"}))
      ->capture_default_str();

  // serve
  auto* serve = app.add_subcommand("serve", "run the hub");
  std::string serve_config;
  serve->add_option("--config", serve_config, "hub config (default: $THALAMUS_CONFIG)");

  // validate
  auto* validate = app.add_subcommand("validate", "check a dataset and summarize it");
  std::string validate_path;
  DatasetFlags validate_flags;
  validate->add_option("--dataset", validate_path, "CSV or JSON dataset")->required();
  validate_flags.attach(validate);

  // transform
  auto* transform = app.add_subcommand("transform", "apply a pipeline offline");
  std::string transform_in, transform_pipeline, transform_out;
  std::int64_t transform_seed = 0;
  DatasetFlags transform_flags;
  transform->add_option("--in", transform_in, "input dataset")->required();
  transform->add_option("--pipeline", transform_pipeline, "JSON array of stages, inline or a file")->required();
  transform->add_option("--out", transform_out, "output JSON dataset")->required();
  transform->add_option("--seed", transform_seed, "base seed for noise stages")->capture_default_str();
  transform_flags.attach(transform);

  // probe
  auto* probe = app.add_subcommand("probe", "subscribe and record, or publish a dataset");
  cli::ProbeOptions probe_opts;
  std::vector<std::string> probe_subs;
  std::string probe_pipeline, probe_out, probe_publish, probe_dataset, probe_unit;
  std::size_t probe_count = 0;
  double probe_duration = 0, probe_rate = 0;
  DatasetFlags probe_flags;
  probe->add_option("--connect", probe_opts.connect, "hub host:port")->capture_default_str();
  probe->add_option("--id", probe_opts.id, "session identity")->capture_default_str();
  probe->add_option("--subscribe", probe_subs, "device/signal (repeatable)");
  probe->add_option("--pipeline", probe_pipeline, "JSON array of stages, inline or a file");
  probe->add_option("--count", probe_count, "stop after N data frames");
  probe->add_option("--duration", probe_duration, "stop after S seconds");
  probe->add_option("--out", probe_out, "NDJSON recording (default: stdout)");
  probe->add_option("--wait-ms", probe_opts.wait_ms, "handshake timeout")->capture_default_str();
  probe->add_option("--recv-buffer", probe_opts.recv_buffer, "SO_RCVBUF bytes");
  probe->add_option("--publish", probe_publish, "device/signal to publish (loopback)");
  probe->add_option("--dataset", probe_dataset, "dataset to publish");
  probe->add_option("--unit", probe_unit, "unit of the published signal");
  probe->add_option("--rate", probe_rate, "nominal rate of the published signal (default: from data)");
  probe->add_option("--speed", probe_opts.speed, "publish speed factor")->capture_default_str();
  probe->add_option("--start-delay-ms", probe_opts.start_delay_ms, "wait before publishing")->capture_default_str();
  probe_flags.attach(probe);

  // extract
  auto* extract = app.add_subcommand("extract", "cut an epoch out of a recording");
  std::string extract_in, extract_out, extract_label;
  Timestamp extract_t0 = 0, extract_t1 = 0;
  extract->add_option("--recording", extract_in, "NDJSON recording")->required();
  extract->add_option("--t0", extract_t0, "epoch start, ms, inclusive")->required();
  extract->add_option("--t1", extract_t1, "epoch end, ms, inclusive")->required();
  extract->add_option("--label", extract_label, "label stamped on every extracted frame");
  extract->add_option("--out", extract_out, "output NDJSON (default: stdout)");

  // stats
  auto* stats = app.add_subcommand("stats", "print hub counters");
  std::string stats_connect = "127.0.0.1:7331", stats_token, stats_config;
  stats->add_option("--connect", stats_connect, "hub host:port")->capture_default_str();
  stats->add_option("--token", stats_token, "admin token (default: from --config / $THALAMUS_CONFIG)");
  stats->add_option("--config", stats_config, "hub config to read the admin token from");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage_error: " << e.what() << std::endl;
    return cli::exit_code::failure;
  }

  static const std::map<std::string, log::Level> levels{
      {"debug", log::Level::debug}, {"info", log::Level::info}, {"warn", log::Level::warn}, {"error", log::Level::error}};
  log::set_level(levels.at(log_level));

  try {
    if (serve->parsed()) {
      auto path = cli::config_path(opt_string(serve_config));
      if (!path) {
        std::cerr << "config_error: --config not given and THALAMUS_CONFIG not set" << std::endl;
        return cli::exit_code::config;
      }
      return cli::cmd_serve(*path, std::cerr);
    }
    if (validate->parsed()) return cli::cmd_validate(validate_flags.to_options(validate_path), std::cout, std::cerr);
    if (transform->parsed())
      return cli::cmd_transform(transform_flags.to_options(transform_in), transform_pipeline, transform_out,
                                transform_seed, std::cerr);
    if (probe->parsed()) {
      for (const auto& s : probe_subs) probe_opts.subscribe.push_back(cli::parse_selection(s));
      if (!probe_pipeline.empty()) probe_opts.pipeline = cli::parse_pipeline(probe_pipeline);
      if (probe->count("--count")) probe_opts.count = probe_count;
      if (probe->count("--duration")) probe_opts.duration_s = probe_duration;
      if (!probe_publish.empty()) {
        if (probe_dataset.empty()) {
          std::cerr << "usage_error: --publish needs --dataset" << std::endl;
          return cli::exit_code::failure;
        }
        auto key = cli::parse_selection(probe_publish);
        probe_opts.publish = SignalDescriptor{key.device_id, key.signal, probe_unit, probe_rate, 0};
        probe_opts.dataset = probe_flags.to_options(probe_dataset);
      }
      if (probe_opts.subscribe.empty() && !probe_opts.publish) {
        std::cerr << "usage_error: give --subscribe and/or --publish" << std::endl;
        return cli::exit_code::failure;
      }
      std::optional<std::filesystem::path> out;
      if (!probe_out.empty()) out = probe_out;
      return cli::cmd_probe(probe_opts, out, std::cerr);
    }
    if (extract->parsed()) {
      std::optional<std::filesystem::path> out;
      if (!extract_out.empty()) out = extract_out;
      return cli::cmd_extract(extract_in, extract_t0, extract_t1, opt_string(extract_label), out, std::cout, std::cerr);
    }
    if (stats->parsed()) {
      std::string token = stats_token;
      if (token.empty()) {
        if (auto path = cli::config_path(opt_string(stats_config))) token = load_config(*path).admin_token;
      }
      return cli::cmd_stats(stats_connect, token, std::cout, std::cerr);
    }
  } catch (const Error& e) {
    std::cerr << e.code() << ": " << e.what() << std::endl;
    return cli::exit_code::failure;
  }
  return cli::exit_code::failure;
}
