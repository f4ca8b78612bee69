#pragma once

// The operator commands behind the `thalamus` binary. Argument parsing lives
// in tools/thalamus.cpp; everything here is callable from tests.
//
// Every failure path returns nonzero and writes one line "<code>: <message>"
// to the error stream.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "thalamus/config.hpp"
#include "thalamus/ingest.hpp"
#include "thalamus/model.hpp"

namespace thalamus::cli {

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int failure = 1;
inline constexpr int config = 2;
inline constexpr int bind = 3;
}  // namespace exit_code

struct DatasetOptions {
  std::filesystem::path path;
  std::optional<DatasetFormat> format;  // default: from the file extension
  ingest::CsvMapping mapping;
  std::string device_id = "dataset";
  std::string signal = "signal";
};

/// Loads a standalone dataset; the channel count is taken from the data.
ingest::LoadResult load_dataset(const DatasetOptions& opts);

/// `--pipeline` accepts inline JSON or a path to a JSON file holding an
/// array of transform specs.
std::vector<TransformSpec> parse_pipeline(const std::string& text_or_path);

/// "device/signal"
SignalKey parse_selection(const std::string& s);

/// `flag` if given, else $THALAMUS_CONFIG, else nullopt.
std::optional<std::string> config_path(const std::optional<std::string>& flag);

int cmd_serve(const std::filesystem::path& config, std::ostream& err);

int cmd_validate(const DatasetOptions& opts, std::ostream& out, std::ostream& err);

int cmd_transform(const DatasetOptions& in, const std::string& pipeline, const std::filesystem::path& out_path,
                  std::int64_t seed, std::ostream& err);

struct ProbeOptions {
  std::string connect = "127.0.0.1:7331";
  std::string id = "probe";
  std::vector<SignalKey> subscribe;
  std::vector<TransformSpec> pipeline;
  std::optional<std::size_t> count;
  std::optional<double> duration_s;
  std::int64_t wait_ms = 5000;  // handshake timeout
  int recv_buffer = 0;          // SO_RCVBUF, 0 = default
  std::ostream* sink = nullptr;  // data frames are written here as they arrive

  // Publish mode: register `publish` with a device-style hello and stream
  // `dataset` into the hub at `speed`. channels <= 0 or rate_hz <= 0 in the
  // descriptor are filled in from the dataset.
  std::optional<SignalDescriptor> publish;
  std::optional<DatasetOptions> dataset;
  double speed = 1.0;
  bool rebase = true;
  std::int64_t start_delay_ms = 0;
};

struct ProbeResult {
  int exit_code = exit_code::ok;
  std::string error;                // "<CODE>: detail" when exit_code != 0
  std::vector<std::string> frames;  // received data frames, exact bytes without newline
  std::vector<Timestamp> recv_ms;   // wall-clock receive time per frame
  std::size_t published = 0;
};

ProbeResult run_probe(const ProbeOptions& opts);
int cmd_probe(const ProbeOptions& opts, const std::optional<std::filesystem::path>& out, std::ostream& err);

int cmd_extract(const std::filesystem::path& recording, Timestamp t0, Timestamp t1,
                const std::optional<std::string>& label, const std::optional<std::filesystem::path>& out_path,
                std::ostream& out, std::ostream& err);

int cmd_stats(const std::string& endpoint, const std::string& admin_token, std::ostream& out, std::ostream& err);

}  // namespace thalamus::cli
