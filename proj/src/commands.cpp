#include "thalamus/commands.hpp"

#include <pthread.h>
#include <signal.h>

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

#include "thalamus/dsp.hpp"
#include "thalamus/hub.hpp"
#include "thalamus/log.hpp"
#include "thalamus/net.hpp"
#include "thalamus/sync.hpp"
#include "thalamus/wire.hpp"

namespace thalamus::cli {

namespace {

using json = nlohmann::json;
using namespace std::chrono_literals;

int fail(std::ostream& err, const std::string& code, const std::string& message, int rc = exit_code::failure) {
  err << code << ": " << message << std::endl;
  return rc;
}

int fail(std::ostream& err, const Error& e, int rc = exit_code::failure) { return fail(err, e.code(), e.what(), rc); }

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ingest::IoError("cannot open " + path.string() + " for writing");
  f << bytes;
  if (!f.flush()) throw ingest::IoError("cannot write " + path.string());
}

DatasetFormat format_of(const DatasetOptions& o) {
  if (o.format) return *o.format;
  return o.path.extension() == ".json" ? DatasetFormat::json : DatasetFormat::csv;
}

}  // namespace

ingest::LoadResult load_dataset(const DatasetOptions& opts) {
  const std::string text = ingest::detail::read_file(opts.path);
  SignalDescriptor d{opts.device_id, opts.signal, "", 1.0, 1};
  ingest::LoadResult r;
  if (format_of(opts) == DatasetFormat::csv) {
    auto records = ingest::parse_csv(text);
    if (records.empty()) throw ingest::ParseError(1, "", "missing header row");
    const auto& header = records.front().fields;
    d.channels = static_cast<int>(opts.mapping.value_columns.empty() ? header.size() - 1
                                                                     : opts.mapping.value_columns.size());
    r = ingest::load_csv_text(text, opts.mapping, d);
  } else {
    auto root = json::parse(text, nullptr, false);
    if (!root.is_discarded() && root.is_array() && !root.empty() && root[0].is_object()) {
      auto it = root[0].find("values");
      if (it != root[0].end() && it->is_array()) d.channels = static_cast<int>(it->size());
    }
    r = ingest::load_json_text(text, d);
  }
  const auto& s = r.stream;
  if (s.size() >= 2 && s.timestamps.back() > s.timestamps.front())
    r.stream.descriptor.rate_hz =
        static_cast<double>(s.size() - 1) * 1000.0 / static_cast<double>(s.timestamps.back() - s.timestamps.front());
  return r;
}

std::vector<TransformSpec> parse_pipeline(const std::string& text_or_path) {
  std::string text = text_or_path;
  auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  if (text[first] != '[') {
    try {
      text = ingest::detail::read_file(text_or_path);
    } catch (const ingest::IoError&) {
      throw dsp::InvalidPipeline("pipeline is neither a JSON array nor a readable file: " + text_or_path);
    }
  }
  auto j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_array()) throw dsp::InvalidPipeline("pipeline must be a JSON array of stages");
  std::vector<TransformSpec> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    try {
      out.push_back(wire::transform_from_json(j[i]));
    } catch (const Error& e) {
      throw dsp::InvalidPipeline("stage " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

SignalKey parse_selection(const std::string& s) {
  auto slash = s.find('/');
  if (slash == std::string::npos || slash == 0 || slash + 1 == s.size())
    throw ValidationError("selection", "expected device/signal, got '" + s + "'");
  return {s.substr(0, slash), s.substr(slash + 1)};
}

std::optional<std::string> config_path(const std::optional<std::string>& flag) {
  if (flag && !flag->empty()) return flag;
  if (const char* env = std::getenv("THALAMUS_CONFIG"); env && *env) return std::string(env);
  return std::nullopt;
}

// ---------------------------------------------------------------------------

int cmd_serve(const std::filesystem::path& config, std::ostream& err) {
  HubConfig cfg;
  try {
    cfg = load_config(config);
  } catch (const Error& e) {
    return fail(err, "config_error", e.what(), exit_code::config);
  }

  // Block the shutdown signals before any hub thread exists so they all
  // inherit the mask and only sigwait below sees them.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  sigaddset(&set, SIGUSR1);
  sigset_t previous;
  pthread_sigmask(SIG_BLOCK, &set, &previous);

  hub::Hub hub(cfg);
  try {
    hub.start();
  } catch (const net::BindError& e) {
    pthread_sigmask(SIG_SETMASK, &previous, nullptr);
    return fail(err, e, exit_code::bind);
  } catch (const Error& e) {
    pthread_sigmask(SIG_SETMASK, &previous, nullptr);
    return fail(err, "config_error", e.what(), exit_code::config);
  }

  for (;;) {
    int sig = 0;
    if (sigwait(&set, &sig) != 0) continue;
    if (sig == SIGUSR1) {
      log::info("stats", {{"snapshot", hub.stats().to_json().dump()}});
      continue;
    }
    log::info("shutdown", {{"signal", sig == SIGINT ? "SIGINT" : "SIGTERM"}});
    break;
  }
  hub.stop();
  return exit_code::ok;
}

int cmd_validate(const DatasetOptions& opts, std::ostream& out, std::ostream& err) {
  ingest::LoadResult r;
  try {
    r = load_dataset(opts);
  } catch (const Error& e) {
    return fail(err, e);
  }
  const auto& s = r.stream;
  std::size_t missing = 0;
  for (const auto& row : s.rows)
    for (const auto& v : row) missing += v.is_missing();
  const Timestamp span = s.empty() ? 0 : s.timestamps.back() - s.timestamps.front();
  const double rate = span > 0 ? static_cast<double>(s.size() - 1) * 1000.0 / static_cast<double>(span) : 0.0;
  out << "rows=" << s.size() << " missing=" << missing << " span_ms=" << span << " rate_hz=" << std::fixed
      << std::setprecision(3) << rate << " reordered=" << (r.reordered ? "true" : "false") << std::endl;
  return exit_code::ok;
}

int cmd_transform(const DatasetOptions& in, const std::string& pipeline, const std::filesystem::path& out_path,
                  std::int64_t seed, std::ostream& err) {
  try {
    auto stages = parse_pipeline(pipeline);
    dsp::validate_pipeline(stages, /*allow_delay=*/false);
    auto loaded = load_dataset(in);
    const auto& src = loaded.stream;
    dsp::Pipeline p(stages, seed, src.descriptor.key());
    ingest::RecordedStream result;
    result.descriptor = src.descriptor;
    for (std::size_t i = 0; i < src.size(); ++i) {
      for (auto& d : p.apply(src.sample(i), src.timestamps[i])) {
        result.timestamps.push_back(d.sample.t);
        result.rows.push_back(std::move(d.sample.values));
      }
    }
    write_file(out_path, ingest::to_json_dataset(result));
  } catch (const Error& e) {
    return fail(err, e);
  }
  return exit_code::ok;
}

// ---------------------------------------------------------------------------
// probe

namespace {

struct ProbeFailure : Error {
  ProbeFailure(const std::string& code, const std::string& msg) : Error(code, msg) {}
};

Timestamp remaining(std::chrono::steady_clock::time_point deadline) {
  return std::max<Timestamp>(
      0, std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now()).count());
}

// Reads until `want` matches, skipping catalog updates. Error frames abort.
template <class Pred>
wire::Message await(net::FrameClient& c, std::int64_t timeout_ms, const char* what, Pred want) {
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
  for (;;) {
    auto m = c.next(std::chrono::milliseconds(remaining(deadline)));
    if (!m) {
      if (c.closed()) throw ProbeFailure("connect_error", std::string("hub closed the connection while waiting for ") + what);
      throw ProbeFailure("timeout", std::string("no ") + what + " within " + std::to_string(timeout_ms) + " ms");
    }
    if (auto* e = std::get_if<wire::ErrorMsg>(&*m)) throw ProbeFailure(e->code, e->message);
    if (want(*m)) return *m;
  }
}

// Ack details carry "CODE: message".
std::string code_of(const std::string& detail) {
  auto colon = detail.find(':');
  return colon == std::string::npos ? detail : detail.substr(0, colon);
}

std::string message_of(const std::string& detail) {
  auto colon = detail.find(':');
  if (colon == std::string::npos) return detail;
  auto start = detail.find_first_not_of(' ', colon + 1);
  return start == std::string::npos ? std::string() : detail.substr(start);
}

}  // namespace

ProbeResult run_probe(const ProbeOptions& opts) {
  ProbeResult result;
  std::optional<net::FrameClient> client;
  std::thread publisher;
  std::atomic<bool> publishing{false};
  std::atomic<bool> stop_publishing{false};
  std::atomic<std::size_t> published{0};

  try {
    auto [host, port] = net::split_endpoint(opts.connect);
    client.emplace(net::FrameClient::connect(host, port, opts.recv_buffer));
    client->send(wire::Hello{wire::Role::client, opts.id, {}});
    await(*client, opts.wait_ms, "catalog", [](const wire::Message& m) { return std::holds_alternative<wire::Catalog>(m); });

    std::optional<ingest::RecordedStream> stream;
    if (opts.publish) {
      if (!opts.dataset) throw ValidationError("dataset", "publish mode needs a dataset");
      auto ds = *opts.dataset;
      ds.device_id = opts.publish->device_id;
      ds.signal = opts.publish->signal;
      stream = load_dataset(ds).stream;
      // Channel count and rate default to what the dataset holds.
      auto desc = *opts.publish;
      if (desc.channels <= 0) desc.channels = stream->descriptor.channels;
      if (!(desc.rate_hz > 0)) desc.rate_hz = stream->descriptor.rate_hz;
      stream->descriptor = desc;
      client->send(wire::Hello{wire::Role::device, opts.id, {desc}});
      await(*client, opts.wait_ms, "hello ack", [](const wire::Message& m) {
        auto* a = std::get_if<wire::Ack>(&m);
        return a && a->of == "hello";
      });
    }

    if (!opts.subscribe.empty()) {
      client->send(wire::Subscribe{opts.subscribe, opts.pipeline});
      auto m = await(*client, opts.wait_ms, "subscribe ack", [](const wire::Message& m) {
        auto* a = std::get_if<wire::Ack>(&m);
        return a && a->of == "subscribe";
      });
      const auto& ack = std::get<wire::Ack>(m);
      if (!ack.ok) throw ProbeFailure(code_of(ack.detail), message_of(ack.detail));
    }

    if (stream) {
      publishing = true;
      publisher = std::thread([&, plan = ingest::ReplayPlan{{*stream}, opts.speed, opts.rebase, false}] {
        ingest::ReplayCursor cursor;
        const Timestamp now = net::now_ms();
        cursor.epoch = now + opts.start_delay_ms;
        while (!stop_publishing) {
          auto item = ingest::replay_next(plan, cursor, now);
          if (!item) break;
          while (!stop_publishing) {
            auto wait = item->due - net::now_ms();
            if (wait <= 0) break;
            std::this_thread::sleep_for(std::chrono::milliseconds(std::min<Timestamp>(wait, 50)));
          }
          if (stop_publishing || !client->send(wire::Data{item->sample, {}})) break;
          ++published;
        }
        publishing = false;
      });
    }

    const bool receiving = !opts.subscribe.empty();
    const auto start = std::chrono::steady_clock::now();
    std::optional<std::chrono::steady_clock::time_point> deadline;
    if (opts.duration_s) deadline = start + std::chrono::milliseconds(std::llround(*opts.duration_s * 1000.0));
    std::optional<std::chrono::steady_clock::time_point> linger;  // publish-only: grace period for error frames

    for (;;) {
      if (opts.count && result.frames.size() >= *opts.count) break;
      if (deadline && std::chrono::steady_clock::now() >= *deadline) break;
      if (!receiving && !publishing) {
        if (!linger) linger = std::chrono::steady_clock::now() + 200ms;
        if (std::chrono::steady_clock::now() >= *linger) break;
      }
      auto wait = std::chrono::milliseconds(100);
      if (deadline) wait = std::min(wait, std::chrono::milliseconds(remaining(*deadline)));
      auto line = client->next_line(wait);
      if (!line) {
        if (client->closed()) throw ProbeFailure("connect_error", "hub closed the connection");
        continue;
      }
      wire::Message m;
      try {
        m = wire::decode_frame(*line);
      } catch (const wire::DecodeError& e) {
        throw ProbeFailure("decode_error", e.reason());
      }
      if (std::holds_alternative<wire::Data>(m)) {
        result.recv_ms.push_back(net::now_ms());
        if (opts.sink) *opts.sink << *line << '\n' << std::flush;
        result.frames.push_back(std::move(*line));
      } else if (auto* e = std::get_if<wire::ErrorMsg>(&m)) {
        throw ProbeFailure(e->code, e->message);
      }
    }
  } catch (const Error& e) {
    result.exit_code = exit_code::failure;
    result.error = e.code() + ": " + e.what();
  }
  stop_publishing = true;
  if (publisher.joinable()) publisher.join();
  result.published = published;
  return result;
}

int cmd_probe(const ProbeOptions& opts, const std::optional<std::filesystem::path>& out, std::ostream& err) {
  ProbeOptions o = opts;
  std::ofstream file;
  if (out) {
    file.open(*out, std::ios::binary | std::ios::trunc);
    if (!file) return fail(err, "io_error", "cannot open " + out->string() + " for writing");
    o.sink = &file;
  } else {
    o.sink = &std::cout;
  }
  auto r = run_probe(o);
  if (r.exit_code != exit_code::ok) err << r.error << std::endl;
  log::info("probe_done", {{"frames", std::to_string(r.frames.size())}, {"published", std::to_string(r.published)}});
  return r.exit_code;
}

// ---------------------------------------------------------------------------

int cmd_extract(const std::filesystem::path& recording, Timestamp t0, Timestamp t1,
                const std::optional<std::string>& label, const std::optional<std::filesystem::path>& out_path,
                std::ostream& out, std::ostream& err) {
  try {
    if (t1 < t0) throw ValidationError("t1", "must be >= t0");
    std::istringstream in(ingest::detail::read_file(recording));
    std::vector<Sample> samples;
    std::vector<std::string> labels;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      wire::Message m;
      try {
        m = wire::decode_frame(line);
      } catch (const wire::DecodeError& e) {
        throw ingest::ParseError(line_no, "", e.reason());
      }
      if (auto* d = std::get_if<wire::Data>(&m)) {
        samples.push_back(d->sample);
        labels.push_back(d->label);
      }
    }
    const sync::Epoch epoch{t0, t1, label.value_or("")};
    auto kept = sync::extract_epoch(samples, epoch);

    // Labels ride alongside: keep the recording's own unless one is given.
    std::string bytes;
    std::size_t src = 0;
    for (auto& s : kept) {
      while (samples[src].t < t0 || samples[src].t > t1) ++src;
      bytes += wire::encode_frame(wire::Data{std::move(s), label ? *label : labels[src]});
      ++src;
    }
    if (out_path) write_file(*out_path, bytes);
    else out << bytes << std::flush;
  } catch (const Error& e) {
    return fail(err, e);
  }
  return exit_code::ok;
}

int cmd_stats(const std::string& endpoint, const std::string& admin_token, std::ostream& out, std::ostream& err) {
  try {
    auto [host, port] = net::split_endpoint(endpoint);
    auto client = net::FrameClient::connect(host, port);
    client.send(wire::Hello{wire::Role::client, "stats#" + admin_token, {}});
    await(client, 5000, "catalog", [](const wire::Message& m) { return std::holds_alternative<wire::Catalog>(m); });
    client.send(wire::Control{"stats", {}});
    auto m = await(client, 5000, "stats ack", [](const wire::Message& m) {
      auto* a = std::get_if<wire::Ack>(&m);
      return a && a->of == "control";
    });
    const auto& ack = std::get<wire::Ack>(m);
    if (!ack.ok) return fail(err, code_of(ack.detail), message_of(ack.detail));
    auto j = json::parse(ack.detail, nullptr, false);
    out << (j.is_discarded() ? ack.detail : j.dump(2)) << std::endl;
  } catch (const Error& e) {
    return fail(err, e);
  }
  return exit_code::ok;
}

}  // namespace thalamus::cli
