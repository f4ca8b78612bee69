#pragma once

// The hub: TCP server, signal catalog, replay scheduler, per-subscription
// pipelines, fan-out with bounded drop-oldest queues, control actions.
//
// Threads: one acceptor, a reader and a writer per connection, a single
// router that owns every piece of mutable routing state (catalog, sessions,
// subscriptions, replay cursors, delayed frames), and a reaper that joins
// finished connections. Readers talk to the router through a mailbox.

#include <chrono>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "thalamus/config.hpp"

namespace thalamus::hub {

struct SubscriptionStats {
  std::int64_t id = 0;
  std::size_t queue_depth = 0;
  std::uint64_t drop_count = 0;
};

struct SessionStats {
  std::uint64_t conn_id = 0;
  std::string identity;
  std::string role;  // "pending", "device", "client", "admin"
  std::size_t queue_depth = 0;
  std::uint64_t drop_count = 0;
  std::uint64_t frames_sent = 0;
  std::vector<SubscriptionStats> subscriptions;
};

struct Stats {
  std::int64_t uptime_ms = 0;
  std::size_t catalog_size = 0;  // live signals
  std::uint64_t samples_in = 0;
  std::uint64_t samples_discarded = 0;  // dropped device / unknown signal
  std::uint64_t frames_routed = 0;      // data frames enqueued to subscribers
  std::uint64_t drop_count = 0;
  std::vector<SessionStats> sessions;

  nlohmann::json to_json() const;
};

class Hub {
 public:
  explicit Hub(HubConfig config);
  ~Hub();
  Hub(const Hub&) = delete;
  Hub& operator=(const Hub&) = delete;

  /// Loads replay datasets, binds, and starts every thread.
  /// Throws ConfigError (dataset unreadable) or net::BindError.
  void start();
  /// Stops accepting, lets writers drain until `drain` elapses, then closes
  /// whatever is left. Idempotent.
  void stop(std::chrono::milliseconds drain = std::chrono::milliseconds(2000));

  std::uint16_t port() const;
  bool running() const;
  Stats stats() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace thalamus::hub
