#include "thalamus/hub.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <queue>
#include <set>
#include <thread>
#include <variant>

#include "thalamus/dsp.hpp"
#include "thalamus/ingest.hpp"
#include "thalamus/log.hpp"
#include "thalamus/net.hpp"
#include "thalamus/outbound.hpp"
#include "thalamus/sync.hpp"
#include "thalamus/wire.hpp"

namespace thalamus::hub {

namespace {

using namespace std::chrono_literals;

constexpr std::size_t kWriteBatchBytes = 64 * 1024;
// Stage index fed to derive_seed for hub-side injected noise, well clear of
// any real pipeline position.
constexpr std::size_t kInjectedNoiseStage = 1000;

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::string error_frame(const std::string& code, const std::string& message) {
  return wire::encode_frame(wire::ErrorMsg{code, message});
}

// One socket, its outbound FIFO and the two threads that serve it. The
// router only ever pushes; the writer is the only thing that blocks on the
// socket, so a stalled peer can never hold up routing.
class Connection {
 public:
  Connection(std::uint64_t id, net::Socket sock) : id_(id), sock_(std::move(sock)) {}

  std::uint64_t id() const noexcept { return id_; }
  net::Socket& socket() noexcept { return sock_; }

  /// Queues a data frame for subscription `sub`. A full subscription loses
  /// its own oldest queued frame. Returns true when that happened.
  bool push(std::int64_t sub, std::string bytes, std::size_t capacity) {
    bool dropped = false;
    {
      std::lock_guard lk(mu_);
      if (closing_) return false;
      dropped = out_.push(sub, std::move(bytes), capacity);
    }
    cv_.notify_one();
    return dropped;
  }

  /// Protocol replies and catalog updates: never dropped.
  void push_control(std::string bytes) {
    {
      std::lock_guard lk(mu_);
      if (closing_) return;
      out_.push_control(std::move(bytes));
    }
    cv_.notify_one();
  }

  /// Graceful close: the writer flushes what is queued, then shuts down.
  void finish() {
    {
      std::lock_guard lk(mu_);
      closing_ = true;
    }
    cv_.notify_one();
  }

  void abort() {
    {
      std::lock_guard lk(mu_);
      closing_ = true;
      aborted_ = true;
    }
    sock_.shutdown();
    cv_.notify_one();
  }

  void set_identity(std::string role, std::string identity) {
    std::lock_guard lk(mu_);
    role_ = std::move(role);
    identity_ = std::move(identity);
  }

  void run_writer() {
    std::string batch;
    for (;;) {
      std::uint64_t frames = 0;
      {
        std::unique_lock lk(mu_);
        cv_.wait(lk, [&] { return !out_.empty() || closing_; });
        if (aborted_ || (out_.empty() && closing_)) break;
        batch.clear();
        frames = out_.pop_batch(batch, kWriteBatchBytes);
      }
      if (!sock_.send_all(batch)) {
        abort();
        break;
      }
      sent_ += frames;
    }
    sock_.shutdown();
    writer_done = true;
  }

  SessionStats snapshot() const {
    std::lock_guard lk(mu_);
    SessionStats s;
    s.conn_id = id_;
    s.identity = identity_;
    s.role = role_;
    s.queue_depth = out_.size();
    s.drop_count = out_.drops();
    s.frames_sent = sent_;
    for (const auto& [id, c] : out_.subscriptions()) s.subscriptions.push_back({id, c.queued, c.drops});
    return s;
  }

  std::atomic<bool> has_subscription{false};
  std::atomic<std::int64_t> last_rx{0};
  std::atomic<bool> reader_done{false};
  std::atomic<bool> writer_done{false};
  std::thread reader_thread;
  std::thread writer_thread;

 private:
  const std::uint64_t id_;
  net::Socket sock_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  OutboundQueue out_;
  std::atomic<std::uint64_t> sent_{0};
  bool closing_ = false;
  bool aborted_ = false;
  std::string role_ = "pending";
  std::string identity_;
};

// Mailbox events, reader/acceptor -> router.
struct Opened {
  std::shared_ptr<Connection> conn;
};
struct Inbound {
  std::uint64_t conn;
  wire::Message msg;
};
struct Closed {
  std::uint64_t conn;
};
struct StopRouter {};
using Event = std::variant<Opened, Inbound, Closed, StopRouter>;

}  // namespace

nlohmann::json Stats::to_json() const {
  nlohmann::json sessions_j = nlohmann::json::array();
  for (const auto& s : sessions) {
    nlohmann::json subs = nlohmann::json::array();
    for (const auto& sub : s.subscriptions)
      subs.push_back({{"id", sub.id}, {"queue_depth", sub.queue_depth}, {"drop_count", sub.drop_count}});
    sessions_j.push_back({{"conn_id", s.conn_id},
                          {"identity", s.identity},
                          {"role", s.role},
                          {"queue_depth", s.queue_depth},
                          {"drop_count", s.drop_count},
                          {"frames_sent", s.frames_sent},
                          {"subscriptions", std::move(subs)}});
  }
  return {{"uptime_ms", uptime_ms},
          {"catalog_size", catalog_size},
          {"samples_in", samples_in},
          {"samples_discarded", samples_discarded},
          {"frames_routed", frames_routed},
          {"drop_count", drop_count},
          {"sessions", std::move(sessions_j)}};
}

struct Hub::Impl {
  explicit Impl(HubConfig c) : cfg(std::move(c)) {}

  HubConfig cfg;
  net::Socket listener;
  std::uint16_t bound_port = 0;
  std::atomic<bool> running{false};
  std::atomic<bool> stopping{false};
  std::chrono::steady_clock::time_point started;
  std::thread acceptor, router, reaper;

  mutable std::mutex conns_mu;
  std::condition_variable reap_cv;
  std::map<std::uint64_t, std::shared_ptr<Connection>> conns;
  bool reaper_stop = false;
  std::uint64_t next_conn_id = 1;

  std::mutex mb_mu;
  std::condition_variable mb_cv;
  std::deque<Event> mailbox;

  std::atomic<std::uint64_t> samples_in{0}, samples_discarded{0}, frames_routed{0}, drops{0};
  std::atomic<std::size_t> catalog_live{0};

  // ---- router-owned state; touched only on the router thread after start()

  struct CatalogEntry {
    SignalDescriptor descriptor;
    bool live = true;
    bool replay = false;
    std::optional<std::uint64_t> owner;  // publishing connection
    Timestamp injected_delay = 0;
    std::optional<dsp::NoiseGenerator> injected_noise;
    std::deque<Sample> history;

    bool has_source() const { return replay || owner.has_value(); }
  };

  struct Subscription {
    std::map<SignalKey, dsp::Pipeline> pipelines;
    Timestamp last_deliver_at = 0;
    std::size_t pending_timers = 0;
    bool warned = false;
  };

  enum class Role { pending, device, client };

  struct Session {
    std::shared_ptr<Connection> conn;
    Role role = Role::pending;
    bool admin = false;
    bool closing = false;
    std::string identity;
    std::set<SignalKey> grants;
    std::map<std::int64_t, Subscription> subs;
  };

  struct Timed {
    Timestamp at;
    std::uint64_t seq;
    std::uint64_t conn;
    std::int64_t sub;
    std::string bytes;
    bool operator>(const Timed& o) const { return std::tie(at, seq) > std::tie(o.at, o.seq); }
  };

  struct Replay {
    ingest::ReplayPlan plan;
    ingest::ReplayCursor cursor;
    std::optional<ingest::ReplayItem> pending;
  };

  std::map<SignalKey, CatalogEntry> catalog;
  std::map<std::uint64_t, Session> sessions;
  std::priority_queue<Timed, std::vector<Timed>, std::greater<>> timers;
  std::uint64_t timer_seq = 0;
  std::vector<Replay> replays;
  std::int64_t next_sub_id = 1;

  // ------------------------------------------------------------------ plumbing

  void post(Event e) {
    {
      std::lock_guard lk(mb_mu);
      mailbox.push_back(std::move(e));
    }
    mb_cv.notify_one();
  }

  Stats stats() const {
    Stats s;
    s.uptime_ms = running || stopping
                      ? std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started).count()
                      : 0;
    s.catalog_size = catalog_live;
    s.samples_in = samples_in;
    s.samples_discarded = samples_discarded;
    s.frames_routed = frames_routed;
    s.drop_count = drops;
    std::lock_guard lk(conns_mu);
    for (const auto& [id, c] : conns) s.sessions.push_back(c->snapshot());
    return s;
  }

  void start() {
    // Datasets load before binding so a bad path reports as a config error.
    const Timestamp now = net::now_ms();
    for (std::size_t i = 0; i < cfg.devices.size(); ++i) {
      const auto& d = cfg.devices[i];
      Replay r;
      try {
        r.plan.streams.push_back(load_device_stream(cfg, d));
      } catch (const ConfigError&) {
        throw;
      } catch (const Error& e) {
        throw ConfigError("devices[" + std::to_string(i) + "].source.path", e.what());
      }
      r.plan.speed = d.replay.speed;
      r.plan.rebase = d.replay.rebase;
      r.plan.loop = d.replay.loop;
      r.cursor.epoch = now + d.replay.start_delay_ms;
      r.pending = ingest::replay_next(r.plan, r.cursor, now);
      CatalogEntry e;
      e.descriptor = d.descriptor;
      e.replay = true;
      catalog[d.descriptor.key()] = std::move(e);
      replays.push_back(std::move(r));
    }
    catalog_live = catalog.size();

    listener = net::listen_tcp(cfg.host, cfg.port);
    bound_port = net::local_port(listener);
    started = std::chrono::steady_clock::now();
    running = true;
    router = std::thread([this] { router_loop(); });
    reaper = std::thread([this] { reaper_loop(); });
    acceptor = std::thread([this] { accept_loop(); });
    log::info("listening", {{"addr", cfg.host + ":" + std::to_string(bound_port)},
                            {"devices", std::to_string(cfg.devices.size())}});
  }

  void stop(std::chrono::milliseconds drain) {
    if (!running.exchange(false)) return;
    stopping = true;
    listener.shutdown();
    if (acceptor.joinable()) acceptor.join();
    post(StopRouter{});
    if (router.joinable()) router.join();

    std::vector<std::shared_ptr<Connection>> live;
    {
      std::lock_guard lk(conns_mu);
      for (auto& [id, c] : conns) live.push_back(c);
    }
    for (auto& c : live) c->finish();
    const auto deadline = std::chrono::steady_clock::now() + drain;
    for (auto& c : live)
      while (!c->writer_done && std::chrono::steady_clock::now() < deadline) std::this_thread::sleep_for(5ms);
    for (auto& c : live) c->abort();

    {
      std::lock_guard lk(conns_mu);
      reaper_stop = true;
    }
    reap_cv.notify_all();
    if (reaper.joinable()) reaper.join();
    std::lock_guard lk(conns_mu);
    for (auto& [id, c] : conns) {
      if (c->reader_thread.joinable()) c->reader_thread.join();
      if (c->writer_thread.joinable()) c->writer_thread.join();
    }
    conns.clear();
    log::info("stopped", {{"frames_routed", std::to_string(frames_routed.load())},
                          {"drop_count", std::to_string(drops.load())}});
  }

  void accept_loop() {
    while (!stopping) {
      net::Socket s = net::accept_connection(listener);
      if (!s.valid()) {
        if (stopping) break;
        std::this_thread::sleep_for(10ms);
        continue;
      }
      s.set_nodelay();
      s.set_send_buffer(cfg.limits.send_buffer_bytes);
      std::shared_ptr<Connection> conn;
      {
        std::lock_guard lk(conns_mu);
        conn = std::make_shared<Connection>(next_conn_id++, std::move(s));
        conns[conn->id()] = conn;
      }
      post(Opened{conn});
      conn->writer_thread = std::thread([this, conn] {
        conn->run_writer();
        reap_cv.notify_one();
      });
      conn->reader_thread = std::thread([this, conn] { reader_loop(conn); });
    }
  }

  void reader_loop(const std::shared_ptr<Connection>& c) {
    wire::FrameReader frames(cfg.limits.max_frame_bytes);
    std::vector<char> buf(64 * 1024);
    const std::int64_t idle = cfg.limits.idle_timeout_ms;
    const auto poll_every = std::chrono::milliseconds(std::min<std::int64_t>(idle, 500));
    c->last_rx = net::now_ms();
    for (;;) {
      if (!c->socket().wait_readable(poll_every)) {
        if (!c->has_subscription && net::now_ms() - c->last_rx >= idle) {
          c->push_control(error_frame("IDLE_TIMEOUT", "no traffic for " + std::to_string(idle) + " ms"));
          log::info("idle_timeout", {{"conn", std::to_string(c->id())}});
          break;
        }
        continue;
      }
      long n = c->socket().recv_some(buf.data(), buf.size());
      if (n <= 0) break;
      c->last_rx = net::now_ms();
      std::vector<std::string> lines;
      try {
        lines = frames.feed(std::string_view(buf.data(), static_cast<std::size_t>(n)));
      } catch (const wire::FrameTooLarge& e) {
        c->push_control(error_frame("FRAME_TOO_LARGE", e.what()));
        log::warn("frame_too_large", {{"conn", std::to_string(c->id())}});
        break;
      }
      for (auto& line : lines) {
        try {
          post(Inbound{c->id(), wire::decode_frame(line)});
        } catch (const wire::DecodeError& e) {
          c->push_control(error_frame("BAD_FRAME", e.reason()));
        }
      }
    }
    post(Closed{c->id()});
    c->finish();
    c->reader_done = true;
    reap_cv.notify_one();
  }

  void reaper_loop() {
    std::unique_lock lk(conns_mu);
    while (!reaper_stop) {
      reap_cv.wait_for(lk, 200ms);
      std::vector<std::shared_ptr<Connection>> done;
      for (auto it = conns.begin(); it != conns.end();) {
        if (it->second->reader_done && it->second->writer_done) {
          done.push_back(it->second);
          it = conns.erase(it);
        } else {
          ++it;
        }
      }
      if (done.empty()) continue;
      lk.unlock();
      for (auto& c : done) {
        if (c->reader_thread.joinable()) c->reader_thread.join();
        if (c->writer_thread.joinable()) c->writer_thread.join();
      }
      lk.lock();
    }
  }

  // ------------------------------------------------------------------ router

  std::int64_t next_wake_ms() const {
    std::optional<Timestamp> next;
    if (!timers.empty()) next = timers.top().at;
    for (const auto& r : replays)
      if (r.pending) next = next ? std::min(*next, r.pending->due) : r.pending->due;
    if (!next) return 100;
    return std::clamp<std::int64_t>(*next - net::now_ms(), 0, 100);
  }

  void router_loop() {
    for (;;) {
      std::deque<Event> batch;
      {
        std::unique_lock lk(mb_mu);
        if (mailbox.empty()) {
          auto wait = next_wake_ms();
          if (wait > 0) mb_cv.wait_for(lk, std::chrono::milliseconds(wait));
        }
        batch.swap(mailbox);
      }
      for (auto& e : batch) {
        if (std::holds_alternative<StopRouter>(e)) return;
        handle(e);
      }
      run_replays();
      run_timers(net::now_ms());
    }
  }

  void handle(Event& e) {
    std::visit(overloaded{
                   [&](Opened& o) {
                     Session s;
                     s.conn = o.conn;
                     sessions.emplace(o.conn->id(), std::move(s));
                     log::debug("session_open", {{"conn", std::to_string(o.conn->id())}});
                   },
                   [&](Inbound& in) {
                     auto it = sessions.find(in.conn);
                     if (it == sessions.end() || it->second.closing) return;
                     on_message(in.conn, it->second, in.msg);
                   },
                   [&](Closed& c) { on_closed(c.conn); },
                   [&](StopRouter&) {},
               },
               e);
  }

  void run_replays() {
    for (auto& r : replays) {
      const Timestamp now = net::now_ms();
      while (r.pending && r.pending->due <= now) {
        route(std::move(r.pending->sample), now);
        r.pending = ingest::replay_next(r.plan, r.cursor, now);
      }
    }
  }

  void run_timers(Timestamp now) {
    while (!timers.empty() && timers.top().at <= now) {
      Timed t = timers.top();
      timers.pop();
      auto it = sessions.find(t.conn);
      if (it == sessions.end()) continue;
      auto sub = it->second.subs.find(t.sub);
      if (sub == it->second.subs.end()) continue;
      --sub->second.pending_timers;
      enqueue(it->second, t.sub, sub->second, std::move(t.bytes));
    }
  }

  void enqueue(Session& sess, std::int64_t sub_id, Subscription& sub, std::string bytes) {
    ++frames_routed;
    if (sess.conn->push(sub_id, std::move(bytes), cfg.limits.queue_capacity)) {
      ++drops;
      if (!sub.warned) {
        sub.warned = true;
        log::warn("queue_overflow", {{"conn", std::to_string(sess.conn->id())},
                                     {"sub", std::to_string(sub_id)},
                                     {"capacity", std::to_string(cfg.limits.queue_capacity)}});
      }
    }
  }

  void route(Sample s, Timestamp now) {
    auto it = catalog.find(s.key());
    if (it == catalog.end() || !it->second.live) {
      ++samples_discarded;
      log::debug("sample_discarded", {{"signal", s.key().str()}, {"t", std::to_string(s.t)}});
      return;
    }
    ++samples_in;
    auto& entry = it->second;
    if (entry.injected_noise)
      for (auto& v : s.values) v = entry.injected_noise->apply(v);

    entry.history.push_back(s);
    const Timestamp horizon = s.t - cfg.limits.history_seconds * 1000;
    while (!entry.history.empty() && entry.history.front().t < horizon) entry.history.pop_front();

    const SignalKey key = s.key();
    for (auto& [cid, sess] : sessions) {
      if (sess.closing) continue;
      for (auto& [sub_id, sub] : sess.subs) {
        auto p = sub.pipelines.find(key);
        if (p == sub.pipelines.end()) continue;
        for (auto& d : p->second.apply(s, now)) {
          // Never schedule earlier than the previous frame of this
          // subscription: delays may shrink at runtime, order may not.
          const Timestamp at = std::max(d.deliver_at + entry.injected_delay, sub.last_deliver_at);
          sub.last_deliver_at = at;
          auto bytes = wire::encode_frame(wire::Data{std::move(d.sample), {}});
          if (at <= now && sub.pending_timers == 0) {
            enqueue(sess, sub_id, sub, std::move(bytes));
          } else {
            ++sub.pending_timers;
            timers.push(Timed{at, timer_seq++, cid, sub_id, std::move(bytes)});
          }
        }
      }
    }
  }

  // ------------------------------------------------------------------ sessions

  static const char* role_name(const Session& s) {
    if (s.admin) return "admin";
    switch (s.role) {
      case Role::pending: return "pending";
      case Role::device: return "device";
      case Role::client: return "client";
    }
    return "?";
  }

  wire::Catalog live_catalog() const {
    wire::Catalog c;
    for (const auto& [key, e] : catalog)
      if (e.live) c.signals.push_back(e.descriptor);
    return c;
  }

  void broadcast_catalog() {
    auto cat = live_catalog();
    catalog_live = cat.signals.size();
    auto bytes = wire::encode_frame(cat);
    for (auto& [cid, sess] : sessions)
      if (sess.role == Role::client && !sess.closing) sess.conn->push_control(bytes);
    log::info("catalog_update", {{"live", std::to_string(cat.signals.size())}});
  }

  void send(Session& sess, const wire::Message& m) { sess.conn->push_control(wire::encode_frame(m)); }

  void protocol_error(Session& sess, const std::string& why) {
    send(sess, wire::ErrorMsg{"PROTOCOL", why});
    sess.closing = true;
    sess.conn->finish();
    log::warn("protocol_error", {{"conn", std::to_string(sess.conn->id())}, {"reason", why}});
  }

  void on_message(std::uint64_t cid, Session& sess, const wire::Message& msg) {
    if (sess.role == Role::pending && !std::holds_alternative<wire::Hello>(msg)) {
      protocol_error(sess, std::string("expected hello, got ") + wire::type_name(msg));
      return;
    }
    std::visit(overloaded{
                   [&](const wire::Hello& m) { on_hello(cid, sess, m); },
                   [&](const wire::Subscribe& m) { on_subscribe(sess, m); },
                   [&](const wire::Data& m) { on_publish(sess, m); },
                   [&](const wire::Control& m) { on_control(sess, m); },
                   [&](const auto& m) {
                     send(sess, wire::ErrorMsg{"BAD_FRAME", std::string("unexpected ") + wire::type_name(m) + " frame"});
                   },
               },
               msg);
  }

  void adopt_identity(Session& sess, const std::string& id, Role role) {
    sess.role = role;
    const std::string suffix = "#" + cfg.admin_token;
    if (!cfg.admin_token.empty() && id.size() >= suffix.size() &&
        id.compare(id.size() - suffix.size(), suffix.size(), suffix) == 0) {
      sess.admin = true;
      sess.identity = id.substr(0, id.size() - suffix.size());
    } else {
      sess.identity = id;
    }
    sess.conn->set_identity(role_name(sess), sess.identity);
  }

  void on_hello(std::uint64_t cid, Session& sess, const wire::Hello& m) {
    if (m.role == wire::Role::client) {
      if (sess.role == Role::pending) adopt_identity(sess, m.id, Role::client);
      else if (sess.role == Role::device) {
        sess.role = Role::client;  // a device asking for the catalog becomes a loopback client
        sess.conn->set_identity(role_name(sess), sess.identity);
      }
      send(sess, live_catalog());
      log::info("hello", {{"conn", std::to_string(cid)}, {"id", sess.identity}, {"role", role_name(sess)}});
      return;
    }

    // Device-style hello: registers signals and grants the right to publish
    // them. All-or-nothing.
    std::set<SignalKey> keys;
    for (const auto& d : m.signals) {
      try {
        validate_descriptor(d);
      } catch (const ValidationError& e) {
        send(sess, wire::ErrorMsg{"BAD_DESCRIPTOR", d.device_id + "/" + d.signal + ": " + e.what()});
        return;
      }
      if (!keys.insert(d.key()).second) {
        send(sess, wire::ErrorMsg{"DUP_SIGNAL", d.key().str() + " listed twice"});
        return;
      }
      auto it = catalog.find(d.key());
      // A dropped signal whose publisher has gone may be taken over.
      if (it != catalog.end() && (it->second.live || it->second.has_source())) {
        send(sess, wire::ErrorMsg{"DUP_SIGNAL", d.key().str() + " is already registered"});
        return;
      }
    }
    if (sess.role == Role::pending) adopt_identity(sess, m.id, Role::device);
    for (const auto& d : m.signals) {
      auto& e = catalog[d.key()];
      e.descriptor = d;
      e.live = true;
      e.replay = false;
      e.owner = cid;
      sess.grants.insert(d.key());
    }
    send(sess, wire::Ack{"hello", true, ""});
    log::info("hello", {{"conn", std::to_string(cid)},
                        {"id", sess.identity},
                        {"role", role_name(sess)},
                        {"signals", std::to_string(m.signals.size())}});
    if (!m.signals.empty()) broadcast_catalog();
  }

  void on_subscribe(Session& sess, const wire::Subscribe& m) {
    auto reject = [&](const std::string& detail) {
      send(sess, wire::Ack{"subscribe", false, detail});
      log::info("subscribe_rejected", {{"conn", std::to_string(sess.conn->id())}, {"detail", detail}});
    };
    if (m.selection.empty()) return reject("UNKNOWN_SIGNAL: empty selection");
    for (const auto& key : m.selection) {
      auto it = catalog.find(key);
      if (it == catalog.end() || !it->second.live) return reject("UNKNOWN_SIGNAL: " + key.str());
    }
    Subscription sub;
    try {
      dsp::validate_pipeline(m.transforms);
      for (const auto& key : m.selection)
        if (!sub.pipelines.count(key)) sub.pipelines.emplace(key, dsp::Pipeline(m.transforms, cfg.seed, key));
    } catch (const Error& e) {
      return reject(std::string("INVALID_PIPELINE: ") + e.what());
    }
    const std::int64_t id = next_sub_id++;
    sess.subs.emplace(id, std::move(sub));
    sess.conn->has_subscription = true;
    send(sess, wire::Ack{"subscribe", true, "sub_id=" + std::to_string(id)});
    std::string sel;
    for (const auto& key : m.selection) sel += (sel.empty() ? "" : ",") + key.str();
    log::info("subscribe", {{"conn", std::to_string(sess.conn->id())},
                            {"sub", std::to_string(id)},
                            {"selection", sel},
                            {"stages", std::to_string(m.transforms.size())}});
  }

  void on_publish(Session& sess, const wire::Data& m) {
    const auto key = m.sample.key();
    if (!sess.grants.count(key)) {
      send(sess, wire::ErrorMsg{"NO_GRANT", "no publish grant for " + key.str()});
      return;
    }
    auto it = catalog.find(key);
    if (it != catalog.end() && static_cast<int>(m.sample.values.size()) != it->second.descriptor.channels) {
      send(sess, wire::ErrorMsg{"BAD_SAMPLE", key.str() + ": expected " +
                                                  std::to_string(it->second.descriptor.channels) + " values"});
      return;
    }
    route(m.sample, net::now_ms());
  }

  void on_closed(std::uint64_t cid) {
    auto it = sessions.find(cid);
    if (it == sessions.end()) return;
    bool changed = false;
    for (auto& [key, e] : catalog) {
      if (e.owner == cid) {
        e.owner.reset();
        if (e.live) changed = true;
        e.live = false;
      }
    }
    log::info("session_closed", {{"conn", std::to_string(cid)}, {"id", it->second.identity}});
    sessions.erase(it);
    if (changed) broadcast_catalog();
  }

  // ------------------------------------------------------------------ control

  std::vector<CatalogEntry*> targets(const Params& p) {
    auto device = require(param_string(p, "device_id"), "device_id");
    auto signal = param_string(p, "signal");
    std::vector<CatalogEntry*> out;
    for (auto& [key, e] : catalog)
      if (key.device_id == device && (!signal || key.signal == *signal)) out.push_back(&e);
    return out;
  }

  struct UnknownTarget : Error {
    explicit UnknownTarget(const std::string& m) : Error("unknown_target", m) {}
  };

  std::vector<CatalogEntry*> require_targets(const Params& p) {
    auto t = targets(p);
    if (t.empty()) {
      auto sig = param_string(p, "signal");
      throw UnknownTarget(*param_string(p, "device_id") + (sig ? "/" + *sig : std::string()));
    }
    return t;
  }

  void on_control(Session& sess, const wire::Control& m) {
    if (!sess.admin) {
      send(sess, wire::ErrorMsg{"UNAUTHORIZED", "control requires an admin session"});
      return;
    }
    std::string detail;
    try {
      detail = apply_control(sess, m);
    } catch (const UnknownTarget& e) {
      send(sess, wire::Ack{"control", false, std::string("UNKNOWN_TARGET: ") + e.what()});
      return;
    } catch (const Error& e) {
      send(sess, wire::Ack{"control", false, std::string("BAD_CONTROL: ") + e.what()});
      return;
    }
    send(sess, wire::Ack{"control", true, detail});
    if (m.action != "stats") log::info("control", {{"action", m.action}, {"detail", detail}});
  }

  std::string apply_control(Session& sess, const wire::Control& m) {
    const auto& p = m.params;
    if (m.action == "inject_delay") {
      auto latency = require(param_integer(p, "latency_ms"), "latency_ms");
      if (latency < 0) throw ValidationError("latency_ms", "must be >= 0");
      auto t = require_targets(p);
      for (auto* e : t) e->injected_delay = latency;
      return "targets=" + std::to_string(t.size());
    }
    if (m.action == "inject_noise") {
      auto spec = dsp::noise_spec_from(p);
      auto t = require_targets(p);
      for (auto* e : t) {
        if (spec.amplitude == 0) {
          e->injected_noise.reset();
          continue;
        }
        const auto& d = e->descriptor;
        e->injected_noise.emplace(
            spec, dsp::derive_seed(spec.seed.value_or(cfg.seed), d.device_id, d.signal, kInjectedNoiseStage));
      }
      return "targets=" + std::to_string(t.size());
    }
    if (m.action == "drop_device" || m.action == "resume_device") {
      const bool resume = m.action == "resume_device";
      if (param_string(p, "signal")) throw ValidationError("signal", "not accepted; whole devices only");
      auto t = require_targets(p);
      std::size_t changed = 0;
      for (auto* e : t) {
        const bool want = resume && e->has_source();
        if (e->live != want) {
          e->live = want;
          ++changed;
        }
      }
      if (changed) broadcast_catalog();
      return "changed=" + std::to_string(changed);
    }
    if (m.action == "extract_epoch") {
      auto key = SignalKey{require(param_string(p, "device_id"), "device_id"), require(param_string(p, "signal"), "signal")};
      auto it = catalog.find(key);
      if (it == catalog.end()) throw UnknownTarget(key.str());
      sync::Epoch ep{require(param_integer(p, "t0"), "t0"), require(param_integer(p, "t1"), "t1"),
                     param_string(p, "label").value_or("")};
      if (ep.t1 < ep.t0) throw ValidationError("t1", "must be >= t0");
      std::vector<Sample> snapshot(it->second.history.begin(), it->second.history.end());
      auto out = sync::extract_epoch(snapshot, ep);
      for (auto& s : out) send(sess, wire::Data{std::move(s), ep.label});
      return "samples=" + std::to_string(out.size());
    }
    if (m.action == "stats") return stats().to_json().dump();
    throw ValidationError("action", "unknown action '" + m.action + "'");
  }
};

Hub::Hub(HubConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

Hub::~Hub() { stop(std::chrono::milliseconds(500)); }

void Hub::start() { impl_->start(); }

void Hub::stop(std::chrono::milliseconds drain) { impl_->stop(drain); }

std::uint16_t Hub::port() const { return impl_->bound_port; }

bool Hub::running() const { return impl_->running; }

Stats Hub::stats() const { return impl_->stats(); }

}  // namespace thalamus::hub
