#include <gtest/gtest.h>

#include "hub_support.hpp"
#include "thalamus/outbound.hpp"

using namespace thalamus;
using namespace std::chrono_literals;
using thalamus::testing::Client;
using thalamus::testing::data;
using thalamus::testing::descriptor;
using thalamus::testing::eventually;
using thalamus::testing::loopback_config;

namespace {

class HubTest : public ::testing::Test {
 protected:
  void start(HubConfig cfg = loopback_config()) {
    hub_ = std::make_unique<hub::Hub>(std::move(cfg));
    hub_->start();
  }
  void TearDown() override {
    if (hub_) hub_->stop(200ms);
  }
  std::uint16_t port() const { return hub_->port(); }
  hub::Hub& hub() { return *hub_; }

  // A device connection publishing dev/sig, plus a subscribed client.
  struct Pair {
    std::unique_ptr<Client> device, client;
  };
  Pair device_and_subscriber(const std::string& dev, const std::string& sig, std::vector<TransformSpec> p = {}) {
    Pair out;
    out.device = std::make_unique<Client>(port());
    auto ack = out.device->register_signals(dev, {descriptor(dev, sig)});
    EXPECT_TRUE(ack && std::holds_alternative<wire::Ack>(*ack));
    out.client = std::make_unique<Client>(port());
    EXPECT_TRUE(out.client->hello());
    auto sub = out.client->subscribe({{dev, sig}}, std::move(p));
    EXPECT_TRUE(sub && sub->ok) << (sub ? sub->detail : "no ack");
    return out;
  }

  std::unique_ptr<hub::Hub> hub_;
};

std::size_t subscription_count(const hub::Stats& s) {
  std::size_t n = 0;
  for (const auto& sess : s.sessions) n += sess.subscriptions.size();
  return n;
}

}  // namespace

// ---------------------------------------------------------------------------
// Outbound queue policy, without sockets.

TEST(OutboundQueue, FullSubscriptionDropsItsOldestFrame) {
  OutboundQueue q;
  EXPECT_FALSE(q.push(1, "a\n", 2));
  EXPECT_FALSE(q.push(1, "b\n", 2));
  EXPECT_TRUE(q.push(1, "c\n", 2));
  EXPECT_EQ(q.drops(), 1u);
  std::string out;
  EXPECT_EQ(q.pop_batch(out, 1 << 20), 2u);
  EXPECT_EQ(out, "b\nc\n");
}

TEST(OutboundQueue, SubscriptionsAreBoundedIndependently) {
  OutboundQueue q;
  q.push(1, "a1\n", 1);
  q.push(2, "b1\n", 1);
  q.push_control("ctl\n");
  q.push(1, "a2\n", 1);  // drops a1 only
  EXPECT_EQ(q.subscriptions().at(1).drops, 1u);
  EXPECT_EQ(q.subscriptions().at(2).drops, 0u);
  std::string out;
  q.pop_batch(out, 1 << 20);
  EXPECT_EQ(out, "b1\nctl\na2\n");
}

TEST(OutboundQueue, ControlFramesAreNeverDropped) {
  OutboundQueue q;
  for (int i = 0; i < 100; ++i) q.push_control("x\n");
  EXPECT_EQ(q.size(), 100u);
  EXPECT_EQ(q.drops(), 0u);
}

TEST(OutboundQueue, PopBatchStopsAtByteBudget) {
  OutboundQueue q;
  for (int i = 0; i < 10; ++i) q.push(1, std::string(10, 'x'), 100);
  std::string out;
  EXPECT_EQ(q.pop_batch(out, 25), 3u);
  EXPECT_EQ(q.subscriptions().at(1).queued, 7u);
}

// ---------------------------------------------------------------------------
// Handshake and catalog

TEST_F(HubTest, EmptyHubSendsEmptyCatalog) {
  start();
  Client c(port());
  auto cat = c.hello();
  ASSERT_TRUE(cat);
  EXPECT_TRUE(cat->signals.empty());
}

TEST_F(HubTest, FreshHubCountersAreZero) {
  start();
  auto s = hub().stats();
  EXPECT_EQ(s.frames_routed, 0u);
  EXPECT_EQ(s.drop_count, 0u);
  EXPECT_EQ(s.samples_in, 0u);
  EXPECT_EQ(s.catalog_size, 0u);
}

TEST_F(HubTest, PortInUseIsBindError) {
  start();
  auto cfg = loopback_config();
  cfg.port = port();
  hub::Hub second(cfg);
  EXPECT_THROW(second.start(), net::BindError);
}

TEST_F(HubTest, FrameBeforeHelloIsProtocolErrorAndCloses) {
  start();
  Client c(port());
  c.send(data("d", "s", 1, {1.0}));
  auto err = c.next_of<wire::ErrorMsg>();
  ASSERT_TRUE(err);
  EXPECT_EQ(err->code, "PROTOCOL");
  EXPECT_FALSE(c.next(1s));
  EXPECT_TRUE(c.closed());
}

TEST_F(HubTest, DeviceRegistrationReachesClients) {
  start();
  Client client(port());
  ASSERT_TRUE(client.hello());
  Client dev(port());
  auto ack = dev.register_signals("eye1", {descriptor("eye1", "pupil", 2), descriptor("eye1", "gaze", 2)});
  ASSERT_TRUE(ack && std::holds_alternative<wire::Ack>(*ack));
  auto update = client.next_of<wire::Catalog>();
  ASSERT_TRUE(update);
  EXPECT_EQ(update->signals.size(), 2u);

  Client late(port());
  auto cat = late.hello();
  ASSERT_TRUE(cat);
  EXPECT_EQ(cat->signals.size(), 2u);
}

TEST_F(HubTest, DuplicateSignalIsRejected) {
  start();
  Client a(port()), b(port());
  ASSERT_TRUE(a.register_signals("d", {descriptor("d", "s")}));
  auto r = b.register_signals("d", {descriptor("d", "s")});
  ASSERT_TRUE(r && std::holds_alternative<wire::ErrorMsg>(*r));
  EXPECT_EQ(std::get<wire::ErrorMsg>(*r).code, "DUP_SIGNAL");
}

TEST_F(HubTest, InvalidDescriptorIsRejected) {
  start();
  Client a(port());
  auto r = a.register_signals("d", {descriptor("d", "s", 0)});
  ASSERT_TRUE(r && std::holds_alternative<wire::ErrorMsg>(*r));
  EXPECT_EQ(std::get<wire::ErrorMsg>(*r).code, "BAD_DESCRIPTOR");
}

TEST_F(HubTest, MalformedLineGetsErrorButConnectionSurvives) {
  start();
  Client c(port());
  ASSERT_TRUE(c.hello());
  c.send_raw("{not json\n");
  auto err = c.next_of<wire::ErrorMsg>();
  ASSERT_TRUE(err);
  EXPECT_EQ(err->code, "BAD_FRAME");
  EXPECT_TRUE(c.hello());
}

TEST_F(HubTest, OversizedFrameClosesConnection) {
  auto cfg = loopback_config();
  cfg.limits.max_frame_bytes = 1024;
  start(cfg);
  Client c(port());
  ASSERT_TRUE(c.hello());
  c.send_raw(std::string(4096, 'x'));
  auto err = c.next_of<wire::ErrorMsg>();
  ASSERT_TRUE(err);
  EXPECT_EQ(err->code, "FRAME_TOO_LARGE");
  EXPECT_FALSE(c.next(1s));
  EXPECT_TRUE(c.closed());
}

TEST_F(HubTest, SilentSessionIsClosedUnlessSubscribed) {
  auto cfg = loopback_config();
  cfg.limits.idle_timeout_ms = 300;
  start(cfg);
  Client dev(port());
  ASSERT_TRUE(dev.register_signals("d", {descriptor("d", "s")}));
  Client idle(port());
  ASSERT_TRUE(idle.hello());
  Client subscribed(port());
  ASSERT_TRUE(subscribed.hello());
  ASSERT_TRUE(subscribed.subscribe({{"d", "s"}})->ok);

  auto err = idle.next_of<wire::ErrorMsg>(3s);
  ASSERT_TRUE(err);
  EXPECT_EQ(err->code, "IDLE_TIMEOUT");
  std::this_thread::sleep_for(400ms);
  EXPECT_TRUE(subscribed.hello());  // still open
}

// ---------------------------------------------------------------------------
// Subscriptions and routing

TEST_F(HubTest, SubscriptionDeliversPublishedSamplesInOrder) {
  start();
  auto p = device_and_subscriber("mouse", "xy");
  for (int i = 0; i < 50; ++i) p.device->send(data("mouse", "xy", 1000 + i, {double(i)}));
  auto lines = p.client->data_lines(50);
  ASSERT_EQ(lines.size(), 50u);
  for (int i = 0; i < 50; ++i) {
    auto d = std::get<wire::Data>(wire::decode_frame(lines[i]));
    EXPECT_EQ(d.sample.t, 1000 + i);
    EXPECT_EQ(d.sample.values[0], SampleValue(double(i)));
  }
  EXPECT_TRUE(eventually([&] { return hub().stats().frames_routed == 50u; }));
  EXPECT_EQ(hub().stats().drop_count, 0u);
}

TEST_F(HubTest, MissingSurvivesRouting) {
  start();
  auto p = device_and_subscriber("eye", "pupil");
  p.device->send(data("eye", "pupil", 5, {SampleValue::missing()}));
  auto lines = p.client->data_lines(1);
  ASSERT_EQ(lines.size(), 1u);
  EXPECT_NE(lines[0].find("\"values\":[\"NA\"]"), std::string::npos);
}

TEST_F(HubTest, UnknownSelectionRejectsWholeSubscription) {
  start();
  Client dev(port());
  ASSERT_TRUE(dev.register_signals("d", {descriptor("d", "s")}));
  Client c(port());
  ASSERT_TRUE(c.hello());
  auto ack = c.subscribe({{"d", "s"}, {"d", "nope"}});
  ASSERT_TRUE(ack);
  EXPECT_FALSE(ack->ok);
  EXPECT_EQ(ack->detail.rfind("UNKNOWN_SIGNAL", 0), 0u) << ack->detail;
  EXPECT_EQ(subscription_count(hub().stats()), 0u);
  dev.send(data("d", "s", 1, {1.0}));
  EXPECT_TRUE(c.data_lines(1, 300ms).empty());
}

TEST_F(HubTest, DelayMustBeLastStage) {
  start();
  Client dev(port());
  ASSERT_TRUE(dev.register_signals("d", {descriptor("d", "s")}));
  Client c(port());
  ASSERT_TRUE(c.hello());
  std::vector<TransformSpec> p{{TransformKind::delay, {{"mode", std::string("fixed_latency")}, {"latency_ms", std::int64_t{5}}}},
                               {TransformKind::noise, {{"kind", std::string("gaussian")}, {"amplitude", 1.0}}}};
  auto ack = c.subscribe({{"d", "s"}}, p);
  ASSERT_TRUE(ack);
  EXPECT_FALSE(ack->ok);
  EXPECT_EQ(ack->detail.rfind("INVALID_PIPELINE", 0), 0u) << ack->detail;
}

TEST_F(HubTest, PipelineRunsHubSide) {
  start();
  auto p = device_and_subscriber("d", "s", {{TransformKind::missing_policy, {{"mode", std::string("zero_fill")}}}});
  p.device->send(data("d", "s", 1, {SampleValue::missing()}));
  p.device->send(data("d", "s", 2, {7.5}));
  auto lines = p.client->data_lines(2);
  ASSERT_EQ(lines.size(), 2u);
  EXPECT_NE(lines[0].find("\"values\":[0.0]"), std::string::npos) << lines[0];
  EXPECT_NE(lines[1].find("\"values\":[7.5]"), std::string::npos) << lines[1];
}

TEST_F(HubTest, IdenticalSubscriptionsGetIdenticalBytes) {
  auto cfg = loopback_config();
  cfg.seed = 42;
  start(cfg);
  Client dev(port());
  ASSERT_TRUE(dev.register_signals("ecg", {descriptor("ecg", "v")}));
  std::vector<TransformSpec> p{{TransformKind::noise, {{"kind", std::string("gaussian")}, {"amplitude", 0.5}}},
                               {TransformKind::savgol, {{"window", std::int64_t{5}}, {"order", std::int64_t{2}}}}};
  std::vector<std::unique_ptr<Client>> subs;
  for (int i = 0; i < 3; ++i) {
    subs.push_back(std::make_unique<Client>(port()));
    ASSERT_TRUE(subs.back()->hello());
    auto ack = subs.back()->subscribe({{"ecg", "v"}}, p);
    ASSERT_TRUE(ack && ack->ok) << (ack ? ack->detail : "no ack");
  }
  for (int i = 0; i < 200; ++i) dev.send(data("ecg", "v", 10 * i, {std::sin(i / 10.0)}));
  auto first = subs[0]->data_lines(196);
  ASSERT_EQ(first.size(), 196u);  // savgol holds back the window edges
  for (int i = 1; i < 3; ++i) EXPECT_EQ(subs[i]->data_lines(196), first);
}

TEST_F(HubTest, PublishNeedsGrantButConnectionStaysOpen) {
  start();
  Client c(port());
  ASSERT_TRUE(c.hello());
  c.send(data("mouse", "xy", 1, {1.0}));
  auto err = c.next_of<wire::ErrorMsg>();
  ASSERT_TRUE(err);
  EXPECT_EQ(err->code, "NO_GRANT");
  EXPECT_TRUE(c.hello());
}

TEST_F(HubTest, WrongChannelCountIsBadSample) {
  start();
  Client dev(port());
  ASSERT_TRUE(dev.register_signals("d", {descriptor("d", "s", 2)}));
  dev.send(data("d", "s", 1, {1.0}));
  auto err = dev.next_of<wire::ErrorMsg>();
  ASSERT_TRUE(err);
  EXPECT_EQ(err->code, "BAD_SAMPLE");
}

TEST_F(HubTest, LoopbackPublisherSeesOwnFramesOnlyWhenSubscribed) {
  start();
  Client a(port()), b(port());
  ASSERT_TRUE(a.hello("a"));
  ASSERT_TRUE(b.hello("b"));
  ASSERT_TRUE(a.register_signals("a", {descriptor("a-mouse", "xy", 2)}));
  ASSERT_TRUE(b.next_of<wire::Catalog>());  // registration broadcast
  ASSERT_TRUE(b.subscribe({{"a-mouse", "xy"}})->ok);
  a.send(data("a-mouse", "xy", 1, {1.0, 2.0}));
  EXPECT_EQ(b.data_lines(1).size(), 1u);
  EXPECT_TRUE(a.data_lines(1, 300ms).empty());

  ASSERT_TRUE(a.subscribe({{"a-mouse", "xy"}})->ok);
  a.send(data("a-mouse", "xy", 2, {3.0, 4.0}));
  EXPECT_EQ(a.data_lines(1).size(), 1u);
  EXPECT_EQ(b.data_lines(1).size(), 1u);
}

TEST_F(HubTest, DeviceDisconnectDropsSignalAndAllowsTakeover) {
  start();
  Client client(port());
  ASSERT_TRUE(client.hello());
  {
    Client dev(port());
    ASSERT_TRUE(dev.register_signals("d", {descriptor("d", "s")}));
    auto up = client.next_of<wire::Catalog>();
    ASSERT_TRUE(up);
    EXPECT_EQ(up->signals.size(), 1u);
  }
  auto down = client.next_of<wire::Catalog>();
  ASSERT_TRUE(down);
  EXPECT_TRUE(down->signals.empty());

  Client again(port());
  auto r = again.register_signals("d", {descriptor("d", "s")});
  ASSERT_TRUE(r && std::holds_alternative<wire::Ack>(*r));
  auto up = client.next_of<wire::Catalog>();
  ASSERT_TRUE(up);
  EXPECT_EQ(up->signals.size(), 1u);
}

// ---------------------------------------------------------------------------
// Control

TEST_F(HubTest, ControlNeedsAdmin) {
  start();
  Client c(port());
  ASSERT_TRUE(c.hello("nobody#wrong"));
  c.send(wire::Control{"drop_device", {{"device_id", std::string("d")}}});
  auto err = c.next_of<wire::ErrorMsg>();
  ASSERT_TRUE(err);
  EXPECT_EQ(err->code, "UNAUTHORIZED");
}

TEST_F(HubTest, ControlOnUnknownTarget) {
  start();
  Client admin(port());
  ASSERT_TRUE(admin.hello("ops#secret"));
  auto ack = admin.control("inject_delay", {{"device_id", std::string("ghost")}, {"latency_ms", std::int64_t{10}}});
  ASSERT_TRUE(ack);
  EXPECT_FALSE(ack->ok);
  EXPECT_EQ(ack->detail.rfind("UNKNOWN_TARGET", 0), 0u) << ack->detail;
  auto bad = admin.control("reboot", {});
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->detail.rfind("BAD_CONTROL", 0), 0u) << bad->detail;
}

TEST_F(HubTest, DropAndResumeDevice) {
  start();
  auto p = device_and_subscriber("d", "s");
  Client admin(port());
  ASSERT_TRUE(admin.hello("ops#secret"));

  ASSERT_TRUE(admin.control("drop_device", {{"device_id", std::string("d")}})->ok);
  auto down = p.client->next_of<wire::Catalog>();
  ASSERT_TRUE(down);
  EXPECT_TRUE(down->signals.empty());
  p.device->send(data("d", "s", 1, {1.0}));  // discarded
  EXPECT_TRUE(eventually([&] { return hub().stats().samples_discarded == 1u; }));

  ASSERT_TRUE(admin.control("resume_device", {{"device_id", std::string("d")}})->ok);
  auto up = p.client->next_of<wire::Catalog>();
  ASSERT_TRUE(up);
  EXPECT_EQ(up->signals.size(), 1u);
  p.device->send(data("d", "s", 2, {2.0}));
  auto lines = p.client->data_lines(1);
  ASSERT_EQ(lines.size(), 1u);
  EXPECT_EQ(std::get<wire::Data>(wire::decode_frame(lines[0])).sample.t, 2);
}

TEST_F(HubTest, InjectedDelayShiftsDelivery) {
  start();
  auto p = device_and_subscriber("d", "s");
  Client admin(port());
  ASSERT_TRUE(admin.hello("ops#secret"));
  ASSERT_TRUE(admin.control("inject_delay", {{"device_id", std::string("d")}, {"signal", std::string("s")},
                                             {"latency_ms", std::int64_t{150}}})
                  ->ok);
  const auto sent = std::chrono::steady_clock::now();
  p.device->send(data("d", "s", 1, {1.0}));
  ASSERT_EQ(p.client->data_lines(1).size(), 1u);
  EXPECT_GE(std::chrono::steady_clock::now() - sent, 149ms);  // hub clock is whole ms
}

TEST_F(HubTest, InjectedNoiseChangesValuesAndCanBeCleared) {
  start();
  auto p = device_and_subscriber("d", "s");
  Client admin(port());
  ASSERT_TRUE(admin.hello("ops#secret"));
  ASSERT_TRUE(admin.control("inject_noise", {{"device_id", std::string("d")}, {"kind", std::string("constant")},
                                             {"amplitude", 2.0}})
                  ->ok);
  p.device->send(data("d", "s", 1, {1.0}));
  auto lines = p.client->data_lines(1);
  ASSERT_EQ(lines.size(), 1u);
  EXPECT_NE(lines[0].find("\"values\":[3.0]"), std::string::npos) << lines[0];
  ASSERT_TRUE(admin.control("inject_noise", {{"device_id", std::string("d")}, {"kind", std::string("constant")},
                                             {"amplitude", 0.0}})
                  ->ok);
  p.device->send(data("d", "s", 2, {1.0}));
  lines = p.client->data_lines(1);
  ASSERT_EQ(lines.size(), 1u);
  EXPECT_NE(lines[0].find("\"values\":[1.0]"), std::string::npos) << lines[0];
}

TEST_F(HubTest, ExtractEpochFromHistory) {
  start();
  auto p = device_and_subscriber("d", "s");
  for (int i = 0; i < 30; ++i) p.device->send(data("d", "s", 1000 + 100 * i, {double(i)}));
  ASSERT_EQ(p.client->data_lines(30).size(), 30u);
  Client admin(port());
  ASSERT_TRUE(admin.hello("ops#secret"));
  admin.send(wire::Control{"extract_epoch", {{"device_id", std::string("d")}, {"signal", std::string("s")},
                                             {"t0", std::int64_t{1000}}, {"t1", std::int64_t{2000}},
                                             {"label", std::string("baseline")}}});
  auto lines = admin.data_lines(11);
  ASSERT_EQ(lines.size(), 11u);
  EXPECT_NE(lines[0].find("\"label\":\"baseline\""), std::string::npos);
  auto ack = admin.next_of<wire::Ack>();
  ASSERT_TRUE(ack && ack->ok);
  EXPECT_EQ(ack->detail, "samples=11");
}

TEST_F(HubTest, StatsOverTheWire) {
  start();
  Client admin(port());
  ASSERT_TRUE(admin.hello("ops#secret"));
  auto ack = admin.control("stats", {});
  ASSERT_TRUE(ack && ack->ok);
  auto j = nlohmann::json::parse(ack->detail);
  EXPECT_EQ(j["catalog_size"], 0);
  EXPECT_EQ(j["sessions"].size(), 1u);
  EXPECT_EQ(j["sessions"][0]["role"], "admin");
}

// ---------------------------------------------------------------------------
// Replay

TEST_F(HubTest, ReplaysConfiguredDataset) {
  thalamus::testing::TempDir dir;
  std::string csv = "t,a,b\n";
  for (int i = 0; i < 100; ++i)
    csv += std::to_string(5000 + 10 * i) + "," + (i % 7 == 3 ? std::string("NA") : std::to_string(i)) + "," +
           std::to_string(-i) + "\n";
  dir.write("fx.csv", csv);
  auto cfg = loopback_config();
  cfg.base_dir = dir.path();
  DeviceConfig d;
  d.descriptor = descriptor("fx", "ab", 2, 100);
  d.source.path = "fx.csv";
  d.replay.speed = 4.0;
  d.replay.rebase = false;
  d.replay.start_delay_ms = 300;
  cfg.devices.push_back(d);
  start(cfg);

  Client c(port());
  auto cat = c.hello();
  ASSERT_TRUE(cat);
  ASSERT_EQ(cat->signals.size(), 1u);
  ASSERT_TRUE(c.subscribe({{"fx", "ab"}})->ok);
  auto lines = c.data_lines(100);
  ASSERT_EQ(lines.size(), 100u);
  for (int i = 0; i < 100; ++i) {
    auto s = std::get<wire::Data>(wire::decode_frame(lines[i])).sample;
    EXPECT_EQ(s.t, 5000 + 10 * i);
    if (i % 7 == 3) EXPECT_TRUE(s.values[0].is_missing());
    else EXPECT_EQ(s.values[0], SampleValue(double(i)));
    EXPECT_EQ(s.values[1], SampleValue(double(-i)));
  }
}

TEST_F(HubTest, MissingDatasetIsConfigError) {
  auto cfg = loopback_config();
  DeviceConfig d;
  d.descriptor = descriptor("fx", "ab");
  d.source.path = "/nonexistent/fx.csv";
  cfg.devices.push_back(d);
  hub::Hub h(cfg);
  EXPECT_THROW(h.start(), ConfigError);
}
