#include <gtest/gtest.h>

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "hub_support.hpp"
#include "thalamus/commands.hpp"

using namespace thalamus;
using namespace std::chrono_literals;
using thalamus::testing::TempDir;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

cli::DatasetOptions dataset(const std::filesystem::path& p) {
  cli::DatasetOptions o;
  o.path = p;
  return o;
}

struct Run {
  int rc;
  std::string out, err;
};

Run validate(const std::filesystem::path& p) {
  std::ostringstream out, err;
  int rc = cli::cmd_validate(dataset(p), out, err);
  return {rc, out.str(), err.str()};
}

// Runs the real binary; returns its exit status.
int run_binary(const std::string& args) {
  const std::string cmd = std::string(THALAMUS_BIN) + " " + args + " >/dev/null 2>&1";
  int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string ten_hz_recording(int n) {
  std::string out;
  for (int i = 0; i < n; ++i)
    out += wire::encode_frame(wire::Data{Sample{"d", "s", 100 * i, {double(i)}}, i == 3 ? "cue" : ""});
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// validate

TEST(CliValidate, ReportsRowsAndMissing) {
  TempDir dir;
  auto r = validate(dir.write("a.csv", "t,v\n0,1.5\n10,NA\n20,2.5\n"));
  EXPECT_EQ(r.rc, 0);
  EXPECT_EQ(r.out.rfind("rows=3 missing=1 ", 0), 0u) << r.out;
  EXPECT_NE(r.out.find("span_ms=20"), std::string::npos);
  EXPECT_NE(r.out.find("reordered=false"), std::string::npos);
}

TEST(CliValidate, UnsortedFileLoadsAndSaysSo) {
  TempDir dir;
  auto r = validate(dir.write("a.csv", "t,v\n20,1\n0,2\n10,3\n"));
  EXPECT_EQ(r.rc, 0);
  EXPECT_NE(r.out.find("reordered=true"), std::string::npos) << r.out;
}

TEST(CliValidate, DuplicateTimestampFails) {
  TempDir dir;
  auto r = validate(dir.write("a.csv", "t,v\n0,1\n0,2\n"));
  EXPECT_EQ(r.rc, 1);
  EXPECT_EQ(r.err.rfind("duplicate_timestamp: ", 0), 0u) << r.err;
}

TEST(CliValidate, ParseErrorNamesTheLine) {
  TempDir dir;
  auto r = validate(dir.write("a.csv", "t,v\n0,1\n10,abc\n"));
  EXPECT_EQ(r.rc, 1);
  EXPECT_EQ(r.err.rfind("parse_error: ", 0), 0u) << r.err;
  EXPECT_NE(r.err.find('3'), std::string::npos) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
}

TEST(CliValidate, JsonDatasetWithIsoTimestamps) {
  TempDir dir;
  auto r = validate(dir.write("a.json", R"([{"t":"2023-01-13T12:00:00Z","values":[1]},
                                          {"t":"2023-01-13T12:00:00.500Z","values":["NA"]}])"));
  EXPECT_EQ(r.rc, 0);
  EXPECT_EQ(r.out.rfind("rows=2 missing=1 span_ms=500", 0), 0u) << r.out;
}

TEST(CliValidate, MissingFileIsIoError) {
  auto r = validate("/nonexistent/x.csv");
  EXPECT_EQ(r.rc, 1);
  EXPECT_EQ(r.err.rfind("io_error: ", 0), 0u) << r.err;
}

// ---------------------------------------------------------------------------
// transform

TEST(CliTransform, DelayStageIsRejectedOffline) {
  TempDir dir;
  auto in = dir.write("a.csv", "t,v\n0,1\n10,2\n");
  std::ostringstream err;
  int rc = cli::cmd_transform(dataset(in), R"([{"kind":"delay","params":{"mode":"fixed_latency","latency_ms":5}}])",
                              dir.path() / "out.json", 0, err);
  EXPECT_EQ(rc, 1);
  EXPECT_EQ(err.str().rfind("invalid_pipeline: ", 0), 0u) << err.str();
}

TEST(CliTransform, SeededNoiseIsByteIdenticalAcrossRuns) {
  TempDir dir;
  std::string csv = "t,v\n";
  for (int i = 0; i < 50; ++i) csv += std::to_string(10 * i) + ",0\n";
  auto in = dir.write("a.csv", csv);
  const std::string p = R"([{"kind":"noise","params":{"kind":"gaussian","amplitude":1.0,"seed":7}}])";
  std::ostringstream err;
  ASSERT_EQ(cli::cmd_transform(dataset(in), p, dir.path() / "1.json", 0, err), 0) << err.str();
  ASSERT_EQ(cli::cmd_transform(dataset(in), p, dir.path() / "2.json", 0, err), 0) << err.str();
  auto a = slurp(dir.path() / "1.json");
  EXPECT_EQ(a, slurp(dir.path() / "2.json"));
  EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 52);  // brackets + 50 records
}

TEST(CliTransform, OutputIsALoadableDataset) {
  TempDir dir;
  auto in = dir.write("a.csv", "t,v\n0,NA\n10,2\n20,NA\n");
  std::ostringstream err;
  ASSERT_EQ(cli::cmd_transform(dataset(in), R"([{"kind":"missing_policy","params":{"mode":"zero_fill"}}])",
                               dir.path() / "out.json", 0, err),
            0)
      << err.str();
  auto r = validate(dir.path() / "out.json");
  EXPECT_EQ(r.rc, 0);
  EXPECT_EQ(r.out.rfind("rows=3 missing=0 ", 0), 0u) << r.out;
}

TEST(CliTransform, PipelineMayComeFromAFile) {
  TempDir dir;
  auto in = dir.write("a.csv", "t,v\n0,1\n10,2\n20,3\n30,4\n40,5\n50,6\n");
  auto p = dir.write("p.json", R"([{"kind":"savgol","params":{"window":5,"order":2}}])");
  std::ostringstream err;
  ASSERT_EQ(cli::cmd_transform(dataset(in), p.string(), dir.path() / "out.json", 0, err), 0) << err.str();
  EXPECT_EQ(validate(dir.path() / "out.json").out.rfind("rows=2 ", 0), 0u);
}

// ---------------------------------------------------------------------------
// extract

TEST(CliExtract, FullRangeIsIdentity) {
  TempDir dir;
  const auto rec = ten_hz_recording(30);
  auto in = dir.write("rec.ndjson", rec);
  std::ostringstream out, err;
  ASSERT_EQ(cli::cmd_extract(in, 0, 100000, std::nullopt, std::nullopt, out, err), 0) << err.str();
  EXPECT_EQ(out.str(), rec);
}

TEST(CliExtract, InclusiveBoundsCountElevenAtTenHertz) {
  TempDir dir;
  auto in = dir.write("rec.ndjson", ten_hz_recording(30));
  std::ostringstream out, err;
  ASSERT_EQ(cli::cmd_extract(in, 1000, 2000, std::string("epoch"), std::nullopt, out, err), 0);
  const auto s = out.str();
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 11);
  EXPECT_NE(s.find("\"t\":1000,"), std::string::npos);
  EXPECT_NE(s.find("\"t\":2000,"), std::string::npos);
  EXPECT_NE(s.find("\"label\":\"epoch\""), std::string::npos);
}

TEST(CliExtract, DisjointRangeIsEmptyAndSucceeds) {
  TempDir dir;
  auto in = dir.write("rec.ndjson", ten_hz_recording(5));
  std::ostringstream out, err;
  EXPECT_EQ(cli::cmd_extract(in, 50000, 60000, std::nullopt, std::nullopt, out, err), 0);
  EXPECT_TRUE(out.str().empty());
}

TEST(CliExtract, BrokenRecordingIsParseError) {
  TempDir dir;
  auto in = dir.write("rec.ndjson", ten_hz_recording(2) + "{oops\n");
  std::ostringstream out, err;
  EXPECT_EQ(cli::cmd_extract(in, 0, 10, std::nullopt, std::nullopt, out, err), 1);
  EXPECT_EQ(err.str().rfind("parse_error: ", 0), 0u) << err.str();
}

// ---------------------------------------------------------------------------
// probe against an in-process hub

TEST(CliProbe, CountedProbeRecordsTheFixtureVerbatim) {
  TempDir dir;
  std::string csv = "t,v\n";
  for (int i = 0; i < 100; ++i) csv += std::to_string(1000 + 10 * i) + "," + std::to_string(i) + "\n";
  dir.write("fx.csv", csv);
  auto cfg = thalamus::testing::loopback_config();
  cfg.base_dir = dir.path();
  DeviceConfig d;
  d.descriptor = thalamus::testing::descriptor("fx", "v");
  d.source.path = "fx.csv";
  d.replay.speed = 5.0;
  d.replay.rebase = false;
  d.replay.start_delay_ms = 300;
  cfg.devices.push_back(d);
  hub::Hub hub(cfg);
  hub.start();

  cli::ProbeOptions o;
  o.connect = "127.0.0.1:" + std::to_string(hub.port());
  o.subscribe = {{"fx", "v"}};
  o.count = 100;
  auto r = cli::run_probe(o);
  ASSERT_EQ(r.exit_code, 0) << r.error;
  ASSERT_EQ(r.frames.size(), 100u);
  for (int i = 0; i < 100; ++i) {
    auto s = std::get<wire::Data>(wire::decode_frame(r.frames[i])).sample;
    EXPECT_EQ(s.t, 1000 + 10 * i);
    EXPECT_EQ(s.values.at(0), SampleValue(double(i)));
  }
}

TEST(CliProbe, UnknownSignalFailsWithItsCode) {
  hub::Hub hub(thalamus::testing::loopback_config());
  hub.start();
  cli::ProbeOptions o;
  o.connect = "127.0.0.1:" + std::to_string(hub.port());
  o.subscribe = {{"nope", "x"}};
  o.count = 1;
  auto r = cli::run_probe(o);
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_EQ(r.error, "UNKNOWN_SIGNAL: nope/x");
}

TEST(CliProbe, NoHubIsConnectError) {
  cli::ProbeOptions o;
  o.connect = "127.0.0.1:1";
  o.subscribe = {{"a", "b"}};
  auto r = cli::run_probe(o);
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_EQ(r.error.rfind("connect_error: ", 0), 0u) << r.error;
}

TEST(CliStats, PrintsCountersAndRejectsBadToken) {
  hub::Hub hub(thalamus::testing::loopback_config());
  hub.start();
  const std::string ep = "127.0.0.1:" + std::to_string(hub.port());
  std::ostringstream out, err;
  ASSERT_EQ(cli::cmd_stats(ep, "secret", out, err), 0) << err.str();
  auto j = nlohmann::json::parse(out.str());
  EXPECT_TRUE(j.contains("drop_count"));
  EXPECT_TRUE(j.contains("frames_routed"));
  std::ostringstream out2, err2;
  EXPECT_EQ(cli::cmd_stats(ep, "wrong", out2, err2), 1);
  EXPECT_EQ(err2.str().rfind("UNAUTHORIZED: ", 0), 0u) << err2.str();
}

// ---------------------------------------------------------------------------
// the binary's exit codes

TEST(CliBinary, UsageErrorExitsOne) { EXPECT_EQ(run_binary("validate"), 1); }

TEST(CliBinary, ValidateExitCodes) {
  TempDir dir;
  auto good = dir.write("a.csv", "t,v\n0,1\n10,NA\n20,2\n");
  auto dup = dir.write("b.csv", "t,v\n0,1\n0,2\n");
  EXPECT_EQ(run_binary("validate --dataset " + good.string()), 0);
  EXPECT_EQ(run_binary("validate --dataset " + dup.string()), 1);
}

TEST(CliBinary, ServeWithMissingDatasetExitsTwo) {
  TempDir dir;
  auto cfg = dir.write("hub.json", R"({"listen":"127.0.0.1:0","devices":[
      {"descriptor":{"device_id":"a","signal":"b","unit":"","rate_hz":10,"channels":1},
       "source":{"format":"csv","path":"missing.csv"}}]})");
  EXPECT_EQ(run_binary("serve --config " + cfg.string()), 2);
  EXPECT_EQ(run_binary("serve --config " + (dir.path() / "nope.json").string()), 2);
}

TEST(CliBinary, ServeOnBusyPortExitsThree) {
  hub::Hub hub(thalamus::testing::loopback_config());
  hub.start();
  TempDir dir;
  auto cfg = dir.write("hub.json", R"({"listen":"127.0.0.1:)" + std::to_string(hub.port()) + R"("})");
  EXPECT_EQ(run_binary("serve --config " + cfg.string()), 3);
}

TEST(CliBinary, ServeStopsCleanlyOnSigterm) {
  TempDir dir;
  auto cfg = dir.write("hub.json", R"({"listen":"127.0.0.1:0"})");
  pid_t pid = fork();
  ASSERT_GE(pid, 0);
  if (pid == 0) {
    int devnull = open("/dev/null", O_WRONLY);
    dup2(devnull, 2);
    execl(THALAMUS_BIN, THALAMUS_BIN, "serve", "--config", cfg.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  std::this_thread::sleep_for(300ms);
  kill(pid, SIGTERM);
  int status = 0;
  ASSERT_EQ(waitpid(pid, &status, 0), pid);
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 0);
}
