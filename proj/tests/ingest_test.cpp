#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "thalamus/ingest.hpp"

using namespace thalamus;
using namespace thalamus::ingest;

namespace {

SignalDescriptor pupil(int channels = 1) { return {"eye1", "pupil", "mm", 1000, channels}; }

CsvMapping mapping(std::vector<std::string> cols = {"pupil"}) {
  CsvMapping m;
  m.timestamp_column = "t";
  m.value_columns = std::move(cols);
  return m;
}

RecordedStream stream_of(std::vector<Timestamp> ts) {
  RecordedStream s{pupil(), std::move(ts), {}};
  for (std::size_t i = 0; i < s.timestamps.size(); ++i) s.rows.push_back({double(i)});
  return s;
}

}  // namespace

TEST(Csv, MissingTokenBecomesMissing) {
  auto r = load_csv_text("t,pupil\n1000,3.1\n1001,NA\n1002,2.9", mapping(), pupil());
  ASSERT_EQ(r.stream.size(), 3u);
  EXPECT_EQ(r.stream.rows[0][0], SampleValue{3.1});
  EXPECT_TRUE(r.stream.rows[1][0].is_missing());
  EXPECT_EQ(r.stream.rows[2][0], SampleValue{2.9});
  EXPECT_FALSE(r.reordered);
}

TEST(Csv, HeaderOnlyIsEmptyStream) {
  auto r = load_csv_text("t,pupil\n", mapping(), pupil());
  EXPECT_TRUE(r.stream.empty());
}

TEST(Csv, OutOfOrderRowsAreSorted) {
  auto r = load_csv_text("t,pupil\n1002,3\n1000,1\n1001,2\n", mapping(), pupil());
  EXPECT_EQ(r.stream.timestamps, (std::vector<Timestamp>{1000, 1001, 1002}));
  EXPECT_EQ(r.stream.rows[0][0], SampleValue{1.0});
  EXPECT_TRUE(r.reordered);
}

TEST(Csv, DuplicateTimestampRejected) {
  try {
    load_csv_text("t,pupil\n1000,1\n1000,2\n", mapping(), pupil());
    FAIL();
  } catch (const DuplicateTimestamp& e) {
    EXPECT_EQ(e.t(), 1000);
  }
}

TEST(Csv, ParseErrorsCarryLocation) {
  try {
    load_csv_text("t,pupil\n1000,1\n1001,abc\n", mapping(), pupil());
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line_no(), 3u);
    EXPECT_EQ(e.column(), "pupil");
  }
  EXPECT_THROW(load_csv_text("t,pupil\nxyz,1\n", mapping(), pupil()), ParseError);
  EXPECT_THROW(load_csv_text("t,pupil\n1,2,3\n", mapping(), pupil()), ParseError);
  EXPECT_THROW(load_csv_text("time,pupil\n1,2\n", mapping(), pupil()), ParseError);
  EXPECT_THROW(load_csv_text("", mapping(), pupil()), ParseError);
}

TEST(Csv, QuotedFieldsPerRfc4180) {
  auto recs = parse_csv("a,\"b,c\",\"say \"\"hi\"\"\"\r\n1,\"multi\nline\",3\n");
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[0].fields[1], "b,c");
  EXPECT_EQ(recs[0].fields[2], "say \"hi\"");
  EXPECT_EQ(recs[1].fields[1], "multi\nline");
  EXPECT_THROW(parse_csv("a,\"open\n"), ParseError);
}

TEST(Csv, MultiChannelAndCustomTokens) {
  CsvMapping m = mapping({"c1", "c2"});
  m.na_tokens = {"-"};
  auto r = load_csv_text("c2,t,c1\n5,10,-\n6,20,1.5\n", m, pupil(2));
  EXPECT_TRUE(r.stream.rows[0][0].is_missing());
  EXPECT_EQ(r.stream.rows[0][1], SampleValue{5.0});
  EXPECT_EQ(r.stream.rows[1][0], SampleValue{1.5});
}

TEST(Csv, ChannelCountMismatchIsValidationError) {
  EXPECT_THROW(load_csv_text("t,a,b\n1,2,3\n", mapping({"a", "b"}), pupil(1)), ValidationError);
}

TEST(Csv, DefaultValueColumnsAreAllOthers) {
  CsvMapping m;
  auto r = load_csv_text("x,t,y\n1,5,2\n", m, pupil(2));
  EXPECT_EQ(r.stream.rows[0], (Values{1.0, 2.0}));
}

TEST(Timestamps, Iso8601) {
  EXPECT_EQ(parse_timestamp("1970-01-01T00:00:00Z"), 0);
  EXPECT_EQ(parse_timestamp("2023-01-13T12:19:05.123Z"), 1673612345123);
  EXPECT_EQ(parse_timestamp("2023-01-13 13:19:05.123+01:00"), 1673612345123);
  EXPECT_EQ(parse_timestamp("2023-01-13T12:19:05.1234567"), 1673612345123);
  EXPECT_EQ(parse_timestamp("1673612345123"), 1673612345123);
  EXPECT_FALSE(parse_timestamp("-5").has_value());
  EXPECT_FALSE(parse_timestamp("2023-13-01T00:00:00Z").has_value());
  EXPECT_FALSE(parse_timestamp("yesterday").has_value());
}

TEST(Csv, IsoTimestampColumn) {
  auto r = load_csv_text("t,pupil\n2023-01-13T12:19:05.123Z,1\n2023-01-13T12:19:05.140Z,2\n", mapping(), pupil());
  EXPECT_EQ(r.stream.timestamps, (std::vector<Timestamp>{1673612345123, 1673612345140}));
}

TEST(Json, LoadsRecords) {
  auto r = load_json_text(R"([{"t":1000,"values":[3.1]}])", pupil());
  ASSERT_EQ(r.stream.size(), 1u);
  EXPECT_EQ(r.stream.rows[0][0], SampleValue{3.1});
}

TEST(Json, NAIsMissing) {
  auto r = load_json_text(R"([{"t":1000,"values":["NA"]}])", pupil());
  EXPECT_TRUE(r.stream.rows[0][0].is_missing());
}

TEST(Json, Errors) {
  EXPECT_THROW(load_json_text(R"({"t":1})", pupil()), ParseError);
  EXPECT_THROW(load_json_text(R"([{"t":1,"values":[1,2]}])", pupil()), ParseError);
  EXPECT_THROW(load_json_text(R"([{"t":-1,"values":[1]}])", pupil()), ParseError);
  EXPECT_THROW(load_json_text(R"([{"values":[1]}])", pupil()), ParseError);
  EXPECT_THROW(load_json_text(R"([{"t":1,"values":[1]},{"t":1,"values":[2]}])", pupil()), DuplicateTimestamp);
}

TEST(Json, DatasetRoundTrip) {
  auto r = load_json_text(R"([{"t":1000,"values":[3.1]},{"t":1005,"values":["NA"]}])", pupil());
  auto again = load_json_text(to_json_dataset(r.stream), pupil());
  EXPECT_EQ(again.stream, r.stream);
}

TEST(Files, IoErrorForMissingFile) {
  EXPECT_THROW(load_csv("/nonexistent/file.csv", mapping(), pupil()), IoError);
  EXPECT_THROW(load_json("/nonexistent/file.json", pupil()), IoError);
}

TEST(Rebase, ShiftsByConstant) {
  EXPECT_EQ(rebase_timestamps(stream_of({1000, 1100, 1250}), 5000).timestamps, (std::vector<Timestamp>{5000, 5100, 5250}));
  auto s = stream_of({7, 9});
  EXPECT_EQ(rebase_timestamps(s, 7), s);
  EXPECT_EQ(rebase_timestamps(stream_of({42}), 3).timestamps, (std::vector<Timestamp>{3}));
  EXPECT_THROW(rebase_timestamps(stream_of({}), 3), EmptyStream);
}

TEST(Replay, RealTimePacing) {
  ReplayPlan plan{{stream_of({0, 100})}, 1.0, false, false};
  ReplayCursor c;
  auto a = replay_next(plan, c, 10'000);
  auto b = replay_next(plan, c, 10'000);
  EXPECT_EQ(a->due, 10'000);
  EXPECT_EQ(b->due, 10'100);
  EXPECT_FALSE(replay_next(plan, c, 10'000).has_value());
}

TEST(Replay, SpeedScalesDueTimes) {
  ReplayPlan plan{{stream_of({0, 100})}, 2.0, false, false};
  ReplayCursor c;
  EXPECT_EQ(replay_next(plan, c, 0)->due, 0);
  EXPECT_EQ(replay_next(plan, c, 0)->due, 50);
}

TEST(Replay, TieBreakByDescriptorOrder) {
  auto a = stream_of({100});
  auto b = stream_of({100});
  a.descriptor.signal = "A";
  b.descriptor.signal = "B";
  ReplayPlan plan{{a, b}, 1.0, false, false};
  ReplayCursor c;
  EXPECT_EQ(replay_next(plan, c, 0)->sample.signal, "A");
  EXPECT_EQ(replay_next(plan, c, 0)->sample.signal, "B");
}

TEST(Replay, RebaseUsesEpoch) {
  ReplayPlan plan{{stream_of({1000, 1010})}, 1.0, true, false};
  ReplayCursor c;
  EXPECT_EQ(replay_next(plan, c, 50'000)->sample.t, 50'000);
  EXPECT_EQ(replay_next(plan, c, 50'000)->sample.t, 50'010);
}

TEST(Replay, LoopKeepsTimestampsMonotonic) {
  ReplayPlan plan{{stream_of({0, 1, 2})}, 1.0, false, true};
  ReplayCursor c;
  Timestamp prev_t = -1, prev_due = -1;
  for (int i = 0; i < 12; ++i) {
    auto item = replay_next(plan, c, 0);
    ASSERT_TRUE(item);
    EXPECT_GT(item->sample.t, prev_t);
    EXPECT_GT(item->due, prev_due);
    prev_t = item->sample.t;
    prev_due = item->due;
  }
}

TEST(Replay, ReproducesInputExactlyAndInOrder) {
  auto a = stream_of({0, 4, 8, 12});
  auto b = stream_of({1, 5, 9});
  b.descriptor.signal = "other";
  ReplayPlan plan{{a, b}, 1.0, false, false};
  ReplayCursor c;
  std::vector<Sample> got;
  while (auto item = replay_next(plan, c, 0)) got.push_back(item->sample);
  ASSERT_EQ(got.size(), 7u);
  for (std::size_t i = 1; i < got.size(); ++i) EXPECT_LE(got[i - 1].t, got[i].t);
  std::vector<Sample> only_a;
  for (auto& s : got)
    if (s.signal == "pupil") only_a.push_back(s);
  ASSERT_EQ(only_a.size(), a.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(only_a[i], a.sample(i));
}
