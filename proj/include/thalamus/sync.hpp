#pragma once

// Timeline operations: ordered merge of concurrent streams, inclusive epoch
// extraction, and tolerance-bounded alignment of multi-rate streams.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "thalamus/model.hpp"

namespace thalamus::sync {

class UnsortedInput : public Error {
 public:
  UnsortedInput(const SignalKey& key, std::size_t position)
      : Error("unsorted_input", key.str() + " decreases at position " + std::to_string(position)),
        key_(key),
        position_(position) {}
  const SignalKey& key() const noexcept { return key_; }
  std::size_t position() const noexcept { return position_; }

 private:
  SignalKey key_;
  std::size_t position_;
};

class UnknownReference : public Error {
 public:
  explicit UnknownReference(const std::string& what) : Error("unknown_reference", what) {}
};

/// Closed interval [t0, t1].
struct Epoch {
  Timestamp t0 = 0;
  Timestamp t1 = 0;
  std::string label;
};

/// K-way merge of individually sorted sequences. Ties on t go to the
/// lexicographically smaller (device_id, signal), then to the earlier input.
inline std::vector<Sample> merge_ordered(const std::vector<std::vector<Sample>>& streams) {
  std::size_t total = 0;
  for (const auto& s : streams) {
    for (std::size_t i = 1; i < s.size(); ++i)
      if (s[i].t < s[i - 1].t) throw UnsortedInput(s[i].key(), i);
    total += s.size();
  }

  struct Head {
    std::size_t stream;
    std::size_t pos;
  };
  auto later = [&](const Head& a, const Head& b) {
    const Sample& x = streams[a.stream][a.pos];
    const Sample& y = streams[b.stream][b.pos];
    if (x.t != y.t) return x.t > y.t;
    if (x.device_id != y.device_id) return x.device_id > y.device_id;
    if (x.signal != y.signal) return x.signal > y.signal;
    if (a.stream != b.stream) return a.stream > b.stream;
    return a.pos > b.pos;
  };
  std::priority_queue<Head, std::vector<Head>, decltype(later)> heap(later);
  for (std::size_t i = 0; i < streams.size(); ++i)
    if (!streams[i].empty()) heap.push({i, 0});

  std::vector<Sample> out;
  out.reserve(total);
  while (!heap.empty()) {
    Head h = heap.top();
    heap.pop();
    out.push_back(streams[h.stream][h.pos]);
    if (h.pos + 1 < streams[h.stream].size()) heap.push({h.stream, h.pos + 1});
  }
  return out;
}

/// All samples with t0 <= t <= t1, in their original order.
inline std::vector<Sample> extract_epoch(std::span<const Sample> samples, const Epoch& e) {
  std::vector<Sample> out;
  for (const auto& s : samples)
    if (s.t >= e.t0 && s.t <= e.t1) out.push_back(s);
  return out;
}

enum class Strategy { nearest, last_before };

/// One stream as seen by `align`: its samples must be sorted by t.
struct Stream {
  SignalKey key;
  std::vector<Sample> samples;
};

struct FixedRate {
  double rate_hz = 1.0;
};

using Reference = std::variant<SignalKey, FixedRate>;

struct AlignedFrame {
  Timestamp t = 0;
  /// Absent key = no sample qualified within tolerance.
  std::map<SignalKey, Values> cells;
  /// Source timestamp of the sample chosen for each present cell.
  std::map<SignalKey, Timestamp> source_t;
};

/// Index of the sample paired with `ref`, or nullopt. For nearest, the
/// equidistant tie resolves to the earlier sample.
inline std::optional<std::size_t> pick(const std::vector<Sample>& s, Timestamp ref,
                                       Timestamp tolerance_ms, Strategy strategy) {
  auto it = std::upper_bound(s.begin(), s.end(), ref,
                             [](Timestamp v, const Sample& x) { return v < x.t; });
  // `it` is the first sample strictly after ref; it-1 is the last at or before.
  std::optional<std::size_t> before;
  if (it != s.begin()) before = static_cast<std::size_t>((it - s.begin()) - 1);
  if (strategy == Strategy::last_before) {
    if (before && ref - s[*before].t <= tolerance_ms) return before;
    return std::nullopt;
  }
  std::optional<std::size_t> best;
  Timestamp best_d = 0;
  if (before) {
    best = before;
    best_d = ref - s[*before].t;
  }
  if (it != s.end()) {
    Timestamp d = it->t - ref;
    if (!best || d < best_d) {
      best = static_cast<std::size_t>(it - s.begin());
      best_d = d;
    }
  }
  if (best && best_d <= tolerance_ms) return best;
  return std::nullopt;
}

/// One frame per reference instant. A signal reference uses that stream's
/// sample times; a fixed rate uses instants start + round(k * 1000 / rate)
/// covering [earliest, latest] over all streams. Each stream (reference
/// included) contributes the sample chosen by `strategy` within tolerance.
/// No interpolation.
inline std::vector<AlignedFrame> align(const std::vector<Stream>& streams, const Reference& reference,
                                       Timestamp tolerance_ms, Strategy strategy) {
  if (tolerance_ms < 0) throw Error("invalid_argument", "tolerance_ms must be >= 0");
  for (const auto& s : streams)
    for (std::size_t i = 1; i < s.samples.size(); ++i)
      if (s.samples[i].t < s.samples[i - 1].t) throw UnsortedInput(s.key, i);

  std::vector<Timestamp> instants;
  if (const auto* key = std::get_if<SignalKey>(&reference)) {
    auto it = std::find_if(streams.begin(), streams.end(), [&](const Stream& s) { return s.key == *key; });
    if (it == streams.end()) throw UnknownReference(key->str());
    for (const auto& x : it->samples) instants.push_back(x.t);
  } else {
    const double rate = std::get<FixedRate>(reference).rate_hz;
    if (!(rate > 0) || !std::isfinite(rate)) throw UnknownReference("fixed rate must be > 0");
    std::optional<Timestamp> lo, hi;
    for (const auto& s : streams) {
      if (s.samples.empty()) continue;
      lo = lo ? std::min(*lo, s.samples.front().t) : s.samples.front().t;
      hi = hi ? std::max(*hi, s.samples.back().t) : s.samples.back().t;
    }
    if (lo) {
      const double period = 1000.0 / rate;
      for (std::int64_t k = 0;; ++k) {
        Timestamp t = *lo + static_cast<Timestamp>(std::llround(static_cast<double>(k) * period));
        if (t > *hi) break;
        instants.push_back(t);
      }
    }
  }

  std::vector<AlignedFrame> frames;
  frames.reserve(instants.size());
  for (Timestamp ref : instants) {
    AlignedFrame f;
    f.t = ref;
    for (const auto& s : streams) {
      if (auto idx = pick(s.samples, ref, tolerance_ms, strategy)) {
        f.cells[s.key] = s.samples[*idx].values;
        f.source_t[s.key] = s.samples[*idx].t;
      }
    }
    frames.push_back(std::move(f));
  }
  return frames;
}

}  // namespace thalamus::sync
