#pragma once

// Per-connection outbound FIFO shared by every subscription on that
// connection. Each subscription is bounded on its own: when it is full its
// oldest queued frame is discarded (drop-oldest) and counted. Control frames
// (sub_id < 0) are never dropped. Not thread-safe; the owner locks.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <string>

namespace thalamus {

class OutboundQueue {
 public:
  static constexpr std::int64_t kControl = -1;

  struct Counters {
    std::size_t queued = 0;
    std::uint64_t drops = 0;
  };

  /// Returns true if a frame of `sub` had to be dropped to make room.
  bool push(std::int64_t sub, std::string bytes, std::size_t capacity) {
    bool dropped = false;
    auto& c = subs_[sub];
    if (c.queued >= capacity) {
      auto it = std::find_if(q_.begin(), q_.end(), [&](const Entry& e) { return e.sub_id == sub; });
      if (it != q_.end()) {
        q_.erase(it);
        --c.queued;
      }
      ++c.drops;
      ++drops_;
      dropped = true;
    }
    q_.push_back({sub, std::move(bytes)});
    ++c.queued;
    return dropped;
  }

  void push_control(std::string bytes) { q_.push_back({kControl, std::move(bytes)}); }

  /// Moves frames into `out` until it holds at least `max_bytes` or the
  /// queue is empty. Returns the number of frames taken.
  std::size_t pop_batch(std::string& out, std::size_t max_bytes) {
    std::size_t n = 0;
    while (!q_.empty() && out.size() < max_bytes) {
      auto& e = q_.front();
      if (e.sub_id != kControl) --subs_[e.sub_id].queued;
      out += e.bytes;
      q_.pop_front();
      ++n;
    }
    return n;
  }

  bool empty() const noexcept { return q_.empty(); }
  std::size_t size() const noexcept { return q_.size(); }
  std::uint64_t drops() const noexcept { return drops_; }
  const std::map<std::int64_t, Counters>& subscriptions() const noexcept { return subs_; }

 private:
  struct Entry {
    std::int64_t sub_id;
    std::string bytes;
  };
  std::deque<Entry> q_;
  std::map<std::int64_t, Counters> subs_;
  std::uint64_t drops_ = 0;
};

}  // namespace thalamus
