#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>

namespace dialingle {

/// Milliseconds since the Unix epoch. All timestamps in the store and the
/// engine come from an injected clock so replays and tests are deterministic.
using Timestamp = std::int64_t;

class Clock {
 public:
  virtual ~Clock() = default;
  virtual Timestamp now() const = 0;
};

class SystemClock final : public Clock {
 public:
  Timestamp now() const override {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
  }
};

/// Deterministic clock: returns the current value, then advances by `step`.
class ManualClock final : public Clock {
 public:
  explicit ManualClock(Timestamp start = 1'700'000'000'000, Timestamp step = 1)
      : value_(start), step_(step) {}

  Timestamp now() const override { return value_.fetch_add(step_); }
  void set(Timestamp t) { value_.store(t); }
  void advance(Timestamp delta) { value_.fetch_add(delta); }

 private:
  mutable std::atomic<Timestamp> value_;
  Timestamp step_;
};

}  // namespace dialingle
