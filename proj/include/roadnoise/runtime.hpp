/* Copyright 2026 The roadnoise Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Streaming classification: a lock-free single-producer/single-consumer ring,
// hop-aligned windows, majority-vote smoothing and latency benchmarking.

#ifndef ROADNOISE_RUNTIME_HPP_
#define ROADNOISE_RUNTIME_HPP_

#include <atomic>
#include <cstdint>
#include <deque>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "roadnoise/model_file.hpp"
#include "roadnoise/signal.hpp"
#include "roadnoise/synth.hpp"

namespace roadnoise {

// Fixed-capacity sample ring for exactly one producer thread and one consumer
// thread. The producer never blocks: when the ring is full the oldest samples
// are discarded and counted. All indices are absolute stream positions.
class SampleRing {
 public:
  explicit SampleRing(std::size_t capacity);

  std::size_t capacity() const { return slots_.size(); }

  // Producer side.
  void push(std::span<const double> samples);

  // Consumer side. Copies [start, start + out.size()) and returns false if
  // any of it was not yet written or was overwritten during the copy.
  bool read(std::uint64_t start, std::span<double> out) const;
  // Raises the oldest retained position to `pos` (no-op if already past it).
  // Returns how many samples this call released.
  std::uint64_t release_until(std::uint64_t pos);

  std::uint64_t written() const { return written_.load(std::memory_order_acquire); }
  std::uint64_t head() const { return head_.load(std::memory_order_acquire); }
  std::uint64_t dropped() const { return dropped_.load(std::memory_order_acquire); }

 private:
  std::vector<std::atomic<double>> slots_;
  std::atomic<std::uint64_t> claimed_{0};
  std::atomic<std::uint64_t> written_{0};
  std::atomic<std::uint64_t> head_{0};
  std::atomic<std::uint64_t> dropped_{0};
};

struct StreamConfig {
  std::size_t window_len_samples = 44100;
  std::size_t window_hop_samples = 11025;
  std::size_t ring_capacity_samples = 88200;
  std::size_t smoothing_votes = 5;
  int sample_rate_hz = kCorpusSampleRate;
  FeatureConfig features;

  // Throws InvalidArgument naming the violated invariant.
  void validate() const;
  double smoothing_span_s() const;
};

struct Vote {
  RoadClass label = RoadClass::RoughAsphalt;
  Probs probs{};
};

// Majority vote; ties go to the highest mean probability of the class over
// the votes it received, then to class order.
RoadClass smooth(std::span<const Vote> history);

struct ClassificationEvent {
  double t_start_s = 0.0;
  double t_end_s = 0.0;
  RoadClass raw_label = RoadClass::RoughAsphalt;
  RoadClass smoothed_label = RoadClass::RoughAsphalt;
  Probs probs{};
  double latency_ms = 0.0;

  bool operator==(const ClassificationEvent&) const = default;
};

// Smoothed-label changes per minute of stream covered by the event starts.
double flip_rate(std::span<const ClassificationEvent> events);

struct StreamCounters {
  std::uint64_t pushed = 0;
  std::uint64_t consumed = 0;
  std::uint64_t buffered = 0;
  std::uint64_t dropped = 0;
};

class Stream {
 public:
  Stream(std::shared_ptr<const Model> model, StreamConfig config = {});

  // Producer side; returns the number of samples taken (all of them).
  std::size_t push_samples(std::span<const double> samples);
  // Consumer side; at most one event per call.
  std::optional<ClassificationEvent> poll_event();

  void close();
  bool closed() const { return closed_.load(std::memory_order_acquire); }

  const StreamConfig& config() const { return config_; }
  StreamCounters counters() const;

 private:
  std::shared_ptr<const Model> model_;
  StreamConfig config_;
  SampleRing ring_;
  std::atomic<bool> closed_{false};
  std::atomic<std::uint64_t> consumed_{0};
  std::atomic<std::uint64_t> skipped_{0};
  std::uint64_t next_start_ = 0;  // consumer-owned
  std::deque<Vote> history_;
  std::vector<double> window_;
};

struct LatencyStats {
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  double max_ms = 0.0;
  std::size_t windows_measured = 0;
  std::size_t model_footprint_bytes = 0;
  std::uint64_t dropped_samples = 0;
};

inline constexpr std::size_t kMinBenchRepetitions = 30;

// Nearest-rank percentile, q in (0, 1].
double percentile(std::vector<double> values, double q);

// Replays `clip` through a fresh stream `repetitions` times and times every
// window (feature extraction + forward pass).
LatencyStats bench(std::shared_ptr<const Model> model, const AudioClip& clip,
                   std::size_t repetitions, const StreamConfig& config = {});

void write_event_json(std::ostream& out, const ClassificationEvent& event);
void write_bench_json(std::ostream& out, const LatencyStats& stats);

}  // namespace roadnoise

#endif  // ROADNOISE_RUNTIME_HPP_
