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

#include "roadnoise/runtime.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>

#include "json.hpp"
#include "roadnoise/error.hpp"

namespace roadnoise {

// ---------------------------------------------------------------------------
// SampleRing

SampleRing::SampleRing(std::size_t capacity) : slots_(capacity) {
  if (capacity == 0) throw InvalidArgument("ring capacity must be > 0");
  for (auto& s : slots_) s.store(0.0, std::memory_order_relaxed);
}

void SampleRing::push(std::span<const double> samples) {
  const std::size_t n = samples.size();
  if (n == 0) return;
  const std::uint64_t cap = slots_.size();
  const std::uint64_t w = written_.load(std::memory_order_relaxed);
  const std::uint64_t new_w = w + n;
  const std::uint64_t oldest = new_w > cap ? new_w - cap : 0;

  std::uint64_t h = head_.load(std::memory_order_acquire);
  while (h < oldest) {
    if (head_.compare_exchange_weak(h, oldest, std::memory_order_acq_rel)) {
      dropped_.fetch_add(oldest - h, std::memory_order_acq_rel);
      break;
    }
  }

  // Seqlock-style publication: readers compare `claimed_` after copying.
  claimed_.store(new_w, std::memory_order_relaxed);
  std::atomic_thread_fence(std::memory_order_release);
  const std::size_t keep = std::min<std::size_t>(n, cap);
  for (std::size_t i = n - keep; i < n; ++i) {
    slots_[(w + i) % cap].store(samples[i], std::memory_order_relaxed);
  }
  written_.store(new_w, std::memory_order_release);
}

bool SampleRing::read(std::uint64_t start, std::span<double> out) const {
  const std::uint64_t cap = slots_.size();
  if (out.size() > cap) return false;
  const std::uint64_t w = written_.load(std::memory_order_acquire);
  if (start + out.size() > w || w > start + cap) return false;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = slots_[(start + i) % cap].load(std::memory_order_relaxed);
  }
  std::atomic_thread_fence(std::memory_order_acquire);
  return claimed_.load(std::memory_order_relaxed) <= start + cap;
}

std::uint64_t SampleRing::release_until(std::uint64_t pos) {
  std::uint64_t h = head_.load(std::memory_order_acquire);
  while (h < pos) {
    if (head_.compare_exchange_weak(h, pos, std::memory_order_acq_rel)) return pos - h;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Configuration and smoothing

void StreamConfig::validate() const {
  if (sample_rate_hz <= 0) throw InvalidArgument("sample_rate_hz must be > 0");
  if (window_len_samples == 0) throw InvalidArgument("window_len_samples must be > 0");
  if (window_hop_samples == 0 || window_hop_samples > window_len_samples) {
    throw InvalidArgument("window hop must satisfy 0 < hop <= window");
  }
  if (ring_capacity_samples < 2 * window_len_samples) {
    throw InvalidArgument("ring capacity must be >= 2 x window");
  }
  if (smoothing_votes < 1 || smoothing_votes % 2 == 0) {
    throw InvalidArgument("smoothing_votes must be odd and >= 1");
  }
  if (smoothing_span_s() < 0.05) {
    throw InvalidArgument("smoothing span K x hop must be >= 50 ms");
  }
  features.validate(sample_rate_hz);
}

double StreamConfig::smoothing_span_s() const {
  return static_cast<double>(smoothing_votes * window_hop_samples) / sample_rate_hz;
}

RoadClass smooth(std::span<const Vote> history) {
  if (history.empty()) throw InvalidArgument("smoothing history is empty");
  std::array<std::size_t, kNumClasses> count{};
  std::array<double, kNumClasses> prob_sum{};
  for (const Vote& v : history) {
    const std::size_t c = class_index(v.label);
    ++count[c];
    prob_sum[c] += v.probs[c];
  }
  std::size_t best = 0;
  for (std::size_t c = 1; c < kNumClasses; ++c) {
    if (count[c] > count[best]) {
      best = c;
    } else if (count[c] == count[best] && count[c] > 0) {
      const double mean_c = prob_sum[c] / static_cast<double>(count[c]);
      const double mean_best = prob_sum[best] / static_cast<double>(count[best]);
      if (mean_c > mean_best) best = c;
    }
  }
  return static_cast<RoadClass>(best);
}

double flip_rate(std::span<const ClassificationEvent> events) {
  if (events.size() < 2) throw InvalidArgument("flip_rate needs at least 2 events");
  const double hop = events[1].t_start_s - events[0].t_start_s;
  const double minutes = (events.back().t_start_s - events.front().t_start_s + hop) / 60.0;
  if (!(minutes > 0.0)) throw InvalidArgument("events do not advance in time");
  std::size_t flips = 0;
  for (std::size_t i = 1; i < events.size(); ++i) {
    if (events[i].smoothed_label != events[i - 1].smoothed_label) ++flips;
  }
  return static_cast<double>(flips) / minutes;
}

// ---------------------------------------------------------------------------
// Stream

Stream::Stream(std::shared_ptr<const Model> model, StreamConfig config)
    : model_(std::move(model)),
      config_((config.validate(), config)),
      ring_(config_.ring_capacity_samples),
      window_(config_.window_len_samples) {
  if (!model_) throw InvalidArgument("stream needs a model");
}

std::size_t Stream::push_samples(std::span<const double> samples) {
  if (closed()) throw StreamClosed();
  ring_.push(samples);
  return samples.size();
}

std::optional<ClassificationEvent> Stream::poll_event() {
  if (closed()) throw StreamClosed();
  const std::uint64_t hop = config_.window_hop_samples;
  for (;;) {
    const std::uint64_t head = ring_.head();
    if (next_start_ < head) {
      // Overflow discarded part of the next window; resume at the next hop.
      const std::uint64_t aligned = (head + hop - 1) / hop * hop;
      skipped_.fetch_add(ring_.release_until(aligned), std::memory_order_acq_rel);
      next_start_ = aligned;
    }
    if (ring_.written() < next_start_ + window_.size()) return std::nullopt;
    if (ring_.read(next_start_, window_)) break;
  }

  const auto t0 = std::chrono::steady_clock::now();
  AudioClip clip;
  clip.samples = window_;
  clip.sample_rate_hz = config_.sample_rate_hz;
  const FeatureMatrix features = extract_logmel(clip, config_.features);
  const Logits logits = predict(*model_, features);
  const auto t1 = std::chrono::steady_clock::now();

  ClassificationEvent ev;
  ev.probs = softmax(logits);
  ev.raw_label = static_cast<RoadClass>(argmax(logits));
  history_.push_back({ev.raw_label, ev.probs});
  if (history_.size() > config_.smoothing_votes) history_.pop_front();
  const std::vector<Vote> votes(history_.begin(), history_.end());
  ev.smoothed_label = smooth(votes);
  const double sr = config_.sample_rate_hz;
  ev.t_start_s = static_cast<double>(next_start_) / sr;
  ev.t_end_s = static_cast<double>(next_start_ + window_.size()) / sr;
  ev.latency_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();

  next_start_ += hop;
  consumed_.fetch_add(ring_.release_until(next_start_), std::memory_order_acq_rel);
  return ev;
}

void Stream::close() { closed_.store(true, std::memory_order_release); }

StreamCounters Stream::counters() const {
  StreamCounters c;
  c.pushed = ring_.written();
  const std::uint64_t head = ring_.head();
  c.buffered = c.pushed - std::min(c.pushed, head);
  c.consumed = consumed_.load(std::memory_order_acquire);
  c.dropped = ring_.dropped() + skipped_.load(std::memory_order_acquire);
  return c;
}

// ---------------------------------------------------------------------------
// Benchmark

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw InvalidArgument("percentile of no values");
  if (!(q > 0.0 && q <= 1.0)) throw InvalidArgument("percentile q must be in (0, 1]");
  std::sort(values.begin(), values.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size())));
  return values[std::max<std::size_t>(rank, 1) - 1];
}

LatencyStats bench(std::shared_ptr<const Model> model, const AudioClip& clip,
                   std::size_t repetitions, const StreamConfig& config) {
  if (repetitions < kMinBenchRepetitions) {
    throw InvalidArgument("bench needs at least " + std::to_string(kMinBenchRepetitions) +
                          " repetitions");
  }
  if (clip.samples.size() < config.window_len_samples) {
    throw InvalidArgument("clip shorter than one window");
  }
  if (clip.sample_rate_hz != config.sample_rate_hz) {
    throw UnsupportedRate("bench clip must be sampled at " +
                          std::to_string(config.sample_rate_hz) + " Hz");
  }
  LatencyStats stats;
  stats.model_footprint_bytes = memory_footprint(*model);
  std::vector<double> latencies;
  const std::span<const double> all(clip.samples);
  for (std::size_t rep = 0; rep < repetitions; ++rep) {
    Stream stream(model, config);
    for (std::size_t pos = 0; pos < all.size(); pos += config.window_hop_samples) {
      stream.push_samples(all.subspan(pos, std::min(config.window_hop_samples, all.size() - pos)));
      while (auto ev = stream.poll_event()) latencies.push_back(ev->latency_ms);
    }
    stats.dropped_samples += stream.counters().dropped;
  }
  stats.windows_measured = latencies.size();
  stats.p50_ms = percentile(latencies, 0.50);
  stats.p95_ms = percentile(latencies, 0.95);
  stats.max_ms = percentile(latencies, 1.0);
  return stats;
}

void write_event_json(std::ostream& out, const ClassificationEvent& ev) {
  nlohmann::ordered_json j;
  j["t_start_s"] = ev.t_start_s;
  j["t_end_s"] = ev.t_end_s;
  j["raw_label"] = label_name(ev.raw_label);
  j["smoothed_label"] = label_name(ev.smoothed_label);
  j["probs"] = {ev.probs[0], ev.probs[1], ev.probs[2]};
  j["latency_ms"] = ev.latency_ms;
  out << j.dump() << '\n';
}

void write_bench_json(std::ostream& out, const LatencyStats& s) {
  nlohmann::ordered_json j;
  j["p50_ms"] = s.p50_ms;
  j["p95_ms"] = s.p95_ms;
  j["max_ms"] = s.max_ms;
  j["windows_measured"] = s.windows_measured;
  j["model_footprint_bytes"] = s.model_footprint_bytes;
  j["dropped_samples"] = s.dropped_samples;
  j["hardware"] = "host-cpu";
  out << j.dump() << '\n';
}

}  // namespace roadnoise
