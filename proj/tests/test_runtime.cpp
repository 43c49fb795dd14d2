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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "roadnoise/error.hpp"
#include "roadnoise/rng.hpp"
#include "roadnoise/runtime.hpp"

using namespace roadnoise;

namespace {

std::shared_ptr<const Model> test_model() {
  static const auto model = [] {
    Standardizer norm{std::vector<double>(64, -8.0), std::vector<double>(64, 3.0)};
    return std::make_shared<const Model>(Model{init_cnn(CnnShape{}, 11), norm});
  }();
  return model;
}

std::vector<double> noise(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> out(n);
  for (double& v : out) v = 0.1 * rng.gaussian();
  return out;
}

std::vector<ClassificationEvent> run_chunked(const std::vector<double>& audio, std::size_t chunk) {
  Stream s(test_model());
  std::vector<ClassificationEvent> events;
  const std::span<const double> all(audio);
  for (std::size_t pos = 0; pos < all.size(); pos += chunk) {
    s.push_samples(all.subspan(pos, std::min(chunk, all.size() - pos)));
    while (auto ev = s.poll_event()) {
      ev->latency_ms = 0.0;
      events.push_back(*ev);
    }
  }
  return events;
}

Vote vote(RoadClass c, double p) {
  Vote v{c, {}};
  v.probs[class_index(c)] = p;
  return v;
}

ClassificationEvent event_at(double t, RoadClass smoothed) {
  ClassificationEvent e;
  e.t_start_s = t;
  e.t_end_s = t + 1.0;
  e.smoothed_label = smoothed;
  return e;
}

}  // namespace

TEST_CASE("ring push accounting") {
  SampleRing ring(88200);
  const auto one_s = noise(44100, 1);
  ring.push(one_s);
  CHECK(ring.written() == 44100);
  CHECK(ring.dropped() == 0);
  ring.push(std::span<const double>{});
  CHECK(ring.written() == 44100);
  CHECK(ring.head() == 0);

  SampleRing small(88200);
  const auto three_s = noise(3 * 44100, 2);
  small.push(three_s);
  CHECK(small.dropped() == 44100);
  CHECK(small.head() == 44100);
  std::vector<double> out(10);
  CHECK_FALSE(small.read(0, out));
  CHECK(small.read(44100, out));
  CHECK(out[0] == three_s[44100]);
  CHECK_FALSE(small.read(3 * 44100 - 5, out));  // not yet written
  CHECK_THROWS_AS(SampleRing(0), InvalidArgument);
}

TEST_CASE("ring release") {
  SampleRing ring(8);
  const std::vector<double> v{1, 2, 3, 4, 5};
  ring.push(v);
  CHECK(ring.release_until(3) == 3);
  CHECK(ring.release_until(2) == 0);
  CHECK(ring.head() == 3);
  ring.push(v);  // 10 written, capacity 8: oldest retained is 2, head already 3
  CHECK(ring.dropped() == 0);
  ring.push(v);  // 15 written: oldest retained 7
  CHECK(ring.dropped() == 4);
  CHECK(ring.head() == 7);
}

TEST_CASE("ring is safe for one producer and one consumer") {
  constexpr std::uint64_t kTotal = 2'000'000;
  SampleRing ring(4096);
  std::atomic<bool> done{false};
  std::thread producer([&] {
    Rng rng(3);
    std::vector<double> chunk;
    std::uint64_t next = 0;
    while (next < kTotal) {
      const std::uint64_t n = std::min<std::uint64_t>(1 + rng.below(700), kTotal - next);
      chunk.resize(n);
      for (std::uint64_t i = 0; i < n; ++i) chunk[i] = static_cast<double>(next + i);
      ring.push(chunk);
      next += n;
    }
    done = true;
  });
  std::vector<double> window(1024);
  std::uint64_t pos = 0, good_reads = 0, bad_values = 0, released = 0;
  while (!done || pos + window.size() <= ring.written()) {
    const std::uint64_t head = ring.head();
    if (pos < head) pos = head;
    if (pos + window.size() > ring.written()) {
      if (done) break;
      continue;
    }
    if (ring.read(pos, window)) {
      ++good_reads;
      for (std::size_t i = 0; i < window.size(); ++i) {
        if (window[i] != static_cast<double>(pos + i)) ++bad_values;
      }
      pos += 256;
      released += ring.release_until(pos);
    }
  }
  producer.join();
  CHECK(bad_values == 0);
  CHECK(good_reads > 0);
  CHECK(ring.written() == kTotal);
  CHECK(ring.head() == released + ring.dropped());
}

TEST_CASE("stream config validation") {
  StreamConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.smoothing_span_s() == doctest::Approx(1.25));
  c.smoothing_votes = 4;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = StreamConfig{};
  c.window_hop_samples = 44101;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = StreamConfig{};
  c.ring_capacity_samples = 88199;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = StreamConfig{};
  c.window_hop_samples = 441;  // 10 ms
  c.smoothing_votes = 3;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("50 ms"), InvalidArgument);
  c.smoothing_votes = 5;
  CHECK_NOTHROW(c.validate());
  CHECK_THROWS_AS(Stream(test_model(), [] {
                    StreamConfig bad;
                    bad.smoothing_votes = 0;
                    return bad;
                  }()),
                  InvalidArgument);
  CHECK_THROWS_AS(Stream(nullptr), InvalidArgument);
}

TEST_CASE("stream push examples") {
  Stream s(test_model());
  const auto one_s = noise(44100, 4);
  CHECK(s.push_samples(one_s) == 44100);
  CHECK(s.counters().dropped == 0);
  CHECK(s.push_samples(std::span<const double>{}) == 0);
  CHECK(s.counters().pushed == 44100);

  Stream full(test_model());
  full.push_samples(noise(3 * 44100, 5));
  const StreamCounters c = full.counters();
  CHECK(c.dropped == 44100);
  CHECK(c.buffered == 88200);
  CHECK(c.pushed == c.consumed + c.buffered + c.dropped);
}

TEST_CASE("event cadence") {
  const auto audio = noise(10 * 44100, 6);
  {
    const auto ev = run_chunked({audio.begin(), audio.begin() + 44100}, 44100);
    REQUIRE(ev.size() == 1);
    CHECK(ev[0].t_start_s == 0.0);
    CHECK(ev[0].t_end_s == 1.0);
  }
  {
    const auto ev = run_chunked({audio.begin(), audio.begin() + 66150}, 4096);
    REQUIRE(ev.size() == 3);
    CHECK(ev[1].t_start_s == 0.25);
    CHECK(ev[2].t_start_s == 0.5);
  }
  const auto ev = run_chunked(audio, 5000);
  CHECK(ev.size() == 37);
  for (std::size_t i = 0; i < ev.size(); ++i) {
    CHECK(ev[i].t_start_s == doctest::Approx(0.25 * static_cast<double>(i)).epsilon(1e-12));
    CHECK(ev[i].t_end_s - ev[i].t_start_s == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(ev[i].probs[0] + ev[i].probs[1] + ev[i].probs[2] - 1.0) < 1e-9);
  }
}

TEST_CASE("events do not depend on chunk size") {
  const auto audio = noise(3 * 44100, 7);
  const auto a = run_chunked(audio, 1);
  const auto b = run_chunked(audio, 1024);
  const auto c = run_chunked(audio, 44100);
  CHECK(a.size() == 9);
  CHECK(a == b);
  CHECK(a == c);
}

TEST_CASE("stream resumes on the hop grid after overflow") {
  Stream s(test_model());
  s.push_samples(noise(3 * 44100 + 100, 8));
  auto ev = s.poll_event();
  REQUIRE(ev);
  // Head is at 44200; the next hop boundary is 55125 (1.25 s).
  CHECK(ev->t_start_s == doctest::Approx(1.25));
  const StreamCounters c = s.counters();
  CHECK(c.pushed == c.consumed + c.buffered + c.dropped);
  CHECK(c.dropped == 55125);
}

TEST_CASE("concurrent producer keeps the counters consistent") {
  Stream s(test_model());
  const auto audio = noise(8 * 44100, 9);
  std::atomic<bool> done{false};
  std::thread producer([&] {
    const std::span<const double> all(audio);
    for (std::size_t pos = 0; pos < all.size(); pos += 2048) {
      s.push_samples(all.subspan(pos, std::min<std::size_t>(2048, all.size() - pos)));
    }
    done = true;
  });
  std::vector<ClassificationEvent> events;
  for (;;) {
    const bool finished = done;
    while (auto ev = s.poll_event()) events.push_back(*ev);
    if (finished) break;
  }
  producer.join();
  while (auto ev = s.poll_event()) events.push_back(*ev);
  const StreamCounters c = s.counters();
  CHECK(c.pushed == audio.size());
  CHECK(c.pushed == c.consumed + c.buffered + c.dropped);
  REQUIRE_FALSE(events.empty());
  for (std::size_t i = 1; i < events.size(); ++i) {
    CHECK(events[i].t_start_s > events[i - 1].t_start_s);
    const double hops = events[i].t_start_s / 0.25;
    CHECK(hops == doctest::Approx(std::round(hops)).epsilon(1e-12));
  }
  // Events that were emitted carry exactly the audio at their position.
  for (const auto& ev : events) {
    const auto start = static_cast<std::size_t>(std::lround(ev.t_start_s * 44100));
    AudioClip clip{{audio.begin() + start, audio.begin() + start + 44100}, 44100};
    CHECK(softmax(predict(*test_model(), extract_logmel(clip, FeatureConfig{}))) == ev.probs);
  }
}

TEST_CASE("closed stream") {
  Stream s(test_model());
  s.close();
  CHECK(s.closed());
  const std::vector<double> x(10, 0.0);
  CHECK_THROWS_AS(s.push_samples(x), StreamClosed);
  CHECK_THROWS_AS(s.poll_event(), StreamClosed);
}

TEST_CASE("smoothing examples") {
  using enum RoadClass;
  const std::vector<Vote> majority{vote(SmoothAsphalt, 0.9), vote(SmoothAsphalt, 0.8),
                                   vote(RoughAsphalt, 0.99)};
  CHECK(smooth(majority) == SmoothAsphalt);
  const std::vector<Vote> single{vote(Other, 0.4)};
  CHECK(smooth(single) == Other);
  const std::vector<Vote> tie{vote(RoughAsphalt, 0.6), vote(SmoothAsphalt, 0.7),
                              vote(RoughAsphalt, 0.6), vote(Other, 0.99),
                              vote(SmoothAsphalt, 0.7)};
  CHECK(smooth(tie) == SmoothAsphalt);
  const std::vector<Vote> exact_tie{vote(Other, 0.5), vote(SmoothAsphalt, 0.5)};
  CHECK(smooth(exact_tie) == SmoothAsphalt);
  CHECK_THROWS_AS(smooth(std::span<const Vote>{}), InvalidArgument);
}

TEST_CASE("flip rate examples") {
  using enum RoadClass;
  std::vector<ClassificationEvent> constant, alternating;
  for (int i = 0; i < 60; ++i) {
    constant.push_back(event_at(0.25 * i, Other));
    alternating.push_back(event_at(0.25 * i, i % 2 ? RoughAsphalt : SmoothAsphalt));
  }
  CHECK(flip_rate(constant) == 0.0);
  CHECK(flip_rate(alternating) == doctest::Approx(236.0).epsilon(1e-12));
  auto one_change = constant;
  for (int i = 30; i < 60; ++i) one_change[i].smoothed_label = RoughAsphalt;
  CHECK(flip_rate(one_change) * 0.25 == doctest::Approx(1.0));
  CHECK_THROWS_AS(flip_rate(std::span<const ClassificationEvent>(constant.data(), 1)),
                  InvalidArgument);
}

TEST_CASE("percentile") {
  CHECK(percentile({5, 1, 3, 2, 4}, 0.5) == 3);
  CHECK(percentile({5, 1, 3, 2, 4}, 1.0) == 5);
  CHECK(percentile({5, 1, 3, 2, 4}, 0.95) == 5);
  CHECK(percentile({7}, 0.01) == 7);
  CHECK_THROWS_AS(percentile({}, 0.5), InvalidArgument);
  CHECK_THROWS_AS(percentile({1}, 0.0), InvalidArgument);
}

TEST_CASE("bench") {
  AudioClip clip{noise(66150, 10), 44100};
  const LatencyStats s = bench(test_model(), clip, 30);
  CHECK(s.windows_measured == 90);
  CHECK(s.p50_ms <= s.p95_ms);
  CHECK(s.p95_ms <= s.max_ms);
  CHECK(s.p50_ms > 0.0);
  CHECK(s.dropped_samples == 0);
  CHECK(s.model_footprint_bytes == memory_footprint(*test_model()));
  CHECK(s.model_footprint_bytes < 50u * 1024u * 1024u);

  CHECK_THROWS_AS(bench(test_model(), clip, 29), InvalidArgument);
  AudioClip short_clip{noise(44099, 11), 44100};
  CHECK_THROWS_WITH_AS(bench(test_model(), short_clip, 30), doctest::Contains("shorter"),
                       InvalidArgument);
  AudioClip wrong_rate{noise(48000, 12), 48000};
  CHECK_THROWS_AS(bench(test_model(), wrong_rate, 30), UnsupportedRate);
}

TEST_CASE("json output") {
  ClassificationEvent e;
  e.t_start_s = 0.25;
  e.t_end_s = 1.25;
  e.raw_label = RoadClass::Other;
  e.smoothed_label = RoadClass::SmoothAsphalt;
  e.probs = {0.25, 0.25, 0.5};
  e.latency_ms = 3.5;
  std::ostringstream out;
  write_event_json(out, e);
  CHECK(out.str() ==
        "{\"t_start_s\":0.25,\"t_end_s\":1.25,\"raw_label\":\"other\","
        "\"smoothed_label\":\"smooth_asphalt\",\"probs\":[0.25,0.25,0.5],\"latency_ms\":3.5}\n");

  std::ostringstream b;
  write_bench_json(b, LatencyStats{1.0, 2.0, 3.0, 90, 1000, 0});
  const auto j = nlohmann::json::parse(b.str());
  for (const char* key : {"p50_ms", "p95_ms", "max_ms", "windows_measured",
                          "model_footprint_bytes", "dropped_samples"}) {
    CHECK(j.contains(key));
  }
  CHECK(j["windows_measured"] == 90);
}
