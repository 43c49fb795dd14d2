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

#include "roadnoise/signal.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <ostream>
#include <unordered_map>

#include "roadnoise/error.hpp"

namespace roadnoise {

namespace {

// Twiddles exp(-2 pi i k / n) for k < n/2, evaluated directly (no recurrence)
// so large transforms stay within ~1e-13 of the naive DFT.
const std::vector<std::complex<double>>& twiddles(std::size_t n) {
  thread_local std::unordered_map<std::size_t, std::vector<std::complex<double>>>
      cache;
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  std::vector<std::complex<double>> table(n / 2);
  for (std::size_t k = 0; k < n / 2; ++k) {
    const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) /
                         static_cast<double>(n);
    table[k] = {std::cos(angle), std::sin(angle)};
  }
  return cache.emplace(n, std::move(table)).first->second;
}

void bit_reverse(std::span<std::complex<double>> data) {
  const std::size_t n = data.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(data[i], data[j]);
  }
}

void transform(std::span<std::complex<double>> data, bool inverse) {
  const std::size_t n = data.size();
  if (!is_power_of_two(n)) {
    throw InvalidArgument("fft length " + std::to_string(n) +
                          " is not a power of two");
  }
  if (n == 1) return;
  const auto& tw = twiddles(n);
  bit_reverse(data);
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t stride = n / len;
    for (std::size_t start = 0; start < n; start += len) {
      for (std::size_t k = 0; k < half; ++k) {
        std::complex<double> w = tw[k * stride];
        if (inverse) w = std::conj(w);
        const std::complex<double> t = w * data[start + k + half];
        data[start + k + half] = data[start + k] - t;
        data[start + k] += t;
      }
    }
  }
  if (inverse) {
    const double scale = 1.0 / static_cast<double>(n);
    for (auto& v : data) v *= scale;
  }
}

}  // namespace

void FeatureConfig::validate(int sample_rate_hz) const {
  if (!is_power_of_two(frame_len)) {
    throw InvalidArgument("frame_len must be a power of two (got " +
                          std::to_string(frame_len) + ")");
  }
  if (hop == 0 || hop > frame_len) {
    throw InvalidArgument("hop must satisfy 0 < hop <= frame_len");
  }
  if (n_mels < 2) throw InvalidArgument("n_mels must be >= 2");
  if (!(f_min_hz >= 0.0) || !(f_min_hz < f_max_hz)) {
    throw InvalidArgument("f_min_hz must satisfy 0 <= f_min_hz < f_max_hz");
  }
  if (f_max_hz > sample_rate_hz / 2.0) {
    throw InvalidArgument("f_max_hz must not exceed the Nyquist frequency");
  }
  if (!(log_floor > 0.0) || !std::isfinite(log_floor)) {
    throw InvalidArgument("log_floor must be positive and finite");
  }
}

std::size_t frame_count(std::size_t n_samples, const FeatureConfig& config) {
  if (n_samples < config.frame_len) return 0;
  return 1 + (n_samples - config.frame_len) / config.hop;
}

FeatureMatrix::FeatureMatrix(std::size_t n_mels, std::size_t n_frames,
                             FeatureConfig config)
    : n_mels_(n_mels),
      n_frames_(n_frames),
      config_(config),
      values_(n_mels * n_frames, 0.0) {}

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

std::vector<double> hann_window(std::size_t n) {
  if (n == 0) throw InvalidArgument("hann_window length must be >= 1");
  std::vector<double> w(n);
  for (std::size_t k = 0; k < n; ++k) {
    w[k] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(k) /
                                 static_cast<double>(n)));
  }
  return w;
}

void fft_inplace(std::span<std::complex<double>> data) { transform(data, false); }

void ifft_inplace(std::span<std::complex<double>> data) { transform(data, true); }

std::vector<std::complex<double>> fft(std::span<const std::complex<double>> frame) {
  std::vector<std::complex<double>> out(frame.begin(), frame.end());
  fft_inplace(out);
  return out;
}

std::vector<double> power_spectrum(std::span<const double> frame,
                                   std::span<const double> window) {
  if (frame.size() != window.size()) {
    throw InvalidArgument("power_spectrum: frame and window lengths differ");
  }
  const std::size_t n = frame.size();
  if (!is_power_of_two(n)) {
    throw InvalidArgument("power_spectrum: frame length is not a power of two");
  }
  std::vector<std::complex<double>> buf(n);
  for (std::size_t i = 0; i < n; ++i) buf[i] = frame[i] * window[i];
  fft_inplace(buf);
  std::vector<double> power(n / 2 + 1);
  for (std::size_t k = 0; k <= n / 2; ++k) power[k] = std::norm(buf[k]);
  return power;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

MelFilterbank::MelFilterbank(const FeatureConfig& config, int sample_rate_hz)
    : n_mels_(config.n_mels), n_bins_(config.frame_len / 2 + 1) {
  config.validate(sample_rate_hz);
  const double mel_lo = hz_to_mel(config.f_min_hz);
  const double mel_hi = hz_to_mel(config.f_max_hz);
  std::vector<double> edges(n_mels_ + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                      static_cast<double>(n_mels_ + 1));
  }
  const double bin_hz =
      static_cast<double>(sample_rate_hz) / static_cast<double>(config.frame_len);

  weights_.assign(n_mels_ * n_bins_, 0.0);
  first_bin_.assign(n_mels_, 0);
  last_bin_.assign(n_mels_, 0);
  center_hz_.assign(n_mels_, 0.0);
  for (std::size_t m = 0; m < n_mels_; ++m) {
    const double left = edges[m];
    const double center = edges[m + 1];
    const double right = edges[m + 2];
    center_hz_[m] = center;
    std::size_t first = n_bins_;
    std::size_t last = 0;
    for (std::size_t k = 0; k < n_bins_; ++k) {
      const double f = static_cast<double>(k) * bin_hz;
      double w = 0.0;
      if (f > left && f <= center) {
        w = (f - left) / (center - left);
      } else if (f > center && f < right) {
        w = (right - f) / (right - center);
      }
      if (w > 0.0) {
        weights_[m * n_bins_ + k] = w;
        first = std::min(first, k);
        last = k + 1;
      }
    }
    if (first >= last) {
      throw InvalidArgument("mel filter " + std::to_string(m) +
                            " covers no FFT bin; increase frame_len or widen "
                            "[f_min_hz, f_max_hz]");
    }
    first_bin_[m] = first;
    last_bin_[m] = last;
  }
}

void MelFilterbank::apply(std::span<const double> power,
                          std::span<double> out) const {
  for (std::size_t m = 0; m < n_mels_; ++m) {
    double acc = 0.0;
    const double* w = &weights_[m * n_bins_];
    for (std::size_t k = first_bin_[m]; k < last_bin_[m]; ++k) acc += w[k] * power[k];
    out[m] = acc;
  }
}

MelFilterbank mel_filterbank(const FeatureConfig& config, int sample_rate_hz) {
  if (config.f_max_hz > sample_rate_hz / 2.0) {
    throw InvalidArgument("f_max_hz exceeds the Nyquist frequency");
  }
  return MelFilterbank(config, sample_rate_hz);
}

FeatureMatrix extract_logmel(const AudioClip& clip, const FeatureConfig& config) {
  if (clip.sample_rate_hz != kCorpusSampleRate) {
    throw UnsupportedRate("unsupported sample rate " +
                          std::to_string(clip.sample_rate_hz) +
                          " Hz (expected 44100)");
  }
  config.validate(clip.sample_rate_hz);
  if (clip.samples.size() < config.frame_len) {
    throw InvalidArgument("clip shorter than one frame");
  }
  // Filterbanks and windows are cached per thread keyed on the config.
  struct Cache {
    FeatureConfig config;
    MelFilterbank bank;
    std::vector<double> window;
  };
  thread_local std::vector<Cache> caches;
  const Cache* cache = nullptr;
  for (const auto& c : caches) {
    if (c.config == config) cache = &c;
  }
  if (cache == nullptr) {
    caches.push_back(Cache{config, MelFilterbank(config, clip.sample_rate_hz),
                           hann_window(config.frame_len)});
    cache = &caches.back();
  }

  const std::size_t n_frames = frame_count(clip.samples.size(), config);
  FeatureMatrix features(config.n_mels, n_frames, config);
  const double floor_log = std::log(config.log_floor);
  std::vector<double> band(config.n_mels);
  for (std::size_t t = 0; t < n_frames; ++t) {
    const auto frame =
        std::span<const double>(clip.samples).subspan(t * config.hop, config.frame_len);
    const auto power = power_spectrum(frame, cache->window);
    cache->bank.apply(power, band);
    for (std::size_t m = 0; m < config.n_mels; ++m) {
      features.at(m, t) =
          band[m] > config.log_floor ? std::log(band[m]) : floor_log;
    }
  }
  return features;
}

void write_feature_csv(std::ostream& out, const FeatureMatrix& features) {
  out << features.n_mels() << ',' << features.n_frames() << '\n';
  char buf[32];
  for (std::size_t m = 0; m < features.n_mels(); ++m) {
    for (std::size_t t = 0; t < features.n_frames(); ++t) {
      std::snprintf(buf, sizeof(buf), "%.9g", features.at(m, t));
      if (t) out << ',';
      out << buf;
    }
    out << '\n';
  }
}

void write_feature_csv(const std::string& path, const FeatureMatrix& features) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path, "cannot open for writing");
  write_feature_csv(out, features);
  if (!out) throw IoError(path, "write failed");
}

}  // namespace roadnoise
