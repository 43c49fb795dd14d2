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

// DSP front end: framing, periodic Hann window, radix-2 FFT, one-sided power
// spectrum, mel filterbank and log-mel features.
//
// Conventions:
//   - forward DFT is unnormalized: X[k] = sum_j x[j] exp(-2 pi i jk / n)
//   - inverse DFT carries the 1/n factor
//   - mel scale m(f) = 2595 log10(1 + f / 700)

#ifndef ROADNOISE_SIGNAL_HPP_
#define ROADNOISE_SIGNAL_HPP_

#include <complex>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace roadnoise {

inline constexpr int kCorpusSampleRate = 44100;

struct AudioClip {
  std::vector<double> samples;
  int sample_rate_hz = kCorpusSampleRate;

  double duration_s() const {
    return static_cast<double>(samples.size()) / sample_rate_hz;
  }
};

struct FeatureConfig {
  std::size_t frame_len = 1024;
  std::size_t hop = 512;
  std::size_t n_mels = 64;
  double f_min_hz = 50.0;
  double f_max_hz = 8000.0;
  double log_floor = 1e-10;

  // Throws InvalidArgument naming the violated invariant.
  void validate(int sample_rate_hz = kCorpusSampleRate) const;

  bool operator==(const FeatureConfig&) const = default;
};

// Number of hop-advanced frames for a clip of `n_samples`; 0 if shorter than
// one frame.
std::size_t frame_count(std::size_t n_samples, const FeatureConfig& config);

/// n_mels x n_frames grid of natural-log mel-band energies, row-major by band.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  FeatureMatrix(std::size_t n_mels, std::size_t n_frames, FeatureConfig config);

  std::size_t n_mels() const { return n_mels_; }
  std::size_t n_frames() const { return n_frames_; }
  const FeatureConfig& config() const { return config_; }

  double& at(std::size_t mel, std::size_t frame) {
    return values_[mel * n_frames_ + frame];
  }
  double at(std::size_t mel, std::size_t frame) const {
    return values_[mel * n_frames_ + frame];
  }

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  std::span<const double> band(std::size_t mel) const {
    return std::span<const double>(values_).subspan(mel * n_frames_, n_frames_);
  }

  bool operator==(const FeatureMatrix&) const = default;

 private:
  std::size_t n_mels_ = 0;
  std::size_t n_frames_ = 0;
  FeatureConfig config_;
  std::vector<double> values_;
};

bool is_power_of_two(std::size_t n);

// Periodic Hann: w[k] = 0.5 (1 - cos(2 pi k / n)).
std::vector<double> hann_window(std::size_t n);

// In-place transforms; length must be a power of two.
void fft_inplace(std::span<std::complex<double>> data);
void ifft_inplace(std::span<std::complex<double>> data);

std::vector<std::complex<double>> fft(std::span<const std::complex<double>> frame);

// P[k] = |FFT(window * frame)[k]|^2 for k = 0..n/2.
std::vector<double> power_spectrum(std::span<const double> frame,
                                   std::span<const double> window);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Triangular filters with peaks equally spaced on the mel scale. Each row is
/// stored densely but also remembers its non-zero bin range so application is
/// O(support).
class MelFilterbank {
 public:
  MelFilterbank(const FeatureConfig& config, int sample_rate_hz);

  std::size_t n_mels() const { return n_mels_; }
  std::size_t n_bins() const { return n_bins_; }
  double weight(std::size_t mel, std::size_t bin) const {
    return weights_[mel * n_bins_ + bin];
  }
  std::span<const double> row(std::size_t mel) const {
    return std::span<const double>(weights_).subspan(mel * n_bins_, n_bins_);
  }
  // Peak frequency of each filter.
  const std::vector<double>& center_hz() const { return center_hz_; }

  // out[m] = sum_k weight(m, k) * power[k]
  void apply(std::span<const double> power, std::span<double> out) const;

 private:
  std::size_t n_mels_;
  std::size_t n_bins_;
  std::vector<double> weights_;
  std::vector<std::size_t> first_bin_;
  std::vector<std::size_t> last_bin_;  // exclusive
  std::vector<double> center_hz_;
};

MelFilterbank mel_filterbank(const FeatureConfig& config, int sample_rate_hz);

// features[m][t] = ln(max(log_floor, sum_k filter[m][k] P_t[k])).
// Throws UnsupportedRate for anything but 44.1 kHz and InvalidArgument for
// clips shorter than one frame.
FeatureMatrix extract_logmel(const AudioClip& clip, const FeatureConfig& config);

// `.fm.csv` dump: "n_mels,n_frames" header then one row per band, %.9g.
void write_feature_csv(std::ostream& out, const FeatureMatrix& features);
void write_feature_csv(const std::string& path, const FeatureMatrix& features);

}  // namespace roadnoise

#endif  // ROADNOISE_SIGNAL_HPP_
