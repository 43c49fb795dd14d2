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

#include "roadnoise/synth.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>

#include <json.hpp>

#include "roadnoise/error.hpp"
#include "roadnoise/rng.hpp"
#include "roadnoise/wav.hpp"

namespace roadnoise {

namespace {

constexpr std::size_t kSegmentLen = 8192;
constexpr std::size_t kSegmentHop = kSegmentLen / 2;
constexpr double kFloorRelativeDb = -60.0;
constexpr double kPeakLimit = 0.9;
constexpr double kMinAmRateHz = 20.0;
constexpr double kMaxAmRateHz = 50.0;

double db_to_power(double db) { return std::pow(10.0, db / 10.0); }

// One-sided |H[k]|^2 for k = 0..N/2 such that unit-variance white noise
// filtered by H carries the profile's band powers: for a band B,
// (2/N) sum_{k in B} G[k] = P_B.
std::vector<double> shaping_gains(const SurfaceProfile& p, double fs) {
  const std::size_t half = kSegmentLen / 2;
  const double bin_hz = fs / static_cast<double>(kSegmentLen);
  const double n = static_cast<double>(kSegmentLen);
  std::vector<double> gains(half + 1, 0.0);

  auto add_band = [&](double power, auto&& shape_at, double lo, double hi) {
    double total = 0.0;
    for (std::size_t k = 1; k < half; ++k) {
      const double f = static_cast<double>(k) * bin_hz;
      if (f >= lo && f < hi) total += shape_at(f);
    }
    if (total <= 0.0) return;
    const double scale = power * n / (2.0 * total);
    for (std::size_t k = 1; k < half; ++k) {
      const double f = static_cast<double>(k) * bin_hz;
      if (f >= lo && f < hi) gains[k] += scale * shape_at(f);
    }
  };

  const double tread_power = db_to_power(p.tread.level_db_at_ref);
  const double tilt = p.tread.tilt_db_per_octave;
  const double tread_lo = p.tread.f_lo_hz;
  add_band(
      tread_power,
      [&](double f) { return std::pow(10.0, tilt * std::log2(f / tread_lo) / 10.0); },
      p.tread.f_lo_hz, p.tread.f_hi_hz);
  add_band(
      db_to_power(p.pumping.level_db_at_ref), [](double) { return 1.0; },
      p.pumping.f_lo_hz, p.pumping.f_hi_hz);

  const double sigma = p.helmholtz.bandwidth_hz / (2.0 * std::sqrt(2.0 * std::numbers::ln2));
  const double center = p.helmholtz.center_hz;
  add_band(
      db_to_power(p.helmholtz.level_db_at_ref),
      [&](double f) {
        const double z = (f - center) / sigma;
        return std::exp(-0.5 * z * z);
      },
      0.0, fs / 2.0);
  add_band(
      tread_power * db_to_power(kFloorRelativeDb), [](double) { return 1.0; }, 0.0,
      fs / 2.0);
  return gains;
}

// sqrt of the periodic Hann window: squares of 50%-overlapped copies sum to 1,
// so overlap-added independent noise segments keep a constant variance.
std::vector<double> sqrt_hann(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = std::sin(std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  }
  return w;
}

void add_shaped_noise(std::vector<double>& out, const std::vector<double>& gains,
                      Rng& rng) {
  static const std::vector<double> window = sqrt_hann(kSegmentLen);
  std::vector<double> mag(kSegmentLen, 0.0);
  for (std::size_t k = 1; k < kSegmentLen / 2; ++k) {
    mag[k] = std::sqrt(gains[k]);
    mag[kSegmentLen - k] = mag[k];
  }
  std::vector<std::complex<double>> buf(kSegmentLen);
  const auto n = static_cast<std::ptrdiff_t>(out.size());
  // First segment starts one hop before the clip so every output sample is
  // covered by exactly two windows.
  for (std::ptrdiff_t start = -static_cast<std::ptrdiff_t>(kSegmentHop); start < n;
       start += static_cast<std::ptrdiff_t>(kSegmentHop)) {
    for (auto& v : buf) v = {rng.gaussian(), 0.0};
    fft_inplace(buf);
    for (std::size_t k = 0; k < kSegmentLen; ++k) buf[k] *= mag[k];
    ifft_inplace(buf);
    for (std::size_t i = 0; i < kSegmentLen; ++i) {
      const std::ptrdiff_t at = start + static_cast<std::ptrdiff_t>(i);
      if (at >= 0 && at < n) out[static_cast<std::size_t>(at)] += buf[i].real() * window[i];
    }
  }
}

}  // namespace

std::string_view label_name(RoadClass c) {
  switch (c) {
    case RoadClass::RoughAsphalt: return "rough_asphalt";
    case RoadClass::SmoothAsphalt: return "smooth_asphalt";
    case RoadClass::Other: return "other";
  }
  throw InvalidArgument("unknown road class");
}

RoadClass parse_label(std::string_view name) {
  for (RoadClass c : kRoadClasses) {
    if (label_name(c) == name) return c;
  }
  throw InvalidArgument("unknown road class label '" + std::string(name) + "'");
}

std::string_view sub_profile_name(SubProfile s) {
  switch (s) {
    case SubProfile::ConcretePavement: return "concrete_pavement";
    case SubProfile::BelgianPavement: return "belgian_pavement";
    case SubProfile::ViennaPavement: return "vienna_pavement";
    case SubProfile::Pipes: return "pipes";
  }
  throw InvalidArgument("unknown sub-profile");
}

SubProfile parse_sub_profile(std::string_view name) {
  for (SubProfile s : kSubProfiles) {
    if (sub_profile_name(s) == name) return s;
  }
  throw InvalidArgument("unknown sub-profile '" + std::string(name) + "'");
}

void SurfaceProfile::validate() const {
  auto finite = [](double v) { return std::isfinite(v); };
  if (tread.f_lo_hz != 50.0 || tread.f_hi_hz != 1000.0) {
    throw InvalidArgument("tread band must be exactly [50, 1000] Hz");
  }
  if (pumping.f_lo_hz != 1000.0 || pumping.f_hi_hz != 4000.0) {
    throw InvalidArgument("pumping band must be exactly [1000, 4000] Hz");
  }
  if (!finite(tread.level_db_at_ref) || !finite(tread.tilt_db_per_octave) ||
      !finite(pumping.level_db_at_ref) || !finite(helmholtz.level_db_at_ref)) {
    throw InvalidArgument("profile levels must be finite");
  }
  if (!(helmholtz.bandwidth_hz > 0.0) || !(helmholtz.center_hz > 0.0)) {
    throw InvalidArgument("helmholtz bandwidth and center must be positive");
  }
  if (!(am_rate_hz >= 0.0) || !(impulse_rate_per_s >= 0.0)) {
    throw InvalidArgument("modulation and impulse rates must be >= 0");
  }
  if (!(am_depth >= 0.0 && am_depth < 1.0)) {
    throw InvalidArgument("am_depth must lie in [0, 1)");
  }
  if (!(impulse_amplitude >= 0.0) || !(impulse_decay_s > 0.0) || !(impulse_freq_hz > 0.0)) {
    throw InvalidArgument("impulse shape parameters must be positive");
  }
  if (!(ref_speed_kmh > 0.0)) throw InvalidArgument("ref_speed_kmh must be positive");
  if (sub_profile.has_value() != (road_class == RoadClass::Other)) {
    throw InvalidArgument("sub_profile must be set iff class is Other");
  }
}

SurfaceProfile default_profile(RoadClass c, std::optional<SubProfile> sub) {
  if (sub.has_value() != (c == RoadClass::Other)) {
    throw InvalidArgument(c == RoadClass::Other
                              ? "class Other requires a sub_profile"
                              : "sub_profile is only valid for class Other");
  }
  SurfaceProfile p;
  p.road_class = c;
  p.sub_profile = sub;
  // Helmholtz bump carries the same power as the tread band in every profile,
  // so tread-band offsets between profiles equal the table offsets.
  auto set_levels = [&p](double tread_db, double tilt, double pumping_db) {
    p.tread.level_db_at_ref = tread_db;
    p.tread.tilt_db_per_octave = tilt;
    p.pumping.level_db_at_ref = pumping_db;
    p.helmholtz.level_db_at_ref = tread_db;
  };
  switch (c) {
    case RoadClass::SmoothAsphalt:
      set_levels(-36.0, -6.0, -39.0);
      break;
    case RoadClass::RoughAsphalt:
      // +3 dB tread energy over smooth asphalt; coarse texture also shifts
      // energy from pumping to impact.
      set_levels(-33.0, -3.0, -42.0);
      break;
    case RoadClass::Other:
      switch (*sub) {
        case SubProfile::ConcretePavement:
          set_levels(-34.5, -4.5, -32.5);
          p.impulse_rate_per_s = 3.7;  // expansion joints every 4.5 m
          p.impulse_amplitude = 2.0;
          break;
        case SubProfile::BelgianPavement:
          set_levels(-30.0, -1.0, -34.0);
          p.am_rate_hz = 35.0;
          p.am_depth = 0.6;
          break;
        case SubProfile::ViennaPavement:
          set_levels(-32.0, -1.5, -33.0);
          p.am_rate_hz = 25.0;
          p.am_depth = 0.5;
          break;
        case SubProfile::Pipes:
          set_levels(-35.0, -4.0, -32.0);
          p.impulse_rate_per_s = 2.0;
          p.impulse_amplitude = 3.0;
          p.impulse_freq_hz = 90.0;
          p.impulse_decay_s = 0.02;
          break;
      }
      break;
  }
  return p;
}

ProfileTable default_profile_table() {
  ProfileTable table;
  table.push_back(default_profile(RoadClass::RoughAsphalt));
  table.push_back(default_profile(RoadClass::SmoothAsphalt));
  for (SubProfile s : kSubProfiles) table.push_back(default_profile(RoadClass::Other, s));
  return table;
}

const SurfaceProfile& find_profile(const ProfileTable& table, RoadClass c,
                                   std::optional<SubProfile> sub) {
  for (const auto& p : table) {
    if (p.road_class == c && p.sub_profile == sub) return p;
  }
  throw InvalidArgument("profile table has no entry for " + std::string(label_name(c)));
}

AudioClip synth_clip(const SurfaceProfile& profile, double speed_kmh, double duration_s,
                     std::uint64_t seed) {
  if (!(speed_kmh >= kMinSpeedKmh && speed_kmh <= kMaxSpeedKmh)) {
    throw InvalidArgument("speed_kmh must lie in [40, 90]");
  }
  if (!(duration_s >= 0.25) || !std::isfinite(duration_s)) {
    throw InvalidArgument("duration_s must be >= 0.25");
  }
  profile.validate();

  const double fs = kCorpusSampleRate;
  AudioClip clip;
  clip.samples.assign(static_cast<std::size_t>(std::llround(duration_s * fs)), 0.0);
  auto& x = clip.samples;

  Rng noise_rng(seed);
  add_shaped_noise(x, shaping_gains(profile, fs), noise_rng);

  Rng aux_rng(splitmix64(seed ^ 0xA5A5A5A5A5A5A5A5ULL));
  const double speed_ratio = speed_kmh / profile.ref_speed_kmh;

  if (profile.am_rate_hz > 0.0 && profile.am_depth > 0.0) {
    const double rate =
        std::clamp(profile.am_rate_hz * speed_ratio, kMinAmRateHz, kMaxAmRateHz);
    const double phase = aux_rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double d = profile.am_depth;
    const double norm = 1.0 / std::sqrt(1.0 + 0.5 * d * d);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double t = static_cast<double>(i) / fs;
      x[i] *= norm * (1.0 + d * std::sin(2.0 * std::numbers::pi * rate * t + phase));
    }
  }

  if (profile.impulse_rate_per_s > 0.0 && profile.impulse_amplitude > 0.0) {
    const double rate = profile.impulse_rate_per_s * speed_ratio;
    const double period = 1.0 / rate;
    const double tread_rms = std::sqrt(db_to_power(profile.tread.level_db_at_ref));
    const double tau = profile.impulse_decay_s;
    const auto span = static_cast<std::size_t>(8.0 * tau * fs);
    for (double onset = aux_rng.uniform() * period; onset < duration_s; onset += period) {
      const double amp = profile.impulse_amplitude * tread_rms * aux_rng.uniform(0.8, 1.2);
      const auto first = static_cast<std::size_t>(std::ceil(onset * fs));
      for (std::size_t i = first; i < std::min(x.size(), first + span); ++i) {
        const double t = static_cast<double>(i) / fs - onset;
        x[i] += amp * std::exp(-t / tau) *
                std::sin(2.0 * std::numbers::pi * profile.impulse_freq_hz * t);
      }
    }
  }

  double peak = 0.0;
  for (double& v : x) {
    v *= speed_ratio;
    peak = std::max(peak, std::abs(v));
  }
  // Safety limiter only; the level table keeps peaks well below this.
  if (peak > kPeakLimit) {
    const double g = kPeakLimit / peak;
    for (double& v : x) v *= g;
  }
  return clip;
}

std::vector<double> welch_psd(const AudioClip& clip, std::size_t frame_len) {
  if (!is_power_of_two(frame_len)) {
    throw InvalidArgument("welch_psd frame length must be a power of two");
  }
  if (clip.samples.size() < frame_len) {
    throw InvalidArgument("clip too short for Welch averaging");
  }
  const auto window = hann_window(frame_len);
  double window_energy = 0.0;
  for (double w : window) window_energy += w * w;
  const std::size_t hop = frame_len / 2;
  const std::size_t frames = 1 + (clip.samples.size() - frame_len) / hop;
  std::vector<double> psd(frame_len / 2 + 1, 0.0);
  for (std::size_t f = 0; f < frames; ++f) {
    const auto p = power_spectrum(
        std::span<const double>(clip.samples).subspan(f * hop, frame_len), window);
    for (std::size_t k = 0; k < psd.size(); ++k) psd[k] += p[k];
  }
  const double scale =
      1.0 / (static_cast<double>(frames) * clip.sample_rate_hz * window_energy);
  for (std::size_t k = 0; k < psd.size(); ++k) {
    psd[k] *= scale;
    if (k != 0 && k != frame_len / 2) psd[k] *= 2.0;
  }
  return psd;
}

double band_level(const AudioClip& clip, double f_lo_hz, double f_hi_hz) {
  const double nyquist = clip.sample_rate_hz / 2.0;
  if (!(f_lo_hz >= 0.0 && f_lo_hz < f_hi_hz && f_hi_hz <= nyquist)) {
    throw InvalidArgument("band_level requires 0 <= f_lo < f_hi <= Nyquist");
  }
  constexpr std::size_t kFrame = 1024;
  if (clip.samples.size() < kFrame) {
    throw InvalidArgument("clip too short for band_level");
  }
  const auto psd = welch_psd(clip, kFrame);
  const double bin_hz = static_cast<double>(clip.sample_rate_hz) / kFrame;
  // Bin k represents [f_k - df/2, f_k + df/2]; edge bins contribute the
  // fraction of that cell lying inside the band.
  double power = 0.0;
  double covered_hz = 0.0;
  for (std::size_t k = 0; k < psd.size(); ++k) {
    const double f = static_cast<double>(k) * bin_hz;
    const double lo = std::max(f - 0.5 * bin_hz, f_lo_hz);
    const double hi = std::min(f + 0.5 * bin_hz, f_hi_hz);
    if (hi > lo) {
      power += psd[k] * (hi - lo);
      covered_hz += hi - lo;
    }
  }
  if (!(covered_hz > 0.0)) throw InvalidArgument("band contains no analysis bins");
  if (!(power > 0.0)) return kBandLevelFloorDb;
  return std::max(kBandLevelFloorDb, 10.0 * std::log10(power));
}

void SynthSpec::validate() const {
  if (clips_per_class < 1) throw InvalidArgument("clips_per_class must be >= 1");
  if (!(duration_s > 0.0)) throw InvalidArgument("duration_s must be > 0");
  if (!(speed_min_kmh >= kMinSpeedKmh && speed_max_kmh <= kMaxSpeedKmh &&
        speed_min_kmh <= speed_max_kmh)) {
    throw InvalidArgument("speed range must lie within [40, 90] km/h");
  }
  if (out_dir.empty()) throw InvalidArgument("out_dir must be set");
}

CorpusManifest synth_corpus(const SynthSpec& spec, const ProfileTable& profiles) {
  spec.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  if (fs::exists(spec.out_dir, ec)) {
    if (!fs::is_directory(spec.out_dir, ec)) {
      throw IoError(spec.out_dir.string(), "exists and is not a directory");
    }
    if (!fs::is_empty(spec.out_dir, ec) && !spec.overwrite) {
      throw IoError(spec.out_dir.string(),
                    "directory is not empty (pass --overwrite to reuse it)");
    }
  } else if (!fs::create_directories(spec.out_dir, ec) || ec) {
    throw IoError(spec.out_dir.string(), "cannot create directory: " + ec.message());
  }

  CorpusManifest manifest;
  manifest.root = spec.out_dir;
  std::uint64_t index = 0;
  for (RoadClass c : kRoadClasses) {
    for (std::size_t j = 0; j < spec.clips_per_class; ++j, ++index) {
      ManifestEntry e;
      e.label = c;
      if (c == RoadClass::Other) e.sub_profile = kSubProfiles[j % kSubProfiles.size()];
      e.seed = derive_seed(spec.master_seed, index);
      Rng speed_rng(splitmix64(e.seed));
      e.speed_kmh = speed_rng.uniform(spec.speed_min_kmh, spec.speed_max_kmh);
      e.duration_s = spec.duration_s;
      char name[64];
      std::snprintf(name, sizeof(name), "%05llu_%s.wav",
                    static_cast<unsigned long long>(index), label_name(c).data());
      e.path = name;
      const auto& profile = find_profile(profiles, c, e.sub_profile);
      write_wav((spec.out_dir / e.path).string(),
                synth_clip(profile, e.speed_kmh, e.duration_s, e.seed));
      manifest.entries.push_back(std::move(e));
    }
  }
  write_manifest(spec.out_dir / kManifestName, manifest);
  return manifest;
}

void write_manifest(const std::filesystem::path& path, const CorpusManifest& manifest) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  for (const auto& e : manifest.entries) {
    nlohmann::ordered_json j;
    j["path"] = e.path;
    j["label"] = label_name(e.label);
    if (e.sub_profile) {
      j["sub_profile"] = sub_profile_name(*e.sub_profile);
    } else {
      j["sub_profile"] = nullptr;
    }
    j["speed_kmh"] = e.speed_kmh;
    j["seed"] = e.seed;
    j["duration_s"] = e.duration_s;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError(path.string(), "write failed");
}

CorpusManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open manifest");
  CorpusManifest manifest;
  manifest.root = path.parent_path();
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestEntry e;
      e.path = j.at("path").get<std::string>();
      e.label = parse_label(j.at("label").get<std::string>());
      if (!j.at("sub_profile").is_null()) {
        e.sub_profile = parse_sub_profile(j.at("sub_profile").get<std::string>());
      }
      e.speed_kmh = j.at("speed_kmh").get<double>();
      e.seed = j.at("seed").get<std::uint64_t>();
      e.duration_s = j.at("duration_s").get<double>();
      if (!seen.insert(e.path).second) {
        throw InvalidArgument("duplicate path '" + e.path + "'");
      }
      manifest.entries.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw InvalidArgument(path.string() + ":" + std::to_string(line_no) + ": " +
                            ex.what());
    } catch (const InvalidArgument& ex) {
      throw InvalidArgument(path.string() + ":" + std::to_string(line_no) + ": " +
                            ex.what());
    }
  }
  return manifest;
}

}  // namespace roadnoise
