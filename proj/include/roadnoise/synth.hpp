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

// Parametric tyre/road noise synthesizer.
//
// A clip is the sum of
//   - frequency-shaped Gaussian noise: tread-impact band (50-1000 Hz, tilted),
//     air-pumping band (1-4 kHz), a Gaussian Helmholtz cavity bump and a
//     broadband sensor floor 60 dB under the tread band,
//   - optional amplitude modulation (block pavements),
//   - optional periodic impacts (joints, pipes),
// scaled by a broadband gain of 20 log10(v / v_ref) dB so every band rises
// 6.02 dB per doubling of speed. Levels are band powers in dB relative to a
// unit-variance signal, specified at the profile's reference speed.

#ifndef ROADNOISE_SYNTH_HPP_
#define ROADNOISE_SYNTH_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "roadnoise/signal.hpp"

namespace roadnoise {

enum class RoadClass : std::uint8_t { RoughAsphalt = 0, SmoothAsphalt = 1, Other = 2 };

inline constexpr std::size_t kNumClasses = 3;
inline constexpr std::array<RoadClass, kNumClasses> kRoadClasses = {
    RoadClass::RoughAsphalt, RoadClass::SmoothAsphalt, RoadClass::Other};

// Surfaces collapsed into RoadClass::Other.
enum class SubProfile : std::uint8_t {
  ConcretePavement = 0,
  BelgianPavement = 1,
  ViennaPavement = 2,
  Pipes = 3,
};

inline constexpr std::array<SubProfile, 4> kSubProfiles = {
    SubProfile::ConcretePavement, SubProfile::BelgianPavement,
    SubProfile::ViennaPavement, SubProfile::Pipes};

// "rough_asphalt", "smooth_asphalt", "other".
std::string_view label_name(RoadClass c);
RoadClass parse_label(std::string_view name);
std::string_view sub_profile_name(SubProfile s);
SubProfile parse_sub_profile(std::string_view name);

inline std::size_t class_index(RoadClass c) { return static_cast<std::size_t>(c); }

inline constexpr double kMinSpeedKmh = 40.0;
inline constexpr double kMaxSpeedKmh = 90.0;

struct SurfaceProfile {
  RoadClass road_class = RoadClass::SmoothAsphalt;
  std::optional<SubProfile> sub_profile;

  struct TreadBand {
    double f_lo_hz = 50.0;
    double f_hi_hz = 1000.0;
    double level_db_at_ref = -36.0;
    double tilt_db_per_octave = -6.0;
  } tread;

  struct PumpingBand {
    double f_lo_hz = 1000.0;
    double f_hi_hz = 4000.0;
    double level_db_at_ref = -39.0;
  } pumping;

  struct Helmholtz {
    double center_hz = 225.0;
    double bandwidth_hz = 30.0;  // full width at half maximum
    double level_db_at_ref = -36.0;
  } helmholtz;

  // AM rate at the reference speed; scales with speed, clamped to [20, 50] Hz.
  double am_rate_hz = 0.0;
  double am_depth = 0.0;

  // Impacts per second at the reference speed; scales with speed.
  double impulse_rate_per_s = 0.0;
  // Impact amplitude relative to the tread-band RMS.
  double impulse_amplitude = 0.0;
  double impulse_freq_hz = 140.0;
  double impulse_decay_s = 0.012;

  double ref_speed_kmh = 60.0;

  void validate() const;
};

// Built-in profile table. `sub_profile` must be given iff class == Other.
SurfaceProfile default_profile(RoadClass c, std::optional<SubProfile> sub = std::nullopt);

using ProfileTable = std::vector<SurfaceProfile>;

ProfileTable default_profile_table();
const SurfaceProfile& find_profile(const ProfileTable& table, RoadClass c,
                                   std::optional<SubProfile> sub);

// Deterministic in (profile, speed, duration, seed). Peak |sample| <= 0.9.
AudioClip synth_clip(const SurfaceProfile& profile, double speed_kmh,
                     double duration_s, std::uint64_t seed);

// One-sided Welch PSD (power per Hz) with Hann frames and 50% overlap.
std::vector<double> welch_psd(const AudioClip& clip, std::size_t frame_len = 1024);

inline constexpr double kBandLevelFloorDb = -200.0;

// 10 log10 of the Welch PSD integrated over [f_lo_hz, f_hi_hz] (1024-sample
// frames); floored at -200 dB.
double band_level(const AudioClip& clip, double f_lo_hz, double f_hi_hz);

struct SynthSpec {
  std::size_t clips_per_class = 1;
  double duration_s = 1.0;
  double speed_min_kmh = kMinSpeedKmh;
  double speed_max_kmh = kMaxSpeedKmh;
  std::uint64_t master_seed = 0;
  std::filesystem::path out_dir;
  bool overwrite = false;

  void validate() const;
};

struct ManifestEntry {
  std::string path;  // relative to the manifest's directory
  RoadClass label = RoadClass::SmoothAsphalt;
  std::optional<SubProfile> sub_profile;
  double speed_kmh = 0.0;
  std::uint64_t seed = 0;
  double duration_s = 0.0;
};

struct CorpusManifest {
  std::filesystem::path root;  // directory the entry paths are relative to
  std::vector<ManifestEntry> entries;

  std::filesystem::path resolve(const ManifestEntry& e) const { return root / e.path; }
};

inline constexpr const char* kManifestName = "manifest.jsonl";

// Writes clips_per_class WAVs per class plus `manifest.jsonl` into
// spec.out_dir. Entries are class-major; Other cycles through its
// sub-profiles. Refuses a non-empty out_dir unless spec.overwrite.
CorpusManifest synth_corpus(const SynthSpec& spec,
                            const ProfileTable& profiles = default_profile_table());

void write_manifest(const std::filesystem::path& path, const CorpusManifest& manifest);
CorpusManifest read_manifest(const std::filesystem::path& path);

}  // namespace roadnoise

#endif  // ROADNOISE_SYNTH_HPP_
