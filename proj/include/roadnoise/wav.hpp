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

// Minimal RIFF/WAVE support: 16-bit signed little-endian PCM, mono.

#ifndef ROADNOISE_WAV_HPP_
#define ROADNOISE_WAV_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "roadnoise/signal.hpp"

namespace roadnoise {

// round(sample * 32767), half away from zero, clamped to [-32767, 32767].
std::int16_t to_pcm16(double sample);
double from_pcm16(std::int16_t value);

std::vector<std::uint8_t> encode_wav(const AudioClip& clip);
AudioClip decode_wav(std::span<const std::uint8_t> bytes);

void write_wav(const std::string& path, const AudioClip& clip);
AudioClip read_wav(const std::string& path);

}  // namespace roadnoise

#endif  // ROADNOISE_WAV_HPP_
