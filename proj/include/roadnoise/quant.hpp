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

// Post-training int8 quantization of the CNN.
//
// Real values map to int8 through r = scale * (q - zero_point). Weights are
// symmetric per tensor (zero_point 0, scale max|w| / 127); activations use
// min/max calibration. Biases are int32 at scale w_scale * in_scale. The
// integer kernels accumulate (q_in - zp_in) * q_w in int32, requantize each
// layer output to int8 and apply ReLU as max(q, zero_point).
//
// Rounding is half away from zero everywhere (std::round).

#ifndef ROADNOISE_QUANT_HPP_
#define ROADNOISE_QUANT_HPP_

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "roadnoise/models.hpp"
#include "roadnoise/tensor.hpp"

namespace roadnoise {

struct QuantParams {
  double scale = 1.0;
  std::int32_t zero_point = 0;

  bool operator==(const QuantParams&) const = default;
};

struct QuantizedTensor {
  std::vector<std::size_t> dims;
  std::vector<std::int8_t> data;
  QuantParams qparams;

  bool operator==(const QuantizedTensor&) const = default;
};

// The observed [min, max] is widened to include 0, then
// scale = max(max - min, 1e-8) / 255 and zero_point = round(-128 - min / scale)
// clamped to [-128, 127]. Throws InvalidArgument on empty or non-finite input.
QuantParams calibrate(std::span<const Tensor> activations);

std::int8_t quantize_value(double r, const QuantParams& q);
QuantizedTensor quantize_tensor(const Tensor& t, const QuantParams& q);
Tensor dequantize(const QuantizedTensor& qt);

// scale = max|w| / 127 (1.0 for an all-zero tensor), zero_point = 0.
QuantParams symmetric_weight_params(const Tensor& w);

struct QuantizedLayer {
  QuantizedTensor weights;
  std::vector<std::int32_t> bias;  // at scale weights.scale * input scale

  bool operator==(const QuantizedLayer&) const = default;
};

struct QuantizedCnn {
  CnnShape shape;
  QuantizedLayer conv1, conv2, dense1, dense2;
  // Calibrated ranges of the standardized input and of each layer's
  // pre-activation output.
  std::optional<QuantParams> act_input, act_conv1, act_conv2, act_dense1, act_dense2;

  bool operator==(const QuantizedCnn&) const = default;
};

inline constexpr std::size_t kMinCalibrationSize = 32;

// `calibration` holds standardized inputs; at least 32 are required.
QuantizedCnn quantize_model(const CnnParams& params, std::span<const Tensor> calibration);

// Throws InvalidModel if any activation calibration is missing or if an int32
// accumulator could overflow for the model's shapes.
Logits quantized_forward(const QuantizedCnn& model, const Tensor& x);

// Largest |accumulator| any layer can reach: fan_in * 255 * 127 + max|bias|.
std::int64_t worst_case_accumulator(const QuantizedCnn& model);

}  // namespace roadnoise

#endif  // ROADNOISE_QUANT_HPP_
