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

// Trained model bundle (network + input standardization) and the `RNM1`
// on-disk format:
//
//   bytes 0-3   magic "RNM1"
//   byte  4     arch id (0 = CNN, 1 = AST, 2 = CNN int8)
//   bytes 5-8   tensor count, u32 LE
//   per tensor  name length u16 LE, UTF-8 name, ndim u8, dims u32 LE each,
//               dtype u8 (0 = f64, 1 = i8, 2 = i32), raw LE data;
//               i8 tensors are followed by one f64 scale and one i32 zero point
//
// Besides the network tensors every file carries `norm.mean` / `norm.std`
// (per mel band) and a `<arch>.shape` i32 tensor with the layer sizes.
// Quantized files add `act.<layer>.scale` (f64[1]) / `act.<layer>.zp` (i32[1]).

#ifndef ROADNOISE_MODEL_FILE_HPP_
#define ROADNOISE_MODEL_FILE_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "roadnoise/models.hpp"
#include "roadnoise/quant.hpp"
#include "roadnoise/signal.hpp"

namespace roadnoise {

/// Per-mel-band standardization fitted on the training split.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> stddev;

  static Standardizer fit(std::span<const FeatureMatrix> features);
  // Returns the standardized [n_mels, n_frames] grid.
  Tensor apply(const FeatureMatrix& features) const;

  bool operator==(const Standardizer&) const = default;
};

using Network = std::variant<CnnParams, AstParams, QuantizedCnn>;

struct Model {
  Network net;
  Standardizer norm;

  Arch arch() const;
  // Feature grid size the network consumes.
  std::size_t input_mels() const;
  std::size_t input_frames() const;
};

// Forward pass on an already standardized grid.
Logits forward(const Network& net, const Tensor& x);
// Standardize then forward. Throws InvalidModel on a dimension mismatch.
Logits predict(const Model& model, const FeatureMatrix& features);

enum class DType : std::uint8_t { F64 = 0, I8 = 1, I32 = 2 };

struct FileTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  DType dtype = DType::F64;
  std::vector<double> f64;
  std::vector<std::int8_t> i8;
  std::vector<std::int32_t> i32;
  QuantParams qparams;  // i8 only

  std::size_t element_count() const;
};

struct ModelFile {
  Arch arch = Arch::Cnn;
  std::vector<FileTensor> tensors;
};

inline constexpr std::size_t kModelHeaderBytes = 9;

std::vector<std::uint8_t> encode_model_file(const ModelFile& file);
ModelFile decode_model_file(std::span<const std::uint8_t> bytes);

ModelFile to_model_file(const Model& model);
Model from_model_file(const ModelFile& file);

// Exact serialized size in bytes.
std::size_t memory_footprint(const ModelFile& file);
std::size_t memory_footprint(const Model& model);

void save_model(const std::filesystem::path& path, const Model& model);
Model load_model(const std::filesystem::path& path);

}  // namespace roadnoise

#endif  // ROADNOISE_MODEL_FILE_HPP_
