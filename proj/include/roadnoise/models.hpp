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

// The two compared classifiers over a standardized log-mel grid:
//
//   CNN: conv3x3(8) -> ReLU -> maxpool2 -> conv3x3(16) -> ReLU -> maxpool2
//        -> flatten -> dense(32) -> ReLU -> dense(3)
//   AST: 16x16 patches -> linear embed(32) -> [class token] + positions
//        -> 2 x pre-norm encoder {LN, 2-head attention, LN, MLP 32-64-32}
//        -> final LN -> head on the class token
//
// Both shapes are parameterized so the gradient checker can run the same code
// on tiny configurations. Reference inference is float64 throughout.

#ifndef ROADNOISE_MODELS_HPP_
#define ROADNOISE_MODELS_HPP_

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "roadnoise/synth.hpp"
#include "roadnoise/tensor.hpp"

namespace roadnoise {

// Ordered (RoughAsphalt, SmoothAsphalt, Other).
using Logits = std::array<double, kNumClasses>;
using Probs = std::array<double, kNumClasses>;

// Architecture ids as stored in byte 4 of a model file.
enum class Arch : std::uint8_t { Cnn = 0, Ast = 1, CnnInt8 = 2 };

std::string_view arch_name(Arch a);

// p[i] = exp(z[i] - max z) / sum_j exp(z[j] - max z)
void softmax_inplace(std::span<double> z);
Probs softmax(const Logits& logits);

std::size_t argmax(const Logits& values);

// ---------------------------------------------------------------------------
// CNN

struct CnnShape {
  std::size_t in_h = 64;
  std::size_t in_w = 85;
  std::size_t conv1 = 8;
  std::size_t conv2 = 16;
  std::size_t hidden = 32;

  std::size_t pool1_h() const { return in_h / 2; }
  std::size_t pool1_w() const { return in_w / 2; }
  std::size_t pool2_h() const { return pool1_h() / 2; }
  std::size_t pool2_w() const { return pool1_w() / 2; }
  std::size_t flat() const { return conv2 * pool2_h() * pool2_w(); }

  bool operator==(const CnnShape&) const = default;
};

struct CnnParams {
  CnnShape shape;
  Tensor conv1_w;   // [conv1, 1, 3, 3]
  Tensor conv1_b;   // [conv1]
  Tensor conv2_w;   // [conv2, conv1, 3, 3]
  Tensor conv2_b;   // [conv2]
  Tensor dense1_w;  // [flat, hidden]
  Tensor dense1_b;  // [hidden]
  Tensor dense2_w;  // [hidden, 3]
  Tensor dense2_b;  // [3]

  // All-zero tensors of the right shapes (also used as gradient buffers).
  static CnnParams zeros(const CnnShape& shape);

  template <class F>
  void for_each(F&& f) {
    f("conv1.w", conv1_w);
    f("conv1.b", conv1_b);
    f("conv2.w", conv2_w);
    f("conv2.b", conv2_b);
    f("dense1.w", dense1_w);
    f("dense1.b", dense1_b);
    f("dense2.w", dense2_w);
    f("dense2.b", dense2_b);
  }
  template <class F>
  void for_each(F&& f) const {
    const_cast<CnnParams*>(this)->for_each(
        [&f](std::string_view name, const Tensor& t) { f(name, t); });
  }

  std::size_t parameter_count() const;
};

// Glorot-uniform weights, zero biases; deterministic per seed.
CnnParams init_cnn(const CnnShape& shape, std::uint64_t seed);

/// Intermediate activations kept for the backward pass.
struct CnnTrace {
  Tensor input;   // [in_h, in_w]
  Tensor conv1;   // pre-activation [conv1, in_h, in_w]
  Tensor pool1;   // [conv1, pool1_h, pool1_w]
  std::vector<std::size_t> pool1_arg;  // flat index into conv1 of each max
  Tensor conv2;   // pre-activation [conv2, pool1_h, pool1_w]
  Tensor pool2;   // [conv2, pool2_h, pool2_w], flattened row-major for dense1
  std::vector<std::size_t> pool2_arg;
  Tensor hidden_pre;  // [hidden]
  Tensor hidden;      // after ReLU
  Logits logits{};
};

// x must be [in_h, in_w]; throws InvalidArgument on mismatch.
CnnTrace cnn_forward_trace(const CnnParams& params, const Tensor& x);
Logits cnn_forward(const CnnParams& params, const Tensor& x);

// ---------------------------------------------------------------------------
// AST

struct AstShape {
  std::size_t n_mels = 64;
  std::size_t n_frames = 80;  // input columns beyond this are dropped
  std::size_t patch = 16;
  std::size_t dim = 32;
  std::size_t heads = 2;
  std::size_t layers = 2;
  std::size_t mlp = 64;

  std::size_t patch_rows() const { return n_mels / patch; }
  std::size_t patch_cols() const { return n_frames / patch; }
  std::size_t n_patches() const { return patch_rows() * patch_cols(); }
  std::size_t tokens() const { return n_patches() + 1; }
  std::size_t patch_size() const { return patch * patch; }
  std::size_t head_dim() const { return dim / heads; }

  bool operator==(const AstShape&) const = default;
};

struct AstLayer {
  Tensor ln1_g, ln1_b;   // [dim]
  Tensor wq, bq;         // [dim, dim], [dim]
  Tensor wk;             // no bias: softmax is invariant to it
  Tensor wv, bv;
  Tensor wo, bo;
  Tensor ln2_g, ln2_b;
  Tensor mlp1_w, mlp1_b;  // [dim, mlp], [mlp]
  Tensor mlp2_w, mlp2_b;  // [mlp, dim], [dim]
};

struct AstParams {
  AstShape shape;
  Tensor patch_w;  // [patch_size, dim]
  Tensor patch_b;  // [dim]
  Tensor cls;      // [dim]
  Tensor pos;      // [tokens, dim]
  std::vector<AstLayer> layers;
  Tensor lnf_g, lnf_b;
  Tensor head_w;  // [dim, 3]
  Tensor head_b;  // [3]

  static AstParams zeros(const AstShape& shape);

  template <class F>
  void for_each(F&& f) {
    f("patch.w", patch_w);
    f("patch.b", patch_b);
    f("cls", cls);
    f("pos", pos);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      auto& l = layers[i];
      const std::string p = "enc" + std::to_string(i) + ".";
      f(p + "ln1.g", l.ln1_g);
      f(p + "ln1.b", l.ln1_b);
      f(p + "wq", l.wq);
      f(p + "bq", l.bq);
      f(p + "wk", l.wk);
      f(p + "wv", l.wv);
      f(p + "bv", l.bv);
      f(p + "wo", l.wo);
      f(p + "bo", l.bo);
      f(p + "ln2.g", l.ln2_g);
      f(p + "ln2.b", l.ln2_b);
      f(p + "mlp1.w", l.mlp1_w);
      f(p + "mlp1.b", l.mlp1_b);
      f(p + "mlp2.w", l.mlp2_w);
      f(p + "mlp2.b", l.mlp2_b);
    }
    f("final_ln.g", lnf_g);
    f("final_ln.b", lnf_b);
    f("head.w", head_w);
    f("head.b", head_b);
  }
  template <class F>
  void for_each(F&& f) const {
    const_cast<AstParams*>(this)->for_each(
        [&f](std::string_view name, const Tensor& t) { f(name, t); });
  }

  std::size_t parameter_count() const;
};

AstParams init_ast(const AstShape& shape, std::uint64_t seed);

struct LayerNormCache {
  Tensor xhat;                  // normalized input [rows, dim]
  std::vector<double> inv_std;  // per row
};

struct AstLayerTrace {
  Tensor z_in;  // [tokens, dim]
  LayerNormCache ln1;
  Tensor a;  // LN1 output
  Tensor q, k, v;
  std::vector<Tensor> attn;  // per head [tokens, tokens], rows sum to 1
  Tensor o;                  // concatenated head outputs
  Tensor z_mid;              // after the attention residual
  LayerNormCache ln2;
  Tensor b;  // LN2 output
  Tensor h_pre, h;
};

struct AstTrace {
  Tensor patches;  // [n_patches, patch_size]
  Tensor z0;       // embedded tokens + positions
  std::vector<AstLayerTrace> layers;
  Tensor z_out;  // last encoder output
  LayerNormCache lnf;
  Tensor f;  // final LN output
  Logits logits{};
};

inline constexpr double kLayerNormEps = 1e-5;

// x must be [n_mels, >= n_frames].
AstTrace ast_forward_trace(const AstParams& params, const Tensor& x);
Logits ast_forward(const AstParams& params, const Tensor& x);

// Row-major 16x16 patch extraction; patch p = (row block) * patch_cols + col block.
Tensor patchify(const AstShape& shape, const Tensor& x);

}  // namespace roadnoise

#endif  // ROADNOISE_MODELS_HPP_
