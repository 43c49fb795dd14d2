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

// Scratch training for both architectures: fused softmax/cross-entropy,
// handwritten backward passes and momentum SGD.

#ifndef ROADNOISE_TRAIN_HPP_
#define ROADNOISE_TRAIN_HPP_

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "roadnoise/model_file.hpp"
#include "roadnoise/models.hpp"
#include "roadnoise/synth.hpp"

namespace roadnoise {

inline constexpr double kProbFloor = 1e-12;

// -ln(max(probs[label], 1e-12))
double cross_entropy(const Probs& probs, RoadClass label);

struct LabeledExample {
  FeatureMatrix features;
  RoadClass label = RoadClass::RoughAsphalt;
};

// A standardized network input with its class index.
struct Sample {
  Tensor x;
  std::size_t label = 0;
};

// Mean batch cross-entropy. `grads` is overwritten with the gradient of that
// mean with respect to every parameter; `correct`, when given, receives the
// number of argmax hits. Throws InvalidArgument on an empty batch or
// mismatched shapes.
double backward(const CnnParams& params, std::span<const Sample> batch, CnnParams& grads,
                std::size_t* correct = nullptr);
double backward(const AstParams& params, std::span<const Sample> batch, AstParams& grads,
                std::size_t* correct = nullptr);

double batch_loss(const CnnParams& params, std::span<const Sample> batch);
double batch_loss(const AstParams& params, std::span<const Sample> batch);

// Reduced configurations used by grad_check.
CnnShape tiny_cnn_shape();
AstShape tiny_ast_shape();

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  // Entries whose +-h stencil changes a ReLU sign or a max-pool winner; the
  // loss is not differentiable across them.
  std::size_t skipped = 0;
};

// Max over all parameters of |analytic - numeric| / max(1e-8, |analytic| + |numeric|),
// numeric from the fourth-order central stencil with step 1e-4 on a
// 4-example random batch.
// Arch::CnnInt8 is rejected.
GradCheckResult grad_check_detailed(Arch arch, std::uint64_t seed);
double grad_check(Arch arch, std::uint64_t seed);

// v <- momentum * v - lr * g; theta <- theta + v. Throws TrainingDiverged naming
// `name` if g holds a non-finite value (nothing is updated in that case).
void sgd_step(std::span<double> theta, std::span<const double> grad,
              std::span<double> velocity, double lr, double momentum,
              const std::string& name = "param");
void sgd_step(CnnParams& params, const CnnParams& grads, CnnParams& velocity, double lr,
              double momentum);
void sgd_step(AstParams& params, const AstParams& grads, AstParams& velocity, double lr,
              double momentum);

struct TrainConfig {
  Arch arch = Arch::Cnn;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 16;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  double val_fraction = 0.1;
  // Layer widths. The input extent is taken from the training features (AST
  // frames are cropped to a whole number of patches).
  CnnShape cnn_shape;
  AstShape ast_shape;

  void validate() const;
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;

  bool operator==(const EpochStats&) const = default;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;

  bool operator==(const TrainReport&) const = default;
};

struct TrainResult {
  Model model;  // parameters of the best validation epoch
  TrainReport report;
};

// Per class: seeded shuffle, the last round(n * val_fraction) go to validation.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(
    std::span<const RoadClass> labels, double val_fraction, std::uint64_t seed);

// Reads every clip of the manifest and extracts log-mel features.
std::vector<LabeledExample> load_examples(const CorpusManifest& manifest,
                                          const FeatureConfig& config = {});

TrainResult train_on_examples(const TrainConfig& config,
                              std::span<const LabeledExample> examples);
TrainResult train(const TrainConfig& config, const CorpusManifest& manifest);

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

EvalResult evaluate(const Model& model, std::span<const LabeledExample> examples);

// Accuracy of always predicting the most frequent label (first in class order on ties).
double majority_baseline_accuracy(std::span<const RoadClass> labels);

void write_report_jsonl(std::ostream& out, const TrainReport& report);

}  // namespace roadnoise

#endif  // ROADNOISE_TRAIN_HPP_
