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

#include "roadnoise/train.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "json.hpp"
#include "roadnoise/error.hpp"
#include "roadnoise/rng.hpp"
#include "roadnoise/wav.hpp"

namespace roadnoise {

namespace {

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[rng.below(i)]);
  }
}

struct Split {
  std::vector<Sample> train, val;
};

EvalResult evaluate_samples(const Network& net, std::span<const Sample> samples) {
  EvalResult r;
  if (samples.empty()) return r;
  std::size_t hits = 0;
  for (const Sample& s : samples) {
    const Logits z = forward(net, s.x);
    r.loss += cross_entropy(softmax(z), static_cast<RoadClass>(s.label));
    if (argmax(z) == s.label) ++hits;
  }
  const auto n = static_cast<double>(samples.size());
  r.loss /= n;
  r.accuracy = static_cast<double>(hits) / n;
  return r;
}

template <class Params>
TrainReport run_epochs(const TrainConfig& cfg, Params& params, const Split& split) {
  Params velocity = Params::zeros(params.shape);
  Params grads;
  Params best = params;
  Rng order_rng(derive_seed(cfg.seed, 3));
  std::vector<std::size_t> order(split.train.size());
  TrainReport report;
  double best_acc = -1.0, best_loss = 0.0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle(order, order_rng);
    double loss_sum = 0.0;
    std::size_t hits = 0;
    std::vector<Sample> batch;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(split.train[order[i]]);
      std::size_t batch_hits = 0;
      const double loss = backward(params, batch, grads, &batch_hits);
      if (!std::isfinite(loss)) {
        throw TrainingDiverged("loss became non-finite in epoch " + std::to_string(epoch));
      }
      loss_sum += loss * static_cast<double>(batch.size());
      hits += batch_hits;
      sgd_step(params, grads, velocity, cfg.learning_rate, cfg.momentum);
    }
    EpochStats st;
    st.epoch = epoch;
    st.train_loss = loss_sum / static_cast<double>(order.size());
    st.train_acc = static_cast<double>(hits) / static_cast<double>(order.size());
    const EvalResult val = evaluate_samples(Network(params), split.val);
    if (!std::isfinite(val.loss)) {
      throw TrainingDiverged("validation loss became non-finite in epoch " +
                             std::to_string(epoch));
    }
    st.val_loss = val.loss;
    st.val_acc = val.accuracy;
    report.epochs.push_back(st);
    if (st.val_acc > best_acc || (st.val_acc == best_acc && st.val_loss < best_loss)) {
      best_acc = st.val_acc;
      best_loss = st.val_loss;
      best = params;
      report.best_epoch = epoch;
    }
  }
  params = std::move(best);
  return report;
}

}  // namespace

void TrainConfig::validate() const {
  if (arch == Arch::CnnInt8) throw InvalidArgument("training supports cnn and ast only");
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("momentum must be in [0, 1)");
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (epochs < 1) throw InvalidArgument("epochs must be >= 1");
  if (!(val_fraction > 0.0 && val_fraction < 0.5)) {
    throw InvalidArgument("val_fraction must be in (0, 0.5)");
  }
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(
    std::span<const RoadClass> labels, double val_fraction, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 1));
  std::vector<std::size_t> train_idx, val_idx;
  for (RoadClass c : kRoadClasses) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == c) members.push_back(i);
    }
    shuffle(members, rng);
    const auto n_val = static_cast<std::size_t>(
        std::llround(static_cast<double>(members.size()) * val_fraction));
    const std::size_t cut = members.size() - n_val;
    train_idx.insert(train_idx.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(cut));
    val_idx.insert(val_idx.end(), members.begin() + static_cast<std::ptrdiff_t>(cut), members.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());
  return {train_idx, val_idx};
}

std::vector<LabeledExample> load_examples(const CorpusManifest& manifest,
                                          const FeatureConfig& config) {
  std::vector<LabeledExample> out;
  out.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    const AudioClip clip = read_wav(manifest.resolve(e).string());
    out.push_back({extract_logmel(clip, config), e.label});
  }
  return out;
}

TrainResult train_on_examples(const TrainConfig& config,
                              std::span<const LabeledExample> examples) {
  config.validate();
  if (examples.empty()) throw InvalidArgument("no training examples");
  const std::size_t n_mels = examples.front().features.n_mels();
  const std::size_t n_frames = examples.front().features.n_frames();
  std::vector<RoadClass> labels;
  for (const auto& e : examples) {
    if (e.features.n_mels() != n_mels || e.features.n_frames() != n_frames) {
      throw InvalidArgument("training features differ in shape");
    }
    labels.push_back(e.label);
  }
  std::size_t classes_present = 0;
  for (RoadClass c : kRoadClasses) {
    if (std::count(labels.begin(), labels.end(), c) > 0) ++classes_present;
  }
  if (classes_present < 2) throw InvalidArgument("training data holds a single class");

  const auto [train_idx, val_idx] = stratified_split(labels, config.val_fraction, config.seed);
  if (train_idx.empty() || val_idx.empty()) {
    throw InvalidArgument("too few examples for a train/validation split");
  }
  std::vector<FeatureMatrix> train_features;
  for (std::size_t i : train_idx) train_features.push_back(examples[i].features);

  TrainResult result;
  result.model.norm = Standardizer::fit(train_features);
  Split split;
  for (std::size_t i : train_idx) {
    split.train.push_back({result.model.norm.apply(examples[i].features),
                           class_index(examples[i].label)});
  }
  for (std::size_t i : val_idx) {
    split.val.push_back({result.model.norm.apply(examples[i].features),
                         class_index(examples[i].label)});
  }

  const std::uint64_t init_seed = derive_seed(config.seed, 2);
  if (config.arch == Arch::Cnn) {
    CnnShape shape = config.cnn_shape;
    shape.in_h = n_mels;
    shape.in_w = n_frames;
    if (shape.pool2_h() == 0 || shape.pool2_w() == 0) {
      throw InvalidArgument("features too small for the cnn");
    }
    CnnParams params = init_cnn(shape, init_seed);
    result.report = run_epochs(config, params, split);
    result.model.net = std::move(params);
  } else {
    AstShape shape = config.ast_shape;
    shape.n_mels = n_mels;
    if (shape.patch == 0 || n_mels % shape.patch != 0 || n_frames < shape.patch) {
      throw InvalidArgument("features do not tile into ast patches");
    }
    shape.n_frames = n_frames / shape.patch * shape.patch;
    AstParams params = init_ast(shape, init_seed);
    result.report = run_epochs(config, params, split);
    result.model.net = std::move(params);
  }
  return result;
}

TrainResult train(const TrainConfig& config, const CorpusManifest& manifest) {
  config.validate();
  const auto examples = load_examples(manifest);
  return train_on_examples(config, examples);
}

EvalResult evaluate(const Model& model, std::span<const LabeledExample> examples) {
  EvalResult r;
  if (examples.empty()) return r;
  std::size_t hits = 0;
  for (const auto& e : examples) {
    const Logits z = predict(model, e.features);
    r.loss += cross_entropy(softmax(z), e.label);
    if (argmax(z) == class_index(e.label)) ++hits;
  }
  const auto n = static_cast<double>(examples.size());
  r.loss /= n;
  r.accuracy = static_cast<double>(hits) / n;
  return r;
}

double majority_baseline_accuracy(std::span<const RoadClass> labels) {
  if (labels.empty()) throw InvalidArgument("no labels");
  std::size_t best = 0;
  for (RoadClass c : kRoadClasses) {
    best = std::max(best, static_cast<std::size_t>(std::count(labels.begin(), labels.end(), c)));
  }
  return static_cast<double>(best) / static_cast<double>(labels.size());
}

void write_report_jsonl(std::ostream& out, const TrainReport& report) {
  for (const auto& e : report.epochs) {
    nlohmann::ordered_json j;
    j["epoch"] = e.epoch;
    j["train_loss"] = e.train_loss;
    j["train_acc"] = e.train_acc;
    j["val_loss"] = e.val_loss;
    j["val_acc"] = e.val_acc;
    out << j.dump() << '\n';
  }
}

}  // namespace roadnoise
