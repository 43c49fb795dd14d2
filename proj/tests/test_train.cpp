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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "roadnoise/error.hpp"
#include "roadnoise/rng.hpp"
#include "roadnoise/train.hpp"

using namespace roadnoise;

namespace {

std::vector<Sample> random_batch(std::size_t n, std::size_t h, std::size_t w, Rng& rng) {
  std::vector<Sample> batch;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor x({h, w});
    for (double& v : x.data) v = rng.gaussian();
    batch.push_back({std::move(x), i % kNumClasses});
  }
  return batch;
}

// Three linearly separable classes: each lights up a different block of bands.
std::vector<LabeledExample> toy_examples(std::size_t per_class, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<LabeledExample> out;
  for (RoadClass c : kRoadClasses) {
    for (std::size_t i = 0; i < per_class; ++i) {
      FeatureMatrix f(16, 16, FeatureConfig{});
      for (std::size_t m = 0; m < 16; ++m) {
        const bool lit = m / 5 == class_index(c);
        for (std::size_t t = 0; t < 16; ++t) f.at(m, t) = rng.gaussian() + (lit ? 2.0 : 0.0);
      }
      out.push_back({std::move(f), c});
    }
  }
  return out;
}

template <class Params>
std::vector<double> flatten(const Params& p) {
  std::vector<double> out;
  p.for_each([&out](std::string_view, const Tensor& t) {
    out.insert(out.end(), t.data.begin(), t.data.end());
  });
  return out;
}

}  // namespace

TEST_CASE("cross entropy examples") {
  const double third = 1.0 / 3.0;
  CHECK(cross_entropy({third, third, third}, RoadClass::Other) ==
        doctest::Approx(std::log(3.0)).epsilon(1e-12));
  CHECK(cross_entropy({1.0, 0.0, 0.0}, RoadClass::RoughAsphalt) == 0.0);
  CHECK(cross_entropy({1.0, 0.0, 0.0}, RoadClass::SmoothAsphalt) ==
        doctest::Approx(27.631021115928547).epsilon(1e-12));
}

TEST_CASE("sgd step examples") {
  std::vector<double> theta{1.0}, grad{0.5}, vel{0.0};
  sgd_step(theta, grad, vel, 0.1, 0.0);
  CHECK(theta[0] == doctest::Approx(0.95).epsilon(1e-15));

  theta = {0.0};
  grad = {1.0};
  vel = {0.0};
  sgd_step(theta, grad, vel, 0.1, 0.9);
  CHECK(theta[0] == doctest::Approx(-0.1).epsilon(1e-15));
  sgd_step(theta, grad, vel, 0.1, 0.9);
  CHECK(theta[0] == doctest::Approx(-0.29).epsilon(1e-15));
  CHECK(vel[0] == doctest::Approx(-0.19).epsilon(1e-15));
}

TEST_CASE("non-finite gradient aborts without updating") {
  std::vector<double> theta{1.0, 2.0}, grad{0.1, std::nan("")}, vel{0.0, 0.0};
  try {
    sgd_step(theta, grad, vel, 0.1, 0.9, "dense1.w");
    FAIL("expected TrainingDiverged");
  } catch (const TrainingDiverged& e) {
    CHECK(std::string(e.what()).find("dense1.w") != std::string::npos);
  }
  CHECK(theta == std::vector<double>{1.0, 2.0});

  CnnParams p = init_cnn(tiny_cnn_shape(), 1);
  CnnParams g = CnnParams::zeros(p.shape);
  CnnParams v = CnnParams::zeros(p.shape);
  g.conv2_b.data[0] = INFINITY;
  const auto before = flatten(p);
  CHECK_THROWS_WITH_AS(sgd_step(p, g, v, 0.01, 0.9), doctest::Contains("conv2.b"),
                       TrainingDiverged);
  CHECK(flatten(p) == before);
}

TEST_CASE("zero input leaves conv weight gradients at zero") {
  const CnnParams p = init_cnn(CnnShape{}, 4);
  CnnParams g = CnnParams::zeros(p.shape);
  std::vector<Sample> batch{{Tensor({64, 85}), 0}, {Tensor({64, 85}), 2}};
  backward(p, batch, g);
  for (double v : g.conv1_w.data) CHECK(v == 0.0);
  for (double v : g.conv2_w.data) CHECK(v == 0.0);
  CHECK(std::any_of(g.dense2_b.data.begin(), g.dense2_b.data.end(),
                    [](double v) { return v != 0.0; }));
}

TEST_CASE("gradient is a batch mean") {
  Rng rng(11);
  const CnnParams cnn = init_cnn(tiny_cnn_shape(), 2);
  auto once = random_batch(3, 8, 8, rng);
  auto twice = once;
  twice.insert(twice.end(), once.begin(), once.end());
  CnnParams g1 = CnnParams::zeros(cnn.shape), g2 = g1;
  CHECK(backward(cnn, once, g1) == doctest::Approx(backward(cnn, twice, g2)).epsilon(1e-12));
  const auto a = flatten(g1), b = flatten(g2);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-12);

  const AstParams ast = init_ast(tiny_ast_shape(), 2);
  auto aonce = random_batch(3, 4, 8, rng);
  auto atwice = aonce;
  atwice.insert(atwice.end(), aonce.begin(), aonce.end());
  AstParams h1 = AstParams::zeros(ast.shape), h2 = h1;
  backward(ast, aonce, h1);
  backward(ast, atwice, h2);
  const auto c = flatten(h1), d = flatten(h2);
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(std::abs(c[i] - d[i]) < 1e-12);
}

TEST_CASE("backward reports loss and hits consistent with the forward pass") {
  Rng rng(12);
  const CnnParams p = init_cnn(tiny_cnn_shape(), 3);
  const auto batch = random_batch(6, 8, 8, rng);
  CnnParams g = CnnParams::zeros(p.shape);
  std::size_t correct = 0;
  const double loss = backward(p, batch, g, &correct);
  double want = 0.0;
  std::size_t hits = 0;
  for (const Sample& s : batch) {
    const Logits z = cnn_forward(p, s.x);
    want += cross_entropy(softmax(z), static_cast<RoadClass>(s.label));
    if (argmax(z) == s.label) ++hits;
  }
  CHECK(loss == doctest::Approx(want / 6.0).epsilon(1e-12));
  CHECK(correct == hits);
  CHECK_THROWS_AS(backward(p, std::span<const Sample>{}, g), InvalidArgument);
}

TEST_CASE("gradient check on tiny configurations") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const GradCheckResult c = grad_check_detailed(Arch::Cnn, seed);
    const GradCheckResult a = grad_check_detailed(Arch::Ast, seed);
    CHECK(c.max_rel_err < 1e-4);
    CHECK(a.max_rel_err < 1e-4);
    CHECK(c.checked > 0);
    CHECK(a.checked + a.skipped == AstParams::zeros(tiny_ast_shape()).parameter_count());
    CHECK(c.checked + c.skipped == CnnParams::zeros(tiny_cnn_shape()).parameter_count());
  }
  CHECK(grad_check(Arch::Cnn, 7) == grad_check(Arch::Cnn, 7));
  CHECK(grad_check(Arch::Ast, 7) == grad_check(Arch::Ast, 7));
  CHECK_THROWS_AS(grad_check(Arch::CnnInt8, 1), InvalidArgument);
}

TEST_CASE("a small step against the gradient lowers the loss") {
  std::size_t cnn_ok = 0, ast_ok = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(derive_seed(seed, 77));
    {
      CnnParams p = init_cnn(tiny_cnn_shape(), seed);
      const auto batch = random_batch(8, 8, 8, rng);
      CnnParams g = CnnParams::zeros(p.shape), v = g;
      const double before = backward(p, batch, g);
      sgd_step(p, g, v, 1e-3, 0.0);
      if (batch_loss(p, batch) < before) ++cnn_ok;
    }
    {
      AstParams p = init_ast(tiny_ast_shape(), seed);
      const auto batch = random_batch(8, 4, 8, rng);
      AstParams g = AstParams::zeros(p.shape), v = g;
      const double before = backward(p, batch, g);
      sgd_step(p, g, v, 1e-3, 0.0);
      if (batch_loss(p, batch) < before) ++ast_ok;
    }
  }
  CHECK(cnn_ok >= 19);
  CHECK(ast_ok >= 19);
}

TEST_CASE("stratified split") {
  std::vector<RoadClass> labels;
  for (RoadClass c : kRoadClasses) labels.insert(labels.end(), 20, c);
  const auto [train, val] = stratified_split(labels, 0.1, 3);
  CHECK(train.size() == 54);
  CHECK(val.size() == 6);
  std::set<std::size_t> all(train.begin(), train.end());
  all.insert(val.begin(), val.end());
  CHECK(all.size() == 60);
  for (RoadClass c : kRoadClasses) {
    CHECK(std::count_if(val.begin(), val.end(), [&](std::size_t i) { return labels[i] == c; }) ==
          2);
  }
  CHECK(stratified_split(labels, 0.1, 3) == std::make_pair(train, val));
  CHECK(stratified_split(labels, 0.1, 4) != std::make_pair(train, val));
}

TEST_CASE("majority baseline") {
  using enum RoadClass;
  const std::vector<RoadClass> balanced{RoughAsphalt, SmoothAsphalt, Other};
  CHECK(majority_baseline_accuracy(balanced) == doctest::Approx(1.0 / 3.0));
  const std::vector<RoadClass> skewed{Other, Other, SmoothAsphalt, Other};
  CHECK(majority_baseline_accuracy(skewed) == doctest::Approx(0.75));
  CHECK_THROWS_AS(majority_baseline_accuracy({}), InvalidArgument);
}

TEST_CASE("config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.learning_rate = 0.0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = TrainConfig{};
  c.momentum = 1.0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = TrainConfig{};
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = TrainConfig{};
  c.arch = Arch::CnnInt8;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
}

TEST_CASE("training rejects a single class") {
  auto examples = toy_examples(10, 1);
  examples.resize(10);
  TrainConfig c;
  c.epochs = 1;
  CHECK_THROWS_AS(train_on_examples(c, examples), InvalidArgument);
}

TEST_CASE("training learns a separable toy task deterministically") {
  const auto examples = toy_examples(30, 2);
  const auto held_out = toy_examples(10, 3);
  for (Arch arch : {Arch::Cnn, Arch::Ast}) {
    CAPTURE(arch_name(arch));
    TrainConfig c;
    c.arch = arch;
    c.epochs = 6;
    c.batch_size = 8;
    c.seed = 5;
    c.cnn_shape.conv1 = 4;
    c.cnn_shape.conv2 = 4;
    c.cnn_shape.hidden = 8;
    c.ast_shape = tiny_ast_shape();
    c.ast_shape.patch = 8;
    const TrainResult a = train_on_examples(c, examples);
    const TrainResult b = train_on_examples(c, examples);
    CHECK(a.report == b.report);
    CHECK(a.report.epochs.size() == 6);
    CHECK(a.report.best_epoch >= 1);
    CHECK(a.report.best_epoch <= 6);
    const EpochStats& best = a.report.epochs[a.report.best_epoch - 1];
    for (const EpochStats& e : a.report.epochs) CHECK(e.val_acc <= best.val_acc);
    CHECK(evaluate(a.model, held_out).accuracy >= 0.9);
    CHECK(evaluate(a.model, held_out).accuracy == evaluate(b.model, held_out).accuracy);

    std::ostringstream report;
    write_report_jsonl(report, a.report);
    const std::string text = report.str();
    CHECK(std::count(text.begin(), text.end(), '\n') == 6);
    CHECK(text.rfind("{\"epoch\":1,", 0) == 0);
  }
}
