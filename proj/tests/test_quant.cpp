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

#include <cmath>
#include <limits>

#include "roadnoise/error.hpp"
#include "roadnoise/model_file.hpp"
#include "roadnoise/quant.hpp"
#include "roadnoise/rng.hpp"

using namespace roadnoise;

namespace {

Tensor vec(std::vector<double> v) {
  Tensor t({v.size()});
  t.data = std::move(v);
  return t;
}

std::vector<Tensor> random_inputs(std::size_t n, const CnnShape& s, Rng& rng) {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor x({s.in_h, s.in_w});
    for (double& v : x.data) v = rng.gaussian();
    out.push_back(std::move(x));
  }
  return out;
}

}  // namespace

TEST_CASE("calibrate examples") {
  const std::vector<Tensor> sym{vec({-1.0, 0.25, 1.0})};
  const QuantParams q = calibrate(sym);
  CHECK(q.scale == doctest::Approx(2.0 / 255.0).epsilon(1e-15));
  // -128 - (-1) / (2/255) = -0.5 rounds away from zero.
  CHECK(q.zero_point == -1);

  const std::vector<Tensor> relu{vec({0.0, 3.0}), vec({5.1})};
  const QuantParams r = calibrate(relu);
  CHECK(r.scale == doctest::Approx(0.02).epsilon(1e-12));
  CHECK(r.zero_point == -128);

  const std::vector<Tensor> flat{vec({0.0, 0.0})};
  const QuantParams z = calibrate(flat);
  CHECK(z.scale == doctest::Approx(1e-8 / 255.0).epsilon(1e-12));
  CHECK(z.zero_point == -128);
  CHECK(quantize_value(0.0, z) == -128);

  // Ranges are widened to contain zero.
  const std::vector<Tensor> negative{vec({-10.0, -5.0})};
  CHECK(calibrate(negative).scale == doctest::Approx(10.0 / 255.0).epsilon(1e-12));
  CHECK(calibrate(negative).zero_point == 127);
  const std::vector<Tensor> positive{vec({2.0, 5.1})};
  CHECK(calibrate(positive).scale == doctest::Approx(0.02).epsilon(1e-12));
  CHECK(calibrate(positive).zero_point == -128);

  CHECK_THROWS_AS(calibrate(std::span<const Tensor>{}), InvalidArgument);
  const std::vector<Tensor> bad{vec({0.0, std::nan("")})};
  CHECK_THROWS_AS(calibrate(bad), InvalidArgument);
}

TEST_CASE("quantize and dequantize examples") {
  const QuantParams q{0.1, 3};
  QuantizedTensor t{{1}, {13}, q};
  CHECK(dequantize(t).data[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(quantize_value(1.0, q) == 13);
  CHECK(quantize_value(0.05, q) == 4);    // 0.5 rounds away from zero
  CHECK(quantize_value(-0.05, q) == 2);
  CHECK(quantize_value(1e9, q) == 127);
  CHECK(quantize_value(-1e9, q) == -128);
}

TEST_CASE("round trip error stays within half a step") {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    double lo = rng.uniform(-10.0, 10.0);
    double hi = lo + rng.uniform(0.01, 20.0);
    Tensor t({500});
    for (double& v : t.data) v = rng.uniform(lo, hi);
    t.data[0] = lo;
    t.data[1] = hi;
    const std::vector<Tensor> one{t};
    const QuantParams q = calibrate(one);
    const QuantizedTensor qt = quantize_tensor(t, q);
    const Tensor back = dequantize(qt);
    for (std::size_t i = 0; i < t.size(); ++i) {
      CHECK(std::abs(back.data[i] - t.data[i]) <= q.scale / 2 * (1 + 1e-9));
    }
    CHECK(quantize_tensor(back, q) == qt);
    CHECK(dequantize(quantize_tensor(back, q)) == back);
  }
}

TEST_CASE("dequantize is a fixed point after one round trip") {
  Rng rng(22);
  for (int trial = 0; trial < 100; ++trial) {
    const QuantParams q{rng.uniform(1e-4, 2.0),
                        static_cast<std::int32_t>(rng.below(256)) - 128};
    QuantizedTensor t{{64}, std::vector<std::int8_t>(64), q};
    for (auto& v : t.data) v = static_cast<std::int8_t>(static_cast<int>(rng.below(256)) - 128);
    const Tensor d = dequantize(t);
    CHECK(dequantize(quantize_tensor(d, q)) == d);
  }
  QuantizedTensor zp{{3}, {4, 4, 4}, QuantParams{0.5, 4}};
  for (double v : dequantize(zp).data) CHECK(v == 0.0);
}

TEST_CASE("quantization is monotone") {
  const QuantParams q{0.037, -5};
  std::int8_t prev = quantize_value(-100.0, q);
  for (double r = -100.0; r <= 100.0; r += 0.01) {
    const std::int8_t cur = quantize_value(r, q);
    CHECK(cur >= prev);
    prev = cur;
  }
}

TEST_CASE("symmetric weight params") {
  const QuantParams w = symmetric_weight_params(vec({0.5, -1.27, 0.3}));
  CHECK(w.zero_point == 0);
  CHECK(w.scale == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(quantize_value(-1.27, w) == -127);
  CHECK(symmetric_weight_params(vec({0.0, 0.0})).scale == 1.0);
}

TEST_CASE("quantized cnn tracks the float cnn") {
  const CnnShape s{16, 16, 4, 8, 16};
  const CnnParams p = init_cnn(s, 3);
  Rng rng(5);
  const auto calib = random_inputs(64, s, rng);
  const QuantizedCnn q = quantize_model(p, calib);
  CHECK(q.shape == s);
  CHECK(q.conv1.weights.qparams.zero_point == 0);
  CHECK(q.conv1.weights.dims == p.conv1_w.dims);
  CHECK(q.dense1.bias.size() == s.hidden);

  const auto test = random_inputs(200, s, rng);
  std::size_t agree = 0;
  double worst = 0.0;
  for (const Tensor& x : test) {
    const Logits f = cnn_forward(p, x);
    const Logits i = quantized_forward(q, x);
    if (argmax(f) == argmax(i)) ++agree;
    for (std::size_t k = 0; k < 3; ++k) worst = std::max(worst, std::abs(f[k] - i[k]));
  }
  CHECK(agree >= 180);
  const Logits fz = cnn_forward(p, Tensor({16, 16}));
  const Logits iz = quantized_forward(q, Tensor({16, 16}));
  for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(fz[k] - iz[k]) <= q.act_dense2->scale);
  const double logit_range = q.act_dense2->scale * 255.0;
  CHECK(worst < 0.1 * logit_range);
}

TEST_CASE("quantize_model needs enough calibration data") {
  const CnnShape s{8, 8, 2, 2, 4};
  const CnnParams p = init_cnn(s, 1);
  Rng rng(2);
  const auto few = random_inputs(31, s, rng);
  CHECK_THROWS_AS(quantize_model(p, few), InvalidArgument);
  const auto enough = random_inputs(32, s, rng);
  CHECK_NOTHROW(quantize_model(p, enough));
}

TEST_CASE("missing calibration is an invalid model") {
  const CnnShape s{8, 8, 2, 2, 4};
  Rng rng(3);
  QuantizedCnn q = quantize_model(init_cnn(s, 1), random_inputs(32, s, rng));
  const Tensor x({8, 8});
  CHECK_NOTHROW(quantized_forward(q, x));
  QuantizedCnn missing = q;
  missing.act_conv2.reset();
  CHECK_THROWS_WITH_AS(quantized_forward(missing, x), doctest::Contains("conv2"), InvalidModel);
  CHECK_THROWS_AS(quantized_forward(q, Tensor({8, 9})), InvalidArgument);
}

TEST_CASE("accumulator bound") {
  const CnnShape s{64, 85, 8, 16, 32};
  Rng rng(4);
  std::vector<Tensor> calib;
  for (int i = 0; i < 32; ++i) {
    Tensor x({64, 85});
    for (double& v : x.data) v = rng.gaussian();
    calib.push_back(std::move(x));
  }
  const QuantizedCnn q = quantize_model(init_cnn(s, 9), calib);
  const std::int64_t worst = worst_case_accumulator(q);
  CHECK(worst >= std::int64_t{5376} * 255 * 127);
  CHECK(worst < std::numeric_limits<std::int32_t>::max());

  QuantizedCnn huge = q;
  huge.dense1.weights.dims = {70000, 32};
  CHECK(worst_case_accumulator(huge) > std::numeric_limits<std::int32_t>::max());
  CHECK_THROWS_AS(quantized_forward(huge, calib[0]), InvalidModel);
}

TEST_CASE("quantized footprint is under 30% of float") {
  const CnnShape s;
  Rng rng(6);
  std::vector<Tensor> calib;
  for (int i = 0; i < 32; ++i) {
    Tensor x({64, 85});
    for (double& v : x.data) v = rng.gaussian();
    calib.push_back(std::move(x));
  }
  const CnnParams p = init_cnn(s, 1);
  Standardizer norm{std::vector<double>(64, 0.0), std::vector<double>(64, 1.0)};
  const Model f{p, norm};
  const Model q{quantize_model(p, calib), norm};
  const double ratio =
      static_cast<double>(memory_footprint(q)) / static_cast<double>(memory_footprint(f));
  CHECK(ratio < 0.30);
  CHECK(memory_footprint(f) < 50u * 1000u * 1000u);
}
