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

#include "roadnoise/error.hpp"
#include "roadnoise/models.hpp"
#include "roadnoise/rng.hpp"

using namespace roadnoise;

namespace {

Tensor random_input(std::size_t h, std::size_t w, Rng& rng) {
  Tensor x({h, w});
  for (double& v : x.data) v = rng.gaussian();
  return x;
}

template <class Params>
void jitter(Params& p, Rng& rng, double amount) {
  p.for_each([&](std::string_view, Tensor& t) {
    for (double& v : t.data) v += rng.uniform(-amount, amount);
  });
}

}  // namespace

TEST_CASE("softmax examples") {
  const Probs u = softmax({0.0, 0.0, 0.0});
  for (double p : u) CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const Probs a = softmax({std::log(1.0), std::log(2.0), std::log(3.0)});
  CHECK(std::abs(a[0] - 1.0 / 6.0) < 1e-12);
  CHECK(std::abs(a[1] - 2.0 / 6.0) < 1e-12);
  CHECK(std::abs(a[2] - 3.0 / 6.0) < 1e-12);
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const Logits z{rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(-20, 20)};
    const double c = rng.uniform(-100, 100);
    const Probs p = softmax(z);
    const Probs q = softmax({z[0] + c, z[1] + c, z[2] + c});
    CHECK(std::abs(p[0] + p[1] + p[2] - 1.0) < 1e-12);
    for (int k = 0; k < 3; ++k) CHECK(std::abs(p[k] - q[k]) < 1e-12);
  }
  const double d = 1.7;
  const Probs s1 = softmax({5.0, 5.0 + d, 5.0});
  const Probs s2 = softmax({0.0, d, 0.0});
  for (int k = 0; k < 3; ++k) CHECK(std::abs(s1[k] - s2[k]) < 1e-12);
  CHECK(argmax({0.1, 0.5, 0.5}) == 1);
}

TEST_CASE("cnn parameter layout") {
  const CnnShape s;
  CHECK(s.pool1_h() == 32);
  CHECK(s.pool1_w() == 42);
  CHECK(s.pool2_h() == 16);
  CHECK(s.pool2_w() == 21);
  CHECK(s.flat() == 5376);
  const CnnParams p = init_cnn(s, 3);
  CHECK(p.parameter_count() == 173411);
  CHECK(p.dense1_w.dims == std::vector<std::size_t>{5376, 32});
  const double bound = std::sqrt(6.0 / (9.0 + 72.0));
  for (double v : p.conv1_w.data) CHECK(std::abs(v) <= bound);
  for (const Tensor* b : {&p.conv1_b, &p.conv2_b, &p.dense1_b, &p.dense2_b}) {
    for (double v : b->data) CHECK(v == 0.0);
  }
  CHECK(init_cnn(s, 3).conv2_w == p.conv2_w);
  CHECK(init_cnn(s, 4).conv2_w != p.conv2_w);
  std::vector<std::string> names;
  p.for_each([&names](std::string_view n, const Tensor&) { names.emplace_back(n); });
  CHECK(names == std::vector<std::string>{"conv1.w", "conv1.b", "conv2.w", "conv2.b", "dense1.w",
                                          "dense1.b", "dense2.w", "dense2.b"});
}

TEST_CASE("cnn forward shapes and zero input") {
  const CnnParams p = init_cnn(CnnShape{}, 1);
  const CnnTrace tr = cnn_forward_trace(p, Tensor({64, 85}));
  CHECK(tr.pool1.dims == std::vector<std::size_t>{8, 32, 42});
  CHECK(tr.pool2.dims == std::vector<std::size_t>{16, 16, 21});
  for (double z : tr.logits) CHECK(z == 0.0);
  CHECK_THROWS_AS(cnn_forward(p, Tensor({64, 80})), InvalidArgument);
  CHECK_THROWS_AS(cnn_forward(p, Tensor({85, 64})), InvalidArgument);
}

TEST_CASE("cnn relu chain is positively homogeneous") {
  Rng rng(5);
  const CnnParams p = init_cnn(CnnShape{}, 2);
  const Tensor x = random_input(64, 85, rng);
  const CnnTrace base = cnn_forward_trace(p, x);

  CnnParams doubled = p;
  for (double& v : doubled.conv1_w.data) v *= 2.0;
  const CnnTrace d = cnn_forward_trace(doubled, x);
  for (std::size_t i = 0; i < base.hidden.size(); ++i) {
    CHECK(d.hidden.data[i] == doctest::Approx(2.0 * base.hidden.data[i]).epsilon(1e-12));
  }
  CHECK(argmax(d.logits) == argmax(base.logits));

  const double lambda = 1.7;
  CnnParams scaled = p;
  for (double& v : scaled.conv1_w.data) v *= lambda;
  for (double& v : scaled.conv2_w.data) v *= lambda;
  const CnnTrace s = cnn_forward_trace(scaled, x);
  double worst = 0.0;
  for (std::size_t i = 0; i < base.pool2.size(); ++i) {
    const double want = lambda * lambda * base.pool2.data[i];
    if (want != 0.0) worst = std::max(worst, std::abs(s.pool2.data[i] - want) / std::abs(want));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("cnn max pool takes the first of tied maxima") {
  CnnShape s{4, 4, 1, 1, 2};
  CnnParams p = CnnParams::zeros(s);
  p.conv1_w.data[4] = 1.0;  // identity kernel
  Tensor x({4, 4}, 1.0);
  const CnnTrace tr = cnn_forward_trace(p, x);
  CHECK(tr.pool1_arg == std::vector<std::size_t>{0, 2, 8, 10});
}

TEST_CASE("ast parameter layout") {
  const AstShape s;
  CHECK(s.patch_rows() == 4);
  CHECK(s.patch_cols() == 5);
  CHECK(s.tokens() == 21);
  CHECK(s.head_dim() == 16);
  const AstParams p = init_ast(s, 9);
  CHECK(p.patch_w.dims == std::vector<std::size_t>{256, 32});
  CHECK(p.pos.dims == std::vector<std::size_t>{21, 32});
  for (double v : p.pos.data) CHECK(v == 0.0);
  for (const auto& l : p.layers) {
    for (double v : l.ln1_g.data) CHECK(v == 1.0);
    for (double v : l.ln2_b.data) CHECK(v == 0.0);
    for (double v : l.bq.data) CHECK(v == 0.0);
  }
  CHECK(init_ast(s, 9).layers[1].wv == p.layers[1].wv);
  AstShape bad = s;
  bad.heads = 3;
  CHECK_THROWS_AS(init_ast(bad, 1), InvalidArgument);
}

TEST_CASE("ast attention rows are distributions") {
  Rng rng(8);
  AstParams p = init_ast(AstShape{}, 4);
  jitter(p, rng, 0.2);
  for (int trial = 0; trial < 5; ++trial) {
    const AstTrace tr = ast_forward_trace(p, random_input(64, 85, rng));
    for (const auto& lt : tr.layers) {
      for (const Tensor& a : lt.attn) {
        for (std::size_t i = 0; i < 21; ++i) {
          double sum = 0.0;
          for (std::size_t j = 0; j < 21; ++j) {
            CHECK(a.at(i, j) >= 0.0);
            sum += a.at(i, j);
          }
          CHECK(std::abs(sum - 1.0) < 1e-6);
        }
      }
    }
  }
}

TEST_CASE("ast crops frames beyond n_frames") {
  Rng rng(2);
  const AstParams p = init_ast(AstShape{}, 1);
  const Tensor x = random_input(64, 85, rng);
  Tensor crop({64, 80});
  for (std::size_t r = 0; r < 64; ++r) {
    for (std::size_t c = 0; c < 80; ++c) crop.at(r, c) = x.at(r, c);
  }
  CHECK(ast_forward(p, x) == ast_forward(p, crop));
  CHECK_THROWS_AS(ast_forward(p, Tensor({64, 79})), InvalidArgument);
  CHECK_THROWS_AS(ast_forward(p, Tensor({32, 85})), InvalidArgument);
}

TEST_CASE("ast is permutation invariant without positions") {
  Rng rng(3);
  AstParams p = init_ast(AstShape{}, 6);
  jitter(p, rng, 0.1);
  std::fill(p.pos.data.begin(), p.pos.data.end(), 0.0);
  const Tensor x = random_input(64, 80, rng);

  // Swap patch blocks according to a random permutation of the 20 patches.
  std::vector<std::size_t> perm(20);
  for (std::size_t i = 0; i < 20; ++i) perm[i] = i;
  for (std::size_t i = 20; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  Tensor y({64, 80});
  for (std::size_t dst = 0; dst < 20; ++dst) {
    const std::size_t src = perm[dst];
    for (std::size_t r = 0; r < 16; ++r) {
      for (std::size_t c = 0; c < 16; ++c) {
        y.at((dst / 5) * 16 + r, (dst % 5) * 16 + c) = x.at((src / 5) * 16 + r, (src % 5) * 16 + c);
      }
    }
  }
  const AstTrace a = ast_forward_trace(p, x);
  const AstTrace b = ast_forward_trace(p, y);
  for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(a.logits[k] - b.logits[k]) < 1e-10);
  // Patch token outputs move with their patches.
  for (std::size_t dst = 0; dst < 20; ++dst) {
    for (std::size_t c = 0; c < 32; ++c) {
      CHECK(std::abs(b.z_out.at(dst + 1, c) - a.z_out.at(perm[dst] + 1, c)) < 1e-10);
    }
  }
}

TEST_CASE("ast zero query/key weights give uniform attention") {
  Rng rng(4);
  AstParams p = init_ast(AstShape{}, 2);
  jitter(p, rng, 0.1);
  for (auto& l : p.layers) {
    std::fill(l.wq.data.begin(), l.wq.data.end(), 0.0);
    std::fill(l.wk.data.begin(), l.wk.data.end(), 0.0);
  }
  const AstTrace tr = ast_forward_trace(p, random_input(64, 85, rng));
  for (const auto& lt : tr.layers) {
    for (const Tensor& a : lt.attn) {
      for (double v : a.data) CHECK(std::abs(v - 1.0 / 21.0) < 1e-12);
    }
  }
}

TEST_CASE("patchify ordering") {
  AstShape s{4, 8, 4, 8, 2, 1, 16};
  Tensor x({4, 8});
  for (std::size_t i = 0; i < x.size(); ++i) x.data[i] = static_cast<double>(i);
  const Tensor p = patchify(s, x);
  CHECK(p.dims == std::vector<std::size_t>{2, 16});
  CHECK(p.at(0, 0) == 0.0);
  CHECK(p.at(0, 5) == 9.0);  // row 1, col 1
  CHECK(p.at(1, 0) == 4.0);
  CHECK(p.at(1, 15) == 31.0);
}
