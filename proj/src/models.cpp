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

#include "roadnoise/models.hpp"

#include <algorithm>
#include <cmath>

#include "linalg.hpp"
#include "roadnoise/error.hpp"
#include "roadnoise/rng.hpp"

namespace roadnoise {

namespace {

void fill_uniform(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : t.data) v = rng.uniform(-limit, limit);
}

// 3x3, stride 1, zero padding 1. in [cin, h, w], weights [cout, cin, 3, 3].
Tensor conv3x3(const Tensor& in, const Tensor& weights, const Tensor& bias) {
  const std::size_t cin = in.dims[0], h = in.dims[1], w = in.dims[2];
  const std::size_t cout = weights.dims[0];
  Tensor out({cout, h, w});
  for (std::size_t o = 0; o < cout; ++o) {
    double* plane = &out.data[o * h * w];
    std::fill(plane, plane + h * w, bias.data[o]);
    for (std::size_t i = 0; i < cin; ++i) {
      const double* src = &in.data[i * h * w];
      for (std::size_t ky = 0; ky < 3; ++ky) {
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const double wv = weights.data[((o * cin + i) * 3 + ky) * 3 + kx];
          const auto dy = static_cast<std::ptrdiff_t>(ky) - 1;
          const auto dx = static_cast<std::ptrdiff_t>(kx) - 1;
          const std::size_t y0 = dy < 0 ? 1 : 0, y1 = dy > 0 ? h - 1 : h;
          const std::size_t x0 = dx < 0 ? 1 : 0, x1 = dx > 0 ? w - 1 : w;
          const std::ptrdiff_t shift = dy * static_cast<std::ptrdiff_t>(w) + dx;
          const std::size_t len = x1 - x0;
          for (std::size_t y = y0; y < y1; ++y) {
            double* orow = plane + y * w + x0;
            const double* irow = src + static_cast<std::ptrdiff_t>(y * w + x0) + shift;
            for (std::size_t x = 0; x < len; ++x) orow[x] += wv * irow[x];
          }
        }
      }
    }
  }
  return out;
}

// ReLU followed by 2x2 max pooling (floor). Ties go to the first element in
// row-major order.
Tensor relu_maxpool(const Tensor& pre, std::vector<std::size_t>& arg) {
  const std::size_t c = pre.dims[0], h = pre.dims[1], w = pre.dims[2];
  const std::size_t ph = h / 2, pw = w / 2;
  Tensor out({c, ph, pw});
  arg.assign(c * ph * pw, 0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < ph; ++y) {
      for (std::size_t x = 0; x < pw; ++x) {
        std::size_t best = (ch * h + 2 * y) * w + 2 * x;
        double best_v = std::max(0.0, pre.data[best]);
        for (std::size_t a = 0; a < 2; ++a) {
          for (std::size_t b = 0; b < 2; ++b) {
            const std::size_t idx = (ch * h + 2 * y + a) * w + 2 * x + b;
            const double v = std::max(0.0, pre.data[idx]);
            if (v > best_v) {
              best_v = v;
              best = idx;
            }
          }
        }
        out.data[(ch * ph + y) * pw + x] = best_v;
        arg[(ch * ph + y) * pw + x] = best;
      }
    }
  }
  return out;
}

Tensor as_row(const Tensor& t) {
  Tensor r({1, t.size()});
  r.data = t.data;
  return r;
}

}  // namespace

std::string_view arch_name(Arch a) {
  switch (a) {
    case Arch::Cnn: return "cnn";
    case Arch::Ast: return "ast";
    case Arch::CnnInt8: return "cnn-int8";
  }
  return "unknown";
}

void softmax_inplace(std::span<double> z) {
  const double top = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - top);
    sum += v;
  }
  for (double& v : z) v /= sum;
}

Probs softmax(const Logits& logits) {
  Probs p = logits;
  softmax_inplace(p);
  return p;
}

std::size_t argmax(const Logits& values) {
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) -
                                  values.begin());
}

// ---------------------------------------------------------------------------
// CNN

CnnParams CnnParams::zeros(const CnnShape& s) {
  CnnParams p;
  p.shape = s;
  p.conv1_w = Tensor({s.conv1, 1, 3, 3});
  p.conv1_b = Tensor({s.conv1});
  p.conv2_w = Tensor({s.conv2, s.conv1, 3, 3});
  p.conv2_b = Tensor({s.conv2});
  p.dense1_w = Tensor({s.flat(), s.hidden});
  p.dense1_b = Tensor({s.hidden});
  p.dense2_w = Tensor({s.hidden, kNumClasses});
  p.dense2_b = Tensor({kNumClasses});
  return p;
}

std::size_t CnnParams::parameter_count() const {
  std::size_t n = 0;
  for_each([&n](std::string_view, const Tensor& t) { n += t.size(); });
  return n;
}

CnnParams init_cnn(const CnnShape& s, std::uint64_t seed) {
  CnnParams p = CnnParams::zeros(s);
  Rng rng(seed);
  fill_uniform(p.conv1_w, 9, s.conv1 * 9, rng);
  fill_uniform(p.conv2_w, s.conv1 * 9, s.conv2 * 9, rng);
  fill_uniform(p.dense1_w, s.flat(), s.hidden, rng);
  fill_uniform(p.dense2_w, s.hidden, kNumClasses, rng);
  return p;
}

CnnTrace cnn_forward_trace(const CnnParams& params, const Tensor& x) {
  const CnnShape& s = params.shape;
  if (x.dims.size() != 2 || x.dims[0] != s.in_h || x.dims[1] != s.in_w) {
    throw InvalidArgument("cnn input must be " + std::to_string(s.in_h) + "x" +
                          std::to_string(s.in_w));
  }
  if (params.dense1_w.dims != std::vector<std::size_t>{s.flat(), s.hidden}) {
    throw InvalidArgument("cnn parameters do not match their shape");
  }
  CnnTrace tr;
  tr.input = x;
  Tensor in({1, s.in_h, s.in_w});
  in.data = x.data;
  tr.conv1 = conv3x3(in, params.conv1_w, params.conv1_b);
  tr.pool1 = relu_maxpool(tr.conv1, tr.pool1_arg);
  tr.conv2 = conv3x3(tr.pool1, params.conv2_w, params.conv2_b);
  tr.pool2 = relu_maxpool(tr.conv2, tr.pool2_arg);
  tr.hidden_pre = detail::matmul(as_row(tr.pool2), params.dense1_w, &params.dense1_b);
  tr.hidden = tr.hidden_pre;
  for (double& v : tr.hidden.data) v = std::max(0.0, v);
  const Tensor out = detail::matmul(tr.hidden, params.dense2_w, &params.dense2_b);
  for (std::size_t k = 0; k < kNumClasses; ++k) tr.logits[k] = out.data[k];
  return tr;
}

Logits cnn_forward(const CnnParams& params, const Tensor& x) {
  return cnn_forward_trace(params, x).logits;
}

// ---------------------------------------------------------------------------
// AST

AstParams AstParams::zeros(const AstShape& s) {
  AstParams p;
  p.shape = s;
  p.patch_w = Tensor({s.patch_size(), s.dim});
  p.patch_b = Tensor({s.dim});
  p.cls = Tensor({s.dim});
  p.pos = Tensor({s.tokens(), s.dim});
  p.layers.resize(s.layers);
  for (auto& l : p.layers) {
    l.ln1_g = Tensor({s.dim});
    l.ln1_b = Tensor({s.dim});
    for (Tensor* w : {&l.wq, &l.wk, &l.wv, &l.wo}) *w = Tensor({s.dim, s.dim});
    for (Tensor* b : {&l.bq, &l.bv, &l.bo}) *b = Tensor({s.dim});
    l.ln2_g = Tensor({s.dim});
    l.ln2_b = Tensor({s.dim});
    l.mlp1_w = Tensor({s.dim, s.mlp});
    l.mlp1_b = Tensor({s.mlp});
    l.mlp2_w = Tensor({s.mlp, s.dim});
    l.mlp2_b = Tensor({s.dim});
  }
  p.lnf_g = Tensor({s.dim});
  p.lnf_b = Tensor({s.dim});
  p.head_w = Tensor({s.dim, kNumClasses});
  p.head_b = Tensor({kNumClasses});
  return p;
}

std::size_t AstParams::parameter_count() const {
  std::size_t n = 0;
  for_each([&n](std::string_view, const Tensor& t) { n += t.size(); });
  return n;
}

AstParams init_ast(const AstShape& s, std::uint64_t seed) {
  if (s.dim % s.heads != 0) throw InvalidArgument("ast dim must divide into heads");
  AstParams p = AstParams::zeros(s);
  Rng rng(seed);
  fill_uniform(p.patch_w, s.patch_size(), s.dim, rng);
  // The class token is a learned 1 x dim embedding.
  fill_uniform(p.cls, 1, s.dim, rng);
  for (auto& l : p.layers) {
    std::fill(l.ln1_g.data.begin(), l.ln1_g.data.end(), 1.0);
    std::fill(l.ln2_g.data.begin(), l.ln2_g.data.end(), 1.0);
    for (Tensor* w : {&l.wq, &l.wk, &l.wv, &l.wo}) fill_uniform(*w, s.dim, s.dim, rng);
    fill_uniform(l.mlp1_w, s.dim, s.mlp, rng);
    fill_uniform(l.mlp2_w, s.mlp, s.dim, rng);
  }
  std::fill(p.lnf_g.data.begin(), p.lnf_g.data.end(), 1.0);
  fill_uniform(p.head_w, s.dim, kNumClasses, rng);
  return p;
}

Tensor patchify(const AstShape& s, const Tensor& x) {
  Tensor patches({s.n_patches(), s.patch_size()});
  const std::size_t width = x.dims[1];
  for (std::size_t pr = 0; pr < s.patch_rows(); ++pr) {
    for (std::size_t pc = 0; pc < s.patch_cols(); ++pc) {
      double* dst = &patches.data[(pr * s.patch_cols() + pc) * s.patch_size()];
      for (std::size_t r = 0; r < s.patch; ++r) {
        for (std::size_t c = 0; c < s.patch; ++c) {
          dst[r * s.patch + c] = x.data[(pr * s.patch + r) * width + pc * s.patch + c];
        }
      }
    }
  }
  return patches;
}

AstTrace ast_forward_trace(const AstParams& params, const Tensor& x) {
  const AstShape& s = params.shape;
  if (x.dims.size() != 2 || x.dims[0] != s.n_mels || x.dims[1] < s.n_frames) {
    throw InvalidArgument("ast input must be " + std::to_string(s.n_mels) + "x>=" +
                          std::to_string(s.n_frames));
  }
  if (params.layers.size() != s.layers || params.pos.dims[0] != s.tokens()) {
    throw InvalidArgument("ast parameters do not match their shape");
  }
  const std::size_t T = s.tokens(), D = s.dim, H = s.heads, dh = s.head_dim();
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  AstTrace tr;
  tr.patches = patchify(s, x);
  const Tensor embedded = detail::matmul(tr.patches, params.patch_w, &params.patch_b);
  tr.z0 = Tensor({T, D});
  for (std::size_t c = 0; c < D; ++c) tr.z0.at(0, c) = params.cls.data[c];
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t c = 0; c < D; ++c) tr.z0.at(t, c) = embedded.at(t - 1, c);
  }
  for (std::size_t i = 0; i < tr.z0.size(); ++i) tr.z0.data[i] += params.pos.data[i];

  Tensor z = tr.z0;
  tr.layers.resize(s.layers);
  for (std::size_t li = 0; li < s.layers; ++li) {
    const AstLayer& L = params.layers[li];
    AstLayerTrace& lt = tr.layers[li];
    lt.z_in = z;
    lt.a = detail::layer_norm(z, L.ln1_g, L.ln1_b, lt.ln1);
    lt.q = detail::matmul(lt.a, L.wq, &L.bq);
    lt.k = detail::matmul(lt.a, L.wk);
    lt.v = detail::matmul(lt.a, L.wv, &L.bv);
    lt.o = Tensor({T, D});
    lt.attn.assign(H, Tensor({T, T}));
    for (std::size_t h = 0; h < H; ++h) {
      Tensor& P = lt.attn[h];
      const std::size_t off = h * dh;
      for (std::size_t i = 0; i < T; ++i) {
        for (std::size_t j = 0; j < T; ++j) {
          double acc = 0.0;
          for (std::size_t c = 0; c < dh; ++c) acc += lt.q.at(i, off + c) * lt.k.at(j, off + c);
          P.at(i, j) = acc * attn_scale;
        }
        softmax_inplace(std::span<double>(&P.data[i * T], T));
        for (std::size_t j = 0; j < T; ++j) {
          const double pij = P.at(i, j);
          for (std::size_t c = 0; c < dh; ++c) lt.o.at(i, off + c) += pij * lt.v.at(j, off + c);
        }
      }
    }
    const Tensor attn_out = detail::matmul(lt.o, L.wo, &L.bo);
    lt.z_mid = z;
    for (std::size_t i = 0; i < z.size(); ++i) lt.z_mid.data[i] += attn_out.data[i];

    lt.b = detail::layer_norm(lt.z_mid, L.ln2_g, L.ln2_b, lt.ln2);
    lt.h_pre = detail::matmul(lt.b, L.mlp1_w, &L.mlp1_b);
    lt.h = lt.h_pre;
    for (double& v : lt.h.data) v = std::max(0.0, v);
    const Tensor mlp_out = detail::matmul(lt.h, L.mlp2_w, &L.mlp2_b);
    z = lt.z_mid;
    for (std::size_t i = 0; i < z.size(); ++i) z.data[i] += mlp_out.data[i];
  }
  tr.z_out = z;
  tr.f = detail::layer_norm(z, params.lnf_g, params.lnf_b, tr.lnf);
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    double acc = params.head_b.data[k];
    for (std::size_t c = 0; c < D; ++c) acc += tr.f.at(0, c) * params.head_w.at(c, k);
    tr.logits[k] = acc;
  }
  return tr;
}

Logits ast_forward(const AstParams& params, const Tensor& x) {
  return ast_forward_trace(params, x).logits;
}

}  // namespace roadnoise
