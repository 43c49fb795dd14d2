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

#include <algorithm>
#include <cstdint>
#include <cmath>
#include <vector>

#include "linalg.hpp"
#include "roadnoise/error.hpp"
#include "roadnoise/rng.hpp"
#include "roadnoise/train.hpp"

namespace roadnoise {

namespace {

template <class Params>
std::vector<Tensor*> tensors_of(Params& p) {
  std::vector<Tensor*> out;
  p.for_each([&out](std::string_view, Tensor& t) { out.push_back(&t); });
  return out;
}

template <class Params>
std::vector<std::string> names_of(const Params& p) {
  std::vector<std::string> out;
  p.for_each([&out](std::string_view name, const Tensor&) { out.emplace_back(name); });
  return out;
}

std::size_t checked_label(const Sample& s) {
  if (s.label >= kNumClasses) throw InvalidArgument("label out of range");
  return s.label;
}

// (softmax(z) - onehot(label)) * weight, and the example's loss.
double softmax_ce_grad(const Logits& logits, std::size_t label, double weight, Tensor& d) {
  const Probs p = softmax(logits);
  d = Tensor({1, kNumClasses});
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    d.data[k] = (p[k] - (k == label ? 1.0 : 0.0)) * weight;
  }
  return cross_entropy(p, static_cast<RoadClass>(label));
}

// Gradient of conv3x3 (stride 1, zero padding 1). din may be null.
void conv3x3_backward(const Tensor& in, const Tensor& w, const Tensor& dout, Tensor& gw,
                      Tensor& gb, Tensor* din) {
  const std::size_t cin = in.dims[0], h = in.dims[1], wd = in.dims[2];
  const std::size_t cout = w.dims[0];
  for (std::size_t o = 0; o < cout; ++o) {
    const double* dplane = &dout.data[o * h * wd];
    double bsum = 0.0;
    for (std::size_t i = 0; i < h * wd; ++i) bsum += dplane[i];
    gb.data[o] += bsum;
    for (std::size_t i = 0; i < cin; ++i) {
      const double* src = &in.data[i * h * wd];
      double* dsrc = din ? &din->data[i * h * wd] : nullptr;
      for (std::size_t ky = 0; ky < 3; ++ky) {
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const std::size_t widx = ((o * cin + i) * 3 + ky) * 3 + kx;
          const double wv = w.data[widx];
          const auto dy = static_cast<std::ptrdiff_t>(ky) - 1;
          const auto dx = static_cast<std::ptrdiff_t>(kx) - 1;
          const std::size_t y0 = dy < 0 ? 1 : 0, y1 = dy > 0 ? h - 1 : h;
          const std::size_t x0 = dx < 0 ? 1 : 0, x1 = dx > 0 ? wd - 1 : wd;
          const std::ptrdiff_t shift = dy * static_cast<std::ptrdiff_t>(wd) + dx;
          const std::size_t len = x1 - x0;
          double acc = 0.0;
          for (std::size_t y = y0; y < y1; ++y) {
            const std::size_t base = y * wd + x0;
            const double* drow = dplane + base;
            const std::ptrdiff_t ibase = static_cast<std::ptrdiff_t>(base) + shift;
            const double* irow = src + ibase;
            for (std::size_t x = 0; x < len; ++x) acc += drow[x] * irow[x];
            if (dsrc) {
              double* dirow = dsrc + ibase;
              for (std::size_t x = 0; x < len; ++x) dirow[x] += wv * drow[x];
            }
          }
          gw.data[widx] += acc;
        }
      }
    }
  }
}

// Routes pooled gradients to the recorded argmax when the ReLU was active.
Tensor pool_backward(const Tensor& pre, const std::vector<std::size_t>& arg,
                     std::span<const double> dpool) {
  Tensor d(pre.dims);
  for (std::size_t o = 0; o < arg.size(); ++o) {
    if (pre.data[arg[o]] > 0.0) d.data[arg[o]] += dpool[o];
  }
  return d;
}

void check_batch(std::size_t n) {
  if (n == 0) throw InvalidArgument("batch is empty");
}

}  // namespace

double cross_entropy(const Probs& probs, RoadClass label) {
  return -std::log(std::max(probs[class_index(label)], kProbFloor));
}

// ---------------------------------------------------------------------------
// CNN

double backward(const CnnParams& params, std::span<const Sample> batch, CnnParams& g,
                std::size_t* correct) {
  check_batch(batch.size());
  if (correct) *correct = 0;
  g = CnnParams::zeros(params.shape);
  const double weight = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (const Sample& s : batch) {
    const CnnTrace tr = cnn_forward_trace(params, s.x);
    Tensor dlog;
    loss += softmax_ce_grad(tr.logits, checked_label(s), weight, dlog);
    if (correct && argmax(tr.logits) == s.label) ++*correct;

    detail::accumulate_tn(tr.hidden, dlog, g.dense2_w);
    detail::accumulate_colsum(dlog, g.dense2_b);
    Tensor dh = detail::matmul_nt(dlog, params.dense2_w);
    for (std::size_t i = 0; i < dh.size(); ++i) {
      if (tr.hidden_pre.data[i] <= 0.0) dh.data[i] = 0.0;
    }

    Tensor flat({1, tr.pool2.size()});
    flat.data = tr.pool2.data;
    detail::accumulate_tn(flat, dh, g.dense1_w);
    detail::accumulate_colsum(dh, g.dense1_b);
    const Tensor dflat = detail::matmul_nt(dh, params.dense1_w);

    const Tensor dconv2 = pool_backward(tr.conv2, tr.pool2_arg, dflat.data);
    Tensor dpool1(tr.pool1.dims);
    conv3x3_backward(tr.pool1, params.conv2_w, dconv2, g.conv2_w, g.conv2_b, &dpool1);

    const Tensor dconv1 = pool_backward(tr.conv1, tr.pool1_arg, dpool1.data);
    Tensor in({1, tr.input.dims[0], tr.input.dims[1]});
    in.data = tr.input.data;
    conv3x3_backward(in, params.conv1_w, dconv1, g.conv1_w, g.conv1_b, nullptr);
  }
  return loss * weight;
}

double batch_loss(const CnnParams& params, std::span<const Sample> batch) {
  check_batch(batch.size());
  double loss = 0.0;
  for (const Sample& s : batch) {
    loss += cross_entropy(softmax(cnn_forward(params, s.x)),
                          static_cast<RoadClass>(checked_label(s)));
  }
  return loss / static_cast<double>(batch.size());
}

// ---------------------------------------------------------------------------
// AST

double backward(const AstParams& params, std::span<const Sample> batch, AstParams& g,
                std::size_t* correct) {
  check_batch(batch.size());
  if (correct) *correct = 0;
  g = AstParams::zeros(params.shape);
  const AstShape& s = params.shape;
  const std::size_t T = s.tokens(), D = s.dim, H = s.heads, dh = s.head_dim();
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const double weight = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;

  for (const Sample& smp : batch) {
    const AstTrace tr = ast_forward_trace(params, smp.x);
    Tensor dlog;
    loss += softmax_ce_grad(tr.logits, checked_label(smp), weight, dlog);
    if (correct && argmax(tr.logits) == smp.label) ++*correct;

    // Head reads only the class token row.
    Tensor df({T, D});
    for (std::size_t c = 0; c < D; ++c) {
      double acc = 0.0;
      for (std::size_t k = 0; k < kNumClasses; ++k) {
        g.head_w.at(c, k) += tr.f.at(0, c) * dlog.data[k];
        acc += params.head_w.at(c, k) * dlog.data[k];
      }
      df.at(0, c) = acc;
    }
    for (std::size_t k = 0; k < kNumClasses; ++k) g.head_b.data[k] += dlog.data[k];
    Tensor dz = detail::layer_norm_backward(df, params.lnf_g, tr.lnf, g.lnf_g, g.lnf_b);

    for (std::size_t li = s.layers; li-- > 0;) {
      const AstLayer& L = params.layers[li];
      AstLayer& G = g.layers[li];
      const AstLayerTrace& lt = tr.layers[li];

      // MLP residual branch.
      detail::accumulate_tn(lt.h, dz, G.mlp2_w);
      detail::accumulate_colsum(dz, G.mlp2_b);
      Tensor dhid = detail::matmul_nt(dz, L.mlp2_w);
      for (std::size_t i = 0; i < dhid.size(); ++i) {
        if (lt.h_pre.data[i] <= 0.0) dhid.data[i] = 0.0;
      }
      detail::accumulate_tn(lt.b, dhid, G.mlp1_w);
      detail::accumulate_colsum(dhid, G.mlp1_b);
      const Tensor db = detail::matmul_nt(dhid, L.mlp1_w);
      Tensor dmid = detail::layer_norm_backward(db, L.ln2_g, lt.ln2, G.ln2_g, G.ln2_b);
      for (std::size_t i = 0; i < dmid.size(); ++i) dmid.data[i] += dz.data[i];

      // Attention residual branch.
      detail::accumulate_tn(lt.o, dmid, G.wo);
      detail::accumulate_colsum(dmid, G.bo);
      const Tensor dout = detail::matmul_nt(dmid, L.wo);
      Tensor dq({T, D}), dk({T, D}), dv({T, D});
      std::vector<double> dp(T);
      for (std::size_t h = 0; h < H; ++h) {
        const Tensor& P = lt.attn[h];
        const std::size_t off = h * dh;
        for (std::size_t i = 0; i < T; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < T; ++j) {
            double acc = 0.0;
            for (std::size_t c = 0; c < dh; ++c) {
              acc += dout.at(i, off + c) * lt.v.at(j, off + c);
              dv.at(j, off + c) += P.at(i, j) * dout.at(i, off + c);
            }
            dp[j] = acc;
            dot += P.at(i, j) * acc;
          }
          for (std::size_t j = 0; j < T; ++j) {
            const double ds = P.at(i, j) * (dp[j] - dot) * attn_scale;
            if (ds == 0.0) continue;
            for (std::size_t c = 0; c < dh; ++c) {
              dq.at(i, off + c) += ds * lt.k.at(j, off + c);
              dk.at(j, off + c) += ds * lt.q.at(i, off + c);
            }
          }
        }
      }
      detail::accumulate_tn(lt.a, dq, G.wq);
      detail::accumulate_colsum(dq, G.bq);
      detail::accumulate_tn(lt.a, dk, G.wk);
      detail::accumulate_tn(lt.a, dv, G.wv);
      detail::accumulate_colsum(dv, G.bv);
      Tensor da = detail::matmul_nt(dq, L.wq);
      const Tensor dak = detail::matmul_nt(dk, L.wk);
      const Tensor dav = detail::matmul_nt(dv, L.wv);
      for (std::size_t i = 0; i < da.size(); ++i) da.data[i] += dak.data[i] + dav.data[i];
      dz = detail::layer_norm_backward(da, L.ln1_g, lt.ln1, G.ln1_g, G.ln1_b);
      for (std::size_t i = 0; i < dz.size(); ++i) dz.data[i] += dmid.data[i];
    }

    for (std::size_t i = 0; i < dz.size(); ++i) g.pos.data[i] += dz.data[i];
    for (std::size_t c = 0; c < D; ++c) g.cls.data[c] += dz.at(0, c);
    Tensor demb({T - 1, D});
    std::copy(dz.data.begin() + static_cast<std::ptrdiff_t>(D), dz.data.end(),
              demb.data.begin());
    detail::accumulate_tn(tr.patches, demb, g.patch_w);
    detail::accumulate_colsum(demb, g.patch_b);
  }
  return loss * weight;
}

double batch_loss(const AstParams& params, std::span<const Sample> batch) {
  check_batch(batch.size());
  double loss = 0.0;
  for (const Sample& s : batch) {
    loss += cross_entropy(softmax(ast_forward(params, s.x)),
                          static_cast<RoadClass>(checked_label(s)));
  }
  return loss / static_cast<double>(batch.size());
}

// ---------------------------------------------------------------------------
// Gradient check

CnnShape tiny_cnn_shape() { return CnnShape{8, 8, 2, 2, 4}; }

AstShape tiny_ast_shape() { return AstShape{4, 8, 4, 8, 2, 1, 16}; }

namespace {

// Discrete state of every ReLU and max-pool in the forward pass. A
// finite-difference stencil that changes it straddles a kink.
std::vector<std::uint8_t> activation_pattern(const CnnParams& p, const Tensor& x) {
  const CnnTrace tr = cnn_forward_trace(p, x);
  std::vector<std::uint8_t> out;
  auto pool = [&out](const Tensor& pre, const std::vector<std::size_t>& arg) {
    for (std::size_t a : arg) {
      out.push_back(static_cast<std::uint8_t>(a & 0xff));
      out.push_back(static_cast<std::uint8_t>((a >> 8) & 0xff));
      out.push_back(pre.data[a] > 0.0);
    }
  };
  pool(tr.conv1, tr.pool1_arg);
  pool(tr.conv2, tr.pool2_arg);
  for (double v : tr.hidden_pre.data) out.push_back(v > 0.0);
  return out;
}

std::vector<std::uint8_t> activation_pattern(const AstParams& p, const Tensor& x) {
  const AstTrace tr = ast_forward_trace(p, x);
  std::vector<std::uint8_t> out;
  for (const auto& lt : tr.layers) {
    for (double v : lt.h_pre.data) out.push_back(v > 0.0);
  }
  return out;
}

template <class Params>
std::vector<std::uint8_t> batch_pattern(const Params& p, std::span<const Sample> batch) {
  std::vector<std::uint8_t> out;
  for (const Sample& s : batch) {
    const auto one = activation_pattern(p, s.x);
    out.insert(out.end(), one.begin(), one.end());
  }
  return out;
}

template <class Params>
GradCheckResult grad_check_impl(Params params, std::span<const Sample> batch, Rng& rng) {
  // Move every parameter off its init value so that biases, gains and the
  // class token all carry a generic gradient.
  for (Tensor* t : tensors_of(params)) {
    for (double& v : t->data) v += rng.uniform(-0.1, 0.1);
  }
  Params grads;
  backward(params, batch, grads);
  const auto analytic = tensors_of(grads);
  const auto theta = tensors_of(params);
  // Fourth-order central stencil with step h.
  constexpr double h = 1e-4;
  GradCheckResult r;
  for (std::size_t ti = 0; ti < theta.size(); ++ti) {
    for (std::size_t i = 0; i < theta[ti]->size(); ++i) {
      double& w = theta[ti]->data[i];
      const double saved = w;
      w = saved + h;
      const double up = batch_loss(params, batch);
      const auto pattern_up = batch_pattern(params, batch);
      w = saved - h;
      const double down = batch_loss(params, batch);
      const auto pattern_down = batch_pattern(params, batch);
      w = saved + 2.0 * h;
      const double up2 = batch_loss(params, batch);
      const auto pattern_up2 = batch_pattern(params, batch);
      w = saved - 2.0 * h;
      const double down2 = batch_loss(params, batch);
      const auto pattern_down2 = batch_pattern(params, batch);
      w = saved;
      if (pattern_up != pattern_down || pattern_up2 != pattern_up ||
          pattern_down2 != pattern_up) {
        ++r.skipped;
        continue;
      }
      const double numeric = (8.0 * (up - down) - (up2 - down2)) / (12.0 * h);
      const double a = analytic[ti]->data[i];
      const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      r.max_rel_err = std::max(r.max_rel_err, rel);
      ++r.checked;
    }
  }
  return r;
}

std::vector<Sample> random_batch(std::size_t rows, std::size_t cols, Rng& rng) {
  std::vector<Sample> batch;
  for (std::size_t i = 0; i < 4; ++i) {
    Sample s{Tensor({rows, cols}), i % kNumClasses};
    for (double& v : s.x.data) v = rng.gaussian();
    batch.push_back(std::move(s));
  }
  return batch;
}

}  // namespace

GradCheckResult grad_check_detailed(Arch arch, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 1));
  switch (arch) {
    case Arch::Cnn: {
      const CnnShape s = tiny_cnn_shape();
      const auto batch = random_batch(s.in_h, s.in_w, rng);
      return grad_check_impl(init_cnn(s, seed), batch, rng);
    }
    case Arch::Ast: {
      const AstShape s = tiny_ast_shape();
      const auto batch = random_batch(s.n_mels, s.n_frames, rng);
      return grad_check_impl(init_ast(s, seed), batch, rng);
    }
    case Arch::CnnInt8:
      break;
  }
  throw InvalidArgument("grad_check supports cnn and ast only");
}

double grad_check(Arch arch, std::uint64_t seed) {
  return grad_check_detailed(arch, seed).max_rel_err;
}

// ---------------------------------------------------------------------------
// SGD

void sgd_step(std::span<double> theta, std::span<const double> grad,
              std::span<double> velocity, double lr, double momentum,
              const std::string& name) {
  if (theta.size() != grad.size() || theta.size() != velocity.size()) {
    throw InvalidArgument("sgd_step: size mismatch for " + name);
  }
  for (double g : grad) {
    if (!std::isfinite(g)) throw TrainingDiverged("non-finite gradient in " + name);
  }
  for (std::size_t i = 0; i < theta.size(); ++i) {
    velocity[i] = momentum * velocity[i] - lr * grad[i];
    theta[i] += velocity[i];
  }
}

namespace {

template <class Params>
void sgd_step_all(Params& params, const Params& grads, Params& velocity, double lr,
                  double momentum) {
  const auto p = tensors_of(params);
  const auto g = tensors_of(const_cast<Params&>(grads));
  const auto v = tensors_of(velocity);
  const auto names = names_of(params);
  if (p.size() != g.size() || p.size() != v.size()) {
    throw InvalidArgument("sgd_step: parameter sets differ");
  }
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (double x : g[i]->data) {
      if (!std::isfinite(x)) throw TrainingDiverged("non-finite gradient in " + names[i]);
    }
  }
  for (std::size_t i = 0; i < p.size(); ++i) {
    sgd_step(p[i]->data, g[i]->data, v[i]->data, lr, momentum, names[i]);
  }
}

}  // namespace

void sgd_step(CnnParams& params, const CnnParams& grads, CnnParams& velocity, double lr,
              double momentum) {
  sgd_step_all(params, grads, velocity, lr, momentum);
}

void sgd_step(AstParams& params, const AstParams& grads, AstParams& velocity, double lr,
              double momentum) {
  sgd_step_all(params, grads, velocity, lr, momentum);
}

}  // namespace roadnoise
