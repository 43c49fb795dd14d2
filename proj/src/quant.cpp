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

#include "roadnoise/quant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "roadnoise/error.hpp"

namespace roadnoise {

namespace {

constexpr double kMinRange = 1e-8;

std::int8_t saturate_i8(double v) {
  return static_cast<std::int8_t>(std::clamp(v, -128.0, 127.0));
}

std::int32_t quantize_bias(double b, double scale) {
  const double q = std::round(b / scale);
  return static_cast<std::int32_t>(std::clamp(
      q, static_cast<double>(std::numeric_limits<std::int32_t>::min()),
      static_cast<double>(std::numeric_limits<std::int32_t>::max())));
}

QuantizedLayer quantize_layer(const Tensor& w, const Tensor& b, double input_scale) {
  QuantizedLayer layer;
  layer.weights = quantize_tensor(w, symmetric_weight_params(w));
  const double bias_scale = layer.weights.qparams.scale * input_scale;
  layer.bias.reserve(b.size());
  for (double v : b.data) layer.bias.push_back(quantize_bias(v, bias_scale));
  return layer;
}

std::int8_t requantize(std::int32_t acc, double multiplier, std::int32_t zp) {
  return saturate_i8(std::round(static_cast<double>(acc) * multiplier) + zp);
}

struct QTensor3 {
  std::size_t c, h, w;
  std::vector<std::int8_t> data;
};

// Integer 3x3 conv (pad 1) + requantize + integer ReLU.
QTensor3 qconv3x3(const QTensor3& in, std::int32_t in_zp, const QuantizedLayer& layer,
                  double multiplier, std::int32_t out_zp) {
  const std::size_t cin = in.c, h = in.h, w = in.w;
  const std::size_t cout = layer.weights.dims[0];
  // Subtract the input zero point once; padded taps contribute exactly 0.
  std::vector<std::int32_t> centered(in.data.size());
  for (std::size_t i = 0; i < centered.size(); ++i) centered[i] = in.data[i] - in_zp;

  QTensor3 out{cout, h, w, std::vector<std::int8_t>(cout * h * w)};
  std::vector<std::int32_t> acc(h * w);
  for (std::size_t o = 0; o < cout; ++o) {
    std::fill(acc.begin(), acc.end(), layer.bias[o]);
    for (std::size_t i = 0; i < cin; ++i) {
      const std::int32_t* src = &centered[i * h * w];
      for (std::size_t ky = 0; ky < 3; ++ky) {
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const std::int32_t wv = layer.weights.data[((o * cin + i) * 3 + ky) * 3 + kx];
          if (wv == 0) continue;
          const auto dy = static_cast<std::ptrdiff_t>(ky) - 1;
          const auto dx = static_cast<std::ptrdiff_t>(kx) - 1;
          const std::size_t y0 = dy < 0 ? 1 : 0, y1 = dy > 0 ? h - 1 : h;
          const std::size_t x0 = dx < 0 ? 1 : 0, x1 = dx > 0 ? w - 1 : w;
          const std::ptrdiff_t shift = dy * static_cast<std::ptrdiff_t>(w) + dx;
          for (std::size_t y = y0; y < y1; ++y) {
            std::int32_t* arow = &acc[y * w + x0];
            const std::int32_t* irow = src + static_cast<std::ptrdiff_t>(y * w + x0) + shift;
            for (std::size_t x = 0; x < x1 - x0; ++x) arow[x] += wv * irow[x];
          }
        }
      }
    }
    for (std::size_t i = 0; i < h * w; ++i) {
      out.data[o * h * w + i] =
          std::max<std::int8_t>(requantize(acc[i], multiplier, out_zp),
                                static_cast<std::int8_t>(out_zp));
    }
  }
  return out;
}

QTensor3 qmaxpool(const QTensor3& in) {
  const std::size_t ph = in.h / 2, pw = in.w / 2;
  QTensor3 out{in.c, ph, pw, std::vector<std::int8_t>(in.c * ph * pw)};
  for (std::size_t c = 0; c < in.c; ++c) {
    for (std::size_t y = 0; y < ph; ++y) {
      for (std::size_t x = 0; x < pw; ++x) {
        std::int8_t best = std::numeric_limits<std::int8_t>::min();
        for (std::size_t a = 0; a < 2; ++a) {
          for (std::size_t b = 0; b < 2; ++b) {
            best = std::max(best, in.data[(c * in.h + 2 * y + a) * in.w + 2 * x + b]);
          }
        }
        out.data[(c * ph + y) * pw + x] = best;
      }
    }
  }
  return out;
}

// Integer dense: acc[j] = bias[j] + sum_i (q[i] - zp) * w[i, j].
std::vector<std::int32_t> qdense(std::span<const std::int8_t> in, std::int32_t in_zp,
                                 const QuantizedLayer& layer) {
  const std::size_t n_in = layer.weights.dims[0], n_out = layer.weights.dims[1];
  std::vector<std::int32_t> acc(layer.bias.begin(), layer.bias.end());
  for (std::size_t i = 0; i < n_in; ++i) {
    const std::int32_t xv = in[i] - in_zp;
    if (xv == 0) continue;
    const std::int8_t* wrow = &layer.weights.data[i * n_out];
    for (std::size_t j = 0; j < n_out; ++j) acc[j] += xv * wrow[j];
  }
  return acc;
}

const QuantParams& require(const std::optional<QuantParams>& q, const char* layer) {
  if (!q || !(q->scale > 0.0) || !std::isfinite(q->scale)) {
    throw InvalidModel(std::string("missing activation calibration for layer ") + layer);
  }
  return *q;
}

}  // namespace

QuantParams calibrate(std::span<const Tensor> activations) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  std::size_t count = 0;
  for (const auto& t : activations) {
    for (double v : t.data) {
      if (!std::isfinite(v)) throw InvalidArgument("calibrate: non-finite activation");
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      ++count;
    }
  }
  if (count == 0) throw InvalidArgument("calibrate: no activations observed");
  // Real zero must be representable or the zero point saturates.
  lo = std::min(lo, 0.0);
  hi = std::max(hi, 0.0);
  QuantParams q;
  q.scale = std::max(hi - lo, kMinRange) / 255.0;
  q.zero_point = static_cast<std::int32_t>(
      std::clamp(std::round(-128.0 - lo / q.scale), -128.0, 127.0));
  return q;
}

std::int8_t quantize_value(double r, const QuantParams& q) {
  return saturate_i8(std::round(r / q.scale) + q.zero_point);
}

QuantizedTensor quantize_tensor(const Tensor& t, const QuantParams& q) {
  QuantizedTensor out;
  out.dims = t.dims;
  out.qparams = q;
  out.data.reserve(t.size());
  for (double v : t.data) out.data.push_back(quantize_value(v, q));
  return out;
}

Tensor dequantize(const QuantizedTensor& qt) {
  Tensor t(qt.dims);
  for (std::size_t i = 0; i < qt.data.size(); ++i) {
    t.data[i] = qt.qparams.scale * (qt.data[i] - qt.qparams.zero_point);
  }
  return t;
}

QuantParams symmetric_weight_params(const Tensor& w) {
  double m = 0.0;
  for (double v : w.data) m = std::max(m, std::abs(v));
  return QuantParams{m > 0.0 ? m / 127.0 : 1.0, 0};
}

QuantizedCnn quantize_model(const CnnParams& params, std::span<const Tensor> calibration) {
  if (calibration.size() < kMinCalibrationSize) {
    throw InvalidArgument("calibration set needs at least " +
                          std::to_string(kMinCalibrationSize) + " examples (got " +
                          std::to_string(calibration.size()) + ")");
  }
  std::vector<Tensor> conv1, conv2, dense1, dense2;
  for (const auto& x : calibration) {
    const CnnTrace tr = cnn_forward_trace(params, x);
    conv1.push_back(tr.conv1);
    conv2.push_back(tr.conv2);
    dense1.push_back(tr.hidden_pre);
    Tensor logits({kNumClasses});
    std::copy(tr.logits.begin(), tr.logits.end(), logits.data.begin());
    dense2.push_back(std::move(logits));
  }
  QuantizedCnn q;
  q.shape = params.shape;
  q.act_input = calibrate(calibration);
  q.act_conv1 = calibrate(conv1);
  q.act_conv2 = calibrate(conv2);
  q.act_dense1 = calibrate(dense1);
  q.act_dense2 = calibrate(dense2);
  q.conv1 = quantize_layer(params.conv1_w, params.conv1_b, q.act_input->scale);
  q.conv2 = quantize_layer(params.conv2_w, params.conv2_b, q.act_conv1->scale);
  q.dense1 = quantize_layer(params.dense1_w, params.dense1_b, q.act_conv2->scale);
  q.dense2 = quantize_layer(params.dense2_w, params.dense2_b, q.act_dense1->scale);
  return q;
}

std::int64_t worst_case_accumulator(const QuantizedCnn& m) {
  std::int64_t worst = 0;
  for (const QuantizedLayer* l : {&m.conv1, &m.conv2, &m.dense1, &m.dense2}) {
    const auto& d = l->weights.dims;
    const std::int64_t fan_in =
        d.size() == 4 ? static_cast<std::int64_t>(d[1] * d[2] * d[3])
                      : static_cast<std::int64_t>(d.empty() ? 0 : d[0]);
    std::int64_t max_bias = 0;
    for (auto b : l->bias) max_bias = std::max<std::int64_t>(max_bias, std::abs(std::int64_t{b}));
    worst = std::max(worst, fan_in * 255 * 127 + max_bias);
  }
  return worst;
}

Logits quantized_forward(const QuantizedCnn& m, const Tensor& x) {
  const CnnShape& s = m.shape;
  const QuantParams& in_q = require(m.act_input, "input");
  const QuantParams& c1_q = require(m.act_conv1, "conv1");
  const QuantParams& c2_q = require(m.act_conv2, "conv2");
  const QuantParams& d1_q = require(m.act_dense1, "dense1");
  const QuantParams& d2_q = require(m.act_dense2, "dense2");
  if (x.dims.size() != 2 || x.dims[0] != s.in_h || x.dims[1] != s.in_w) {
    throw InvalidArgument("quantized cnn input must be " + std::to_string(s.in_h) + "x" +
                          std::to_string(s.in_w));
  }
  if (worst_case_accumulator(m) > std::numeric_limits<std::int32_t>::max()) {
    throw InvalidModel("int32 accumulator could overflow for this model");
  }

  QTensor3 in{1, s.in_h, s.in_w, quantize_tensor(x, in_q).data};
  const double m1 = in_q.scale * m.conv1.weights.qparams.scale / c1_q.scale;
  QTensor3 a1 = qmaxpool(qconv3x3(in, in_q.zero_point, m.conv1, m1, c1_q.zero_point));
  const double m2 = c1_q.scale * m.conv2.weights.qparams.scale / c2_q.scale;
  QTensor3 a2 = qmaxpool(qconv3x3(a1, c1_q.zero_point, m.conv2, m2, c2_q.zero_point));

  const auto h_acc = qdense(a2.data, c2_q.zero_point, m.dense1);
  const double m3 = c2_q.scale * m.dense1.weights.qparams.scale / d1_q.scale;
  std::vector<std::int8_t> hidden(h_acc.size());
  for (std::size_t j = 0; j < h_acc.size(); ++j) {
    hidden[j] = std::max<std::int8_t>(requantize(h_acc[j], m3, d1_q.zero_point),
                                      static_cast<std::int8_t>(d1_q.zero_point));
  }
  const auto o_acc = qdense(hidden, d1_q.zero_point, m.dense2);
  const double m4 = d1_q.scale * m.dense2.weights.qparams.scale / d2_q.scale;
  Logits logits{};
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    const std::int8_t q = requantize(o_acc[k], m4, d2_q.zero_point);
    logits[k] = d2_q.scale * (q - d2_q.zero_point);
  }
  return logits;
}

}  // namespace roadnoise
