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

// Small dense kernels shared by the forward and backward passes.

#ifndef ROADNOISE_SRC_LINALG_HPP_
#define ROADNOISE_SRC_LINALG_HPP_

#include <cmath>
#include <cstddef>

#include "roadnoise/models.hpp"
#include "roadnoise/tensor.hpp"

namespace roadnoise::detail {

// C[m,n] = A[m,k] B[k,n] (+ bias[n] per row when given)
inline Tensor matmul(const Tensor& a, const Tensor& b, const Tensor* bias = nullptr) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = &c.data[i * n];
    if (bias) {
      for (std::size_t j = 0; j < n; ++j) crow[j] = bias->data[j];
    }
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a.data[i * k + p];
      if (av == 0.0) continue;
      const double* brow = &b.data[p * n];
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

// G[k,n] += A[m,k]^T D[m,n]
inline void accumulate_tn(const Tensor& a, const Tensor& d, Tensor& g) {
  const std::size_t m = a.rows(), k = a.cols(), n = d.cols();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a.data[i * k + p];
      if (av == 0.0) continue;
      double* grow = &g.data[p * n];
      const double* drow = &d.data[i * n];
      for (std::size_t j = 0; j < n; ++j) grow[j] += av * drow[j];
    }
  }
}

// out[m,k] = D[m,n] B[k,n]^T
inline Tensor matmul_nt(const Tensor& d, const Tensor& b) {
  const std::size_t m = d.rows(), n = d.cols(), k = b.rows();
  Tensor out({m, k});
  for (std::size_t i = 0; i < m; ++i) {
    const double* drow = &d.data[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = &b.data[p * n];
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += drow[j] * brow[j];
      out.data[i * k + p] = acc;
    }
  }
  return out;
}

// db[n] += column sums of D[m,n]
inline void accumulate_colsum(const Tensor& d, Tensor& db) {
  const std::size_t m = d.rows(), n = d.cols();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) db.data[j] += d.data[i * n + j];
  }
}

inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         LayerNormCache& cache) {
  const std::size_t rows = x.rows(), dim = x.cols();
  Tensor y({rows, dim});
  cache.xhat = Tensor({rows, dim});
  cache.inv_std.assign(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &x.data[r * dim];
    double mean = 0.0;
    for (std::size_t c = 0; c < dim; ++c) mean += xr[c];
    mean /= static_cast<double>(dim);
    double var = 0.0;
    for (std::size_t c = 0; c < dim; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<double>(dim);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.inv_std[r] = inv;
    for (std::size_t c = 0; c < dim; ++c) {
      const double xh = (xr[c] - mean) * inv;
      cache.xhat.data[r * dim + c] = xh;
      y.data[r * dim + c] = gamma.data[c] * xh + beta.data[c];
    }
  }
  return y;
}

// Returns dx; accumulates into dgamma/dbeta.
inline Tensor layer_norm_backward(const Tensor& dy, const Tensor& gamma,
                                  const LayerNormCache& cache, Tensor& dgamma,
                                  Tensor& dbeta) {
  const std::size_t rows = dy.rows(), dim = dy.cols();
  Tensor dx({rows, dim});
  std::vector<double> dxhat(dim);
  for (std::size_t r = 0; r < rows; ++r) {
    double mean_d = 0.0, mean_dx = 0.0;
    for (std::size_t c = 0; c < dim; ++c) {
      const double g = dy.data[r * dim + c];
      const double xh = cache.xhat.data[r * dim + c];
      dgamma.data[c] += g * xh;
      dbeta.data[c] += g;
      dxhat[c] = g * gamma.data[c];
      mean_d += dxhat[c];
      mean_dx += dxhat[c] * xh;
    }
    mean_d /= static_cast<double>(dim);
    mean_dx /= static_cast<double>(dim);
    for (std::size_t c = 0; c < dim; ++c) {
      const double xh = cache.xhat.data[r * dim + c];
      dx.data[r * dim + c] = cache.inv_std[r] * (dxhat[c] - mean_d - xh * mean_dx);
    }
  }
  return dx;
}

}  // namespace roadnoise::detail

#endif  // ROADNOISE_SRC_LINALG_HPP_
