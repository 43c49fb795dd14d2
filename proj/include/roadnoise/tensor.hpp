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

#ifndef ROADNOISE_TENSOR_HPP_
#define ROADNOISE_TENSOR_HPP_

#include <cstddef>
#include <functional>
#include <numeric>
#include <vector>

namespace roadnoise {

/// Dense row-major float64 tensor.
struct Tensor {
  std::vector<std::size_t> dims;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> d, double fill = 0.0)
      : dims(std::move(d)), data(element_count(dims), fill) {}

  static std::size_t element_count(const std::vector<std::size_t>& d) {
    return std::accumulate(d.begin(), d.end(), std::size_t{1}, std::multiplies<>());
  }

  std::size_t size() const { return data.size(); }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  // 2-D accessors; valid only for rank-2 tensors.
  std::size_t rows() const { return dims[0]; }
  std::size_t cols() const { return dims[1]; }
  double& at(std::size_t r, std::size_t c) { return data[r * dims[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * dims[1] + c]; }

  bool operator==(const Tensor&) const = default;
};

}  // namespace roadnoise

#endif  // ROADNOISE_TENSOR_HPP_
