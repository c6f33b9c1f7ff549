// Copyright (c) 2026 the hs2s authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef HS2S_TENSOR_HPP
#define HS2S_TENSOR_HPP

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "hs2s/common.hpp"

namespace hs2s {

// Dense row-major tensor of doubles. Layout convention throughout the
// project is NCHW for 4-D data; smaller ranks are used for biases and
// scalars. Double precision everywhere keeps the finite-difference
// gradient checks meaningful.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    v.assign(numel_of(shape), 0.0);
  }
  Tensor(std::vector<int> s, double fill) : shape(std::move(s)) {
    v.assign(numel_of(shape), fill);
  }

  static int64_t numel_of(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(v.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  // 4-D accessors (NCHW).
  double& at4(int n, int c, int y, int x) {
    return v[((static_cast<int64_t>(n) * shape[1] + c) * shape[2] + y) * shape[3] + x];
  }
  double at4(int n, int c, int y, int x) const {
    return v[((static_cast<int64_t>(n) * shape[1] + c) * shape[2] + y) * shape[3] + x];
  }

  double* data() { return v.data(); }
  const double* data() const { return v.data(); }

  bool all_finite() const {
    for (double x : v) {
      if (!std::isfinite(x)) return false;
    }
    return true;
  }

  double abs_max() const {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::fabs(x));
    return m;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* where) {
  if (!a.same_shape(b)) {
    fail_invalid(strformat("%s: shape mismatch %s vs %s", where,
                           a.shape_str().c_str(), b.shape_str().c_str()));
  }
}

}  // namespace hs2s

#endif  // HS2S_TENSOR_HPP
