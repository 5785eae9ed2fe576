// Copyright 2026 The SkipDecode Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Dense row-major 2-D tensors and the handful of kernels a small decoder
// needs. Every kernel is a plain loop nest with a fixed iteration order, so
// results are bitwise reproducible and each output row depends only on the
// matching input row (batch rows never interact).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <span>
#include <vector>

#include "skipdecode/common.hpp"

namespace skipdecode {

template <typename T>
class Tensor2D {
 public:
  using value_type = T;

  Tensor2D() = default;
  Tensor2D(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor2D(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows_ * cols_, "tensor data length ", data_.size(),
            " != ", rows_, "x", cols_);
  }
  Tensor2D(std::initializer_list<std::initializer_list<T>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      require(r.size() == cols_, "ragged tensor literal");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Tensor2D identity(std::size_t n) {
    Tensor2D t(n, n);
    for (std::size_t i = 0; i < n; ++i) t(i, i) = T(1);
    return t;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    for (const T& v : data_) {
      if constexpr (detail::is_complex_v<T>) {
        if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) return false;
      } else {
        if (!std::isfinite(v)) return false;
      }
    }
    return true;
  }

  static constexpr Precision precision() {
    return sizeof(real_t) == sizeof(float) ? Precision::kSingle
                                           : Precision::kDouble;
  }

  friend bool operator==(const Tensor2D&, const Tensor2D&) = default;

 private:
  using real_t = decltype(real_part(T{}));

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

/// Per-entry keep flags for softmax_rows: nonzero entries participate,
/// zero entries are masked to probability exactly 0.
using KeepMask = Tensor2D<std::uint8_t>;

template <typename U, typename T>
Tensor2D<U> tensor_cast(const Tensor2D<T>& t) {
  std::vector<U> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<U>(t.values()[i]);
  return Tensor2D<U>(t.rows(), t.cols(), std::move(out));
}

template <typename T>
Tensor2D<T> matmul(const Tensor2D<T>& a, const Tensor2D<T>& b) {
  require(a.cols() == b.rows(), "matmul: ", a.rows(), "x", a.cols(), " times ",
          b.rows(), "x", b.cols());
  Tensor2D<T> out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    T* o = out.row(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const T aik = a(i, k);
      const T* br = b.row(k).data();
      for (std::size_t j = 0; j < b.cols(); ++j) o[j] += aik * br[j];
    }
  }
  return out;
}

/// a × bᵀ without materializing the transpose.
template <typename T>
Tensor2D<T> matmul_transposed(const Tensor2D<T>& a, const Tensor2D<T>& b) {
  require(a.cols() == b.cols(), "matmul_transposed: ", a.rows(), "x", a.cols(),
          " times (", b.rows(), "x", b.cols(), ")^T");
  Tensor2D<T> out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const T* ar = a.row(i).data();
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const T* br = b.row(j).data();
      T acc{};
      for (std::size_t k = 0; k < a.cols(); ++k) acc += ar[k] * br[k];
      out(i, j) = acc;
    }
  }
  return out;
}

template <typename T>
Tensor2D<T> transpose(const Tensor2D<T>& a) {
  Tensor2D<T> out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

/// x[r, :] += v for every row.
template <typename T>
void add_row_vector(Tensor2D<T>& x, std::span<const T> v) {
  require(v.size() == x.cols(), "add_row_vector: length ", v.size(), " vs ",
          x.cols(), " columns");
  for (std::size_t r = 0; r < x.rows(); ++r) {
    T* xr = x.row(r).data();
    for (std::size_t c = 0; c < x.cols(); ++c) xr[c] += v[c];
  }
}

template <typename T>
void add_in_place(Tensor2D<T>& x, const Tensor2D<T>& y) {
  require(x.rows() == y.rows() && x.cols() == y.cols(), "add_in_place: shape");
  for (std::size_t i = 0; i < x.size(); ++i) x.values()[i] += y.values()[i];
}

/// x·W + b, the affine map used by every projection.
template <typename T>
Tensor2D<T> affine(const Tensor2D<T>& x, const Tensor2D<T>& w,
                   const Tensor2D<T>& b) {
  Tensor2D<T> y = matmul(x, w);
  add_row_vector<T>(y, b.row(0));
  return y;
}

/// Numerically stable row softmax. Rows are stabilized by subtracting the
/// largest unmasked entry; masked entries come out as exactly zero.
template <typename T>
Tensor2D<T> softmax_rows(const Tensor2D<T>& x,
                         const KeepMask* keep = nullptr) {
  if (keep != nullptr) {
    require(keep->rows() == x.rows() && keep->cols() == x.cols(),
            "softmax_rows: mask shape mismatch");
  }
  Tensor2D<T> out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto kept = [&](std::size_t c) { return keep == nullptr || (*keep)(r, c) != 0; };
    bool any = false;
    decltype(real_part(T{})) max_v{};
    for (std::size_t c = 0; c < x.cols(); ++c) {
      if (!kept(c)) continue;
      const auto v = real_part(x(r, c));
      if (!any || v > max_v) max_v = v;
      any = true;
    }
    require(any, "softmax_rows: row ", r, " is fully masked");
    T total{};
    for (std::size_t c = 0; c < x.cols(); ++c) {
      if (!kept(c)) continue;
      const T e = std::exp(x(r, c) - T(max_v));
      out(r, c) = e;
      total += e;
    }
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) /= total;
  }
  return out;
}

/// Row-wise layer normalization followed by the affine gain/bias.
template <typename T>
Tensor2D<T> layer_norm(const Tensor2D<T>& x, std::span<const T> gain,
                       std::span<const T> bias, double eps) {
  require(gain.size() == x.cols() && bias.size() == x.cols(),
          "layer_norm: gain/bias length must equal ", x.cols());
  const std::size_t n = x.cols();
  Tensor2D<T> out(x.rows(), n);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const T* xr = x.row(r).data();
    T mean{};
    for (std::size_t c = 0; c < n; ++c) mean += xr[c];
    mean /= T(static_cast<double>(n));
    T var{};
    for (std::size_t c = 0; c < n; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= T(static_cast<double>(n));
    const T denom = std::sqrt(var + T(eps));
    for (std::size_t c = 0; c < n; ++c) {
      // A zero-variance row with eps == 0 would divide 0 by 0; map it to 0.
      const T centered = xr[c] - mean;
      const T normed = real_part(denom) == 0 ? T{} : centered / denom;
      out(r, c) = normed * gain[c] + bias[c];
    }
  }
  return out;
}

template <typename T>
Tensor2D<T> layer_norm(const Tensor2D<T>& x, const Tensor2D<T>& gain,
                       const Tensor2D<T>& bias, double eps) {
  return layer_norm<T>(x, gain.row(0), bias.row(0), eps);
}

inline constexpr double kGeluCoeff = 0.044715;
inline constexpr double kSqrt2OverPi = 0.7978845608028654;

template <typename T>
T gelu_scalar(T x) {
  const T inner = T(kSqrt2OverPi) * (x + T(kGeluCoeff) * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(inner));
}

/// d gelu / dx for the tanh approximation.
template <typename T>
T gelu_derivative(T x) {
  const T inner = T(kSqrt2OverPi) * (x + T(kGeluCoeff) * x * x * x);
  const T th = std::tanh(inner);
  const T dinner = T(kSqrt2OverPi) * (T(1) + T(3.0 * kGeluCoeff) * x * x);
  return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * dinner;
}

template <typename T>
Tensor2D<T> gelu(const Tensor2D<T>& x) {
  Tensor2D<T> out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out.values()[i] = gelu_scalar(x.values()[i]);
  return out;
}

}  // namespace skipdecode
