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

#include <complex>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>

namespace skipdecode {

/// Raised when a caller breaks a documented precondition.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Raised when a lookup (preset, token, tensor name) has no match.
class NotFound : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a policy is asked to do something it cannot support,
/// e.g. CALM-style adaptive exits with more than one sequence per batch.
class UnsupportedPolicy : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or corrupted files.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Precision { kSingle, kDouble };

inline const char* to_string(Precision p) {
  return p == Precision::kSingle ? "f32" : "f64";
}

namespace detail {

template <typename... Args>
std::string str_cat(Args&&... args) {
  std::ostringstream os;
  (os << ... << std::forward<Args>(args));
  return os.str();
}

template <typename T>
struct is_complex : std::false_type {};
template <typename T>
struct is_complex<std::complex<T>> : std::true_type {};

template <typename T>
inline constexpr bool is_complex_v = is_complex<T>::value;

}  // namespace detail

template <typename... Args>
inline void require(bool cond, Args&&... message) {
  if (!cond) {
    throw ContractViolation(detail::str_cat(std::forward<Args>(message)...));
  }
}

/// Real part for real and complex scalars alike. Comparisons (max, sort)
/// always go through this so complex-step evaluation follows the real path.
template <typename T>
constexpr auto real_part(const T& x) {
  if constexpr (detail::is_complex_v<T>) {
    return x.real();
  } else {
    return x;
  }
}

}  // namespace skipdecode
