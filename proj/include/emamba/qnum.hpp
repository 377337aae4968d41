// Copyright 2026 The emamba-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Fixed-point numeric core. Scales are powers of two, zero points are 0 and
// every narrowing step saturates.

#include <cstdint>

#include "emamba/tensor.hpp"

namespace emamba {

inline constexpr int kMinBits = 2;
inline constexpr int kMaxBits = 32;
/// Scale returned by calibrate_scale when every sample is zero.
inline constexpr int kDefaultScaleExp = -7;
/// Accumulator width used by layers that do not declare a wider one.
inline constexpr int kDefaultAccBits = 32;

inline std::int64_t int_min(int bits) { return -(std::int64_t{1} << (bits - 1)); }
inline std::int64_t int_max(int bits) { return (std::int64_t{1} << (bits - 1)) - 1; }

inline std::int64_t saturate(std::int64_t v, int bits) {
  const std::int64_t lo = int_min(bits);
  const std::int64_t hi = int_max(bits);
  return v < lo ? lo : (v > hi ? hi : v);
}

/// Round-half-away-from-zero of v / 2^shift for shift >= 0, exact left shift
/// for shift < 0.
std::int64_t shift_round(std::int64_t v, int shift);

/// Re-expresses an integer at scale 2^from_exp on the grid 2^to_exp.
inline std::int64_t rescale(std::int64_t v, int from_exp, int to_exp) {
  return shift_round(v, to_exp - from_exp);
}

/// Scalar quantizer: clamp(round(x / 2^scale_exp)) at the given width.
std::int64_t quantize_value(double x, int scale_exp, int bits);

QTensor quantize(const RealTensor& x, int scale_exp, int bits);
RealTensor dequantize(const QTensor& q);

/// Smallest scale exponent whose grid holds the coverage-quantile of |samples|
/// without clipping. All-zero input yields kDefaultScaleExp.
int calibrate_scale(const RealTensor& samples, int bits, double coverage = 1.0);

/// (q + 2^(shift-1)) >> shift, clamped to out_bits; scale grows by shift.
QTensor requant_shift(const QTensor& q, int shift, int out_bits);

/// Element-wise product (scalar operands broadcast) at acc_bits width.
QTensor fixed_mul(const QTensor& a, const QTensor& b, int acc_bits);

/// Re-grids q to (scale_exp, bits) with half-away rounding and saturation.
QTensor requantize(const QTensor& q, int scale_exp, int bits);

}  // namespace emamba
