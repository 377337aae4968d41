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

#include "emamba/qnum.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

namespace emamba {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

QTensor::QTensor(IntTensor values, int bits, int scale_exp)
    : values_(std::move(values)), bits_(bits), scale_exp_(scale_exp) {
  if (bits_ < kMinBits || bits_ > kMaxBits) {
    throw ConfigError("bit-width " + std::to_string(bits_) + " outside [2, 32]");
  }
  if (values_.size() > 0) {
    const auto lo = values_.data.minCoeff();
    const auto hi = values_.data.maxCoeff();
    if (lo < min_value() || hi > max_value()) {
      throw OverflowError("value outside INT" + std::to_string(bits_) + " range");
    }
  }
}

std::int64_t shift_round(std::int64_t v, int shift) {
  if (shift <= 0) return v * (std::int64_t{1} << -shift);
  if (shift >= 63) return 0;
  const std::int64_t half = std::int64_t{1} << (shift - 1);
  const std::int64_t mag = v < 0 ? -v : v;
  const std::int64_t r = (mag + half) >> shift;
  return v < 0 ? -r : r;
}

std::int64_t quantize_value(double x, int scale_exp, int bits) {
  if (!std::isfinite(x)) throw InvalidInput("cannot quantize a non-finite value");
  const double scaled = std::ldexp(x, -scale_exp);
  const double lo = static_cast<double>(int_min(bits));
  const double hi = static_cast<double>(int_max(bits));
  // std::round is half-away-from-zero.
  return static_cast<std::int64_t>(std::clamp(std::round(scaled), lo, hi));
}

QTensor quantize(const RealTensor& x, int scale_exp, int bits) {
  if (bits < kMinBits || bits > kMaxBits) {
    throw ConfigError("bit-width " + std::to_string(bits) + " outside [2, 32]");
  }
  IntTensor::Array q(x.size());
  for (Index i = 0; i < x.size(); ++i) q[i] = quantize_value(x.data[i], scale_exp, bits);
  return QTensor(std::move(q), x.shape, bits, scale_exp);
}

RealTensor dequantize(const QTensor& q) {
  RealTensor::Array r(q.size());
  for (Index i = 0; i < q.size(); ++i) {
    r[i] = std::ldexp(static_cast<double>(q[i]), q.scale_exp());
  }
  return RealTensor(std::move(r), q.shape());
}

int calibrate_scale(const RealTensor& samples, int bits, double coverage) {
  if (samples.size() == 0) throw InvalidInput("calibration needs at least one sample");
  if (!(coverage > 0.0 && coverage <= 1.0)) {
    throw ConfigError("coverage must lie in (0, 1]");
  }
  std::vector<double> mags(static_cast<std::size_t>(samples.size()));
  for (Index i = 0; i < samples.size(); ++i) {
    if (!std::isfinite(samples.data[i])) throw InvalidInput("non-finite calibration sample");
    mags[static_cast<std::size_t>(i)] = std::abs(samples.data[i]);
  }
  // Nearest-rank quantile; the epsilon keeps 0.999 * 1000 from rounding up.
  const auto n = static_cast<double>(mags.size());
  auto rank = static_cast<std::size_t>(std::ceil(coverage * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, mags.size());
  std::nth_element(mags.begin(), mags.begin() + static_cast<std::ptrdiff_t>(rank - 1),
                   mags.end());
  const double q = mags[rank - 1];
  if (q == 0.0) return kDefaultScaleExp;

  const double hi = static_cast<double>(int_max(bits));
  auto fits = [&](int s) { return std::round(std::ldexp(q, -s)) <= hi; };
  int s = static_cast<int>(std::ceil(std::log2(q / hi)));
  while (!fits(s)) ++s;
  while (fits(s - 1)) --s;
  return s;
}

QTensor requant_shift(const QTensor& q, int shift, int out_bits) {
  if (shift < 0) throw ConfigError("requant_shift needs a non-negative shift");
  if (out_bits > q.bits()) throw ConfigError("requant_shift cannot widen");
  IntTensor::Array r(q.size());
  const std::int64_t half = shift > 0 ? (std::int64_t{1} << (shift - 1)) : 0;
  for (Index i = 0; i < q.size(); ++i) {
    r[i] = saturate((q[i] + half) >> shift, out_bits);
  }
  return QTensor(std::move(r), q.shape(), out_bits, q.scale_exp() + shift);
}

QTensor fixed_mul(const QTensor& a, const QTensor& b, int acc_bits) {
  if (acc_bits < a.bits() + b.bits() || acc_bits > kMaxBits) {
    throw ConfigError("accumulator of " + std::to_string(acc_bits) +
                      " bits cannot hold an INT" + std::to_string(a.bits()) + " x INT" +
                      std::to_string(b.bits()) + " product");
  }
  const bool a_scalar = a.size() == 1;
  const bool b_scalar = b.size() == 1;
  if (!a_scalar && !b_scalar && a.shape() != b.shape()) {
    throw ConfigError("fixed_mul shapes " + shape_string(a.shape()) + " and " +
                      shape_string(b.shape()) + " do not broadcast");
  }
  const QTensor& big = (a_scalar && !b_scalar) ? b : a;
  IntTensor::Array r(big.size());
  for (Index i = 0; i < big.size(); ++i) {
    r[i] = a[a_scalar ? 0 : i] * b[b_scalar ? 0 : i];
  }
  return QTensor(std::move(r), big.shape(), acc_bits, a.scale_exp() + b.scale_exp());
}

QTensor requantize(const QTensor& q, int scale_exp, int bits) {
  IntTensor::Array r(q.size());
  for (Index i = 0; i < q.size(); ++i) {
    r[i] = saturate(rescale(q[i], q.scale_exp(), scale_exp), bits);
  }
  return QTensor(std::move(r), q.shape(), bits, scale_exp);
}

}  // namespace emamba
