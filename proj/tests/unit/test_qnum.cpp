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

#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "emamba/qnum.hpp"
#include "oracles.hpp"

using namespace emamba;

namespace {

QTensor scalar(std::int64_t v, int bits, int scale) {
  return QTensor(IntTensor::Array::Constant(1, v), Shape{1}, bits, scale);
}

}  // namespace

TEST_CASE("quantize maps reals onto the symmetric grid") {
  CHECK(quantize(RealTensor::vector({0.0}), -7, 8)[0] == 0);
  CHECK(quantize(RealTensor::vector({0.5}), -7, 8)[0] == 64);
  CHECK(quantize(RealTensor::vector({2.0}), -7, 8)[0] == 127);
  CHECK(quantize(RealTensor::vector({-2.0}), -7, 8)[0] == -128);
  // Ties round away from zero.
  CHECK(quantize_value(0.5 * 0x1.0p-7, -7, 8) == 1);
  CHECK(quantize_value(-0.5 * 0x1.0p-7, -7, 8) == -1);
  CHECK(quantize_value(1.5 * 0x1.0p-7, -7, 8) == 2);
}

TEST_CASE("quantize rejects non-finite input") {
  const double inf = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(quantize(RealTensor::vector({1.0, inf}), -7, 8), InvalidInput);
  CHECK_THROWS_AS(quantize(RealTensor::vector({std::nan("")}), -7, 8), InvalidInput);
  CHECK_THROWS_AS(quantize(RealTensor::vector({1.0}), -7, 1), ConfigError);
  CHECK_THROWS_AS(quantize(RealTensor::vector({1.0}), -7, 33), ConfigError);
}

TEST_CASE("dequantize multiplies by the power-of-two scale") {
  const RealTensor r = dequantize(QTensor(IntTensor::Array::Constant(1, 64), Shape{1}, 8, -7));
  CHECK(r[0] == 0.5);
  for (int s = -10; s <= 10; ++s) CHECK(dequantize(scalar(0, 8, s))[0] == 0.0);
  const double back = dequantize(quantize(RealTensor::vector({0.3}), -7, 8))[0];
  CHECK(std::abs(back - 0.3) <= 0x1.0p-8);
}

TEST_CASE("round trip error is at most half a step inside the range") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int bits : {2, 4, 8, 16}) {
    for (int s : {-12, -7, -3, 0, 2}) {
      const double hi = std::ldexp(static_cast<double>(int_max(bits)), s);
      for (int i = 0; i < 2000; ++i) {
        const double x = u(rng) * hi;
        const double back = dequantize(quantize(RealTensor::vector({x}), s, bits))[0];
        CHECK(std::abs(back - x) <= std::ldexp(1.0, s - 1));
      }
    }
  }
}

TEST_CASE("calibrate_scale picks the finest grid that holds the quantile") {
  CHECK(calibrate_scale(RealTensor::vector({0.1, -3.1, 2.0}), 8) == -5);
  CHECK(calibrate_scale(RealTensor::vector({0.0, 0.0, 0.0}), 8) == kDefaultScaleExp);

  RealTensor with_outlier = RealTensor::zeros({1000});
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (Index i = 0; i < 1000; ++i) with_outlier.data[i] = u(rng);
  RealTensor without = with_outlier;
  with_outlier.data[500] = 100.0;
  CHECK(calibrate_scale(with_outlier, 8, 0.999) == calibrate_scale(without, 8, 1.0));
  CHECK(calibrate_scale(with_outlier, 8, 1.0) > calibrate_scale(without, 8, 1.0));

  CHECK_THROWS_AS(calibrate_scale(RealTensor::zeros({0}), 8), InvalidInput);
  CHECK_THROWS_AS(calibrate_scale(without, 8, 0.0), ConfigError);
  CHECK_THROWS_AS(calibrate_scale(without, 8, 1.5), ConfigError);
}

TEST_CASE("calibrate_scale agrees with a brute-force scan over exponents") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> mag(-20.0, 20.0);
  for (int i = 0; i < 500; ++i) {
    const double m = std::exp2(mag(rng));
    for (int bits : {4, 8, 12}) {
      const int got = calibrate_scale(RealTensor::vector({m, -m / 3}), bits);
      int want = 100;
      for (int s = 99; s >= -99; --s) {
        if (std::round(std::ldexp(m, -s)) <= std::ldexp(1.0, bits - 1) - 1) want = s;
      }
      CHECK(got == want);
    }
  }
}

TEST_CASE("requant_shift adds half then shifts") {
  CHECK(requant_shift(scalar(128, 24, -14), 7, 17)[0] == 1);
  CHECK(requant_shift(scalar(64, 24, -14), 7, 17)[0] == 1);
  CHECK(requant_shift(scalar(-1, 24, -14), 7, 17)[0] == 0);
  CHECK(requant_shift(scalar(-64, 24, -14), 7, 17)[0] == 0);
  CHECK(requant_shift(scalar(-65, 24, -14), 7, 17)[0] == -1);
  const QTensor r = requant_shift(scalar(5, 24, -14), 7, 17);
  CHECK(r.bits() == 17);
  CHECK(r.scale_exp() == -7);
  CHECK(requant_shift(scalar(int_max(24), 24, 0), 0, 17)[0] == int_max(17));
  CHECK_THROWS_AS(requant_shift(scalar(1, 8, 0), -1, 8), ConfigError);
  CHECK_THROWS_AS(requant_shift(scalar(1, 8, 0), 1, 16), ConfigError);
}

TEST_CASE("requant_shift matches the rational oracle on every 12-bit value") {
  for (int shift = 0; shift <= 12; ++shift) {
    for (std::int64_t q = int_min(12); q <= int_max(12); ++q) {
      const std::int64_t want =
          oracle::clamp_bits(oracle::nearest(q, shift, oracle::Tie::toward_positive), 8);
      REQUIRE(requant_shift(scalar(q, 12, 0), shift, 8)[0] == want);
    }
  }
}

TEST_CASE("shift_round rounds half away from zero") {
  for (int shift = 0; shift <= 10; ++shift) {
    for (std::int64_t v = -3000; v <= 3000; ++v) {
      REQUIRE(shift_round(v, shift) == oracle::nearest(v, shift, oracle::Tie::away_from_zero));
    }
  }
  CHECK(shift_round(3, -4) == 48);
  CHECK(rescale(3, -2, -6) == 48);
}

TEST_CASE("fixed_mul adds exponents and keeps the exact product") {
  const QTensor p = fixed_mul(scalar(3, 8, -2), scalar(5, 8, -3), 16);
  CHECK(p[0] == 15);
  CHECK(p.scale_exp() == -5);
  CHECK(p.bits() == 16);

  const QTensor v(IntTensor::Array::LinSpaced(5, -2, 2), Shape{5}, 8, -1);
  const QTensor z = fixed_mul(v, scalar(0, 8, 3), 16);
  CHECK((z.data() == 0).all());
  CHECK(z.shape() == Shape{5});
  CHECK_THROWS_AS(fixed_mul(v, scalar(1, 8, 0), 15), ConfigError);
  const QTensor w(IntTensor::Array::Zero(4), Shape{4}, 8, 0);
  CHECK_THROWS_AS(fixed_mul(v, w, 16), ConfigError);
}

TEST_CASE("fixed_mul matches decimal big-integer products on all 8-bit pairs") {
  IntTensor::Array all(256);
  for (int i = 0; i < 256; ++i) all[i] = i - 128;
  const QTensor a(all, Shape{256}, 8, -4);
  for (int j = 0; j < 256; ++j) {
    const QTensor p = fixed_mul(a, scalar(j - 128, 8, -3), 16);
    for (int i = 0; i < 256; ++i) {
      const std::string want =
          (oracle::BigInt::from(i - 128) * oracle::BigInt::from(j - 128)).str();
      REQUIRE(std::to_string(p[i]) == want);
    }
  }
}

TEST_CASE("requantize saturates at the target width") {
  const QTensor q(IntTensor::Array::LinSpaced(5, -1000, 1000), Shape{5}, 16, -8);
  const QTensor r = requantize(q, -4, 6);
  CHECK(r.bits() == 6);
  CHECK(r.scale_exp() == -4);
  CHECK(r[0] == -32);
  CHECK(r[2] == 0);
  CHECK(r[4] == 31);
}

TEST_CASE("QTensor refuses values outside its width") {
  CHECK_THROWS_AS(scalar(128, 8, 0), OverflowError);
  CHECK_THROWS_AS(scalar(-129, 8, 0), OverflowError);
  CHECK_NOTHROW(scalar(-128, 8, 0));
  CHECK_THROWS_AS(QTensor(IntTensor::Array::Zero(3), Shape{2, 2}, 8, 0), ConfigError);
}
