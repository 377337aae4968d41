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

// Hardware-friendly nonlinearities: piecewise-linear SiLU and exp, range
// normalization, ReLU in place of softplus, and the exact float oracles the
// approximations are measured against.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "emamba/qnum.hpp"
#include "emamba/tensor.hpp"

namespace emamba {

// ---------------------------------------------------------------------------
// Exact oracles
// ---------------------------------------------------------------------------

double silu_ref(double x);
double exp_ref(double x);
double softplus_ref(double x);

RealTensor silu_ref(const RealTensor& x);
RealTensor exp_ref(const RealTensor& x);
RealTensor softplus_ref(const RealTensor& x);

// ---------------------------------------------------------------------------
// Piecewise-linear functions
// ---------------------------------------------------------------------------

enum class OracleFn { silu, exp, identity };
enum class ErrorMetric { relative_with_floor, absolute };

/// |approx - exact| / max(|exact|, floor) under the relative metric.
inline constexpr double kRelativeErrorFloor = 0.02;
inline constexpr int kMaxSegments = 64;
/// Breakpoints produced by the fitter lie on this grid.
inline constexpr double kBreakpointStep = 1.0 / 64.0;
/// Fractional bits of the integer slope coefficients.
inline constexpr int kCoefFracBits = 16;

std::string to_string(OracleFn fn);
OracleFn oracle_from_string(const std::string& name);
std::string to_string(ErrorMetric metric);
ErrorMetric metric_from_string(const std::string& name);
std::function<double(double)> oracle_function(OracleFn fn);

struct OutOfRangePolicy {
  enum class Kind { constant, passthrough };
  Kind kind = Kind::passthrough;
  double value = 0.0;

  static OutOfRangePolicy constant(double c) { return {Kind::constant, c}; }
  static OutOfRangePolicy passthrough() { return {Kind::passthrough, 0.0}; }
  friend bool operator==(const OutOfRangePolicy&, const OutOfRangePolicy&) = default;
};

/// Integer form of a piecewise function for one (input scale, output scale)
/// pairing. Segment i is selected when lower[i] <= x_q (and no later segment
/// matches); x_q > upper selects the above policy.
struct QuantizedPiecewise {
  int in_scale_exp = 0;
  int out_scale_exp = 0;
  int out_bits = 8;
  /// Slopes carry scale 2^-coef_frac_bits; intercepts 2^(in_scale_exp - coef_frac_bits).
  int coef_frac_bits = kCoefFracBits;
  std::vector<std::int64_t> lower;
  std::int64_t upper = 0;
  std::vector<std::int64_t> slopes;
  std::vector<std::int64_t> intercepts;
  bool below_passthrough = false;
  bool above_passthrough = false;
  std::int64_t below_value = 0;  // used when the below policy is constant
  std::int64_t above_value = 0;  // used when the above policy is constant

  friend bool operator==(const QuantizedPiecewise&, const QuantizedPiecewise&) = default;
};

class PiecewiseLinearFn {
 public:
  PiecewiseLinearFn() = default;
  PiecewiseLinearFn(std::vector<double> breakpoints, std::vector<double> slopes,
                    std::vector<double> intercepts, OutOfRangePolicy below,
                    OutOfRangePolicy above);

  /// Secant interpolation of f through the given breakpoints.
  static PiecewiseLinearFn interpolate(const std::function<double(double)>& f,
                                       std::vector<double> breakpoints,
                                       OutOfRangePolicy below, OutOfRangePolicy above);

  const std::vector<double>& breakpoints() const { return breakpoints_; }
  const std::vector<double>& slopes() const { return slopes_; }
  const std::vector<double>& intercepts() const { return intercepts_; }
  const OutOfRangePolicy& below() const { return below_; }
  const OutOfRangePolicy& above() const { return above_; }
  std::size_t segments() const { return slopes_.size(); }
  double lo() const { return breakpoints_.front(); }
  double hi() const { return breakpoints_.back(); }

  /// Real-form evaluation including the out-of-range policies.
  double operator()(double x) const;
  std::size_t segment_of(double x) const;

  /// Copy carrying an integer form for the given input/output grids.
  PiecewiseLinearFn quantized(int in_scale_exp, int out_scale_exp, int out_bits,
                              int coef_frac_bits = kCoefFracBits) const;
  const std::optional<QuantizedPiecewise>& quantized_form() const { return qform_; }

  friend bool operator==(const PiecewiseLinearFn&, const PiecewiseLinearFn&) = default;

 private:
  std::vector<double> breakpoints_;
  std::vector<double> slopes_;
  std::vector<double> intercepts_;
  OutOfRangePolicy below_;
  OutOfRangePolicy above_;
  std::optional<QuantizedPiecewise> qform_;
};

struct FitOptions {
  double max_err = 0.03;
  ErrorMetric metric = ErrorMetric::relative_with_floor;
  double floor = kRelativeErrorFloor;
  double step = kBreakpointStep;
  int max_segments = kMaxSegments;
  /// Points that must become breakpoints (roots of the target, typically).
  std::vector<double> forced;
};

/// Greedy left-to-right secant splitter: each segment is extended grid step
/// by grid step while its worst error stays within the bound.
PiecewiseLinearFn fit_piecewise(const std::function<double(double)>& f, double lo, double hi,
                                const FitOptions& options, OutOfRangePolicy below,
                                OutOfRangePolicy above);

/// Fit of a named oracle with its hardware out-of-range policies:
/// silu (below -> 0, above -> passthrough), exp (below -> 0, above -> e),
/// identity (passthrough both sides). Interior roots are forced breakpoints.
PiecewiseLinearFn fit_piecewise(OracleFn oracle, double lo, double hi, double max_err,
                                ErrorMetric metric);

/// Worst error of fn against f on `points` evenly spaced samples of [lo, hi].
double max_fit_error(const PiecewiseLinearFn& fn, const std::function<double(double)>& f,
                     double lo, double hi, ErrorMetric metric, std::size_t points,
                     double floor = kRelativeErrorFloor);

/// Integer evaluation: segment lookup by binary search, then multiply-add.
QTensor eval_piecewise(const PiecewiseLinearFn& fn, const QTensor& x);
std::int64_t eval_piecewise(const QuantizedPiecewise& q, std::int64_t x);

nlohmann::json to_json(const PiecewiseLinearFn& fn);
PiecewiseLinearFn piecewise_from_json(const nlohmann::json& j);

/// Defaults used by the deployed kernels.
inline constexpr double kSiluDomainLo = -7.0;
inline constexpr double kSiluDomainHi = 7.0;
inline constexpr double kSiluMaxErr = 0.03;
inline constexpr double kExpDomainLo = -4.0;
inline constexpr double kExpDomainHi = 1.0;
inline constexpr double kExpMaxErr = 0.01;  // absolute; greedy split gives 11 segments

PiecewiseLinearFn default_silu_fit();
PiecewiseLinearFn default_exp_fit();

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

struct NormParams {
  RealTensor gamma;
  RealTensor beta;
  double epsilon = 1e-5;
};

/// Integer form of NormParams; gamma and beta are kept at 16 bits.
struct QNormParams {
  QTensor gamma;
  QTensor beta;
};

inline constexpr int kNormParamBits = 16;

QNormParams quantize_norm(const NormParams& p, int bits = kNormParamBits);

/// gamma * (x - mean) / (max - min) + beta per token (last axis is the feature
/// axis), evaluated as one exact integer division per element with a single
/// half-away rounding onto the output grid. A zero range yields beta.
QTensor range_norm(const QTensor& x, const QNormParams& p, int out_scale_exp, int out_bits);

/// Real-valued range normalization (same formula, real mean).
RealTensor range_norm_ref(const RealTensor& x, const NormParams& p);

/// Standard layer normalization, baseline/oracle only.
RealTensor layer_norm_ref(const RealTensor& x, const NormParams& p);

/// max(0, x), scale unchanged.
QTensor relu_softplus(const QTensor& x);

}  // namespace emamba
