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

#include "emamba/approx.hpp"

#include <algorithm>
#include <cmath>

namespace emamba {

double silu_ref(double x) { return x / (1.0 + std::exp(-x)); }
double exp_ref(double x) { return std::exp(x); }
double softplus_ref(double x) {
  // log1p(exp(x)) overflows for large x; the tail is x + log1p(exp(-x)).
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

namespace {

template <typename F>
RealTensor map(const RealTensor& x, F f) {
  return RealTensor(x.data.unaryExpr(f), x.shape);
}

std::int64_t floor_div_pow2(double v, int scale_exp) {
  return static_cast<std::int64_t>(std::floor(std::ldexp(v, -scale_exp)));
}

std::int64_t ceil_div_pow2(double v, int scale_exp) {
  return static_cast<std::int64_t>(std::ceil(std::ldexp(v, -scale_exp)));
}

double point_error(double approx, double exact, ErrorMetric metric, double floor) {
  const double e = std::abs(approx - exact);
  return metric == ErrorMetric::absolute ? e : e / std::max(std::abs(exact), floor);
}

// Worst error of the secant through (a, f(a)), (b, f(b)).
double secant_error(const std::function<double(double)>& f, double a, double b,
                    ErrorMetric metric, double floor) {
  constexpr int kSamples = 1024;
  const double fa = f(a);
  const double slope = (f(b) - fa) / (b - a);
  double worst = 0.0;
  for (int i = 0; i <= kSamples; ++i) {
    const double x = a + (b - a) * i / kSamples;
    worst = std::max(worst, point_error(fa + slope * (x - a), f(x), metric, floor));
  }
  return worst;
}

}  // namespace

RealTensor silu_ref(const RealTensor& x) { return map(x, [](double v) { return silu_ref(v); }); }
RealTensor exp_ref(const RealTensor& x) { return map(x, [](double v) { return exp_ref(v); }); }
RealTensor softplus_ref(const RealTensor& x) {
  return map(x, [](double v) { return softplus_ref(v); });
}

std::string to_string(OracleFn fn) {
  switch (fn) {
    case OracleFn::silu: return "silu";
    case OracleFn::exp: return "exp";
    case OracleFn::identity: return "identity";
  }
  return "?";
}

OracleFn oracle_from_string(const std::string& name) {
  if (name == "silu") return OracleFn::silu;
  if (name == "exp") return OracleFn::exp;
  if (name == "identity") return OracleFn::identity;
  throw ConfigError("unknown function '" + name + "' (expected silu, exp or identity)");
}

std::string to_string(ErrorMetric metric) {
  return metric == ErrorMetric::absolute ? "absolute" : "relative-with-floor";
}

ErrorMetric metric_from_string(const std::string& name) {
  if (name == "absolute") return ErrorMetric::absolute;
  if (name == "relative-with-floor" || name == "relative") return ErrorMetric::relative_with_floor;
  throw ConfigError("unknown error metric '" + name + "'");
}

std::function<double(double)> oracle_function(OracleFn fn) {
  switch (fn) {
    case OracleFn::silu: return [](double x) { return silu_ref(x); };
    case OracleFn::exp: return [](double x) { return exp_ref(x); };
    case OracleFn::identity: return [](double x) { return x; };
  }
  throw ConfigError("unknown oracle");
}

// ---------------------------------------------------------------------------

PiecewiseLinearFn::PiecewiseLinearFn(std::vector<double> breakpoints, std::vector<double> slopes,
                                     std::vector<double> intercepts, OutOfRangePolicy below,
                                     OutOfRangePolicy above)
    : breakpoints_(std::move(breakpoints)),
      slopes_(std::move(slopes)),
      intercepts_(std::move(intercepts)),
      below_(below),
      above_(above) {
  if (slopes_.empty() || breakpoints_.size() != slopes_.size() + 1 ||
      intercepts_.size() != slopes_.size()) {
    throw ConfigError("piecewise function needs k+1 breakpoints for k segments");
  }
  for (std::size_t i = 1; i < breakpoints_.size(); ++i) {
    if (!(breakpoints_[i] > breakpoints_[i - 1])) {
      throw ConfigError("breakpoints must be strictly increasing");
    }
  }
}

PiecewiseLinearFn PiecewiseLinearFn::interpolate(const std::function<double(double)>& f,
                                                 std::vector<double> breakpoints,
                                                 OutOfRangePolicy below, OutOfRangePolicy above) {
  std::vector<double> slopes;
  std::vector<double> intercepts;
  for (std::size_t i = 0; i + 1 < breakpoints.size(); ++i) {
    const double a = breakpoints[i];
    const double b = breakpoints[i + 1];
    const double fa = f(a);
    const double slope = (f(b) - fa) / (b - a);
    slopes.push_back(slope);
    intercepts.push_back(fa - slope * a);
  }
  return PiecewiseLinearFn(std::move(breakpoints), std::move(slopes), std::move(intercepts),
                           below, above);
}

std::size_t PiecewiseLinearFn::segment_of(double x) const {
  const auto it = std::upper_bound(breakpoints_.begin() + 1, breakpoints_.end() - 1, x);
  return static_cast<std::size_t>(it - (breakpoints_.begin() + 1));
}

double PiecewiseLinearFn::operator()(double x) const {
  if (x < lo()) return below_.kind == OutOfRangePolicy::Kind::constant ? below_.value : x;
  if (x > hi()) return above_.kind == OutOfRangePolicy::Kind::constant ? above_.value : x;
  const std::size_t s = segment_of(x);
  return slopes_[s] * x + intercepts_[s];
}

PiecewiseLinearFn PiecewiseLinearFn::quantized(int in_scale_exp, int out_scale_exp, int out_bits,
                                               int coef_frac_bits) const {
  QuantizedPiecewise q;
  q.in_scale_exp = in_scale_exp;
  q.out_scale_exp = out_scale_exp;
  q.out_bits = out_bits;
  q.coef_frac_bits = coef_frac_bits;
  for (std::size_t i = 0; i < segments(); ++i) {
    q.lower.push_back(ceil_div_pow2(breakpoints_[i], in_scale_exp));
    q.slopes.push_back(std::llround(std::ldexp(slopes_[i], coef_frac_bits)));
    q.intercepts.push_back(std::llround(std::ldexp(intercepts_[i], coef_frac_bits - in_scale_exp)));
  }
  q.upper = floor_div_pow2(hi(), in_scale_exp);
  q.below_passthrough = below_.kind == OutOfRangePolicy::Kind::passthrough;
  q.above_passthrough = above_.kind == OutOfRangePolicy::Kind::passthrough;
  if (!q.below_passthrough) q.below_value = quantize_value(below_.value, out_scale_exp, out_bits);
  if (!q.above_passthrough) q.above_value = quantize_value(above_.value, out_scale_exp, out_bits);
  PiecewiseLinearFn copy = *this;
  copy.qform_ = std::move(q);
  return copy;
}

std::int64_t eval_piecewise(const QuantizedPiecewise& q, std::int64_t x) {
  auto passthrough = [&] { return saturate(rescale(x, q.in_scale_exp, q.out_scale_exp), q.out_bits); };
  if (x < q.lower.front()) return q.below_passthrough ? passthrough() : q.below_value;
  if (x > q.upper) return q.above_passthrough ? passthrough() : q.above_value;
  const auto it = std::upper_bound(q.lower.begin(), q.lower.end(), x);
  const auto s = static_cast<std::size_t>(it - q.lower.begin()) - 1;
  const std::int64_t acc = q.slopes[s] * x + q.intercepts[s];
  return saturate(rescale(acc, q.in_scale_exp - q.coef_frac_bits, q.out_scale_exp), q.out_bits);
}

QTensor eval_piecewise(const PiecewiseLinearFn& fn, const QTensor& x) {
  const auto& qf = fn.quantized_form();
  if (!qf) throw ConfigError("piecewise function has no integer form");
  if (qf->in_scale_exp != x.scale_exp()) {
    throw ConfigError("piecewise integer form expects input scale 2^" +
                      std::to_string(qf->in_scale_exp) + ", got 2^" +
                      std::to_string(x.scale_exp()));
  }
  const QuantizedPiecewise& q = *qf;
  IntTensor::Array out(x.size());
  for (Index i = 0; i < x.size(); ++i) out[i] = eval_piecewise(q, x[i]);
  return QTensor(std::move(out), x.shape(), q.out_bits, q.out_scale_exp);
}

// ---------------------------------------------------------------------------

PiecewiseLinearFn fit_piecewise(const std::function<double(double)>& f, double lo, double hi,
                                const FitOptions& options, OutOfRangePolicy below,
                                OutOfRangePolicy above) {
  if (!(lo < hi)) throw ConfigError("fit domain needs lo < hi");
  if (!(options.max_err > 0.0)) throw ConfigError("fit error bound must be positive");

  std::vector<double> stops;
  for (double p : options.forced) {
    if (p > lo && p < hi) stops.push_back(p);
  }
  std::sort(stops.begin(), stops.end());
  stops.push_back(hi);

  std::vector<double> bps{lo};
  double a = lo;
  constexpr double kTol = 1e-12;
  for (double stop : stops) {
    while (a < stop - kTol) {
      // Candidate ends lie on the grid anchored at lo, plus the stop itself.
      double last = a;
      for (long k = std::lround((a - lo) / options.step) + 1;; ++k) {
        double b = std::min(lo + static_cast<double>(k) * options.step, stop);
        if (secant_error(f, a, b, options.metric, options.floor) > options.max_err) break;
        last = b;
        if (b >= stop - kTol) break;
      }
      if (last == a) {
        const double b = std::min(a + options.step, stop);
        throw FitFailure("segment [" + std::to_string(a) + ", " + std::to_string(b) +
                             "] cannot meet the error bound",
                         secant_error(f, a, b, options.metric, options.floor));
      }
      bps.push_back(last);
      a = last;
      if (static_cast<int>(bps.size()) - 1 > options.max_segments) {
        // Report what the segment budget does buy: a uniform secant fit.
        std::vector<double> uniform;
        for (int i = 0; i <= options.max_segments; ++i) {
          uniform.push_back(lo + (hi - lo) * i / options.max_segments);
        }
        const auto fallback = PiecewiseLinearFn::interpolate(f, uniform, below, above);
        throw FitFailure("fit needs more than " + std::to_string(options.max_segments) +
                             " segments",
                         max_fit_error(fallback, f, lo, hi, options.metric, 100001, options.floor));
      }
    }
  }
  return PiecewiseLinearFn::interpolate(f, std::move(bps), below, above);
}

PiecewiseLinearFn fit_piecewise(OracleFn oracle, double lo, double hi, double max_err,
                                ErrorMetric metric) {
  FitOptions opt;
  opt.max_err = max_err;
  opt.metric = metric;
  OutOfRangePolicy below = OutOfRangePolicy::passthrough();
  OutOfRangePolicy above = OutOfRangePolicy::passthrough();
  switch (oracle) {
    case OracleFn::silu:
      below = OutOfRangePolicy::constant(0.0);
      opt.forced = {0.0};
      break;
    case OracleFn::exp:
      below = OutOfRangePolicy::constant(0.0);
      above = OutOfRangePolicy::constant(std::exp(hi));
      break;
    case OracleFn::identity:
      break;
  }
  return fit_piecewise(oracle_function(oracle), lo, hi, opt, below, above);
}

double max_fit_error(const PiecewiseLinearFn& fn, const std::function<double(double)>& f,
                     double lo, double hi, ErrorMetric metric, std::size_t points, double floor) {
  double worst = 0.0;
  const double n = static_cast<double>(points - 1);
  for (std::size_t i = 0; i < points; ++i) {
    const double x = lo + (hi - lo) * static_cast<double>(i) / n;
    worst = std::max(worst, point_error(fn(x), f(x), metric, floor));
  }
  return worst;
}

PiecewiseLinearFn default_silu_fit() {
  return fit_piecewise(OracleFn::silu, kSiluDomainLo, kSiluDomainHi, kSiluMaxErr,
                       ErrorMetric::relative_with_floor);
}

PiecewiseLinearFn default_exp_fit() {
  return fit_piecewise(OracleFn::exp, kExpDomainLo, kExpDomainHi, kExpMaxErr,
                       ErrorMetric::absolute);
}

// ---------------------------------------------------------------------------

namespace {

nlohmann::json policy_json(const OutOfRangePolicy& p) {
  if (p.kind == OutOfRangePolicy::Kind::passthrough) return {{"kind", "passthrough"}};
  return {{"kind", "constant"}, {"value", p.value}};
}

OutOfRangePolicy policy_from_json(const nlohmann::json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "passthrough") return OutOfRangePolicy::passthrough();
  if (kind == "constant") return OutOfRangePolicy::constant(j.at("value").get<double>());
  throw ParseError("unknown out-of-range policy '" + kind + "'");
}

}  // namespace

nlohmann::json to_json(const PiecewiseLinearFn& fn) {
  nlohmann::json j = {{"format", "emamba-piecewise"},
                      {"version", 1},
                      {"breakpoints", fn.breakpoints()},
                      {"slopes", fn.slopes()},
                      {"intercepts", fn.intercepts()},
                      {"below", policy_json(fn.below())},
                      {"above", policy_json(fn.above())}};
  if (const auto& q = fn.quantized_form()) {
    j["quantized"] = {{"in_scale_exp", q->in_scale_exp},
                      {"out_scale_exp", q->out_scale_exp},
                      {"out_bits", q->out_bits},
                      {"coef_frac_bits", q->coef_frac_bits},
                      {"slope_scale_exp", -q->coef_frac_bits},
                      {"intercept_scale_exp", q->in_scale_exp - q->coef_frac_bits},
                      {"lower", q->lower},
                      {"upper", q->upper},
                      {"slopes", q->slopes},
                      {"intercepts", q->intercepts},
                      {"below_value", q->below_value},
                      {"above_value", q->above_value}};
  }
  return j;
}

PiecewiseLinearFn piecewise_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "emamba-piecewise") {
      throw ParseError("not a piecewise-function document");
    }
    if (j.at("version").get<int>() != 1) throw ParseError("unsupported piecewise version");
    PiecewiseLinearFn fn(j.at("breakpoints").get<std::vector<double>>(),
                         j.at("slopes").get<std::vector<double>>(),
                         j.at("intercepts").get<std::vector<double>>(),
                         policy_from_json(j.at("below")), policy_from_json(j.at("above")));
    if (j.contains("quantized")) {
      const auto& qj = j.at("quantized");
      PiecewiseLinearFn qfn =
          fn.quantized(qj.at("in_scale_exp").get<int>(), qj.at("out_scale_exp").get<int>(),
                       qj.at("out_bits").get<int>(), qj.at("coef_frac_bits").get<int>());
      // The stored integers are authoritative; they must agree with the
      // real form they were derived from.
      QuantizedPiecewise stored = *qfn.quantized_form();
      stored.lower = qj.at("lower").get<std::vector<std::int64_t>>();
      stored.upper = qj.at("upper").get<std::int64_t>();
      stored.slopes = qj.at("slopes").get<std::vector<std::int64_t>>();
      stored.intercepts = qj.at("intercepts").get<std::vector<std::int64_t>>();
      stored.below_value = qj.at("below_value").get<std::int64_t>();
      stored.above_value = qj.at("above_value").get<std::int64_t>();
      if (!(stored == *qfn.quantized_form())) {
        throw ParseError("integer coefficients disagree with the real-form segments");
      }
      return qfn;
    }
    return fn;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed piecewise document: ") + e.what());
  } catch (const ConfigError& e) {
    throw ParseError(std::string("invalid piecewise document: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

QNormParams quantize_norm(const NormParams& p, int bits) {
  return {quantize(p.gamma, calibrate_scale(p.gamma, bits), bits),
          quantize(p.beta, calibrate_scale(p.beta, bits), bits)};
}

QTensor range_norm(const QTensor& x, const QNormParams& p, int out_scale_exp, int out_bits) {
  const Index dim = x.shape().back();
  if (p.gamma.size() != dim || p.beta.size() != dim) {
    throw ConfigError("normalization parameters do not match feature dimension " +
                      std::to_string(dim));
  }
  using Wide = __int128;
  const Index tokens = x.size() / dim;
  // out = (dim * x - sum) * gamma / (dim * range) + beta, brought to a common
  // denominator so the whole expression is rounded exactly once.
  const int a = p.gamma.scale_exp() - out_scale_exp;
  const int b = p.beta.scale_exp() - out_scale_exp;
  const int lift = std::max({0, -a, -b});
  if (a + lift > 62 || b + lift > 62 || lift > 62) throw ConfigError("range_norm grid gap too wide");
  IntTensor::Array out(x.size());
  for (Index t = 0; t < tokens; ++t) {
    const auto row = x.data().segment(t * dim, dim);
    const std::int64_t sum = row.sum();
    const std::int64_t range = row.maxCoeff() - row.minCoeff();
    for (Index i = 0; i < dim; ++i) {
      std::int64_t v;
      if (range == 0) {
        v = rescale(p.beta[i], p.beta.scale_exp(), out_scale_exp);
      } else {
        const Wide den = Wide{dim} * range * (Wide{1} << lift);
        const Wide num = Wide{dim * row[i] - sum} * p.gamma[i] * (Wide{1} << (a + lift)) +
                         Wide{p.beta[i]} * (Wide{1} << (b + lift)) * (den >> lift);
        const Wide mag = (num < 0 ? -num : num) + den / 2;
        const Wide q = mag / den;
        v = static_cast<std::int64_t>(num < 0 ? -q : q);
      }
      out[t * dim + i] = saturate(v, out_bits);
    }
  }
  return QTensor(std::move(out), x.shape(), out_bits, out_scale_exp);
}

RealTensor range_norm_ref(const RealTensor& x, const NormParams& p) {
  const Index dim = x.shape.back();
  if (p.gamma.size() != dim || p.beta.size() != dim) {
    throw ConfigError("normalization parameters do not match feature dimension");
  }
  RealTensor out = x;
  for (Index t = 0; t < x.size() / dim; ++t) {
    auto row = out.data.segment(t * dim, dim);
    const double mean = row.mean();
    const double range = row.maxCoeff() - row.minCoeff();
    if (range == 0.0) {
      row = p.beta.data;
    } else {
      row = p.gamma.data * (row - mean) / range + p.beta.data;
    }
  }
  return out;
}

RealTensor layer_norm_ref(const RealTensor& x, const NormParams& p) {
  const Index dim = x.shape.back();
  if (dim < 2) throw ConfigError("layer norm needs more than one feature");
  if (p.gamma.size() != dim || p.beta.size() != dim) {
    throw ConfigError("normalization parameters do not match feature dimension");
  }
  RealTensor out = x;
  for (Index t = 0; t < x.size() / dim; ++t) {
    auto row = out.data.segment(t * dim, dim);
    const double mean = row.mean();
    const double var = (row - mean).square().mean();
    row = p.gamma.data * (row - mean) / std::sqrt(var + p.epsilon) + p.beta.data;
  }
  return out;
}

QTensor relu_softplus(const QTensor& x) {
  return QTensor(x.data().cwiseMax(std::int64_t{0}), x.shape(), x.bits(), x.scale_exp());
}

}  // namespace emamba
