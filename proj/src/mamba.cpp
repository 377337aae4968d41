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

#include "emamba/mamba.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace emamba {

namespace {

using IntMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RealMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Rows x cols view of a tensor whose last axis is the feature axis.
Index rows_of(const Shape& shape) { return shape.size() >= 2 ? shape[0] : 1; }

Shape out_shape(const Shape& in, Index features) {
  if (in.size() >= 2) return {in[0], features};
  return {features};
}

void record(Taps* taps, const std::string& key, const RealTensor& t) {
  if (!taps) return;
  auto& v = (*taps)[key];
  v.insert(v.end(), t.data.data(), t.data.data() + t.size());
}

RealTensor silu_of(const RealTensor& x) { return silu_ref(x); }
RealTensor relu_of(const RealTensor& x) { return RealTensor(x.data.cwiseMax(0.0), x.shape); }

// Deterministic across standard libraries: only the engine is specified
// bit-exactly, so the distribution is done by hand.
class Uniform {
 public:
  explicit Uniform(std::uint64_t seed) : rng_(seed) {}
  double operator()(double lo, double hi) {
    const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    return static_cast<double>(static_cast<float>(lo + (hi - lo) * u));
  }

 private:
  std::mt19937_64 rng_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

void MambaConfig::validate() const {
  const std::pair<const char*, int> fields[] = {
      {"d_model", d_model},     {"expand", expand},         {"patch_size", patch_size},
      {"d_state", d_state},     {"conv_kernel", conv_kernel}, {"in_channels", in_channels},
      {"in_height", in_height}, {"in_width", in_width},     {"out_dim", out_dim},
      {"h_bits", h_bits},       {"act_bits", act_bits},     {"weight_bits", weight_bits}};
  for (const auto& [name, v] : fields) {
    if (v <= 0) throw ConfigError(std::string("config field ") + name + " must be positive");
  }
  if (n_blocks < 0) throw ConfigError("config field n_blocks must be non-negative");
  if (in_height % patch_size != 0 || in_width % patch_size != 0) {
    throw ConfigError("frame " + std::to_string(in_height) + "x" + std::to_string(in_width) +
                      " is not divisible by patch size " + std::to_string(patch_size));
  }
  if (act_bits > kMaxBits || weight_bits > kMaxBits) throw ConfigError("bit-width above 32");
  if (h_bits + kAbarScaleExp < kMinBits || h_bits > kMaxBits) {
    throw ConfigError("state width h_bits must lie in [9, 32]");
  }
}

MambaConfig MambaConfig::mars() { return MambaConfig{}; }

nlohmann::json to_json(const MambaConfig& c) {
  return {{"d_model", c.d_model},         {"expand", c.expand},       {"patch_size", c.patch_size},
          {"d_state", c.d_state},         {"n_blocks", c.n_blocks},   {"conv_kernel", c.conv_kernel},
          {"in_channels", c.in_channels}, {"in_height", c.in_height}, {"in_width", c.in_width},
          {"out_dim", c.out_dim},         {"h_bits", c.h_bits},       {"act_bits", c.act_bits},
          {"weight_bits", c.weight_bits}};
}

MambaConfig config_from_json(const nlohmann::json& j) {
  MambaConfig c;
  auto get = [&](const char* key, int& field) {
    if (j.contains(key)) field = j.at(key).get<int>();
  };
  get("d_model", c.d_model);
  get("expand", c.expand);
  get("patch_size", c.patch_size);
  get("d_state", c.d_state);
  get("n_blocks", c.n_blocks);
  get("conv_kernel", c.conv_kernel);
  get("in_channels", c.in_channels);
  get("in_height", c.in_height);
  get("in_width", c.in_width);
  get("out_dim", c.out_dim);
  get("h_bits", c.h_bits);
  get("act_bits", c.act_bits);
  get("weight_bits", c.weight_bits);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Weights
// ---------------------------------------------------------------------------

ShapeTable tensor_shapes(const MambaConfig& c) {
  c.validate();
  const Index d = c.d_model, ed = c.inner(), n = c.d_state, k = c.conv_kernel;
  ShapeTable t;
  t.embed = {d, c.patch_dim()};
  t.embed_bias = {d};
  BlockTensors<Shape> b;
  b.norm_gamma = {d};
  b.norm_beta = {d};
  b.in_proj_x = {ed, d};
  b.in_proj_x_bias = {ed};
  b.in_proj_z = {ed, d};
  b.in_proj_z_bias = {ed};
  b.conv_weight = {ed, k};
  b.conv_bias = {ed};
  b.delta_proj = {ed, ed};
  b.delta_bias = {ed};
  b.b_proj = {n, ed};
  b.b_bias = {n};
  b.c_proj = {n, ed};
  b.c_bias = {n};
  b.a = {ed, n};
  b.d_skip = {ed};
  b.out_proj = {d, ed};
  b.out_bias = {d};
  t.blocks.assign(static_cast<std::size_t>(c.n_blocks), b);
  t.head = {c.out_dim, d};
  t.head_bias = {c.out_dim};
  return t;
}

MambaWeights zero_weights(const MambaConfig& config) {
  const ShapeTable shapes = tensor_shapes(config);
  MambaWeights w;
  w.blocks.resize(shapes.blocks.size());
  // Walk both tables in lockstep; visit order is identical.
  std::vector<Shape> flat;
  shapes.for_each([&](const std::string&, const Shape& s) { flat.push_back(s); });
  std::size_t i = 0;
  w.for_each([&](const std::string&, RealTensor& t) { t = RealTensor::zeros(flat[i++]); });
  return w;
}

MambaWeights random_weights(const MambaConfig& config, std::uint64_t seed) {
  MambaWeights w = zero_weights(config);
  Uniform u(seed);
  auto fill = [&](RealTensor& t, double lo, double hi) {
    for (Index i = 0; i < t.size(); ++i) t.data[i] = u(lo, hi);
  };
  auto fan_in = [&](RealTensor& t) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(t.shape.back()));
    fill(t, -bound, bound);
  };
  fan_in(w.embed);
  fill(w.embed_bias, -0.1, 0.1);
  for (auto& b : w.blocks) {
    fill(b.norm_gamma, 0.5, 1.5);
    fill(b.norm_beta, -0.2, 0.2);
    fan_in(b.in_proj_x);
    fill(b.in_proj_x_bias, -0.1, 0.1);
    fan_in(b.in_proj_z);
    fill(b.in_proj_z_bias, -0.1, 0.1);
    fill(b.conv_weight, -0.5, 0.5);
    fill(b.conv_bias, -0.1, 0.1);
    fan_in(b.delta_proj);
    fill(b.delta_bias, 0.0, 0.5);
    fan_in(b.b_proj);
    fill(b.b_bias, -0.1, 0.1);
    fan_in(b.c_proj);
    fill(b.c_bias, -0.1, 0.1);
    // S4D-real style: row n decays at a rate proportional to n + 1.
    for (Index c = 0; c < b.a.shape[0]; ++c) {
      for (Index n = 0; n < b.a.shape[1]; ++n) {
        const double v = -static_cast<double>(n + 1) * u(0.5, 1.0);
        b.a.data[c * b.a.shape[1] + n] = static_cast<float>(v);
      }
    }
    fill(b.d_skip, 0.5, 1.5);
    fan_in(b.out_proj);
    fill(b.out_bias, -0.1, 0.1);
  }
  fan_in(w.head);
  fill(w.head_bias, -0.1, 0.1);
  return w;
}

void check_shapes(const MambaConfig& config, const MambaWeights& w) {
  const ShapeTable shapes = tensor_shapes(config);
  if (w.blocks.size() != shapes.blocks.size()) {
    throw ConfigError("model has " + std::to_string(w.blocks.size()) + " blocks, config says " +
                      std::to_string(shapes.blocks.size()));
  }
  std::vector<Shape> flat;
  shapes.for_each([&](const std::string&, const Shape& s) { flat.push_back(s); });
  std::size_t i = 0;
  w.for_each([&](const std::string& name, const RealTensor& t) {
    if (t.shape != flat[i]) {
      throw ConfigError("tensor " + name + " has shape " + shape_string(t.shape) +
                        ", expected " + shape_string(flat[i]));
    }
    ++i;
  });
}

// ---------------------------------------------------------------------------
// Scales
// ---------------------------------------------------------------------------

nlohmann::json to_json(const ModelScales& s) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : s.blocks) {
    nlohmann::json jb;
    BlockScales::visit(b, [&](const char* name, int v) { jb[name] = v; });
    blocks.push_back(jb);
  }
  return {{"input", s.input}, {"embed", s.embed}, {"blocks", blocks}, {"head", s.head}};
}

ModelScales scales_from_json(const nlohmann::json& j) {
  ModelScales s;
  s.input = j.at("input").get<int>();
  s.embed = j.at("embed").get<int>();
  s.head = j.at("head").get<int>();
  for (const auto& jb : j.at("blocks")) {
    BlockScales b;
    BlockScales::visit(b, [&](const char* name, int& v) { v = jb.at(name).get<int>(); });
    s.blocks.push_back(b);
  }
  return s;
}

std::vector<BlockKernels> make_kernels(const MambaConfig& config, const ModelScales& scales,
                                       const PiecewiseLinearFn& silu_fit,
                                       const PiecewiseLinearFn& exp_fit) {
  std::vector<BlockKernels> out;
  for (const auto& s : scales.blocks) {
    out.push_back({silu_fit.quantized(s.z, s.gate, config.act_bits),
                   silu_fit.quantized(s.conv, s.xs, config.act_bits),
                   exp_fit.quantized(s.delta_a, kAbarScaleExp, config.act_bits)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

namespace {

template <typename Tensor>
Tensor patches_of(const Tensor& frame, int p) {
  using Array = typename std::remove_cvref_t<decltype(frame.data)>;
  if (frame.rank() != 3) throw ConfigError("frame must be [C, H, W]");
  const Index ch = frame.dim(0), h = frame.dim(1), w = frame.dim(2);
  if (h % p != 0 || w % p != 0) {
    throw ConfigError("frame " + std::to_string(h) + "x" + std::to_string(w) +
                      " is not divisible by patch size " + std::to_string(p));
  }
  const Index gh = h / p, gw = w / p, pd = Index{p} * p * ch;
  Array out(gh * gw * pd);
  Index o = 0;
  for (Index pi = 0; pi < gh; ++pi) {
    for (Index pj = 0; pj < gw; ++pj) {
      for (Index c = 0; c < ch; ++c) {
        for (Index di = 0; di < p; ++di) {
          for (Index dj = 0; dj < p; ++dj) {
            out[o++] = frame.data[(c * h + pi * p + di) * w + pj * p + dj];
          }
        }
      }
    }
  }
  return {std::move(out), Shape{gh * gw, pd}};
}

}  // namespace

QTensor extract_patches(const QTensor& frame, int patch_size) {
  const IntTensor t = patches_of(frame.values(), patch_size);
  return QTensor(t, frame.bits(), frame.scale_exp());
}

RealTensor extract_patches(const RealTensor& frame, int patch_size) {
  return patches_of(frame, patch_size);
}

QTensor linear(const QTensor& x, const QTensor& weight, const QTensor* bias, int out_scale_exp,
               int out_bits, int acc_bits) {
  if (weight.shape().size() != 2) throw ConfigError("linear weight must be [out, in]");
  const Index out = weight.shape()[0], in = weight.shape()[1];
  if (x.shape().back() != in) {
    throw ConfigError("linear input width " + std::to_string(x.shape().back()) +
                      " does not match weight " + shape_string(weight.shape()));
  }
  if (bias && bias->size() != out) throw ConfigError("linear bias length mismatch");
  const Index rows = rows_of(x.shape());
  const Eigen::Map<const IntMatrix> xm(x.data().data(), rows, in);
  const Eigen::Map<const IntMatrix> wm(weight.data().data(), out, in);
  IntMatrix acc = xm * wm.transpose();
  const int acc_exp = x.scale_exp() + weight.scale_exp();
  if (bias) {
    for (Index o = 0; o < out; ++o) {
      acc.col(o).array() += rescale((*bias)[o], bias->scale_exp(), acc_exp);
    }
  }
  const std::int64_t lim = int_max(acc_bits);
  IntTensor::Array r(rows * out);
  for (Index i = 0; i < rows; ++i) {
    for (Index o = 0; o < out; ++o) {
      const std::int64_t v = acc(i, o);
      if (v > lim || v < -lim - 1) {
        throw OverflowError("linear accumulator exceeds " + std::to_string(acc_bits) + " bits");
      }
      r[i * out + o] = saturate(rescale(v, acc_exp, out_scale_exp), out_bits);
    }
  }
  return QTensor(std::move(r), out_shape(x.shape(), out), out_bits, out_scale_exp);
}

RealTensor linear_ref(const RealTensor& x, const RealTensor& weight, const RealTensor* bias) {
  const Index out = weight.shape.at(0), in = weight.shape.at(1);
  if (x.shape.back() != in) throw ConfigError("linear input width mismatch");
  const Index rows = rows_of(x.shape);
  const Eigen::Map<const RealMatrix> xm(x.data.data(), rows, in);
  const Eigen::Map<const RealMatrix> wm(weight.data.data(), out, in);
  RealMatrix y = xm * wm.transpose();
  if (bias) y.rowwise() += bias->data.matrix().transpose();
  RealTensor::Array flat = Eigen::Map<RealTensor::Array>(y.data(), y.size());
  return RealTensor(std::move(flat), out_shape(x.shape, out));
}

QTensor patchify(const QTensor& frame, const MambaConfig& config, const QTensor& embed,
                 const QTensor& embed_bias, int out_scale_exp) {
  return linear(extract_patches(frame, config.patch_size), embed, &embed_bias, out_scale_exp,
                config.act_bits);
}

QTensor conv1d_causal(const QTensor& x, const QTensor& kernel, const QTensor* bias,
                      int out_scale_exp, int out_bits) {
  const Index len = rows_of(x.shape()), ch = x.shape().back();
  if (kernel.shape().size() != 2 || kernel.shape()[0] != ch) {
    throw ConfigError("conv kernel must be [channels, K]");
  }
  const Index k = kernel.shape()[1];
  const int acc_exp = x.scale_exp() + kernel.scale_exp();
  IntTensor::Array r(len * ch);
  for (Index t = 0; t < len; ++t) {
    for (Index c = 0; c < ch; ++c) {
      std::int64_t acc = bias ? rescale((*bias)[c], bias->scale_exp(), acc_exp) : 0;
      for (Index j = 0; j < k && j <= t; ++j) acc += kernel[c * k + j] * x[(t - j) * ch + c];
      r[t * ch + c] = saturate(rescale(acc, acc_exp, out_scale_exp), out_bits);
    }
  }
  return QTensor(std::move(r), x.shape(), out_bits, out_scale_exp);
}

RealTensor conv1d_causal_ref(const RealTensor& x, const RealTensor& kernel,
                             const RealTensor* bias) {
  const Index len = rows_of(x.shape), ch = x.shape.back(), k = kernel.shape.at(1);
  RealTensor out = RealTensor::zeros(x.shape);
  for (Index t = 0; t < len; ++t) {
    for (Index c = 0; c < ch; ++c) {
      double acc = bias ? bias->data[c] : 0.0;
      for (Index j = 0; j < k && j <= t; ++j) acc += kernel.data[c * k + j] * x.data[(t - j) * ch + c];
      out.data[t * ch + c] = acc;
    }
  }
  return out;
}

Discretized discretize(const QTensor& delta, const QTensor& a, const QTensor& b_t,
                       const PiecewiseLinearFn& exp, int delta_a_scale, int delta_b_scale,
                       int act_bits) {
  const Index ed = a.shape().at(0), n = a.shape().at(1);
  if (delta.size() != ed || b_t.size() != n) throw ConfigError("discretize shape mismatch");
  IntTensor::Array da(ed * n), db(ed * n);
  const int da_exp = delta.scale_exp() + a.scale_exp();
  const int db_exp = delta.scale_exp() + b_t.scale_exp();
  for (Index c = 0; c < ed; ++c) {
    for (Index j = 0; j < n; ++j) {
      da[c * n + j] = saturate(rescale(delta[c] * a[c * n + j], da_exp, delta_a_scale), act_bits);
      db[c * n + j] = saturate(rescale(delta[c] * b_t[j], db_exp, delta_b_scale), act_bits);
    }
  }
  QTensor delta_a(std::move(da), Shape{ed, n}, act_bits, delta_a_scale);
  QTensor abar = eval_piecewise(exp, delta_a);
  if (abar.scale_exp() != kAbarScaleExp) throw ConfigError("exp kernel must emit the Abar grid");
  return {std::move(abar), QTensor(std::move(db), Shape{ed, n}, act_bits, delta_b_scale)};
}

SsmState zero_state(Index inner, Index d_state, int stored_bits, int scale_exp) {
  return {QTensor::zeros({inner, d_state}, stored_bits, scale_exp)};
}

SsmStepResult ssm_step(const SsmState& state, const QTensor& x_t, const QTensor& abar,
                       const QTensor& bbar, const QTensor& c_t, const QTensor& d_skip,
                       int h_bits, int y_scale_exp, int out_bits) {
  const Index ed = state.h.shape().at(0), n = state.h.shape().at(1);
  if (x_t.size() != ed || d_skip.size() != ed || c_t.size() != n || abar.size() != ed * n ||
      bbar.size() != ed * n) {
    throw ConfigError("ssm_step operand shapes disagree with the state [" + std::to_string(ed) +
                      "," + std::to_string(n) + "]");
  }
  const int shift = -abar.scale_exp();
  if (shift < 0) throw ConfigError("Abar grid must be fractional");
  if (state.h.bits() != h_bits - shift) {
    throw ConfigError("stored state width must be h_bits - " + std::to_string(shift));
  }
  const int h_exp = state.h.scale_exp() - shift;  // grid of the full-width h_t
  const int in_exp = bbar.scale_exp() + x_t.scale_exp();
  const int cy_exp = c_t.scale_exp() + h_exp;
  const int dy_exp = d_skip.scale_exp() + x_t.scale_exp();
  const int y_acc_exp = std::min(cy_exp, dy_exp);
  const std::int64_t h_lim = int_max(h_bits);

  IntTensor::Array h_full(ed * n);
  IntTensor::Array y(ed);
  for (Index c = 0; c < ed; ++c) {
    std::int64_t acc = 0;
    for (Index j = 0; j < n; ++j) {
      const Index i = c * n + j;
      const std::int64_t h =
          abar[i] * state.h[i] + rescale(bbar[i] * x_t[c], in_exp, h_exp);
      if (h > h_lim || h < -h_lim - 1) {
        throw OverflowError("SSM state overflows INT" + std::to_string(h_bits) +
                            " (state grid is mis-calibrated)");
      }
      h_full[i] = h;
      acc += c_t[j] * h;
    }
    const std::int64_t total =
        rescale(acc, cy_exp, y_acc_exp) + rescale(d_skip[c] * x_t[c], dy_exp, y_acc_exp);
    y[c] = saturate(rescale(total, y_acc_exp, y_scale_exp), out_bits);
  }
  const QTensor wide(std::move(h_full), state.h.shape(), h_bits, h_exp);
  return {QTensor(std::move(y), Shape{ed}, out_bits, y_scale_exp),
          {requant_shift(wide, shift, h_bits - shift)}};
}

QTensor ssm_scan(const SsmSequence& seq, const SsmParams& p, std::vector<SsmState>* trace) {
  const Index len = rows_of(seq.x.shape()), ed = p.a.shape().at(0), n = p.a.shape().at(1);
  const int shift = -kAbarScaleExp;
  SsmState state = zero_state(ed, n, p.h_bits - shift, p.state_scale);
  IntTensor::Array out(len * ed);
  auto row = [](const QTensor& t, Index r) {
    const Index w = t.shape().back();
    return QTensor(t.data().segment(r * w, w), Shape{w}, t.bits(), t.scale_exp());
  };
  for (Index t = 0; t < len; ++t) {
    const QTensor x_t = row(seq.x, t);
    const Discretized d = discretize(row(seq.delta, t), p.a, row(seq.b, t), p.exp,
                                     p.delta_a_scale, p.delta_b_scale, p.act_bits);
    SsmStepResult r = ssm_step(state, x_t, d.abar, d.bbar, row(seq.c, t), p.d_skip, p.h_bits,
                               p.y_scale, p.act_bits);
    out.segment(t * ed, ed) = r.y.data();
    state = std::move(r.state);
    if (trace) trace->push_back(state);
  }
  return QTensor(std::move(out), Shape{len, ed}, p.act_bits, p.y_scale);
}

namespace {

RealTensor ssm_scan_ref_impl(const SsmSequenceRef& seq, const RealTensor& a,
                             const RealTensor& d_skip, std::vector<RealTensor>* states,
                             Taps* taps, const std::string& prefix) {
  const Index len = rows_of(seq.x.shape), ed = a.shape.at(0), n = a.shape.at(1);
  RealMatrix h = RealMatrix::Zero(ed, n);
  RealTensor y = RealTensor::zeros({len, ed});
  std::vector<double>* tap_da = taps ? &(*taps)[prefix + "delta_a"] : nullptr;
  std::vector<double>* tap_db = taps ? &(*taps)[prefix + "delta_b"] : nullptr;
  std::vector<double>* tap_h = taps ? &(*taps)[prefix + "state"] : nullptr;
  for (Index t = 0; t < len; ++t) {
    for (Index c = 0; c < ed; ++c) {
      const double delta = seq.delta.data[t * ed + c];
      const double x = seq.x.data[t * ed + c];
      double acc = 0.0;
      for (Index j = 0; j < n; ++j) {
        const double da = delta * a.data[c * n + j];
        const double db = delta * seq.b.data[t * n + j];
        h(c, j) = std::exp(da) * h(c, j) + db * x;
        acc += seq.c.data[t * n + j] * h(c, j);
        if (taps) {
          tap_da->push_back(da);
          tap_db->push_back(db);
          tap_h->push_back(h(c, j));
        }
      }
      y.data[t * ed + c] = acc + d_skip.data[c] * x;
    }
    if (states) {
      states->push_back(RealTensor(Eigen::Map<RealTensor::Array>(h.data(), h.size()), {ed, n}));
    }
  }
  return y;
}

}  // namespace

RealTensor ssm_scan_ref(const SsmSequenceRef& seq, const RealTensor& a, const RealTensor& d_skip,
                        std::vector<RealTensor>* states) {
  return ssm_scan_ref_impl(seq, a, d_skip, states, nullptr, "");
}

// ---------------------------------------------------------------------------
// Block and model
// ---------------------------------------------------------------------------

QTensor mamba_block_forward(const QTensor& tokens, const BlockTensors<QTensor>& w,
                            const BlockScales& s, const BlockKernels& k,
                            const MambaConfig& config) {
  const int bits = config.act_bits;
  const QTensor u = range_norm(tokens, {w.norm_gamma, w.norm_beta}, s.norm, bits);

  const QTensor z = linear(u, w.in_proj_z, &w.in_proj_z_bias, s.z, bits);
  const QTensor gate = eval_piecewise(k.silu_gate, z);

  const QTensor xm = linear(u, w.in_proj_x, &w.in_proj_x_bias, s.xm, bits);
  const QTensor xc = conv1d_causal(xm, w.conv_weight, &w.conv_bias, s.conv, bits);
  const QTensor xs = eval_piecewise(k.silu_main, xc);

  const QTensor delta = relu_softplus(linear(xs, w.delta_proj, &w.delta_bias, s.delta, bits));
  const QTensor b = linear(xs, w.b_proj, &w.b_bias, s.b, bits);
  const QTensor c = linear(xs, w.c_proj, &w.c_bias, s.c, bits);

  SsmParams p{w.a, w.d_skip, k.exp, s.delta_a, s.delta_b, s.state, s.y, config.h_bits, bits};
  const QTensor y = ssm_scan({xs, delta, b, c}, p);

  const QTensor gated = requantize(fixed_mul(y, gate, 2 * bits), s.gated, bits);
  const QTensor out = linear(gated, w.out_proj, &w.out_bias, s.out, bits);

  // Residual: align both operands on the finer grid, round once.
  const int fine = std::min(tokens.scale_exp(), out.scale_exp());
  IntTensor::Array r(tokens.size());
  for (Index i = 0; i < tokens.size(); ++i) {
    const std::int64_t sum =
        rescale(tokens[i], tokens.scale_exp(), fine) + rescale(out[i], out.scale_exp(), fine);
    r[i] = saturate(rescale(sum, fine, s.residual), bits);
  }
  return QTensor(std::move(r), tokens.shape(), bits, s.residual);
}

RealTensor mamba_block_forward_ref(const RealTensor& tokens, const BlockTensors<RealTensor>& w,
                                   const MambaConfig& /*config*/, Taps* taps,
                                   const std::string& prefix) {
  const RealTensor u = range_norm_ref(tokens, {w.norm_gamma, w.norm_beta, 0.0});
  record(taps, prefix + "norm", u);

  const RealTensor z = linear_ref(u, w.in_proj_z, &w.in_proj_z_bias);
  const RealTensor gate = silu_of(z);
  record(taps, prefix + "z", z);
  record(taps, prefix + "gate", gate);

  const RealTensor xm = linear_ref(u, w.in_proj_x, &w.in_proj_x_bias);
  const RealTensor xc = conv1d_causal_ref(xm, w.conv_weight, &w.conv_bias);
  const RealTensor xs = silu_of(xc);
  record(taps, prefix + "xm", xm);
  record(taps, prefix + "conv", xc);
  record(taps, prefix + "xs", xs);

  const RealTensor delta = relu_of(linear_ref(xs, w.delta_proj, &w.delta_bias));
  const RealTensor b = linear_ref(xs, w.b_proj, &w.b_bias);
  const RealTensor c = linear_ref(xs, w.c_proj, &w.c_bias);
  record(taps, prefix + "delta", delta);
  record(taps, prefix + "b", b);
  record(taps, prefix + "c", c);

  const RealTensor y = ssm_scan_ref_impl({xs, delta, b, c}, w.a, w.d_skip, nullptr, taps, prefix);
  record(taps, prefix + "y", y);

  const RealTensor gated(y.data * gate.data, y.shape);
  const RealTensor out = linear_ref(gated, w.out_proj, &w.out_bias);
  const RealTensor res(tokens.data + out.data, tokens.shape);
  record(taps, prefix + "gated", gated);
  record(taps, prefix + "out", out);
  record(taps, prefix + "residual", res);
  return res;
}

namespace {

const Deployment& deployed(const Model& model) {
  if (!model.deployment) throw ConfigError("model has no quantized deployment; run calibrate");
  return *model.deployment;
}

void check_frame(const MambaConfig& c, const Shape& shape) {
  const Shape want{c.in_channels, c.in_height, c.in_width};
  if (shape != want) {
    throw ConfigError("frame shape " + shape_string(shape) + " does not match model input " +
                      shape_string(want));
  }
}

}  // namespace

QTensor model_forward(const Model& model, const RealTensor& frame) {
  const Deployment& dep = deployed(model);
  const MambaConfig& c = model.config;
  check_frame(c, frame.shape);
  const QTensor q_frame = quantize(frame, dep.scales.input, c.act_bits);
  QTensor tokens = patchify(q_frame, c, dep.weights.embed, dep.weights.embed_bias, dep.scales.embed);
  for (std::size_t i = 0; i < dep.weights.blocks.size(); ++i) {
    tokens = mamba_block_forward(tokens, dep.weights.blocks[i], dep.scales.blocks[i],
                                 dep.kernels[i], c);
  }
  // Mean-pool folded into the head: accumulate W * sum(tokens) and divide by L
  // inside the final requantization so the pooled value is never rounded.
  const Index len = tokens.shape()[0], d = tokens.shape()[1];
  const QTensor& w = dep.weights.head;
  const QTensor& b = dep.weights.head_bias;
  const Index out = w.shape()[0];
  IntTensor::Array sums = IntTensor::Array::Zero(d);
  for (Index t = 0; t < len; ++t) sums += tokens.data().segment(t * d, d);
  const int acc_exp = w.scale_exp() + tokens.scale_exp();
  const int k = acc_exp - dep.scales.head;
  IntTensor::Array y(out);
  for (Index o = 0; o < out; ++o) {
    std::int64_t acc = rescale(b[o], b.scale_exp(), acc_exp) * len;
    for (Index j = 0; j < d; ++j) acc += w[o * d + j] * sums[j];
    if (k > 62 || k < -62) throw ConfigError("head grid gap too wide");
    // 128-bit so the lift by 2^k cannot wrap before saturation.
    const __int128 num = k >= 0 ? __int128{acc} << k : __int128{acc};
    const __int128 den = k >= 0 ? __int128{len} : __int128{len} << -k;
    const __int128 q = ((num < 0 ? -num : num) + den / 2) / den;
    const __int128 lim = int_max(c.act_bits);
    y[o] = static_cast<std::int64_t>(num < 0 ? std::max(-q, -lim - 1) : std::min(q, lim));
  }
  return QTensor(std::move(y), Shape{out}, c.act_bits, dep.scales.head);
}

RealTensor model_forward_ref(const Model& model, const RealTensor& frame, Taps* taps) {
  const MambaConfig& c = model.config;
  const MambaWeights& w = model.weights;
  check_frame(c, frame.shape);
  record(taps, "input", frame);
  RealTensor tokens = linear_ref(extract_patches(frame, c.patch_size), w.embed, &w.embed_bias);
  record(taps, "embed", tokens);
  for (std::size_t i = 0; i < w.blocks.size(); ++i) {
    tokens = mamba_block_forward_ref(tokens, w.blocks[i], c, taps,
                                     "blocks." + std::to_string(i) + ".");
  }
  const Eigen::Map<const RealMatrix> tm(tokens.data.data(), tokens.shape[0], tokens.shape[1]);
  const RealTensor pooled(tm.colwise().mean().transpose().array(), Shape{tokens.shape[1]});
  RealTensor out = linear_ref(pooled, w.head, &w.head_bias);
  record(taps, "head", out);
  return out;
}

RealTensor frame_at(const RealTensor& frames, Index i) {
  if (frames.rank() != 4) throw ConfigError("frames must be [F, C, H, W]");
  const Index per = frames.size() / frames.dim(0);
  return RealTensor(frames.data.segment(i * per, per),
                    Shape{frames.dim(1), frames.dim(2), frames.dim(3)});
}

namespace {

template <typename F>
RealTensor map_frames(const Model& model, const RealTensor& frames, F&& forward) {
  if (frames.rank() != 4) throw ConfigError("frames must be [F, C, H, W]");
  const Index count = frames.dim(0), out = model.config.out_dim;
  RealTensor result = RealTensor::zeros({count, out});
  for (Index i = 0; i < count; ++i) {
    result.data.segment(i * out, out) = forward(frame_at(frames, i)).data;
  }
  return result;
}

}  // namespace

RealTensor infer(const Model& model, const RealTensor& frames) {
  return map_frames(model, frames,
                    [&](const RealTensor& f) { return dequantize(model_forward(model, f)); });
}

RealTensor infer_ref(const Model& model, const RealTensor& frames) {
  return map_frames(model, frames,
                    [&](const RealTensor& f) { return model_forward_ref(model, f); });
}

// ---------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------

namespace {

RealTensor samples_of(const std::vector<double>& v) {
  return RealTensor(Eigen::Map<const RealTensor::Array>(v.data(), static_cast<Index>(v.size())),
                    Shape{static_cast<Index>(v.size())});
}

// Below the exp domain the kernel outputs a constant, so only the clipped
// range matters for the grid of delta * a.
int delta_a_scale_of(std::vector<double> v, int bits, double coverage) {
  for (double& x : v) x = std::clamp(x, kExpDomainLo - 0.5, kExpDomainHi + 0.5);
  return calibrate_scale(samples_of(v), bits, coverage);
}

int state_scale_of(const std::vector<double>& v, int h_bits) {
  return calibrate_scale(samples_of(v), h_bits + kAbarScaleExp - kStateHeadroomBits, 1.0);
}

}  // namespace

SsmProblem calibrate_ssm(const SsmSequenceRef& seq, const RealTensor& a, const RealTensor& d_skip,
                         const PiecewiseLinearFn& exp_fit, int h_bits, int act_bits,
                         int weight_bits) {
  Taps taps;
  const RealTensor y = ssm_scan_ref_impl(seq, a, d_skip, nullptr, &taps, "");
  auto q = [&](const RealTensor& t, int bits) { return quantize(t, calibrate_scale(t, bits), bits); };
  SsmProblem p;
  p.seq = {q(seq.x, act_bits), q(seq.delta, act_bits), q(seq.b, act_bits), q(seq.c, act_bits)};
  p.params.a = q(a, weight_bits);
  p.params.d_skip = q(d_skip, weight_bits);
  p.params.delta_a_scale = delta_a_scale_of(taps.at("delta_a"), act_bits, 1.0);
  p.params.delta_b_scale = calibrate_scale(samples_of(taps.at("delta_b")), act_bits);
  p.params.state_scale = state_scale_of(taps.at("state"), h_bits);
  p.params.y_scale = calibrate_scale(y, act_bits);
  p.params.h_bits = h_bits;
  p.params.act_bits = act_bits;
  p.params.exp = exp_fit.quantized(p.params.delta_a_scale, kAbarScaleExp, act_bits);
  return p;
}

Model calibrate(const Model& fp_model, const RealTensor& frames,
                const CalibrationOptions& options) {
  const MambaConfig& c = fp_model.config;
  check_shapes(c, fp_model.weights);
  if (frames.rank() != 4 || frames.dim(0) == 0) {
    throw InvalidInput("calibration needs at least one frame");
  }

  Deployment dep;
  dep.silu_fit = options.silu_fit.segments() ? options.silu_fit : default_silu_fit();
  dep.exp_fit = options.exp_fit.segments() ? options.exp_fit : default_exp_fit();

  dep.weights.blocks.resize(fp_model.weights.blocks.size());
  std::vector<QTensor*> slots;
  dep.weights.for_each([&](const std::string&, QTensor& t) { slots.push_back(&t); });
  std::size_t i = 0;
  fp_model.weights.for_each([&](const std::string& name, const RealTensor& t) {
    const bool norm = name.find("norm_") != std::string::npos;
    const int bits = norm ? kNormParamBits : c.weight_bits;
    *slots[i++] = quantize(t, calibrate_scale(t, bits), bits);
  });

  Taps taps;
  for (Index f = 0; f < frames.dim(0); ++f) model_forward_ref(fp_model, frame_at(frames, f), &taps);

  auto scale_of = [&](const std::string& key, int bits, double coverage) {
    return calibrate_scale(samples_of(taps.at(key)), bits, coverage);
  };
  const int act = c.act_bits;
  dep.scales.input = scale_of("input", act, options.coverage);
  dep.scales.embed = scale_of("embed", act, options.coverage);
  dep.scales.head = scale_of("head", act, options.coverage);
  for (int b = 0; b < c.n_blocks; ++b) {
    const std::string p = "blocks." + std::to_string(b) + ".";
    BlockScales s;
    BlockScales::visit(s, [&](const char* name, int& v) {
      const std::string key = p + name;
      if (std::string(name) == "state") {
        v = state_scale_of(taps.at(key), c.h_bits);
      } else if (std::string(name) == "delta_a") {
        v = delta_a_scale_of(taps.at(key), act, options.coverage);
      } else {
        v = scale_of(key, act, options.coverage);
      }
    });
    dep.scales.blocks.push_back(s);
  }
  dep.kernels = make_kernels(c, dep.scales, dep.silu_fit, dep.exp_fit);

  Model out = fp_model;
  out.deployment = std::move(dep);
  return out;
}

}  // namespace emamba
