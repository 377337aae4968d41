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

// Mamba block graph in two flavours that share one weight layout:
//
//   *_ref functions run in double precision with exact SiLU/exp, ReLU for the
//   step-size activation and range normalization. They are the oracle.
//
//   the unsuffixed functions run integer-only on QTensors with power-of-two
//   scales, piecewise SiLU/exp and the shift-based SSM state storing rule.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "emamba/approx.hpp"
#include "emamba/qnum.hpp"
#include "emamba/tensor.hpp"

namespace emamba {

struct MambaConfig {
  int d_model = 20;     // token dimension
  int expand = 2;       // inner width is expand * d_model
  int patch_size = 2;
  int d_state = 8;
  int n_blocks = 2;
  int conv_kernel = 4;
  int in_channels = 5;
  int in_height = 8;
  int in_width = 8;
  int out_dim = 57;
  int h_bits = 24;      // SSM state width before the storing shift
  int act_bits = 8;
  int weight_bits = 8;

  int inner() const { return expand * d_model; }
  int seq_len() const { return (in_height / patch_size) * (in_width / patch_size); }
  int patch_dim() const { return patch_size * patch_size * in_channels; }

  /// Throws ConfigError on non-positive fields or indivisible geometry.
  void validate() const;

  /// Hyperparameters used for the 3-D pose regression benchmark
  /// (8x8x5 point-cloud feature map, 19 joints x 3 coordinates).
  static MambaConfig mars();

  friend bool operator==(const MambaConfig&, const MambaConfig&) = default;
};

nlohmann::json to_json(const MambaConfig& c);
MambaConfig config_from_json(const nlohmann::json& j);

/// Per-block parameter set. T is RealTensor for the reference weights,
/// QTensor for the deployed integers, Shape for the shape table.
template <typename T>
struct BlockTensors {
  T norm_gamma, norm_beta;          // [D]
  T in_proj_x, in_proj_x_bias;      // [ED, D], [ED]  main path
  T in_proj_z, in_proj_z_bias;      // [ED, D], [ED]  gate path
  T conv_weight, conv_bias;         // [ED, K], [ED]  depthwise, causal
  T delta_proj, delta_bias;         // [ED, ED], [ED]
  T b_proj, b_bias;                 // [N, ED], [N]
  T c_proj, c_bias;                 // [N, ED], [N]
  T a;                              // [ED, N], negative
  T d_skip;                         // [ED]
  T out_proj, out_bias;             // [D, ED], [D]

  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    f("norm_gamma", self.norm_gamma);
    f("norm_beta", self.norm_beta);
    f("in_proj_x", self.in_proj_x);
    f("in_proj_x_bias", self.in_proj_x_bias);
    f("in_proj_z", self.in_proj_z);
    f("in_proj_z_bias", self.in_proj_z_bias);
    f("conv_weight", self.conv_weight);
    f("conv_bias", self.conv_bias);
    f("delta_proj", self.delta_proj);
    f("delta_bias", self.delta_bias);
    f("b_proj", self.b_proj);
    f("b_bias", self.b_bias);
    f("c_proj", self.c_proj);
    f("c_bias", self.c_bias);
    f("a", self.a);
    f("d_skip", self.d_skip);
    f("out_proj", self.out_proj);
    f("out_bias", self.out_bias);
  }
};

template <typename T>
struct ModelTensors {
  T embed, embed_bias;              // [D, P*P*C], [D]
  std::vector<BlockTensors<T>> blocks;
  T head, head_bias;                // [out, D], [out]

  /// Calls f(name, tensor) for every tensor in container order.
  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    f(std::string("embed"), self.embed);
    f(std::string("embed_bias"), self.embed_bias);
    for (std::size_t i = 0; i < self.blocks.size(); ++i) {
      const std::string prefix = "blocks." + std::to_string(i) + ".";
      BlockTensors<T>::visit(self.blocks[i],
                             [&](const char* name, auto& t) { f(prefix + name, t); });
    }
    f(std::string("head"), self.head);
    f(std::string("head_bias"), self.head_bias);
  }
  template <typename F> void for_each(F&& f) { visit(*this, std::forward<F>(f)); }
  template <typename F> void for_each(F&& f) const { visit(*this, std::forward<F>(f)); }
};

using MambaWeights = ModelTensors<RealTensor>;
using QuantizedWeights = ModelTensors<QTensor>;
using ShapeTable = ModelTensors<Shape>;

ShapeTable tensor_shapes(const MambaConfig& config);
MambaWeights zero_weights(const MambaConfig& config);
/// Deterministic random initialisation (values representable as float32).
MambaWeights random_weights(const MambaConfig& config, std::uint64_t seed);
/// Throws ConfigError naming the first tensor whose shape is wrong.
void check_shapes(const MambaConfig& config, const MambaWeights& w);

// ---------------------------------------------------------------------------
// Activation grids
// ---------------------------------------------------------------------------

/// Fixed scale of the discretized state transition (Abar).
inline constexpr int kAbarScaleExp = -7;
/// Spare bits left when calibrating the stored state grid.
inline constexpr int kStateHeadroomBits = 1;

struct BlockScales {
  int norm = 0, z = 0, gate = 0, xm = 0, conv = 0, xs = 0, delta = 0, b = 0, c = 0;
  int delta_a = 0, delta_b = 0, state = 0, y = 0, gated = 0, out = 0, residual = 0;

  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    f("norm", self.norm);       f("z", self.z);             f("gate", self.gate);
    f("xm", self.xm);           f("conv", self.conv);       f("xs", self.xs);
    f("delta", self.delta);     f("b", self.b);             f("c", self.c);
    f("delta_a", self.delta_a); f("delta_b", self.delta_b); f("state", self.state);
    f("y", self.y);             f("gated", self.gated);     f("out", self.out);
    f("residual", self.residual);
  }
  friend bool operator==(const BlockScales&, const BlockScales&) = default;
};

struct ModelScales {
  int input = 0;
  int embed = 0;
  std::vector<BlockScales> blocks;
  int head = 0;
  friend bool operator==(const ModelScales&, const ModelScales&) = default;
};

nlohmann::json to_json(const ModelScales& s);
ModelScales scales_from_json(const nlohmann::json& j);

/// Integer forms of the block nonlinearities, bound to the block's grids.
struct BlockKernels {
  PiecewiseLinearFn silu_gate;  // z -> gate
  PiecewiseLinearFn silu_main;  // conv -> xs
  PiecewiseLinearFn exp;        // delta_a -> Abar
};

struct Deployment {
  QuantizedWeights weights;
  ModelScales scales;
  PiecewiseLinearFn silu_fit;
  PiecewiseLinearFn exp_fit;
  std::vector<BlockKernels> kernels;  // derived from the fits and scales
};

std::vector<BlockKernels> make_kernels(const MambaConfig& config, const ModelScales& scales,
                                       const PiecewiseLinearFn& silu_fit,
                                       const PiecewiseLinearFn& exp_fit);

struct Model {
  MambaConfig config;
  MambaWeights weights;
  std::optional<Deployment> deployment;
};

// ---------------------------------------------------------------------------
// Layer operations
// ---------------------------------------------------------------------------

/// [C, H, W] frame -> [L, P*P*C] patches, row-major over the patch grid;
/// within a patch the order is channel, row, column.
QTensor extract_patches(const QTensor& frame, int patch_size);
RealTensor extract_patches(const RealTensor& frame, int patch_size);

/// x: [T, in] or [in]; weight: [out, in]; bias: [out] or absent.
/// Wide-accumulator matrix product, bias aligned to the accumulator grid,
/// then requantized to (out_scale_exp, out_bits).
QTensor linear(const QTensor& x, const QTensor& weight, const QTensor* bias, int out_scale_exp,
               int out_bits, int acc_bits = kDefaultAccBits);
RealTensor linear_ref(const RealTensor& x, const RealTensor& weight, const RealTensor* bias);

/// Patch extraction followed by the embedding layer: [L, D].
QTensor patchify(const QTensor& frame, const MambaConfig& config, const QTensor& embed,
                 const QTensor& embed_bias, int out_scale_exp);

/// Depthwise causal convolution, y[t, c] = sum_j k[c, j] * x[t - j, c]
/// with zero left padding. x: [L, ED]; kernel: [ED, K].
QTensor conv1d_causal(const QTensor& x, const QTensor& kernel, const QTensor* bias,
                      int out_scale_exp, int out_bits);
RealTensor conv1d_causal_ref(const RealTensor& x, const RealTensor& kernel,
                             const RealTensor* bias);

struct Discretized {
  QTensor abar;  // [ED, N] at kAbarScaleExp
  QTensor bbar;  // [ED, N]
};

/// abar = piecewise_exp(delta (x) a), bbar = delta (x) b_t. delta is the
/// post-ReLU step size [ED]; b_t is [N]. exp must carry an integer form whose
/// input grid is delta_a_scale.
Discretized discretize(const QTensor& delta, const QTensor& a, const QTensor& b_t,
                       const PiecewiseLinearFn& exp, int delta_a_scale, int delta_b_scale,
                       int act_bits);

/// Recurrent state: h at (h_bits - shift) width where shift = -kAbarScaleExp.
struct SsmState {
  QTensor h;  // [ED, N]
};

SsmState zero_state(Index inner, Index d_state, int stored_bits, int scale_exp);

struct SsmStepResult {
  QTensor y;  // [ED]
  SsmState state;
};

/// h_t = abar * h_{t-1} + bbar * x_t at h_bits; y_t = sum_n c_t * h_t + d * x_t
/// from the unshifted h_t; the returned state is h_t >> (-abar scale) so its
/// width and grid never change. Throws OverflowError when h_t leaves h_bits.
SsmStepResult ssm_step(const SsmState& state, const QTensor& x_t, const QTensor& abar,
                       const QTensor& bbar, const QTensor& c_t, const QTensor& d_skip,
                       int h_bits, int y_scale_exp, int out_bits);

/// Per-token SSM inputs: x, delta: [L, ED]; b, c: [L, N].
struct SsmSequence {
  QTensor x, delta, b, c;
};

struct SsmParams {
  QTensor a;        // [ED, N]
  QTensor d_skip;   // [ED]
  PiecewiseLinearFn exp;
  int delta_a_scale = 0;
  int delta_b_scale = 0;
  int state_scale = 0;
  int y_scale = 0;
  int h_bits = 24;
  int act_bits = 8;
};

/// Sequential fold of discretize + ssm_step from the zero state. When trace
/// is given it receives the stored state after every step.
QTensor ssm_scan(const SsmSequence& seq, const SsmParams& params,
                 std::vector<SsmState>* trace = nullptr);

struct SsmSequenceRef {
  RealTensor x, delta, b, c;
};
/// Exact recurrence with exp(delta * a); returns y [L, ED] and optionally h per step.
RealTensor ssm_scan_ref(const SsmSequenceRef& seq, const RealTensor& a, const RealTensor& d_skip,
                        std::vector<RealTensor>* states = nullptr);

/// Quantized SSM problem with grids chosen by the same rules as calibrate():
/// inputs at act_bits, delta * a clipped to the exp domain, the stored state
/// calibrated at (h_bits - 7 - headroom) bits.
struct SsmProblem {
  SsmSequence seq;
  SsmParams params;
};
SsmProblem calibrate_ssm(const SsmSequenceRef& seq, const RealTensor& a, const RealTensor& d_skip,
                         const PiecewiseLinearFn& exp_fit, int h_bits = 24, int act_bits = 8,
                         int weight_bits = 8);

/// Collected intermediate activations of the reference path, keyed by tap name.
using Taps = std::map<std::string, std::vector<double>>;

/// tokens: [L, D] -> [L, D].
QTensor mamba_block_forward(const QTensor& tokens, const BlockTensors<QTensor>& w,
                            const BlockScales& s, const BlockKernels& k,
                            const MambaConfig& config);
RealTensor mamba_block_forward_ref(const RealTensor& tokens, const BlockTensors<RealTensor>& w,
                                   const MambaConfig& config, Taps* taps = nullptr,
                                   const std::string& prefix = "");

/// frame [C, H, W] -> prediction [out_dim] on the deployed integer path.
QTensor model_forward(const Model& model, const RealTensor& frame);
RealTensor model_forward_ref(const Model& model, const RealTensor& frame, Taps* taps = nullptr);

/// Batch helpers over frames [F, C, H, W]; results are [F, out_dim].
RealTensor infer(const Model& model, const RealTensor& frames);
RealTensor infer_ref(const Model& model, const RealTensor& frames);
RealTensor frame_at(const RealTensor& frames, Index i);

struct CalibrationOptions {
  double coverage = 1.0;
  PiecewiseLinearFn silu_fit;  // defaults to default_silu_fit() when empty
  PiecewiseLinearFn exp_fit;   // defaults to default_exp_fit() when empty
};

/// Quantizes weights (per-tensor power-of-two scales) and calibrates every
/// activation grid from the reference path run over frames [F, C, H, W].
Model calibrate(const Model& fp_model, const RealTensor& frames,
                const CalibrationOptions& options = {});

}  // namespace emamba
