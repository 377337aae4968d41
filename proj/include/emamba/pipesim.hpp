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

// Cycle-stepped model of the layer-wise token pipeline. Stages form a chain
// with a single-token register per stage and a ready/valid handshake between
// neighbours: a finished token moves on only when the next stage is empty.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "emamba/error.hpp"

namespace emamba {

/// Cycles per element of one range-normalization unit: 2 for mean and
/// range, 23 for division, multiplication, addition and shifting.
inline constexpr int kRangeNormMeanRangeCycles = 2;
inline constexpr int kRangeNormDivideCycles = 23;
inline constexpr int kRangeNormCyclesPerElement = kRangeNormMeanRangeCycles + kRangeNormDivideCycles;

/// ceil(dim / units) * 25. Throws ConfigError unless units divides dim.
std::int64_t range_norm_latency(int dim, int units);

struct StageSpec {
  enum class Kind { constant, per_element };

  std::string name;
  Kind kind = Kind::constant;
  /// constant: cycles per token. per_element: cycles per element batch.
  std::int64_t cycles = 1;
  /// per_element only; nullopt means the pipeline's unit count U.
  std::optional<int> units;
  /// When set, the last token of each frame costs this instead of `cycles`.
  std::optional<std::int64_t> frame_cycles;
  /// Free-form tag; the stage tagged "norm" is the one swapped by ablations.
  std::string role;

  friend bool operator==(const StageSpec&, const StageSpec&) = default;
};

/// Stage list in block-diagram order: prologue, `block` repeated once per
/// Mamba block, epilogue.
struct StageLatencyTable {
  std::string name;
  std::string notes;
  std::vector<StageSpec> prologue;
  std::vector<StageSpec> block;
  std::vector<StageSpec> epilogue;

  friend bool operator==(const StageLatencyTable&, const StageLatencyTable&) = default;
};

StageLatencyTable table_from_json(const nlohmann::json& j);
nlohmann::json to_json(const StageLatencyTable& t);

/// Built-in presets: "emamba", "naive-mamba" and "naive-mamba+range-norm".
StageLatencyTable builtin_preset(const std::string& name);
std::vector<std::string> builtin_preset_names();

/// Copy of `base` whose norm-tagged block stage is replaced by the one in `donor`.
StageLatencyTable swap_norm_stage(const StageLatencyTable& base, const StageLatencyTable& donor,
                                  const std::string& name);

struct PipelineConfig {
  int units = 20;          // range-normalization compute units U
  int dim = 20;            // token dimension D
  int seq_len = 16;        // tokens per frame L
  int n_blocks = 2;        // Mamba blocks M
  int frames = 2;          // frames pushed back to back
  double clock_hz = 100e6;
  std::int64_t frame_input_bits = 8 * 8 * 5 * 8;

  void validate() const;
};

nlohmann::json to_json(const PipelineConfig& c);

struct ResolvedStage {
  std::string name;
  std::int64_t token_cycles = 1;
  std::int64_t frame_cycles = 1;  // cost of the last token of a frame
};

/// Expands the table for the config; every latency is at least one cycle.
std::vector<ResolvedStage> resolve_stages(const StageLatencyTable& table,
                                          const PipelineConfig& config);

struct StageProfile {
  std::string name;
  std::int64_t token_cycles = 0;
  std::int64_t frame_cycles = 0;
  std::int64_t tokens = 0;
  std::int64_t busy = 0;
  std::int64_t stall = 0;  // holding a finished token the next stage cannot take
  std::int64_t idle = 0;

  friend bool operator==(const StageProfile&, const StageProfile&) = default;
};

struct CycleReport {
  std::string preset;
  int units = 0;
  /// Cycle at which the first frame's output is complete (inputs arrive at 0).
  std::int64_t frame_latency_cycles = 0;
  /// Steady-state spacing of consecutive tokens arriving at the final stage.
  std::int64_t initiation_interval_cycles = 0;
  /// Spacing of consecutive frame completions (frame latency for one frame).
  std::int64_t frame_interval_cycles = 0;
  std::int64_t total_cycles = 0;
  double throughput_bits_per_s = 0.0;  // frame_input_bits * clock / frame interval
  std::vector<StageProfile> stages;

  friend bool operator==(const CycleReport&, const CycleReport&) = default;
};

/// Tokens leaving each stage, in order; filled by simulate when requested.
using ExitTrace = std::vector<std::vector<std::int64_t>>;

CycleReport simulate(const PipelineConfig& config, const StageLatencyTable& table,
                     ExitTrace* trace = nullptr);
/// Simulation of an explicit stage chain (no preset expansion).
CycleReport simulate_stages(const PipelineConfig& config, const std::vector<ResolvedStage>& stages,
                            ExitTrace* trace = nullptr);

std::vector<std::pair<int, CycleReport>> sweep_units(const PipelineConfig& config,
                                                     const StageLatencyTable& table,
                                                     const std::vector<int>& units);

/// emamba, naive-mamba and the naive + range-norm ablation, in that order.
std::vector<CycleReport> compare_presets(const PipelineConfig& config);

nlohmann::json to_json(const CycleReport& r, bool with_stages = true);
/// Aligned-column text table, one row per report.
std::string format_reports(const std::vector<CycleReport>& reports);
std::string format_stages(const CycleReport& report);
/// units,range_norm_cycles,frame_latency_cycles,initiation_interval_cycles,
/// frame_interval_cycles,throughput_bits_per_s
std::string sweep_csv(const std::vector<std::pair<int, CycleReport>>& sweep, int dim);

}  // namespace emamba
