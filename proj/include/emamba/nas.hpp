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

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "emamba/mamba.hpp"
#include "emamba/pipesim.hpp"
#include "emamba/tensor.hpp"

namespace emamba {

/// Exact parameter count of MambaWeights for the config.
std::int64_t param_count(const MambaConfig& config);
/// Storage bytes: norm parameters at 16 bits, everything else at weight_bits.
std::int64_t model_bytes(const MambaConfig& config, int weight_bits);

/// Value lists swept as a Cartesian product in D, E, P, N, M order. Fields
/// not swept come from `base`.
struct HyperGrid {
  std::vector<int> d_model, expand, patch_size, d_state, n_blocks;
  MambaConfig base;

  std::size_t size() const;
};

HyperGrid grid_from_json(const nlohmann::json& j);
nlohmann::json to_json(const HyperGrid& g);
/// Grid shipped with the tool: the MARS configuration and its neighbours.
HyperGrid default_grid();

/// "D=20,E=2,P=2,N=8,M=2".
std::string config_key(const MambaConfig& c);

enum class Polarity { lower_better, higher_better };

struct MetricsTable {
  std::string name = "metric";
  Polarity polarity = Polarity::lower_better;
  std::map<std::string, double> values;  // keyed by config_key
};

/// {"metric": name, "polarity": "lower"|"higher",
///  "points": [{"D":..,"E":..,"P":..,"N":..,"M":..,"value":..}, ...]}
MetricsTable metrics_from_json(const nlohmann::json& j);

struct NasPoint {
  MambaConfig config;
  std::int64_t param_count = 0;
  std::int64_t model_bytes = 0;
  std::int64_t latency_cycles = 0;
  int units = 0;  // range-norm units actually simulated
  std::optional<double> metric;
  bool on_front = false;
};

struct SweepOptions {
  PipelineConfig pipeline;
  StageLatencyTable preset = builtin_preset("emamba");
  int weight_bits = 8;
  std::optional<MetricsTable> metrics;
};

/// Evaluates every valid grid point in deterministic grid order. Points whose
/// frame geometry is not divisible by P are skipped. Each point simulates with
/// the largest divisor of D not above pipeline.units. Throws ParseError listing
/// metrics keys that match no grid point.
std::vector<NasPoint> sweep(const HyperGrid& grid, const SweepOptions& options);

enum class Sense { minimize, maximize };

/// Indices of the non-dominated rows, stably ordered by the first objective
/// (in its optimisation direction). p dominates q when p is no worse on every
/// objective and strictly better on at least one.
std::vector<std::size_t> pareto_indices(const std::vector<std::vector<double>>& values,
                                        const std::vector<Sense>& senses);

/// Objectives by name: "params", "bytes", "latency", "metric".
struct Objective {
  std::string name;
  Sense sense = Sense::minimize;
};

/// Throws InvalidInput naming the first point lacking an objective value.
std::vector<NasPoint> pareto_front(const std::vector<NasPoint>& points,
                                   const std::vector<Objective>& objectives);
/// Sets on_front on every point of `points`.
void mark_front(std::vector<NasPoint>& points, const std::vector<Objective>& objectives);
/// params (minimize) and metric in its declared polarity.
std::vector<Objective> default_objectives(Polarity metric_polarity);

nlohmann::json to_json(const NasPoint& p);
/// D,E,P,N,M,params,bytes,latency,metric,on_front
std::string sweep_csv(const std::vector<NasPoint>& points);

enum class Task { regression, classification };
Task task_from_string(const std::string& s);

struct MetricRecord {
  Task task = Task::regression;
  std::int64_t samples = 0;
  std::vector<double> mae_axis, rmse_axis;  // regression only
  double mae = 0.0, rmse = 0.0;             // averaged over axes
  double accuracy = 0.0;                    // classification only, in [0, 1]
};

/// Regression: [F, out] against [F, out]. When out is a multiple of 3 the
/// columns split into three planar axes (first out/3 columns are x, then y,
/// then z); otherwise a single axis. Classification: [F, classes] scores
/// against [F] class indices or one-hot [F, classes]; top-1 uses the first
/// maximum.
MetricRecord eval_metrics(const RealTensor& predictions, const RealTensor& ground_truth,
                          Task task);
nlohmann::json to_json(const MetricRecord& r);

}  // namespace emamba
