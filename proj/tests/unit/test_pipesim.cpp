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

#include <algorithm>
#include <numeric>
#include <random>

#include "emamba/pipesim.hpp"

using namespace emamba;

namespace {

PipelineConfig pipe(int seq_len, int frames) {
  PipelineConfig c;
  c.seq_len = seq_len;
  c.frames = frames;
  return c;
}

std::vector<ResolvedStage> chain(const std::vector<std::int64_t>& cycles) {
  std::vector<ResolvedStage> s;
  for (std::size_t i = 0; i < cycles.size(); ++i) {
    s.push_back({"s" + std::to_string(i), cycles[i], cycles[i]});
  }
  return s;
}

}  // namespace

TEST_CASE("range-norm latency curve") {
  CHECK(range_norm_latency(20, 1) == 500);
  CHECK(range_norm_latency(20, 20) == 25);
  CHECK(range_norm_latency(20, 10) == 2 * range_norm_latency(20, 20));
  for (int u : {1, 2, 4, 5, 10, 20}) CHECK(range_norm_latency(20, u) == 25 * ((20 + u - 1) / u));
  CHECK_THROWS_AS(range_norm_latency(20, 3), ConfigError);
  CHECK_THROWS_AS(range_norm_latency(20, 0), ConfigError);
}

TEST_CASE("single stage: no overlap") {
  for (std::int64_t c : {1, 3, 40}) {
    const CycleReport r = simulate_stages(pipe(16, 1), chain({c}));
    CHECK(r.frame_latency_cycles == 16 * c);
    CHECK(r.initiation_interval_cycles == c);
  }
}

TEST_CASE("the slowest stage sets the initiation interval") {
  const CycleReport r = simulate_stages(pipe(16, 2), chain({3, 11}));
  CHECK(r.initiation_interval_cycles == 11);
  CHECK(r.frame_interval_cycles == 16 * 11);
  const CycleReport r2 = simulate_stages(pipe(16, 2), chain({11, 3}));
  CHECK(r2.initiation_interval_cycles == 11);
  // Fill then drain: first token through both stages, then L - 1 bottleneck slots.
  CHECK(r.frame_latency_cycles == 3 + 11 * 16);
}

TEST_CASE("random chains obey the pipeline laws") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng() % 8;
    std::vector<ResolvedStage> stages;
    std::int64_t bottleneck = 0, sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::int64_t c = 1 + static_cast<std::int64_t>(rng() % 50);
      const std::int64_t last = (rng() % 4 == 0) ? 1 + static_cast<std::int64_t>(rng() % 80) : c;
      stages.push_back({"s" + std::to_string(i), c, last});
      bottleneck = std::max(bottleneck, c);
      sum += c;
    }
    const int len = 2 + static_cast<int>(rng() % 20), frames = 1 + static_cast<int>(rng() % 3);
    ExitTrace trace;
    const CycleReport r = simulate_stages(pipe(len, frames), stages, &trace);
    const std::int64_t tokens = std::int64_t{len} * frames;

    CHECK(r.frame_latency_cycles >= r.initiation_interval_cycles);
    CHECK(r.initiation_interval_cycles >= 1);
    for (std::size_t s = 0; s < n; ++s) {
      const StageProfile& p = r.stages[s];
      // Work conservation: busy time is exactly the work handed to the stage.
      CHECK(p.busy == (tokens - frames) * stages[s].token_cycles + frames * stages[s].frame_cycles);
      CHECK(p.busy + p.stall + p.idle == r.total_cycles);
      CHECK(p.tokens == tokens);
      // In-order delivery.
      std::vector<std::int64_t> want(static_cast<std::size_t>(tokens));
      std::iota(want.begin(), want.end(), 0);
      CHECK(trace[s] == want);
    }
    // Without a special last-token cost the steady state runs at the bottleneck.
    bool uniform = true;
    for (const auto& s : stages) uniform = uniform && s.frame_cycles == s.token_cycles;
    if (uniform) {
      CHECK(r.initiation_interval_cycles == bottleneck);
      CHECK(r.frame_latency_cycles == sum + (len - 1) * bottleneck);
    }
    CHECK(simulate_stages(pipe(len, frames), stages) == r);
  }
}

TEST_CASE("slowing any stage never speeds the pipeline up") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::int64_t> c;
    for (int i = 0; i < 6; ++i) c.push_back(1 + static_cast<std::int64_t>(rng() % 30));
    const CycleReport base = simulate_stages(pipe(12, 2), chain(c));
    c[rng() % 6] += 1 + static_cast<std::int64_t>(rng() % 10);
    const CycleReport slower = simulate_stages(pipe(12, 2), chain(c));
    CHECK(slower.frame_latency_cycles >= base.frame_latency_cycles);
    CHECK(slower.frame_interval_cycles >= base.frame_interval_cycles);
  }
}

TEST_CASE("presets resolve in block-diagram order") {
  const StageLatencyTable t = builtin_preset("emamba");
  const auto stages = resolve_stages(t, PipelineConfig{});
  CHECK(stages.front().name == t.prologue.front().name);
  CHECK(stages.back().name == t.epilogue.back().name);
  CHECK(stages.size() == t.prologue.size() + 2 * t.block.size() + t.epilogue.size());
  CHECK(stages[t.prologue.size()].name == "blocks.0." + t.block.front().name);
  for (const auto& s : stages) CHECK(s.token_cycles >= 1);
  for (const auto& name : builtin_preset_names()) CHECK_NOTHROW(builtin_preset(name));
  CHECK_THROWS_AS(builtin_preset("nope"), ConfigError);
  CHECK(table_from_json(to_json(t)) == t);
  CHECK(builtin_preset("naive") == builtin_preset("naive-mamba"));
}

TEST_CASE("preset latencies") {
  const PipelineConfig c;
  const auto reports = compare_presets(c);
  REQUIRE(reports.size() == 3);
  // Regression values of the shipped presets, within 2% of the published targets.
  CHECK(reports[0].frame_latency_cycles == 1668);
  CHECK(reports[1].frame_latency_cycles == 10294);
  CHECK(reports[2].frame_latency_cycles == 2484);
  CHECK(reports[0].frame_latency_cycles == doctest::Approx(1643).epsilon(0.15));
  CHECK(reports[1].frame_latency_cycles == doctest::Approx(10220).epsilon(0.15));
  CHECK(reports[2].frame_latency_cycles == doctest::Approx(2480).epsilon(0.15));
  CHECK(reports[0].throughput_bits_per_s ==
        doctest::Approx(2560.0 * 100e6 / static_cast<double>(reports[0].frame_interval_cycles)));
}

TEST_CASE("unit sweep: monotone with diminishing returns") {
  const auto sweep = sweep_units(PipelineConfig{}, builtin_preset("emamba"), {1, 2, 4, 5, 10, 20, 10});
  std::vector<std::int64_t> lat;
  for (const auto& [u, r] : sweep) lat.push_back(r.frame_latency_cycles);
  for (std::size_t i = 1; i < 6; ++i) CHECK(lat[i] < lat[i - 1]);
  const double gain_5_10 = static_cast<double>(lat[3] - lat[4]) / static_cast<double>(lat[3]);
  const double gain_10_20 = static_cast<double>(lat[4] - lat[5]) / static_cast<double>(lat[4]);
  CHECK(gain_10_20 < gain_5_10);
  CHECK(sweep[6].second == sweep[4].second);  // duplicate entry, identical report
  CHECK_THROWS_AS(sweep_units(PipelineConfig{}, builtin_preset("emamba"), {3}), ConfigError);

  const std::string csv = sweep_csv(sweep, 20);
  CHECK(csv.rfind("units,range_norm_cycles,", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 8);
}

TEST_CASE("norm swap builds the ablation") {
  const StageLatencyTable ab =
      swap_norm_stage(builtin_preset("naive-mamba"), builtin_preset("emamba"), "x");
  CHECK(ab.name == "x");
  const auto is_norm = [](const StageSpec& s) { return s.role == "norm"; };
  const auto norm = std::find_if(ab.block.begin(), ab.block.end(), is_norm);
  const auto& donor = builtin_preset("emamba").block;
  REQUIRE(norm != ab.block.end());
  CHECK(*norm == *std::find_if(donor.begin(), donor.end(), is_norm));
}

TEST_CASE("table and pipeline validation") {
  CHECK_THROWS_AS(table_from_json(nlohmann::json{{"block", "x"}}), ParseError);
  PipelineConfig bad;
  bad.units = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(simulate_stages(PipelineConfig{}, chain({0})), ConfigError);
  CHECK_THROWS_AS(simulate_stages(PipelineConfig{}, {}), ConfigError);
}
