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

#include "emamba/pipesim.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include "emamba/error.hpp"

namespace emamba {

// Raw JSON text of the committed preset files, generated at configure time.
extern const char* const kPresetEmambaJson;
extern const char* const kPresetNaiveJson;

std::int64_t range_norm_latency(int dim, int units) {
  if (dim <= 0 || units <= 0 || dim % units != 0) {
    throw ConfigError("range-norm unit count " + std::to_string(units) + " does not divide " +
                      std::to_string(dim));
  }
  const std::int64_t batches = (dim + units - 1) / units;
  return batches * (kRangeNormMeanRangeCycles + kRangeNormDivideCycles);
}

// ---------------------------------------------------------------------------
// Tables
// ---------------------------------------------------------------------------

namespace {

StageSpec stage_from_json(const nlohmann::json& j) {
  StageSpec s;
  s.name = j.at("name").get<std::string>();
  const std::string kind = j.value("kind", "constant");
  if (kind == "constant") {
    s.kind = StageSpec::Kind::constant;
    s.cycles = j.at("cycles").get<std::int64_t>();
  } else if (kind == "per_element") {
    s.kind = StageSpec::Kind::per_element;
    s.cycles = j.at("cycles_per_element").get<std::int64_t>();
    const auto& u = j.at("units");
    if (u.is_string()) {
      if (u.get<std::string>() != "U") throw ConfigError("stage " + s.name + ": units must be \"U\" or an integer");
    } else {
      s.units = u.get<int>();
    }
  } else {
    throw ConfigError("stage " + s.name + ": unknown kind " + kind);
  }
  if (j.contains("frame_cycles")) s.frame_cycles = j.at("frame_cycles").get<std::int64_t>();
  s.role = j.value("role", "");
  if (s.cycles < 1 || (s.units && *s.units < 1) || (s.frame_cycles && *s.frame_cycles < 1)) {
    throw ConfigError("stage " + s.name + ": latencies and unit counts must be at least 1");
  }
  return s;
}

nlohmann::json stage_to_json(const StageSpec& s) {
  nlohmann::json j{{"name", s.name}};
  if (s.kind == StageSpec::Kind::constant) {
    j["kind"] = "constant";
    j["cycles"] = s.cycles;
  } else {
    j["kind"] = "per_element";
    j["cycles_per_element"] = s.cycles;
    if (s.units) {
      j["units"] = *s.units;
    } else {
      j["units"] = "U";
    }
  }
  if (s.frame_cycles) j["frame_cycles"] = *s.frame_cycles;
  if (!s.role.empty()) j["role"] = s.role;
  return j;
}

std::vector<StageSpec> stages_from_json(const nlohmann::json& j, const char* key) {
  std::vector<StageSpec> out;
  if (j.contains(key)) {
    for (const auto& s : j.at(key)) out.push_back(stage_from_json(s));
  }
  return out;
}

}  // namespace

StageLatencyTable table_from_json(const nlohmann::json& j) {
  try {
    StageLatencyTable t;
    t.name = j.at("name").get<std::string>();
    t.notes = j.value("notes", "");
    t.prologue = stages_from_json(j, "prologue");
    t.block = stages_from_json(j, "block");
    t.epilogue = stages_from_json(j, "epilogue");
    if (t.prologue.empty() && t.block.empty() && t.epilogue.empty()) {
      throw ConfigError("preset " + t.name + " has no stages");
    }
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad stage-latency table: ") + e.what());
  }
}

nlohmann::json to_json(const StageLatencyTable& t) {
  auto list = [](const std::vector<StageSpec>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& s : v) a.push_back(stage_to_json(s));
    return a;
  };
  return {{"name", t.name},
          {"notes", t.notes},
          {"prologue", list(t.prologue)},
          {"block", list(t.block)},
          {"epilogue", list(t.epilogue)}};
}

StageLatencyTable swap_norm_stage(const StageLatencyTable& base, const StageLatencyTable& donor,
                                  const std::string& name) {
  auto norm_of = [](const StageLatencyTable& t) {
    const auto it = std::find_if(t.block.begin(), t.block.end(),
                                 [](const StageSpec& s) { return s.role == "norm"; });
    if (it == t.block.end()) throw ConfigError("preset " + t.name + " has no norm stage");
    return it;
  };
  StageLatencyTable out = base;
  out.name = name;
  const auto src = norm_of(donor);
  const auto dst = out.block.begin() + (norm_of(base) - base.block.begin());
  *dst = *src;
  return out;
}

StageLatencyTable builtin_preset(const std::string& name) {
  if (name == "emamba") return table_from_json(nlohmann::json::parse(kPresetEmambaJson));
  if (name == "naive-mamba" || name == "naive") {
    return table_from_json(nlohmann::json::parse(kPresetNaiveJson));
  }
  if (name == "naive-mamba+range-norm") {
    return swap_norm_stage(builtin_preset("naive-mamba"), builtin_preset("emamba"), name);
  }
  throw ConfigError("unknown preset '" + name + "'");
}

std::vector<std::string> builtin_preset_names() {
  return {"emamba", "naive-mamba", "naive-mamba+range-norm"};
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

void PipelineConfig::validate() const {
  if (units < 1 || dim < 1 || seq_len < 1 || n_blocks < 0 || frames < 1) {
    throw ConfigError("pipeline config fields must be positive");
  }
  if (dim % units != 0) {
    throw ConfigError("range-norm unit count " + std::to_string(units) + " does not divide " +
                      std::to_string(dim));
  }
  if (!(clock_hz > 0.0) || frame_input_bits < 0) {
    throw ConfigError("clock must be positive and frame bits non-negative");
  }
}

nlohmann::json to_json(const PipelineConfig& c) {
  return {{"units", c.units},       {"dim", c.dim},           {"seq_len", c.seq_len},
          {"n_blocks", c.n_blocks}, {"frames", c.frames},     {"clock_hz", c.clock_hz},
          {"frame_input_bits", c.frame_input_bits}};
}

std::vector<ResolvedStage> resolve_stages(const StageLatencyTable& table,
                                          const PipelineConfig& config) {
  config.validate();
  std::vector<ResolvedStage> out;
  auto add = [&](const StageSpec& s, const std::string& name) {
    std::int64_t cycles = s.cycles;
    if (s.kind == StageSpec::Kind::per_element) {
      const int units = s.units.value_or(config.units);
      cycles = (config.dim + units - 1) / units * s.cycles;
    }
    out.push_back({name, cycles, s.frame_cycles.value_or(cycles)});
  };
  for (const auto& s : table.prologue) add(s, s.name);
  for (int b = 0; b < config.n_blocks; ++b) {
    for (const auto& s : table.block) add(s, "blocks." + std::to_string(b) + "." + s.name);
  }
  for (const auto& s : table.epilogue) add(s, s.name);
  if (out.empty()) throw ConfigError("pipeline has no stages");
  return out;
}

CycleReport simulate_stages(const PipelineConfig& config, const std::vector<ResolvedStage>& stages,
                            ExitTrace* trace) {
  config.validate();
  if (stages.empty()) throw ConfigError("pipeline has no stages");
  for (const auto& s : stages) {
    if (s.token_cycles < 1 || s.frame_cycles < 1) {
      throw ConfigError("stage " + s.name + " has a latency below one cycle");
    }
  }
  const std::size_t n = stages.size();
  const std::int64_t len = config.seq_len;
  const std::int64_t total_tokens = len * config.frames;
  auto cost = [&](std::size_t s, std::int64_t token) {
    return token % len == len - 1 ? stages[s].frame_cycles : stages[s].token_cycles;
  };

  struct Slot {
    std::int64_t token = -1;
    std::int64_t remaining = 0;
  };
  std::vector<Slot> slots(n);
  std::vector<StageProfile> prof(n);
  for (std::size_t s = 0; s < n; ++s) {
    prof[s].name = stages[s].name;
    prof[s].token_cycles = stages[s].token_cycles;
    prof[s].frame_cycles = stages[s].frame_cycles;
  }
  if (trace) trace->assign(n, {});
  std::vector<std::int64_t> retire(static_cast<std::size_t>(total_tokens), 0);
  std::vector<std::int64_t> arrive_last(static_cast<std::size_t>(total_tokens), 0);

  std::int64_t next = 0, retired = 0, t = 0;
  auto leave = [&](std::size_t s) {
    ++prof[s].tokens;
    if (trace) (*trace)[s].push_back(slots[s].token);
  };
  for (;; ++t) {
    // Handshakes, last stage first, so a slot freed this cycle is ready.
    for (std::size_t i = n; i-- > 0;) {
      Slot& cur = slots[i];
      if (cur.token < 0 || cur.remaining > 0) continue;
      if (i + 1 == n) {
        leave(i);
        retire[static_cast<std::size_t>(cur.token)] = t;
        cur.token = -1;
        ++retired;
      } else if (slots[i + 1].token < 0) {
        leave(i);
        slots[i + 1] = {cur.token, cost(i + 1, cur.token)};
        if (i + 2 == n) arrive_last[static_cast<std::size_t>(cur.token)] = t;
        cur.token = -1;
      }
    }
    if (slots[0].token < 0 && next < total_tokens) {
      slots[0] = {next, cost(0, next)};
      if (n == 1) arrive_last[static_cast<std::size_t>(next)] = t;
      ++next;
    }
    if (retired == total_tokens) break;
    for (std::size_t s = 0; s < n; ++s) {
      if (slots[s].token < 0) {
        ++prof[s].idle;
      } else if (slots[s].remaining > 0) {
        --slots[s].remaining;
        ++prof[s].busy;
      } else {
        ++prof[s].stall;
      }
    }
  }

  CycleReport r;
  r.units = config.units;
  r.total_cycles = t;
  r.frame_latency_cycles = retire[static_cast<std::size_t>(len - 1)];
  r.frame_interval_cycles =
      config.frames >= 2 ? retire[static_cast<std::size_t>(total_tokens - 1)] -
                               retire[static_cast<std::size_t>(total_tokens - 1 - len)]
                         : r.frame_latency_cycles;
  r.initiation_interval_cycles =
      len >= 2 ? arrive_last[static_cast<std::size_t>(len - 1)] - arrive_last[static_cast<std::size_t>(len - 2)]
               : r.frame_interval_cycles;
  r.throughput_bits_per_s = static_cast<double>(config.frame_input_bits) * config.clock_hz /
                            static_cast<double>(r.frame_interval_cycles);
  r.stages = std::move(prof);
  return r;
}

CycleReport simulate(const PipelineConfig& config, const StageLatencyTable& table,
                     ExitTrace* trace) {
  CycleReport r = simulate_stages(config, resolve_stages(table, config), trace);
  r.preset = table.name;
  return r;
}

std::vector<std::pair<int, CycleReport>> sweep_units(const PipelineConfig& config,
                                                     const StageLatencyTable& table,
                                                     const std::vector<int>& units) {
  std::vector<std::pair<int, CycleReport>> out;
  for (int u : units) {
    PipelineConfig c = config;
    c.units = u;
    out.emplace_back(u, simulate(c, table));
  }
  return out;
}

std::vector<CycleReport> compare_presets(const PipelineConfig& config) {
  std::vector<CycleReport> out;
  for (const auto& name : builtin_preset_names()) out.push_back(simulate(config, builtin_preset(name)));
  return out;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

nlohmann::json to_json(const CycleReport& r, bool with_stages) {
  nlohmann::json j{{"preset", r.preset},
                   {"units", r.units},
                   {"frame_latency_cycles", r.frame_latency_cycles},
                   {"initiation_interval_cycles", r.initiation_interval_cycles},
                   {"frame_interval_cycles", r.frame_interval_cycles},
                   {"total_cycles", r.total_cycles},
                   {"throughput_bits_per_s", r.throughput_bits_per_s}};
  if (with_stages) {
    nlohmann::json st = nlohmann::json::array();
    for (const auto& s : r.stages) {
      st.push_back({{"name", s.name},
                    {"token_cycles", s.token_cycles},
                    {"frame_cycles", s.frame_cycles},
                    {"tokens", s.tokens},
                    {"busy", s.busy},
                    {"stall", s.stall},
                    {"idle", s.idle}});
    }
    j["stages"] = std::move(st);
  }
  return j;
}

namespace {

std::string mbps(double bits_per_s) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << bits_per_s / 1e6;
  return os.str();
}

std::string render(const std::vector<std::string>& header,
                   const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) {
    width[c] = header[c].size();
    for (const auto& r : rows) width[c] = std::max(width[c], r[c].size());
  }
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      // First column left-aligned, numbers right-aligned.
      if (c == 0) {
        os << std::left << std::setw(static_cast<int>(width[c])) << cells[c];
      } else {
        os << "  " << std::right << std::setw(static_cast<int>(width[c])) << cells[c];
      }
    }
    os << '\n';
  };
  line(header);
  std::size_t total = 0;
  for (std::size_t w : width) total += w;
  os << std::string(total + 2 * (width.size() - 1), '-') << '\n';
  for (const auto& r : rows) line(r);
  return os.str();
}

}  // namespace

std::string format_reports(const std::vector<CycleReport>& reports) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : reports) {
    rows.push_back({r.preset, std::to_string(r.units), std::to_string(r.frame_latency_cycles),
                    std::to_string(r.initiation_interval_cycles),
                    std::to_string(r.frame_interval_cycles), mbps(r.throughput_bits_per_s)});
  }
  return render({"preset", "units", "latency", "ii", "frame_ii", "Mb/s"}, rows);
}

std::string format_stages(const CycleReport& report) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& s : report.stages) {
    rows.push_back({s.name, std::to_string(s.token_cycles), std::to_string(s.frame_cycles),
                    std::to_string(s.busy), std::to_string(s.stall), std::to_string(s.idle)});
  }
  return render({"stage", "cycles", "last", "busy", "stall", "idle"}, rows);
}

std::string sweep_csv(const std::vector<std::pair<int, CycleReport>>& sweep, int dim) {
  std::ostringstream os;
  os << "units,range_norm_cycles,frame_latency_cycles,initiation_interval_cycles,"
        "frame_interval_cycles,throughput_bits_per_s\n";
  for (const auto& [u, r] : sweep) {
    os << u << ',' << range_norm_latency(dim, u) << ',' << r.frame_latency_cycles << ','
       << r.initiation_interval_cycles << ',' << r.frame_interval_cycles << ','
       << std::fixed << std::setprecision(1) << r.throughput_bits_per_s << '\n';
  }
  return os.str();
}

}  // namespace emamba
