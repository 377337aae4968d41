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

#include "emamba/nas.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "emamba/approx.hpp"

namespace emamba {

extern const char* const kDefaultGridJson;

std::int64_t param_count(const MambaConfig& c) {
  c.validate();
  const std::int64_t d = c.d_model, ed = c.inner(), n = c.d_state, k = c.conv_kernel;
  const std::int64_t block = 2 * d                  // norm gamma, beta
                             + 2 * (ed * d + ed)    // in-projections, main and gate
                             + (ed * k + ed)        // depthwise conv
                             + (ed * ed + ed)       // delta projection
                             + 2 * (n * ed + n)     // B and C projections
                             + ed * n + ed          // A, D skip
                             + (d * ed + d);        // out-projection
  const std::int64_t embed = d * c.patch_dim() + d;
  const std::int64_t head = std::int64_t{c.out_dim} * d + c.out_dim;
  return embed + c.n_blocks * block + head;
}

std::int64_t model_bytes(const MambaConfig& c, int weight_bits) {
  const std::int64_t norm = 2 * std::int64_t{c.d_model} * c.n_blocks;
  const std::int64_t wide = (kNormParamBits + 7) / 8;
  return norm * wide + (param_count(c) - norm) * ((weight_bits + 7) / 8);
}

// ---------------------------------------------------------------------------
// Grid and metrics
// ---------------------------------------------------------------------------

std::size_t HyperGrid::size() const {
  return d_model.size() * expand.size() * patch_size.size() * d_state.size() * n_blocks.size();
}

HyperGrid grid_from_json(const nlohmann::json& j) {
  try {
    HyperGrid g;
    if (j.contains("base")) g.base = config_from_json(j.at("base"));
    auto list = [&](const char* key, int fallback) {
      std::vector<int> v = j.contains(key) ? j.at(key).get<std::vector<int>>() : std::vector<int>{fallback};
      if (v.empty()) throw ConfigError(std::string("grid list ") + key + " is empty");
      return v;
    };
    g.d_model = list("D", g.base.d_model);
    g.expand = list("E", g.base.expand);
    g.patch_size = list("P", g.base.patch_size);
    g.d_state = list("N", g.base.d_state);
    g.n_blocks = list("M", g.base.n_blocks);
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad grid file: ") + e.what());
  }
}

nlohmann::json to_json(const HyperGrid& g) {
  return {{"D", g.d_model}, {"E", g.expand},   {"P", g.patch_size},
          {"N", g.d_state}, {"M", g.n_blocks}, {"base", to_json(g.base)}};
}

HyperGrid default_grid() { return grid_from_json(nlohmann::json::parse(kDefaultGridJson)); }

std::string config_key(const MambaConfig& c) {
  return "D=" + std::to_string(c.d_model) + ",E=" + std::to_string(c.expand) +
         ",P=" + std::to_string(c.patch_size) + ",N=" + std::to_string(c.d_state) +
         ",M=" + std::to_string(c.n_blocks);
}

MetricsTable metrics_from_json(const nlohmann::json& j) {
  try {
    MetricsTable t;
    t.name = j.value("metric", "metric");
    const std::string pol = j.value("polarity", "lower");
    if (pol == "lower") {
      t.polarity = Polarity::lower_better;
    } else if (pol == "higher") {
      t.polarity = Polarity::higher_better;
    } else {
      throw ParseError("metrics polarity must be \"lower\" or \"higher\", got \"" + pol + "\"");
    }
    for (const auto& p : j.at("points")) {
      MambaConfig c;
      c.d_model = p.at("D").get<int>();
      c.expand = p.at("E").get<int>();
      c.patch_size = p.at("P").get<int>();
      c.d_state = p.at("N").get<int>();
      c.n_blocks = p.at("M").get<int>();
      const std::string key = config_key(c);
      if (!t.values.emplace(key, p.at("value").get<double>()).second) {
        throw ParseError("metrics file repeats key " + key);
      }
    }
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad metrics file: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

namespace {

int divisor_at_most(int dim, int units) {
  for (int u = std::min(dim, units); u > 1; --u) {
    if (dim % u == 0) return u;
  }
  return 1;
}

}  // namespace

std::vector<NasPoint> sweep(const HyperGrid& grid, const SweepOptions& options) {
  if (grid.size() == 0) throw ConfigError("grid is empty");
  std::vector<NasPoint> out;
  std::set<std::string> matched;
  for (int d : grid.d_model) {
    for (int e : grid.expand) {
      for (int p : grid.patch_size) {
        for (int n : grid.d_state) {
          for (int m : grid.n_blocks) {
            MambaConfig c = grid.base;
            c.d_model = d;
            c.expand = e;
            c.patch_size = p;
            c.d_state = n;
            c.n_blocks = m;
            try {
              c.validate();
            } catch (const ConfigError&) {
              continue;
            }
            NasPoint pt;
            pt.config = c;
            pt.param_count = param_count(c);
            pt.model_bytes = model_bytes(c, options.weight_bits);
            PipelineConfig pc = options.pipeline;
            pc.dim = d;
            pc.units = divisor_at_most(d, options.pipeline.units);
            pc.seq_len = c.seq_len();
            pc.n_blocks = m;
            pt.units = pc.units;
            pt.latency_cycles = simulate(pc, options.preset).frame_latency_cycles;
            if (options.metrics) {
              const auto it = options.metrics->values.find(config_key(c));
              if (it != options.metrics->values.end()) {
                pt.metric = it->second;
                matched.insert(it->first);
              }
            }
            out.push_back(pt);
          }
        }
      }
    }
  }
  if (options.metrics) {
    std::string unmatched;
    for (const auto& [key, v] : options.metrics->values) {
      if (!matched.count(key)) unmatched += (unmatched.empty() ? "" : "; ") + key;
    }
    if (!unmatched.empty()) throw ParseError("metrics keys match no grid point: " + unmatched);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pareto front
// ---------------------------------------------------------------------------

std::vector<std::size_t> pareto_indices(const std::vector<std::vector<double>>& values,
                                        const std::vector<Sense>& senses) {
  if (senses.empty()) throw ConfigError("at least one objective is required");
  const std::size_t k = senses.size();
  for (const auto& row : values) {
    if (row.size() != k) throw ConfigError("objective row width mismatch");
  }
  // Orient every objective as "smaller is better".
  auto at = [&](std::size_t i, std::size_t o) {
    return senses[o] == Sense::minimize ? values[i][o] : -values[i][o];
  };
  auto dominates = [&](std::size_t p, std::size_t q) {
    bool strict = false;
    for (std::size_t o = 0; o < k; ++o) {
      if (at(p, o) > at(q, o)) return false;
      if (at(p, o) < at(q, o)) strict = true;
    }
    return strict;
  };
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return at(a, 0) < at(b, 0); });
  // Sweep in first-objective order: only earlier-or-tied rows can dominate.
  std::vector<std::size_t> front;
  for (std::size_t i = 0; i < order.size(); ++i) {
    bool dominated = false;
    for (std::size_t j = 0; j < order.size() && !dominated; ++j) {
      if (at(order[j], 0) > at(order[i], 0)) break;
      dominated = j != i && dominates(order[j], order[i]);
    }
    if (!dominated) front.push_back(order[i]);
  }
  return front;
}

namespace {

std::vector<std::vector<double>> objective_rows(const std::vector<NasPoint>& points,
                                                const std::vector<Objective>& objectives) {
  std::vector<std::vector<double>> rows;
  for (const auto& p : points) {
    std::vector<double> row;
    for (const auto& o : objectives) {
      if (o.name == "params") {
        row.push_back(static_cast<double>(p.param_count));
      } else if (o.name == "bytes") {
        row.push_back(static_cast<double>(p.model_bytes));
      } else if (o.name == "latency") {
        row.push_back(static_cast<double>(p.latency_cycles));
      } else if (o.name == "metric") {
        if (!p.metric) throw InvalidInput("point " + config_key(p.config) + " has no metric value");
        row.push_back(*p.metric);
      } else {
        throw ConfigError("unknown objective '" + o.name + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<Sense> senses_of(const std::vector<Objective>& objectives) {
  std::vector<Sense> s;
  for (const auto& o : objectives) s.push_back(o.sense);
  return s;
}

}  // namespace

std::vector<NasPoint> pareto_front(const std::vector<NasPoint>& points,
                                   const std::vector<Objective>& objectives) {
  std::vector<NasPoint> out;
  for (std::size_t i : pareto_indices(objective_rows(points, objectives), senses_of(objectives))) {
    out.push_back(points[i]);
    out.back().on_front = true;
  }
  return out;
}

void mark_front(std::vector<NasPoint>& points, const std::vector<Objective>& objectives) {
  for (auto& p : points) p.on_front = false;
  for (std::size_t i : pareto_indices(objective_rows(points, objectives), senses_of(objectives))) {
    points[i].on_front = true;
  }
}

std::vector<Objective> default_objectives(Polarity metric_polarity) {
  return {{"params", Sense::minimize},
          {"metric", metric_polarity == Polarity::lower_better ? Sense::minimize : Sense::maximize}};
}

nlohmann::json to_json(const NasPoint& p) {
  nlohmann::json j{{"D", p.config.d_model},   {"E", p.config.expand},   {"P", p.config.patch_size},
                   {"N", p.config.d_state},   {"M", p.config.n_blocks}, {"params", p.param_count},
                   {"bytes", p.model_bytes},  {"latency", p.latency_cycles},
                   {"units", p.units},        {"on_front", p.on_front}};
  j["metric"] = p.metric ? nlohmann::json(*p.metric) : nlohmann::json(nullptr);
  return j;
}

std::string sweep_csv(const std::vector<NasPoint>& points) {
  std::ostringstream os;
  os << "D,E,P,N,M,params,bytes,latency,metric,on_front\n";
  for (const auto& p : points) {
    os << p.config.d_model << ',' << p.config.expand << ',' << p.config.patch_size << ','
       << p.config.d_state << ',' << p.config.n_blocks << ',' << p.param_count << ','
       << p.model_bytes << ',' << p.latency_cycles << ',';
    if (p.metric) os << *p.metric;
    os << ',' << (p.on_front ? 1 : 0) << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

Task task_from_string(const std::string& s) {
  if (s == "regression") return Task::regression;
  if (s == "classification") return Task::classification;
  throw ConfigError("task must be regression or classification, got '" + s + "'");
}

namespace {

Index argmax_row(const RealTensor& t, Index row, Index width) {
  Index best = 0;
  for (Index c = 1; c < width; ++c) {
    if (t.data[row * width + c] > t.data[row * width + best]) best = c;
  }
  return best;
}

}  // namespace

MetricRecord eval_metrics(const RealTensor& pred, const RealTensor& gt, Task task) {
  MetricRecord r;
  r.task = task;
  if (pred.rank() != 2) throw InvalidInput("predictions must be [F, out]");
  const Index frames = pred.dim(0), width = pred.dim(1);
  if (gt.rank() < 1 || gt.dim(0) != frames) {
    throw InvalidInput("predictions cover " + std::to_string(frames) + " frames, labels " +
                       (gt.rank() ? std::to_string(gt.dim(0)) : std::string("none")));
  }
  r.samples = frames;
  if (task == Task::regression) {
    if (gt.shape != pred.shape) {
      throw InvalidInput("label shape " + shape_string(gt.shape) + " differs from prediction " +
                         shape_string(pred.shape));
    }
    const Index axes = width % 3 == 0 && width > 0 ? 3 : 1;
    const Index per = width / axes;
    for (Index a = 0; a < axes; ++a) {
      double abs_sum = 0.0, sq_sum = 0.0;
      for (Index f = 0; f < frames; ++f) {
        for (Index c = a * per; c < (a + 1) * per; ++c) {
          const double e = pred.data[f * width + c] - gt.data[f * width + c];
          abs_sum += std::abs(e);
          sq_sum += e * e;
        }
      }
      const double n = static_cast<double>(frames * per);
      r.mae_axis.push_back(n > 0 ? abs_sum / n : 0.0);
      r.rmse_axis.push_back(n > 0 ? std::sqrt(sq_sum / n) : 0.0);
    }
    r.mae = std::accumulate(r.mae_axis.begin(), r.mae_axis.end(), 0.0) / static_cast<double>(axes);
    r.rmse = std::accumulate(r.rmse_axis.begin(), r.rmse_axis.end(), 0.0) / static_cast<double>(axes);
    return r;
  }
  Index correct = 0;
  for (Index f = 0; f < frames; ++f) {
    Index label = 0;
    if (gt.rank() == 1 || (gt.rank() == 2 && gt.dim(1) == 1)) {
      const double v = gt.data[f];
      if (v < 0 || v >= static_cast<double>(width) || v != std::floor(v)) {
        throw InvalidInput("label " + std::to_string(v) + " is not a class index");
      }
      label = static_cast<Index>(v);
    } else if (gt.rank() == 2 && gt.dim(1) == width) {
      label = argmax_row(gt, f, width);
    } else {
      throw InvalidInput("label shape " + shape_string(gt.shape) + " fits neither indices nor one-hot");
    }
    if (argmax_row(pred, f, width) == label) ++correct;
  }
  r.accuracy = frames > 0 ? static_cast<double>(correct) / static_cast<double>(frames) : 0.0;
  return r;
}

nlohmann::json to_json(const MetricRecord& r) {
  nlohmann::json j{{"task", r.task == Task::regression ? "regression" : "classification"},
                   {"samples", r.samples}};
  if (r.task == Task::regression) {
    j["mae_axis"] = r.mae_axis;
    j["rmse_axis"] = r.rmse_axis;
    j["mae"] = r.mae;
    j["rmse"] = r.rmse;
  } else {
    j["accuracy"] = r.accuracy;
  }
  return j;
}

}  // namespace emamba
