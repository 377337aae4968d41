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

// emamba: command-line front end.
//
// Exit codes: 0 success, 1 input/config/parse error, 2 a declared check
// failed (fit bound not met, divergence bound exceeded).

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "emamba/approx.hpp"
#include "emamba/container.hpp"
#include "emamba/mamba.hpp"
#include "emamba/nas.hpp"
#include "emamba/pipesim.hpp"

#ifndef EMAMBA_VERSION
#define EMAMBA_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace emamba {
namespace {

constexpr int kExitCheckFailed = 2;

class CheckFailed : public Error {
 public:
  using Error::Error;
};

std::uint64_t fnv1a(const std::string& bytes, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string read_text(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw Error("cannot open " + p.string());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open " + p.string() + " for writing");
  f << text;
  if (!f) throw Error("write to " + p.string() + " failed");
}

fs::path out_dir() {
  const char* env = std::getenv("EMAMBA_OUT_DIR");
  return env && *env ? fs::path(env) : fs::path(".");
}

fs::path resolve_out(const std::string& given, const std::string& fallback) {
  return given.empty() ? out_dir() / fallback : fs::path(given);
}

/// One per command: what ran, on what, producing what.
struct RunManifest {
  explicit RunManifest(std::string cmd, json opts = json::object(),
                       std::vector<std::string> in = {})
      : command(std::move(cmd)), options(std::move(opts)), inputs(std::move(in)) {}

  std::string command;
  json options;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  json finish() const {
    std::uint64_t h = fnv1a(options.dump());
    for (const auto& in : inputs) h = fnv1a(read_text(in), h);
    std::ostringstream hex;
    hex << std::hex << std::setw(16) << std::setfill('0') << h;
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {{"command", command},     {"inputs", inputs},
            {"config_hash", hex.str()}, {"tool_version", EMAMBA_VERSION},
            {"outputs", outputs},     {"wall_time_s", secs}};
  }
};

struct Common {
  bool json_out = false;
  std::string manifest_path;
};

/// Prints the result and emits the manifest: next to the first output file,
/// at --manifest when given, or inline with --json otherwise.
void emit(const Common& common, RunManifest& m, json result, const std::string& text) {
  json manifest = m.finish();
  fs::path where;
  if (!common.manifest_path.empty()) {
    where = common.manifest_path;
  } else if (!m.outputs.empty()) {
    where = m.outputs.front() + ".manifest.json";
  }
  if (!where.empty()) write_text(where, manifest.dump(2) + "\n");
  if (common.json_out) {
    result["manifest"] = manifest;
    std::cout << result.dump(2) << '\n';
  } else {
    std::cout << text;
    if (where.empty()) std::cerr << "manifest: " << manifest.dump() << '\n';
  }
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_flag("--json", c.json_out, "Machine-readable output");
  sub->add_option("--manifest", c.manifest_path, "Write the run manifest here");
}

std::pair<double, double> parse_domain(const std::string& s) {
  const auto comma = s.find(',');
  if (comma == std::string::npos) throw ConfigError("--domain expects lo,hi");
  try {
    return {std::stod(s.substr(0, comma)), std::stod(s.substr(comma + 1))};
  } catch (const std::exception&) {
    throw ConfigError("--domain expects two numbers, got '" + s + "'");
  }
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw ConfigError("expected a comma-separated integer list, got '" + s + "'");
    }
  }
  if (out.empty()) throw ConfigError("empty integer list");
  return out;
}

MambaConfig load_config(const std::string& path) {
  if (path.empty()) return MambaConfig::mars();
  try {
    return config_from_json(json::parse(read_text(path)));
  } catch (const json::exception& e) {
    throw ParseError("config " + path + ": " + e.what());
  }
}

RealTensor load_single(const std::string& path) {
  const Container c = read_container(path);
  if (c.tensors.size() != 1) {
    throw ParseError(path + " holds " + std::to_string(c.tensors.size()) +
                     " tensors; expected exactly one");
  }
  if (const auto* r = std::get_if<RealTensor>(&c.tensors.front().value)) return *r;
  throw ParseError("tensor '" + c.tensors.front().name + "' in " + path + " is not real-valued");
}

void check_frames(const MambaConfig& c, const RealTensor& frames, const std::string& path) {
  const Shape want{c.in_channels, c.in_height, c.in_width};
  if (frames.rank() != 4 || Shape(frames.shape.begin() + 1, frames.shape.end()) != want) {
    throw ConfigError("tensor 'frames' in " + path + " has shape " + shape_string(frames.shape) +
                      "; model expects [F," + std::to_string(c.in_channels) + "," +
                      std::to_string(c.in_height) + "," + std::to_string(c.in_width) + "]");
  }
}

// ---------------------------------------------------------------------------
// fit-approx
// ---------------------------------------------------------------------------

struct FitArgs {
  Common common;
  std::string fn = "silu";
  std::string domain;
  double max_err = -1.0;
  std::string metric;
  std::string out;
};

void cmd_fit(const FitArgs& a) {
  RunManifest m{"fit-approx"};
  const OracleFn fn = oracle_from_string(a.fn);
  double lo = kSiluDomainLo, hi = kSiluDomainHi, err = kSiluMaxErr;
  ErrorMetric metric = ErrorMetric::relative_with_floor;
  if (fn == OracleFn::exp) {
    lo = kExpDomainLo;
    hi = kExpDomainHi;
    err = kExpMaxErr;
    metric = ErrorMetric::absolute;
  } else if (fn == OracleFn::identity) {
    lo = -1.0;
    hi = 1.0;
    err = 1e-9;
    metric = ErrorMetric::absolute;
  }
  if (!a.domain.empty()) std::tie(lo, hi) = parse_domain(a.domain);
  if (a.max_err > 0.0) err = a.max_err;
  if (!a.metric.empty()) metric = metric_from_string(a.metric);
  m.options = {{"fn", a.fn}, {"lo", lo}, {"hi", hi}, {"max_err", err}, {"metric", to_string(metric)}};

  PiecewiseLinearFn fit;
  try {
    fit = fit_piecewise(fn, lo, hi, err, metric);
  } catch (const FitFailure& e) {
    std::ostringstream os;
    os << e.what() << " (achieved error " << e.achieved_error() << ", bound " << err << ")";
    throw CheckFailed(os.str());
  }
  const double observed = max_fit_error(fit, oracle_function(fn), lo, hi, metric, 100001);
  const fs::path out = resolve_out(a.out, a.fn + "_fit.json");
  json artifact = to_json(fit);
  write_text(out, artifact.dump(2) + "\n");
  m.outputs.push_back(out.string());

  std::ostringstream text;
  text << a.fn << " on [" << lo << ", " << hi << "]: " << fit.segments()
       << " segments, max observed error " << observed << " (" << to_string(metric)
       << ", bound " << err << ")\nwrote " << out.string() << '\n';
  emit(a.common, m,
       {{"fn", a.fn}, {"segments", fit.segments()}, {"max_error", observed}, {"bound", err},
        {"metric", to_string(metric)}, {"out", out.string()}},
       text.str());
}

// ---------------------------------------------------------------------------
// make-model / make-frames
// ---------------------------------------------------------------------------

struct MakeModelArgs {
  Common common;
  std::string config;
  std::uint64_t seed = 1;
  std::string out;
};

void cmd_make_model(const MakeModelArgs& a) {
  RunManifest m{"make-model"};
  if (!a.config.empty()) m.inputs.push_back(a.config);
  const MambaConfig c = load_config(a.config);
  m.options = {{"config", to_json(c)}, {"seed", a.seed}};
  const Model model{c, random_weights(c, a.seed), {}};
  const fs::path out = resolve_out(a.out, "model_fp.bin");
  save_model(out, model);
  m.outputs.push_back(out.string());
  emit(a.common, m, {{"params", param_count(c)}, {"out", out.string()}},
       "random model with " + std::to_string(param_count(c)) + " parameters\nwrote " +
           out.string() + "\n");
}

struct MakeFramesArgs {
  Common common;
  std::string config;
  std::string model;
  int count = 10;
  std::uint64_t seed = 1;
  std::string out;
};

void cmd_make_frames(const MakeFramesArgs& a) {
  RunManifest m{"make-frames"};
  MambaConfig c = load_config(a.config);
  if (!a.model.empty()) {
    c = load_model(a.model).config;
    m.inputs.push_back(a.model);
  } else if (!a.config.empty()) {
    m.inputs.push_back(a.config);
  }
  if (a.count < 1) throw ConfigError("--count must be positive");
  m.options = {{"count", a.count}, {"seed", a.seed}, {"config", to_json(c)}};
  RealTensor frames = RealTensor::zeros({a.count, c.in_channels, c.in_height, c.in_width});
  // Bits of the engine mapped by hand so the values match on every platform.
  std::mt19937_64 rng(a.seed);
  for (Index i = 0; i < frames.size(); ++i) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    frames.data[i] = static_cast<float>(2.0 * u - 1.0);
  }
  const fs::path out = resolve_out(a.out, "frames.bin");
  save_tensor(out, "frames", frames);
  m.outputs.push_back(out.string());
  emit(a.common, m, {{"frames", a.count}, {"shape", frames.shape}, {"out", out.string()}},
       std::to_string(a.count) + " frames " + shape_string(frames.shape) + "\nwrote " +
           out.string() + "\n");
}

// ---------------------------------------------------------------------------
// quantize
// ---------------------------------------------------------------------------

struct QuantizeArgs {
  Common common;
  std::string model_in;
  std::string calib;
  int act_bits = 8;
  double coverage = 1.0;
  std::string out;
};

void cmd_quantize(const QuantizeArgs& a) {
  RunManifest m{"quantize", {{"act_bits", a.act_bits}, {"coverage", a.coverage}},
                {a.model_in, a.calib}};
  Model fp = load_model(a.model_in);
  fp.deployment.reset();
  fp.config.act_bits = a.act_bits;
  fp.config.validate();
  const RealTensor frames = load_single(a.calib);
  check_frames(fp.config, frames, a.calib);
  if (frames.dim(0) == 0) throw InvalidInput("calibration set is empty");
  CalibrationOptions opt;
  opt.coverage = a.coverage;
  const Model q = calibrate(fp, frames, opt);

  // Weight round-trip check: every tensor within half an LSB of its source.
  double worst_lsb = 0.0;
  std::vector<const RealTensor*> src;
  fp.weights.for_each([&](const std::string&, const RealTensor& t) { src.push_back(&t); });
  std::size_t i = 0;
  q.deployment->weights.for_each([&](const std::string&, const QTensor& t) {
    const RealTensor back = dequantize(t);
    const double lsb = std::ldexp(1.0, t.scale_exp());
    for (Index k = 0; k < t.size(); ++k) {
      worst_lsb = std::max(worst_lsb, std::abs(back.data[k] - src[i]->data[k]) / lsb);
    }
    ++i;
  });
  if (worst_lsb > 0.5) {
    throw CheckFailed("weight round-trip error " + std::to_string(worst_lsb) + " LSB exceeds 0.5");
  }
  const fs::path out = resolve_out(a.out, "model_q.bin");
  save_model(out, q);
  m.outputs.push_back(out.string());
  emit(a.common, m,
       {{"frames", frames.dim(0)}, {"weight_roundtrip_lsb", worst_lsb},
        {"scales", to_json(q.deployment->scales)}, {"out", out.string()}},
       "calibrated on " + std::to_string(frames.dim(0)) + " frames; weight round-trip <= " +
           std::to_string(worst_lsb) + " LSB\nwrote " + out.string() + "\n");
}

// ---------------------------------------------------------------------------
// infer / eval
// ---------------------------------------------------------------------------

struct InferArgs {
  Common common;
  std::string model;
  std::string input;
  std::string labels;
  std::string task = "regression";
  std::string out;
  bool reference = false;
  bool compare_float = false;
  double max_lsb = -1.0;
};

json divergence(const Model& model, const RealTensor& frames, const RealTensor& q_pred) {
  const RealTensor f_pred = infer_ref(model, frames);
  const double lsb = std::ldexp(1.0, model.deployment->scales.head);
  double max_abs = 0.0, sum_abs = 0.0;
  for (Index i = 0; i < q_pred.size(); ++i) {
    const double e = std::abs(q_pred.data[i] - f_pred.data[i]);
    max_abs = std::max(max_abs, e);
    sum_abs += e;
  }
  return {{"max_abs", max_abs},
          {"mean_abs", q_pred.size() ? sum_abs / static_cast<double>(q_pred.size()) : 0.0},
          {"max_lsb", max_abs / lsb},
          {"output_lsb", lsb}};
}

void run_infer(const InferArgs& a, bool eval) {
  RunManifest m{eval ? "eval" : "infer"};
  m.inputs = {a.model, a.input};
  if (eval) m.inputs.push_back(a.labels);
  m.options = {{"reference", a.reference}, {"task", a.task}, {"compare_float", a.compare_float}};
  const Model model = load_model(a.model);
  const RealTensor frames = load_single(a.input);
  check_frames(model.config, frames, a.input);
  if (!a.reference && !model.deployment) {
    throw ConfigError(a.model + " holds no quantized deployment; run quantize or pass --reference");
  }
  const RealTensor pred = a.reference ? infer_ref(model, frames) : infer(model, frames);

  json result{{"frames", frames.dim(0)}, {"outputs", pred.shape}, {"path", a.reference ? "float" : "int"}};
  std::ostringstream text;
  text << frames.dim(0) << " frames -> " << shape_string(pred.shape) << " predictions ("
       << (a.reference ? "float reference" : "integer") << " path)\n";

  if (!a.out.empty() || !eval) {
    const fs::path out = resolve_out(a.out, "predictions.bin");
    save_tensor(out, "predictions", pred);
    m.outputs.push_back(out.string());
    result["out"] = out.string();
    text << "wrote " << out.string() << '\n';
  }
  if (eval) {
    const RealTensor labels = load_single(a.labels);
    const MetricRecord rec = eval_metrics(pred, labels, task_from_string(a.task));
    result["metrics"] = to_json(rec);
    if (rec.task == Task::regression) {
      text << "MAE " << rec.mae << "  RMSE " << rec.rmse << "  (per axis MAE";
      for (double v : rec.mae_axis) text << ' ' << v;
      text << ")\n";
    } else {
      text << "top-1 accuracy " << 100.0 * rec.accuracy << "%\n";
    }
  }
  bool failed = false;
  if (a.compare_float && !a.reference) {
    const json d = divergence(model, frames, pred);
    result["divergence"] = d;
    text << "float vs integer: max |diff| " << d["max_abs"].get<double>() << " ("
         << d["max_lsb"].get<double>() << " output LSB), mean |diff| "
         << d["mean_abs"].get<double>() << '\n';
    failed = a.max_lsb >= 0.0 && d["max_lsb"].get<double>() > a.max_lsb;
  }
  emit(a.common, m, result, text.str());
  if (failed) throw CheckFailed("divergence exceeds --max-lsb");
}

// ---------------------------------------------------------------------------
// simulate / compare-presets / sweep
// ---------------------------------------------------------------------------

struct PipeArgs {
  int units = 20;
  int frames = 2;
  double clock_hz = 100e6;
  std::int64_t frame_bits = 8 * 8 * 5 * 8;
  std::string config;

  PipelineConfig make() const {
    const MambaConfig c = load_config(config);
    PipelineConfig p;
    p.units = units;
    p.dim = c.d_model;
    p.seq_len = c.seq_len();
    p.n_blocks = c.n_blocks;
    p.frames = frames;
    p.clock_hz = clock_hz;
    p.frame_input_bits = frame_bits;
    p.validate();
    return p;
  }
};

void add_pipe(CLI::App* sub, PipeArgs& p) {
  sub->add_option("--units", p.units, "Range-normalization compute units");
  sub->add_option("--frames", p.frames, "Frames pushed back to back");
  sub->add_option("--clock-hz", p.clock_hz, "Clock for the throughput figure");
  sub->add_option("--frame-bits", p.frame_bits, "Input bits per frame for the throughput figure");
  sub->add_option("--config", p.config, "Model config JSON (default: MARS)");
}

StageLatencyTable load_table(const std::string& preset, const std::string& file,
                             RunManifest& m) {
  if (!file.empty()) {
    m.inputs.push_back(file);
    try {
      return table_from_json(json::parse(read_text(file)));
    } catch (const json::exception& e) {
      throw ParseError("preset file " + file + ": " + e.what());
    }
  }
  return builtin_preset(preset);
}

struct SimulateArgs {
  Common common;
  PipeArgs pipe;
  std::string preset = "emamba";
  std::string preset_file;
  std::string sweep_units;
  std::string csv;
  bool stages = false;
};

void cmd_simulate(const SimulateArgs& a) {
  RunManifest m{"simulate"};
  if (!a.pipe.config.empty()) m.inputs.push_back(a.pipe.config);
  const StageLatencyTable table = load_table(a.preset, a.preset_file, m);
  const PipelineConfig pc = a.pipe.make();
  m.options = {{"preset", to_json(table)}, {"pipeline", to_json(pc)}, {"sweep_units", a.sweep_units}};

  if (!a.sweep_units.empty()) {
    const auto sweep = sweep_units(pc, table, parse_int_list(a.sweep_units));
    json rows = json::array();
    std::vector<CycleReport> reports;
    for (const auto& [u, r] : sweep) {
      rows.push_back(to_json(r, false));
      reports.push_back(r);
    }
    json result{{"sweep", rows}};
    if (!a.csv.empty()) {
      write_text(a.csv, sweep_csv(sweep, pc.dim));
      m.outputs.push_back(a.csv);
      result["csv"] = a.csv;
    }
    emit(a.common, m, result, format_reports(reports));
    return;
  }
  const CycleReport r = simulate(pc, table);
  std::string text = format_reports({r});
  if (a.stages) text += "\n" + format_stages(r);
  emit(a.common, m, to_json(r, true), text);
}

struct CompareArgs {
  Common common;
  PipeArgs pipe;
};

void cmd_compare(const CompareArgs& a) {
  RunManifest m{"compare-presets"};
  if (!a.pipe.config.empty()) m.inputs.push_back(a.pipe.config);
  const PipelineConfig pc = a.pipe.make();
  m.options = {{"pipeline", to_json(pc)}};
  const auto reports = compare_presets(pc);
  json rows = json::array();
  for (const auto& r : reports) rows.push_back(to_json(r, false));
  std::ostringstream text;
  text << format_reports(reports);
  const double ratio = static_cast<double>(reports[1].frame_latency_cycles) /
                       static_cast<double>(reports[0].frame_latency_cycles);
  text << "naive / emamba latency ratio: " << std::fixed << std::setprecision(2) << ratio << "x\n";
  emit(a.common, m, {{"reports", rows}, {"latency_ratio", ratio}}, text.str());
}

struct SweepArgs {
  Common common;
  PipeArgs pipe;
  std::string grid = "default";
  std::string metrics;
  std::string preset = "emamba";
  std::string csv;
  std::string out;
};

void cmd_sweep(const SweepArgs& a) {
  RunManifest m{"sweep"};
  HyperGrid grid;
  if (a.grid == "default") {
    grid = default_grid();
  } else {
    m.inputs.push_back(a.grid);
    try {
      grid = grid_from_json(json::parse(read_text(a.grid)));
    } catch (const json::exception& e) {
      throw ParseError("grid " + a.grid + ": " + e.what());
    }
  }
  SweepOptions opt;
  opt.preset = builtin_preset(a.preset);
  opt.pipeline.units = a.pipe.units;
  opt.pipeline.frames = a.pipe.frames;
  opt.pipeline.clock_hz = a.pipe.clock_hz;
  opt.pipeline.frame_input_bits = a.pipe.frame_bits;
  Polarity polarity = Polarity::lower_better;
  if (!a.metrics.empty()) {
    m.inputs.push_back(a.metrics);
    try {
      opt.metrics = metrics_from_json(json::parse(read_text(a.metrics)));
    } catch (const json::exception& e) {
      throw ParseError("metrics " + a.metrics + ": " + e.what());
    }
    polarity = opt.metrics->polarity;
  }
  m.options = {{"grid", to_json(grid)}, {"preset", a.preset}, {"units", a.pipe.units}};
  std::vector<NasPoint> points = sweep(grid, opt);

  // Without metrics the front trades parameters against simulated latency.
  std::vector<Objective> objectives =
      opt.metrics ? default_objectives(polarity)
                  : std::vector<Objective>{{"params", Sense::minimize}, {"latency", Sense::minimize}};
  std::vector<NasPoint> with_metric;
  if (opt.metrics) {
    for (auto& p : points) p.on_front = false;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (points[i].metric) {
        idx.push_back(i);
        with_metric.push_back(points[i]);
      }
    }
    mark_front(with_metric, objectives);
    for (std::size_t k = 0; k < idx.size(); ++k) points[idx[k]].on_front = with_metric[k].on_front;
  } else {
    mark_front(points, objectives);
  }

  const fs::path csv = resolve_out(a.csv, "sweep.csv");
  write_text(csv, sweep_csv(points));
  m.outputs.push_back(csv.string());
  json rows = json::array();
  for (const auto& p : points) rows.push_back(to_json(p));
  json objs = json::array();
  for (const auto& o : objectives) {
    objs.push_back({{"name", o.name}, {"sense", o.sense == Sense::minimize ? "min" : "max"}});
  }
  json result{{"points", rows}, {"objectives", objs}, {"csv", csv.string()}};
  if (!a.out.empty()) {
    write_text(a.out, result.dump(2) + "\n");
    m.outputs.push_back(a.out);
  }
  std::size_t front = 0;
  for (const auto& p : points) front += p.on_front ? 1 : 0;
  std::ostringstream text;
  text << points.size() << " grid points, " << front << " on the Pareto front ("
       << objectives[0].name << " vs " << objectives[1].name << ")\nwrote " << csv.string() << '\n';
  emit(a.common, m, result, text.str());
}

}  // namespace
}  // namespace emamba

int main(int argc, char** argv) {
  using namespace emamba;
  CLI::App app{"Integer-only Mamba inference, approximation fitting, pipeline simulation and "
               "architecture sweeps"};
  app.set_version_flag("--version", EMAMBA_VERSION);
  app.require_subcommand(1);

  FitArgs fit;
  auto* s_fit = app.add_subcommand("fit-approx", "Fit a piecewise-linear approximation");
  s_fit->add_option("--fn", fit.fn, "silu | exp | identity")->check(CLI::IsMember({"silu", "exp", "identity"}));
  s_fit->add_option("--domain", fit.domain, "lo,hi");
  s_fit->add_option("--max-err", fit.max_err, "Error bound");
  s_fit->add_option("--metric", fit.metric, "relative | absolute")->check(CLI::IsMember({"relative", "absolute"}));
  s_fit->add_option("--out", fit.out, "Artifact path (JSON)");
  add_common(s_fit, fit.common);

  MakeModelArgs mk;
  auto* s_mk = app.add_subcommand("make-model", "Write a random float model container");
  s_mk->add_option("--config", mk.config, "Model config JSON (default: MARS)");
  s_mk->add_option("--seed", mk.seed, "Weight seed");
  s_mk->add_option("--out", mk.out, "Container path");
  add_common(s_mk, mk.common);

  MakeFramesArgs mf;
  auto* s_mf = app.add_subcommand("make-frames", "Write random frames for a model geometry");
  s_mf->add_option("--config", mf.config, "Model config JSON (default: MARS)");
  s_mf->add_option("--model", mf.model, "Take the geometry from this model container");
  s_mf->add_option("--count", mf.count, "Number of frames");
  s_mf->add_option("--seed", mf.seed, "Seed");
  s_mf->add_option("--out", mf.out, "Container path");
  add_common(s_mf, mf.common);

  QuantizeArgs qa;
  auto* s_q = app.add_subcommand("quantize", "Calibrate and quantize a float model");
  s_q->add_option("--model-in", qa.model_in, "Float model container")->required();
  s_q->add_option("--calib", qa.calib, "Calibration frames container")->required();
  s_q->add_option("--act-bits", qa.act_bits, "Activation bit-width");
  s_q->add_option("--coverage", qa.coverage, "Calibration quantile in (0, 1]");
  s_q->add_option("--out", qa.out, "Quantized container path");
  add_common(s_q, qa.common);

  InferArgs inf;
  auto* s_inf = app.add_subcommand("infer", "Run a model over frames");
  s_inf->add_option("--model", inf.model, "Model container")->required();
  s_inf->add_option("--input", inf.input, "Frames container")->required();
  s_inf->add_option("--out", inf.out, "Predictions container path");
  s_inf->add_flag("--reference", inf.reference, "Use the float reference path");
  s_inf->add_flag("--compare-float", inf.compare_float, "Report divergence from the float path");
  s_inf->add_option("--max-lsb", inf.max_lsb, "Fail when divergence exceeds this many output LSBs");
  add_common(s_inf, inf.common);

  InferArgs ev;
  auto* s_ev = app.add_subcommand("eval", "Run a model and score it against labels");
  s_ev->add_option("--model", ev.model, "Model container")->required();
  s_ev->add_option("--input", ev.input, "Frames container")->required();
  s_ev->add_option("--labels", ev.labels, "Labels container")->required();
  s_ev->add_option("--task", ev.task, "regression | classification")
      ->check(CLI::IsMember({"regression", "classification"}));
  s_ev->add_option("--out", ev.out, "Also write predictions here");
  s_ev->add_flag("--reference", ev.reference, "Use the float reference path");
  s_ev->add_flag("--compare-float", ev.compare_float, "Report divergence from the float path");
  s_ev->add_option("--max-lsb", ev.max_lsb, "Fail when divergence exceeds this many output LSBs");
  add_common(s_ev, ev.common);

  SimulateArgs sim;
  auto* s_sim = app.add_subcommand("simulate", "Cycle-level pipeline simulation");
  s_sim->add_option("--preset", sim.preset, "emamba | naive-mamba | naive-mamba+range-norm");
  s_sim->add_option("--preset-file", sim.preset_file, "Stage-latency table JSON");
  s_sim->add_option("--sweep-units", sim.sweep_units, "Comma-separated unit counts");
  s_sim->add_option("--csv", sim.csv, "Write the unit sweep as CSV");
  s_sim->add_flag("--stages", sim.stages, "Print the per-stage profile");
  add_pipe(s_sim, sim.pipe);
  add_common(s_sim, sim.common);

  CompareArgs cmp;
  auto* s_cmp = app.add_subcommand("compare-presets", "emamba vs naive Mamba vs ablation");
  add_pipe(s_cmp, cmp.pipe);
  add_common(s_cmp, cmp.common);

  SweepArgs sw;
  auto* s_sw = app.add_subcommand("sweep", "Architecture sweep with Pareto front");
  s_sw->add_option("--grid", sw.grid, "'default' or a grid JSON file");
  s_sw->add_option("--metrics", sw.metrics, "Metrics JSON keyed by config");
  s_sw->add_option("--preset", sw.preset, "Latency preset");
  s_sw->add_option("--csv", sw.csv, "CSV output path");
  s_sw->add_option("--out", sw.out, "JSON output path");
  add_pipe(s_sw, sw.pipe);
  add_common(s_sw, sw.common);

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(s_fit)) cmd_fit(fit);
    if (app.got_subcommand(s_mk)) cmd_make_model(mk);
    if (app.got_subcommand(s_mf)) cmd_make_frames(mf);
    if (app.got_subcommand(s_q)) cmd_quantize(qa);
    if (app.got_subcommand(s_inf)) run_infer(inf, false);
    if (app.got_subcommand(s_ev)) run_infer(ev, true);
    if (app.got_subcommand(s_sim)) cmd_simulate(sim);
    if (app.got_subcommand(s_cmp)) cmd_compare(cmp);
    if (app.got_subcommand(s_sw)) cmd_sweep(sw);
  } catch (const CheckFailed& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitCheckFailed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
