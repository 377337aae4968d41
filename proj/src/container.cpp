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

#include "emamba/container.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace emamba {

namespace {

constexpr char kMagic[8] = {'E', 'M', 'A', 'M', 'B', 'A', 'C', '\x01'};
constexpr std::size_t kHeaderBytes = 16;

int bytes_per_element(int bits) { return (bits + 7) / 8; }

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(const std::uint8_t* p, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

std::int64_t sign_extend(std::uint64_t v, int bytes) {
  const int bits = 8 * bytes;
  if (bits == 64) return static_cast<std::int64_t>(v);
  const std::uint64_t sign = std::uint64_t{1} << (bits - 1);
  return static_cast<std::int64_t>((v ^ sign) - sign);
}

ParseError tensor_error(const std::string& name, const std::string& what) {
  return ParseError("tensor '" + name + "': " + what);
}

}  // namespace

const NamedTensor* Container::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

const RealTensor& Container::real(const std::string& name) const {
  const NamedTensor* t = find(name);
  if (!t) throw ParseError("container has no tensor '" + name + "'");
  if (const auto* r = std::get_if<RealTensor>(&t->value)) return *r;
  throw tensor_error(name, "expected a real tensor");
}

const QTensor& Container::integer(const std::string& name) const {
  const NamedTensor* t = find(name);
  if (!t) throw ParseError("container has no tensor '" + name + "'");
  if (const auto* q = std::get_if<QTensor>(&t->value)) return *q;
  throw tensor_error(name, "expected an integer tensor");
}

std::vector<std::uint8_t> encode_container(const Container& c) {
  std::vector<std::uint8_t> blob;
  nlohmann::json dir = nlohmann::json::array();
  for (const auto& t : c.tensors) {
    const std::size_t offset = blob.size();
    nlohmann::json e{{"name", t.name}};
    if (const auto* r = std::get_if<RealTensor>(&t.value)) {
      e["kind"] = "real";
      e["shape"] = r->shape;
      e["bits"] = 32;
      for (Index i = 0; i < r->size(); ++i) {
        if (!std::isfinite(r->data[i])) throw InvalidInput("tensor '" + t.name + "' is not finite");
        put_le(blob, std::bit_cast<std::uint32_t>(static_cast<float>(r->data[i])), 4);
      }
    } else {
      const auto& q = std::get<QTensor>(t.value);
      const int nb = bytes_per_element(q.bits());
      e["kind"] = "int";
      e["shape"] = q.shape();
      e["bits"] = q.bits();
      e["scale_exp"] = q.scale_exp();
      for (Index i = 0; i < q.size(); ++i) put_le(blob, static_cast<std::uint64_t>(q[i]), nb);
    }
    e["offset"] = offset;
    e["length"] = blob.size() - offset;
    dir.push_back(std::move(e));
  }
  const nlohmann::json manifest{{"format", "emamba-container"},
                                {"version", kContainerVersion},
                                {"meta", c.meta},
                                {"tensors", dir}};
  const std::string text = manifest.dump();
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_le(out, text.size(), 8);
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), blob.begin(), blob.end());
  return out;
}

Container decode_container(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kHeaderBytes) throw ParseError("container truncated: missing header");
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw ParseError("not an emamba container (bad magic)");
  }
  const std::uint64_t mlen = get_le(bytes.data() + 8, 8);
  if (mlen > bytes.size() - kHeaderBytes) throw ParseError("container truncated: manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + kHeaderBytes,
                                     bytes.begin() + static_cast<std::ptrdiff_t>(kHeaderBytes + mlen));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("manifest is not valid JSON: ") + e.what());
  }
  const std::uint8_t* blob = bytes.data() + kHeaderBytes + mlen;
  const std::uint64_t blob_len = bytes.size() - kHeaderBytes - mlen;

  Container c;
  std::uint64_t end = 0;
  try {
    if (manifest.at("format") != "emamba-container") throw ParseError("unknown container format");
    if (manifest.at("version").get<int>() != kContainerVersion) {
      throw ParseError("unsupported container version " + manifest.at("version").dump());
    }
    c.meta = manifest.value("meta", nlohmann::json::object());
    for (const auto& e : manifest.at("tensors")) {
      const std::string name = e.at("name").get<std::string>();
      try {
        const std::string kind = e.at("kind").get<std::string>();
        const Shape shape = e.at("shape").get<Shape>();
        const int bits = e.at("bits").get<int>();
        const auto offset = e.at("offset").get<std::uint64_t>();
        const auto length = e.at("length").get<std::uint64_t>();
        for (Index d : shape) {
          if (d < 0) throw tensor_error(name, "negative dimension");
        }
        const int nb = kind == "real" ? 4 : bytes_per_element(bits);
        if (kind != "real" && kind != "int") throw tensor_error(name, "unknown kind " + kind);
        if (kind == "real" && bits != 32) throw tensor_error(name, "real tensors are 32-bit");
        const auto count = static_cast<std::uint64_t>(shape_size(shape));
        if (count * static_cast<std::uint64_t>(nb) != length) {
          throw tensor_error(name, "shape " + shape_string(shape) + " needs " +
                                       std::to_string(count * nb) + " bytes, directory says " +
                                       std::to_string(length));
        }
        if (offset > blob_len || length > blob_len - offset) {
          throw tensor_error(name, "blob truncated");
        }
        end = std::max(end, offset + length);
        const std::uint8_t* p = blob + offset;
        if (kind == "real") {
          RealTensor::Array a(static_cast<Index>(count));
          for (std::uint64_t i = 0; i < count; ++i) {
            a[static_cast<Index>(i)] = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(p + 4 * i, 4)));
          }
          c.tensors.push_back({name, RealTensor(std::move(a), shape)});
        } else {
          IntTensor::Array a(static_cast<Index>(count));
          for (std::uint64_t i = 0; i < count; ++i) a[static_cast<Index>(i)] = sign_extend(get_le(p + nb * i, nb), nb);
          try {
            c.tensors.push_back({name, QTensor(IntTensor(std::move(a), shape), bits,
                                               e.at("scale_exp").get<int>())});
          } catch (const OverflowError&) {
            throw tensor_error(name, "value outside INT" + std::to_string(bits));
          } catch (const ConfigError& err) {
            throw tensor_error(name, err.what());
          }
        }
      } catch (const nlohmann::json::exception& err) {
        throw tensor_error(name, std::string("bad directory entry: ") + err.what());
      }
    }
  } catch (const nlohmann::json::exception& err) {
    throw ParseError(std::string("bad manifest: ") + err.what());
  }
  if (end != blob_len) {
    throw ParseError("blob has " + std::to_string(blob_len) + " bytes, directory covers " +
                     std::to_string(end));
  }
  return c;
}

void write_container(const std::filesystem::path& path, const Container& c) {
  const auto bytes = encode_container(c);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("write to " + path.string() + " failed");
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                        std::istreambuf_iterator<char>());
  return decode_container(bytes);
}

Container model_to_container(const Model& model) {
  Container c;
  c.meta["type"] = "model";
  c.meta["config"] = to_json(model.config);
  model.weights.for_each(
      [&](const std::string& name, const RealTensor& t) { c.tensors.push_back({"fp." + name, t}); });
  if (model.deployment) {
    const Deployment& d = *model.deployment;
    c.meta["scales"] = to_json(d.scales);
    c.meta["silu_fit"] = to_json(d.silu_fit);
    c.meta["exp_fit"] = to_json(d.exp_fit);
    d.weights.for_each(
        [&](const std::string& name, const QTensor& t) { c.tensors.push_back({"q." + name, t}); });
  }
  return c;
}

Model model_from_container(const Container& c) {
  if (c.meta.value("type", "") != "model") throw ParseError("container does not hold a model");
  Model m;
  try {
    m.config = config_from_json(c.meta.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad model config: ") + e.what());
  } catch (const ConfigError& e) {
    throw ParseError(std::string("bad model config: ") + e.what());
  }
  m.weights = zero_weights(m.config);
  const ShapeTable shapes = tensor_shapes(m.config);
  std::vector<Shape> flat;
  shapes.for_each([&](const std::string&, const Shape& s) { flat.push_back(s); });

  std::size_t i = 0;
  m.weights.for_each([&](const std::string& name, RealTensor& t) {
    const RealTensor& src = c.real("fp." + name);
    if (src.shape != flat[i]) {
      throw tensor_error("fp." + name, "shape " + shape_string(src.shape) + " disagrees with config " +
                                           shape_string(flat[i]));
    }
    t = src;
    ++i;
  });
  if (c.meta.contains("scales")) {
    Deployment d;
    try {
      d.scales = scales_from_json(c.meta.at("scales"));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad scales: ") + e.what());
    }
    if (d.scales.blocks.size() != static_cast<std::size_t>(m.config.n_blocks)) {
      throw ParseError("scales list " + std::to_string(d.scales.blocks.size()) + " blocks");
    }
    d.silu_fit = piecewise_from_json(c.meta.at("silu_fit"));
    d.exp_fit = piecewise_from_json(c.meta.at("exp_fit"));
    d.weights.blocks.resize(m.weights.blocks.size());
    i = 0;
    d.weights.for_each([&](const std::string& name, QTensor& t) {
      const QTensor& src = c.integer("q." + name);
      if (src.shape() != flat[i]) {
        throw tensor_error("q." + name, "shape " + shape_string(src.shape()) +
                                            " disagrees with config " + shape_string(flat[i]));
      }
      t = src;
      ++i;
    });
    d.kernels = make_kernels(m.config, d.scales, d.silu_fit, d.exp_fit);
    m.deployment = std::move(d);
  }
  return m;
}

void save_model(const std::filesystem::path& path, const Model& model) {
  write_container(path, model_to_container(model));
}

Model load_model(const std::filesystem::path& path) {
  return model_from_container(read_container(path));
}

void save_tensor(const std::filesystem::path& path, const std::string& name,
                 const RealTensor& t) {
  Container c;
  c.meta["type"] = name;
  c.tensors.push_back({name, t});
  write_container(path, c);
}

RealTensor load_tensor(const std::filesystem::path& path, const std::string& name) {
  return read_container(path).real(name);
}

}  // namespace emamba
