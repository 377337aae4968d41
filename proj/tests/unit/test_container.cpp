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

#include <cstring>
#include <filesystem>
#include <functional>
#include <random>

#include "emamba/container.hpp"

using namespace emamba;
namespace fs = std::filesystem;

namespace {

MambaConfig small_config() {
  MambaConfig c;
  c.d_model = 4;
  c.expand = 2;
  c.d_state = 2;
  c.in_channels = 1;
  c.in_height = 4;
  c.in_width = 4;
  c.out_dim = 3;
  return c;
}

RealTensor frames_for(const MambaConfig& c, Index count) {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(-1, 1);
  RealTensor f = RealTensor::zeros({count, c.in_channels, c.in_height, c.in_width});
  for (Index i = 0; i < f.size(); ++i) f.data[i] = static_cast<float>(u(rng));
  return f;
}

std::uint64_t manifest_length(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t n = 0;
  for (int i = 7; i >= 0; --i) n = (n << 8) | bytes[8 + static_cast<std::size_t>(i)];
  return n;
}

/// Rebuilds a container with an edited manifest and the original blob.
std::vector<std::uint8_t> with_manifest(const std::vector<std::uint8_t>& bytes,
                                        const std::function<void(nlohmann::json&)>& edit) {
  const std::uint64_t n = manifest_length(bytes);
  nlohmann::json m = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(n));
  edit(m);
  const std::string text = m.dump();
  std::vector<std::uint8_t> out(bytes.begin(), bytes.begin() + 8);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(text.size() >> (8 * i)));
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), bytes.begin() + 16 + static_cast<std::ptrdiff_t>(n), bytes.end());
  return out;
}

std::string parse_error_of(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_container(bytes);
  } catch (const ParseError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("header layout") {
  Container c;
  c.tensors.push_back({"v", RealTensor::vector({1.0, -2.5})});
  const auto bytes = encode_container(c);
  CHECK(std::memcmp(bytes.data(), "EMAMBAC\x01", 8) == 0);
  const auto n = manifest_length(bytes);
  CHECK(bytes.size() == 16 + n + 8);  // two float32 values
  const auto m = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(n));
  CHECK(m.at("version") == kContainerVersion);
  CHECK(m.at("tensors").at(0).at("kind") == "real");
}

TEST_CASE("integer tensors use the narrowest whole-byte width") {
  Container c;
  const QTensor q17(IntTensor::vector({-65536, 65535, 7}), 17, -9);
  const QTensor q8(IntTensor::vector({-128, 127}), 8, -3);
  c.tensors.push_back({"wide", q17});
  c.tensors.push_back({"narrow", q8});
  c.meta = {{"note", "hello"}};
  const auto bytes = encode_container(c);
  CHECK(bytes.size() == 16 + manifest_length(bytes) + 3 * 3 + 2);
  const Container back = decode_container(bytes);
  CHECK(back.integer("wide") == q17);
  CHECK(back.integer("narrow") == q8);
  CHECK(back.meta.at("note") == "hello");
  CHECK_THROWS_AS(back.real("wide"), ParseError);
  CHECK_THROWS_AS(back.integer("missing"), ParseError);
}

TEST_CASE("model round trip is bitwise") {
  const MambaConfig c = small_config();
  const Model fp{c, random_weights(c, 5), {}};
  const Model q = calibrate(fp, frames_for(c, 4));
  const auto bytes = encode_container(model_to_container(q));
  const Model back = model_from_container(decode_container(bytes));
  CHECK(back.config == c);
  CHECK(encode_container(model_to_container(back)) == bytes);
  CHECK(back.deployment->scales == q.deployment->scales);
  const RealTensor frames = frames_for(c, 3);
  CHECK((infer(back, frames).data == infer(q, frames).data).all());
  CHECK((infer_ref(back, frames).data == infer_ref(q, frames).data).all());
}

TEST_CASE("file round trip") {
  const fs::path dir = fs::temp_directory_path() / "emamba_container_test";
  fs::create_directories(dir);
  const MambaConfig c = small_config();
  const Model fp{c, random_weights(c, 9), {}};
  save_model(dir / "m.bin", fp);
  const Model back = load_model(dir / "m.bin");
  CHECK(!back.deployment);
  CHECK(encode_container(model_to_container(back)) == encode_container(model_to_container(fp)));

  const RealTensor f = frames_for(c, 2);
  save_tensor(dir / "f.bin", "frames", f);
  CHECK((load_tensor(dir / "f.bin", "frames").data == f.data).all());
  CHECK_THROWS_AS(load_tensor(dir / "f.bin", "labels"), ParseError);
  CHECK_THROWS_AS(load_model(dir / "f.bin"), ParseError);
  CHECK_THROWS_AS(read_container(dir / "does-not-exist.bin"), Error);
  fs::remove_all(dir);
}

TEST_CASE("every truncation is a parse error") {
  const MambaConfig c = small_config();
  const auto bytes = encode_container(model_to_container(Model{c, random_weights(c, 1), {}}));
  for (std::size_t len = 0; len < bytes.size(); len += (len < 64 ? 1 : 97)) {
    const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(len));
    CHECK_THROWS_AS(decode_container(cut), ParseError);
  }
  std::vector<std::uint8_t> bad = bytes;
  bad[3] = 'X';
  CHECK(parse_error_of(bad).find("magic") != std::string::npos);
  std::vector<std::uint8_t> longer = bytes;
  longer.push_back(0);
  CHECK_THROWS_AS(decode_container(longer), ParseError);
}

TEST_CASE("directory errors name the tensor") {
  const MambaConfig c = small_config();
  const auto bytes = encode_container(model_to_container(Model{c, random_weights(c, 1), {}}));

  const auto reshaped = with_manifest(bytes, [](nlohmann::json& m) {
    for (auto& t : m["tensors"]) {
      if (t["name"] == "fp.blocks.1.b_proj") t["shape"] = {3, 8};
    }
  });
  CHECK(parse_error_of(reshaped).find("fp.blocks.1.b_proj") != std::string::npos);

  const auto version = with_manifest(bytes, [](nlohmann::json& m) { m["version"] = 99; });
  CHECK(parse_error_of(version).find("version") != std::string::npos);

  // Consistent directory, wrong shape for the config.
  Container cont = model_to_container(Model{c, random_weights(c, 1), {}});
  for (auto& t : cont.tensors) {
    if (t.name == "fp.head") t.value = RealTensor::zeros({2, 6});
  }
  try {
    model_from_container(cont);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("fp.head") != std::string::npos);
  }
}

TEST_CASE("non-finite reals are refused on write") {
  Container c;
  c.tensors.push_back({"bad", RealTensor::vector({1.0, std::nan("")})});
  CHECK_THROWS_AS(encode_container(c), InvalidInput);
}
