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

// Binary container shared by models, frame sets and label sets.
//
//   bytes 0..7    magic "EMAMBAC\x01"
//   bytes 8..15   manifest length n, u64 little-endian
//   next n bytes  JSON manifest (UTF-8)
//   rest          blob; every tensor occupies [offset, offset + length)
//
// Integer tensors are two's complement, little-endian, ceil(bits / 8) bytes
// per element. Real tensors are IEEE-754 binary32, little-endian.

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "emamba/mamba.hpp"
#include "emamba/tensor.hpp"

namespace emamba {

inline constexpr int kContainerVersion = 1;

struct NamedTensor {
  std::string name;
  std::variant<RealTensor, QTensor> value;
};

struct Container {
  /// Free-form metadata stored in the manifest next to the tensor directory.
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
  const RealTensor& real(const std::string& name) const;
  const QTensor& integer(const std::string& name) const;
};

std::vector<std::uint8_t> encode_container(const Container& c);
/// Throws ParseError on bad magic, version, manifest or any tensor whose
/// directory entry disagrees with the blob; the message names the tensor.
Container decode_container(const std::vector<std::uint8_t>& bytes);

void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);

/// Model container: config, float32 reference weights under "fp.<name>" and,
/// once calibrated, integer weights under "q.<name>" plus scales and fits.
Container model_to_container(const Model& model);
Model model_from_container(const Container& c);
void save_model(const std::filesystem::path& path, const Model& model);
Model load_model(const std::filesystem::path& path);

/// Single-tensor containers (frames [F, C, H, W], labels [F, out]).
void save_tensor(const std::filesystem::path& path, const std::string& name,
                 const RealTensor& t);
RealTensor load_tensor(const std::filesystem::path& path, const std::string& name);

}  // namespace emamba
