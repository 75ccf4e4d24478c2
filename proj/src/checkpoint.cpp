/*
 * Copyright 2026 The SpeedyFeed Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "speedyfeed/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>

#include "speedyfeed/errors.hpp"

namespace speedyfeed::ad {

namespace {

constexpr std::array<char, 8> kMagic = {'S', 'P', 'D', 'Y', 'F', 'D', '0', '1'};

template <typename T>
void PutLE(std::ostream& out, T value) {
  std::array<unsigned char, sizeof(T)> bytes;
  std::uint64_t bits;
  if constexpr (std::is_same_v<T, double>) {
    bits = std::bit_cast<std::uint64_t>(value);
  } else {
    bits = static_cast<std::uint64_t>(value);
  }
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

template <typename T>
T GetLE(std::istream& in) {
  std::array<unsigned char, sizeof(T)> bytes;
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
    throw DataError("checkpoint truncated");
  }
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  }
  if constexpr (std::is_same_v<T, double>) {
    return std::bit_cast<double>(bits);
  } else {
    return static_cast<T>(bits);
  }
}

}  // namespace

void WriteCheckpoint(std::ostream& out, const NamedTensors& tensors) {
  out.write(kMagic.data(), kMagic.size());
  PutLE<std::uint64_t>(out, tensors.size());
  for (const auto& [name, t] : tensors) {
    PutLE<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    PutLE<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) PutLE<std::uint64_t>(out, d);
    for (double v : t.data()) PutLE<double>(out, v);
  }
  if (!out) throw DataError("failed writing checkpoint");
}

NamedTensors ReadCheckpoint(std::istream& in) {
  std::array<char, 8> magic;
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw DataError("not a checkpoint: bad magic");
  }
  const auto count = GetLE<std::uint64_t>(in);
  NamedTensors out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = GetLE<std::uint32_t>(in);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw DataError("checkpoint truncated");
    const auto rank = GetLE<std::uint32_t>(in);
    if (rank > 8) throw DataError("checkpoint tensor " + name + " has rank > 8");
    Shape shape(rank);
    for (auto& d : shape) d = GetLE<std::uint64_t>(in);
    std::vector<double> data(NumElements(shape));
    for (double& v : data) v = GetLE<double>(in);
    out.emplace_back(std::move(name), Tensor::FromData(std::move(shape), std::move(data)));
  }
  return out;
}

void SaveCheckpoint(const std::string& path, const NamedTensors& tensors) {
  // Written to a sibling file first so an interrupted save never clobbers the
  // previous checkpoint.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + tmp + " for writing");
    WriteCheckpoint(out, tensors);
  }
  std::filesystem::rename(tmp, path);
}

NamedTensors LoadCheckpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  return ReadCheckpoint(in);
}

}  // namespace speedyfeed::ad
