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

// Flat binary tensor archive. All integers and payloads are little-endian:
//
//   "SPDYFD01"                      8 bytes magic
//   u64 count
//   count x {
//     u32 name_length, name bytes (UTF-8)
//     u32 rank, rank x u64 dims
//     numel x f64 payload
//   }

#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "speedyfeed/tensor.hpp"

namespace speedyfeed::ad {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void WriteCheckpoint(std::ostream& out, const NamedTensors& tensors);
NamedTensors ReadCheckpoint(std::istream& in);

void SaveCheckpoint(const std::string& path, const NamedTensors& tensors);
NamedTensors LoadCheckpoint(const std::string& path);

}  // namespace speedyfeed::ad
