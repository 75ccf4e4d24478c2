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

#pragma once

#include <array>
#include <string>
#include <string_view>
#include <unordered_set>

namespace speedyfeed {

// Fixed 50-word English list; the generator injects these and refinement
// removes them. data/stopwords.txt holds the same words.
inline constexpr std::array<std::string_view, 50> kDefaultStopwords = {
    "the",  "a",     "an",    "and",  "or",   "but",  "of",    "to",   "in",
    "on",   "at",    "for",   "with", "by",   "from", "as",    "is",   "was",
    "are",  "were",  "be",    "been", "it",   "its",  "this",  "that", "these",
    "those", "he",   "she",   "they", "we",   "you",  "i",     "his",  "her",
    "their", "our",  "not",   "no",   "so",   "if",   "than",  "then", "there",
    "what", "which", "who",   "will", "would"};

using StopwordSet = std::unordered_set<std::string>;

inline StopwordSet DefaultStopwordSet() {
  StopwordSet out;
  for (std::string_view w : kDefaultStopwords) out.emplace(w);
  return out;
}

// Newline-delimited UTF-8 file; blank lines and surrounding whitespace are
// ignored, words are lowercased.
StopwordSet LoadStopwords(const std::string& path);

}  // namespace speedyfeed
