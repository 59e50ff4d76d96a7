// qmsv/io.hpp

// Copyright 2026  The qmsv Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "qmsv/common.hpp"

namespace qmsv::io {

// Little-endian primitives. Every binary format in the toolkit goes through
// these so files are portable regardless of host byte order.
void WriteU8(std::ostream& os, std::uint8_t v);
void WriteU32(std::ostream& os, std::uint32_t v);
void WriteU64(std::ostream& os, std::uint64_t v);
void WriteF64(std::ostream& os, double v);
std::uint8_t ReadU8(std::istream& is);
std::uint32_t ReadU32(std::istream& is);
std::uint64_t ReadU64(std::istream& is);
double ReadF64(std::istream& is);

/// Writes rows*cols float64 values in row-major order.
void WriteMatrixPayload(std::ostream& os, const MatrixXd& m);
MatrixXd ReadMatrixPayload(std::istream& is, Index rows, Index cols);

/// Model container used by the GMM, TV, LDA and PLDA models.
///
/// Layout:
///   <8-byte magic>\n
///   <key> <value...>\n           zero or more header lines
///   matrix <name> <rows> <cols>\n one line per payload matrix
///   payload\n
///   float64 little-endian row-major data of each matrix, in header order
///
/// Header values are written with 17 significant digits so scalars survive
/// a round trip bit-exactly.
struct Container {
  std::string magic;
  std::vector<std::pair<std::string, std::string>> header;
  std::vector<std::pair<std::string, MatrixXd>> matrices;

  void Set(std::string key, std::string value);
  void Set(std::string key, double value);
  void Set(std::string key, long long value);
  void Add(std::string name, MatrixXd m);

  const std::string& Get(std::string_view key) const;
  double GetDouble(std::string_view key) const;
  long long GetInt(std::string_view key) const;
  bool Has(std::string_view key) const;
  const MatrixXd& Matrix(std::string_view name) const;
};

void WriteContainer(const std::filesystem::path& path, const Container& c);
Container ReadContainer(const std::filesystem::path& path,
                        std::string_view expected_magic);

/// Formats a double with max_digits10 precision.
std::string FormatDouble(double v);
double ParseDouble(std::string_view s);
long long ParseInt(std::string_view s);

/// Plain-text key=value file with optional [section] headers. Keys before
/// the first section header belong to the section "". '#' starts a comment.
class KeyValueFile {
 public:
  KeyValueFile() = default;
  static KeyValueFile Load(const std::filesystem::path& path);
  static KeyValueFile Parse(std::string_view text);

  bool Has(const std::string& section, const std::string& key) const;
  std::optional<std::string> Find(const std::string& section,
                                  const std::string& key) const;
  std::string GetString(const std::string& section, const std::string& key,
                        const std::string& fallback) const;
  double GetDouble(const std::string& section, const std::string& key,
                   double fallback) const;
  long long GetInt(const std::string& section, const std::string& key,
                   long long fallback) const;
  void Set(const std::string& section, const std::string& key,
           std::string value);

  std::vector<std::string> Sections() const;
  const std::map<std::string, std::string>& Section(
      const std::string& name) const;

  /// Canonical serialization; used as the content address of a config.
  std::string ToString() const;

 private:
  std::map<std::string, std::map<std::string, std::string>> sections_;
};

/// Strips leading and trailing whitespace.
std::string Trim(std::string_view s);
/// Splits a comma-separated list, trimming items and dropping empty ones.
std::vector<std::string> SplitList(std::string_view text);
/// Splits on runs of whitespace (tabs or spaces), dropping empty fields.
std::vector<std::string> SplitWhitespace(std::string_view line);
/// Splits on single tab characters, keeping empty fields.
std::vector<std::string> SplitTabs(std::string_view line);
/// Reads non-empty, non-comment lines.
std::vector<std::string> ReadLines(const std::filesystem::path& path);

/// Writes via a temporary sibling file and rename, so readers never observe
/// a partially written file.
void WriteFileAtomic(const std::filesystem::path& path,
                     const std::string& contents);

/// 64-bit FNV-1a; stable content hash for config-addressed caching.
std::uint64_t Fnv1a(std::string_view data);

}  // namespace qmsv::io
