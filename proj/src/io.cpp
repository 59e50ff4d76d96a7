// qmsv/io.cpp

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

#include "qmsv/io.hpp"

#include <bit>
#include <charconv>
#include <fstream>
#include <sstream>

namespace qmsv::io {

namespace {

template <typename T>
void WriteLe(std::ostream& os, T v) {
  char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i)
    bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(bytes, sizeof(T));
  if (!os) throw IoError("write failed");
}

template <typename T>
T ReadLe(std::istream& is) {
  unsigned char bytes[sizeof(T)];
  is.read(reinterpret_cast<char*>(bytes), sizeof(T));
  if (is.gcount() != static_cast<std::streamsize>(sizeof(T)))
    throw IoError("unexpected end of file");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    v |= static_cast<T>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace

std::string Trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> SplitList(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto end = comma == std::string_view::npos ? text.size() : comma;
    std::string item = Trim(text.substr(start, end - start));
    if (!item.empty()) out.push_back(std::move(item));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

void WriteU8(std::ostream& os, std::uint8_t v) { WriteLe(os, v); }
void WriteU32(std::ostream& os, std::uint32_t v) { WriteLe(os, v); }
void WriteU64(std::ostream& os, std::uint64_t v) { WriteLe(os, v); }
void WriteF64(std::ostream& os, double v) {
  WriteLe(os, std::bit_cast<std::uint64_t>(v));
}
std::uint8_t ReadU8(std::istream& is) { return ReadLe<std::uint8_t>(is); }
std::uint32_t ReadU32(std::istream& is) { return ReadLe<std::uint32_t>(is); }
std::uint64_t ReadU64(std::istream& is) { return ReadLe<std::uint64_t>(is); }
double ReadF64(std::istream& is) {
  return std::bit_cast<double>(ReadLe<std::uint64_t>(is));
}

void WriteMatrixPayload(std::ostream& os, const MatrixXd& m) {
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) WriteF64(os, m(r, c));
}

MatrixXd ReadMatrixPayload(std::istream& is, Index rows, Index cols) {
  MatrixXd m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = ReadF64(is);
  return m;
}

std::string FormatDouble(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v,
                           std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

double ParseDouble(std::string_view s) {
  std::string t = Trim(s);
  if (t == "inf" || t == "+inf") return std::numeric_limits<double>::infinity();
  if (t == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0;
  auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (res.ec != std::errc() || res.ptr != t.data() + t.size())
    throw IoError("not a number: '" + t + "'");
  return v;
}

long long ParseInt(std::string_view s) {
  std::string t = Trim(s);
  long long v = 0;
  auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (res.ec != std::errc() || res.ptr != t.data() + t.size())
    throw IoError("not an integer: '" + t + "'");
  return v;
}

void Container::Set(std::string key, std::string value) {
  for (auto& [k, v] : header) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  header.emplace_back(std::move(key), std::move(value));
}

void Container::Set(std::string key, double value) {
  Set(std::move(key), FormatDouble(value));
}

void Container::Set(std::string key, long long value) {
  Set(std::move(key), std::to_string(value));
}

void Container::Add(std::string name, MatrixXd m) {
  matrices.emplace_back(std::move(name), std::move(m));
}

const std::string& Container::Get(std::string_view key) const {
  for (const auto& [k, v] : header)
    if (k == key) return v;
  throw IoError(magic + ": missing header field '" + std::string(key) + "'");
}

double Container::GetDouble(std::string_view key) const {
  return ParseDouble(Get(key));
}

long long Container::GetInt(std::string_view key) const {
  return ParseInt(Get(key));
}

bool Container::Has(std::string_view key) const {
  for (const auto& kv : header)
    if (kv.first == key) return true;
  return false;
}

const MatrixXd& Container::Matrix(std::string_view name) const {
  for (const auto& [n, m] : matrices)
    if (n == name) return m;
  throw IoError(magic + ": missing matrix '" + std::string(name) + "'");
}

void WriteContainer(const std::filesystem::path& path, const Container& c) {
  if (c.magic.size() != 8) throw ArgumentError("container magic must be 8 bytes");
  std::ostringstream os(std::ios::binary);
  os << c.magic << '\n';
  for (const auto& [k, v] : c.header) {
    if (k.find_first_of(" \n") != std::string::npos ||
        v.find('\n') != std::string::npos)
      throw ArgumentError("invalid container header field '" + k + "'");
    os << k << ' ' << v << '\n';
  }
  for (const auto& [n, m] : c.matrices)
    os << "matrix " << n << ' ' << m.rows() << ' ' << m.cols() << '\n';
  os << "payload\n";
  for (const auto& nm : c.matrices) WriteMatrixPayload(os, nm.second);
  WriteFileAtomic(path, os.str());
}

Container ReadContainer(const std::filesystem::path& path,
                        std::string_view expected_magic) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  Container c;
  std::string line;
  if (!std::getline(is, line) || line != expected_magic)
    throw IoError(path.string() + ": expected magic " +
                  std::string(expected_magic));
  c.magic = line;
  std::vector<std::tuple<std::string, Index, Index>> shapes;
  bool saw_payload = false;
  while (std::getline(is, line)) {
    if (line == "payload") {
      saw_payload = true;
      break;
    }
    const auto sp = line.find(' ');
    std::string key = line.substr(0, sp);
    std::string value = sp == std::string::npos ? "" : line.substr(sp + 1);
    if (key == "matrix") {
      auto f = SplitWhitespace(value);
      if (f.size() != 3) throw IoError(path.string() + ": bad matrix line");
      shapes.emplace_back(f[0], ParseInt(f[1]), ParseInt(f[2]));
    } else {
      c.header.emplace_back(std::move(key), std::move(value));
    }
  }
  if (!saw_payload) throw IoError(path.string() + ": missing payload marker");
  for (const auto& [name, rows, cols] : shapes)
    c.matrices.emplace_back(name, ReadMatrixPayload(is, rows, cols));
  return c;
}

KeyValueFile KeyValueFile::Load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return Parse(ss.str());
}

KeyValueFile KeyValueFile::Parse(std::string_view text) {
  KeyValueFile kv;
  std::string section;
  std::istringstream is{std::string(text)};
  std::string raw;
  int lineno = 0;
  while (std::getline(is, raw)) {
    ++lineno;
    std::string line = Trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw IoError("line " + std::to_string(lineno) + ": bad section header");
      section = Trim(std::string_view(line).substr(1, line.size() - 2));
      kv.sections_[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw IoError("line " + std::to_string(lineno) + ": expected key=value");
    kv.sections_[section][Trim(line.substr(0, eq))] = Trim(line.substr(eq + 1));
  }
  return kv;
}

bool KeyValueFile::Has(const std::string& section,
                       const std::string& key) const {
  return Find(section, key).has_value();
}

std::optional<std::string> KeyValueFile::Find(const std::string& section,
                                              const std::string& key) const {
  auto s = sections_.find(section);
  if (s == sections_.end()) return std::nullopt;
  auto k = s->second.find(key);
  if (k == s->second.end()) return std::nullopt;
  return k->second;
}

std::string KeyValueFile::GetString(const std::string& section,
                                    const std::string& key,
                                    const std::string& fallback) const {
  return Find(section, key).value_or(fallback);
}

double KeyValueFile::GetDouble(const std::string& section,
                               const std::string& key, double fallback) const {
  auto v = Find(section, key);
  return v ? ParseDouble(*v) : fallback;
}

long long KeyValueFile::GetInt(const std::string& section,
                               const std::string& key,
                               long long fallback) const {
  auto v = Find(section, key);
  return v ? ParseInt(*v) : fallback;
}

void KeyValueFile::Set(const std::string& section, const std::string& key,
                       std::string value) {
  sections_[section][key] = std::move(value);
}

std::vector<std::string> KeyValueFile::Sections() const {
  std::vector<std::string> out;
  for (const auto& s : sections_) out.push_back(s.first);
  return out;
}

const std::map<std::string, std::string>& KeyValueFile::Section(
    const std::string& name) const {
  static const std::map<std::string, std::string> kEmpty;
  auto s = sections_.find(name);
  return s == sections_.end() ? kEmpty : s->second;
}

std::string KeyValueFile::ToString() const {
  std::ostringstream os;
  for (const auto& [name, keys] : sections_) {
    if (!name.empty()) os << '[' << name << "]\n";
    for (const auto& [k, v] : keys) os << k << '=' << v << '\n';
  }
  return os.str();
}

std::vector<std::string> SplitWhitespace(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' ||
                               line[i] == '\r' || line[i] == '\n'))
      ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' &&
           line[j] != '\r' && line[j] != '\n')
      ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::vector<std::string> SplitTabs(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto tab = line.find('\t', start);
    out.emplace_back(line.substr(start, tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return out;
}

std::vector<std::string> ReadLines(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (Trim(line).empty() || line.front() == '#') continue;
    out.push_back(line);
  }
  return out;
}

void WriteFileAtomic(const std::filesystem::path& path,
                     const std::string& contents) {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + tmp.string());
    os.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!os) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename onto " + path.string() + ": " +
                        ec.message());
}

std::uint64_t Fnv1a(std::string_view data) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace qmsv::io
