// qmsv/quality.cpp

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

#include "qmsv/quality.hpp"

#include <algorithm>

#include <sstream>

#include "qmsv/io.hpp"

namespace qmsv {

namespace {

struct KindName {
  QualityKind kind;
  std::string_view name;
};

constexpr KindName kNames[] = {
    {QualityKind::kKl1, "kl-1"},   {QualityKind::kKl2, "kl-2"},
    {QualityKind::kKlAvg, "kl-avg"}, {QualityKind::kL1, "l1"},
    {QualityKind::kL2, "l2"},      {QualityKind::kBh, "bh"},
    {QualityKind::kDur1, "dur1"},  {QualityKind::kDur2, "dur2"},
    {QualityKind::kDur3, "dur3"},  {QualityKind::kTv, "tv"}};

void CheckSimplex(const VectorXd& v, const char* what) {
  if ((v.array() < 0).any() || !v.allFinite() || std::abs(v.sum() - 1.0) > 1e-8)
    throw ArgumentError(std::string("quality: ") + what +
                        " is not a probability vector");
}

}  // namespace

std::string_view ToString(QualityKind kind) {
  for (const auto& kn : kNames)
    if (kn.kind == kind) return kn.name;
  return "?";
}

QualityKind ParseQualityKind(std::string_view name) {
  for (const auto& kn : kNames)
    if (kn.name == name) return kn.kind;
  throw ArgumentError("unknown quality kind '" + std::string(name) + "'");
}

bool IsBwKind(QualityKind kind) {
  for (QualityKind k : kBwQualityKinds)
    if (k == kind) return true;
  return false;
}

bool IsDurationKind(QualityKind kind) {
  return kind == QualityKind::kDur1 || kind == QualityKind::kDur2 ||
         kind == QualityKind::kDur3;
}

double QualityBw(QualityKind kind, const VectorXd& nbs, const VectorXd& weights) {
  if (!IsBwKind(kind))
    throw ArgumentError("quality kind " + std::string(ToString(kind)) +
                        " is not a statistics-based measure");
  if (nbs.size() != weights.size())
    throw ShapeError("quality: NBS and UBM weights differ in length");
  CheckSimplex(nbs, "NBS vector");
  CheckSimplex(weights, "UBM weight vector");
  switch (kind) {
    case QualityKind::kKl1:
    case QualityKind::kKl2:
    case QualityKind::kKlAvg: {
      const VectorXd p = simplex::Floored(nbs);
      const VectorXd w = simplex::Floored(weights);
      // Clamped: near-identical vectors can round a hair below zero.
      const double kl1 = std::max(0.0, simplex::Kl(p, w));
      const double kl2 = std::max(0.0, simplex::Kl(w, p));
      if (kind == QualityKind::kKl1) return kl1;
      if (kind == QualityKind::kKl2) return kl2;
      return 0.5 * (kl1 + kl2);
    }
    case QualityKind::kL1:
      return simplex::L1(nbs, weights);
    case QualityKind::kL2:
      return simplex::L2(nbs, weights);
    case QualityKind::kBh:
      return simplex::BhattacharyyaDistance(nbs, weights);
    default:
      break;
  }
  throw ArgumentError("unreachable quality kind");
}

double QualityBw(QualityKind kind, const NbsVector& nbs, const VectorXd& weights) {
  return QualityBw(kind, nbs.values, weights);
}

double QualityDuration(QualityKind kind, double d_m, double d_t, double k,
                       double d_c) {
  if (!(d_m > 0) || !(d_t > 0) || !(d_c > 0))
    throw ArgumentError("duration quality: durations must be positive");
  const double r = std::log(d_m / d_t);
  switch (kind) {
    case QualityKind::kDur1:
      return k * std::abs(r);
    case QualityKind::kDur2:
      return k * r * r;
    case QualityKind::kDur3:
      return k * std::log(d_m / d_c) * std::log(d_c / d_t);
    default:
      throw ArgumentError("quality kind " + std::string(ToString(kind)) +
                          " is not a duration measure");
  }
}

double QualityUncertainty(const IVector& iv) { return 1.0 / PosteriorTrace(iv); }

void WriteQualityFile(const std::filesystem::path& path,
                      std::span<const QualityRecord> records) {
  std::ostringstream os;
  for (const auto& r : records)
    os << r.utterance_id << ' ' << ToString(r.kind) << ' '
       << io::FormatDouble(r.value) << '\n';
  io::WriteFileAtomic(path, os.str());
}

std::vector<QualityRecord> ReadQualityFile(const std::filesystem::path& path) {
  std::vector<QualityRecord> out;
  for (const auto& line : io::ReadLines(path)) {
    const auto f = io::SplitWhitespace(line);
    if (f.size() != 3) throw IoError(path.string() + ": bad quality line: " + line);
    QualityRecord r;
    r.utterance_id = f[0];
    r.kind = ParseQualityKind(f[1]);
    r.value = io::ParseDouble(f[2]);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace qmsv
