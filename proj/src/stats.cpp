// qmsv/stats.cpp

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

#include "qmsv/stats.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "qmsv/io.hpp"

namespace qmsv {

namespace {
constexpr Index kBlock = 4096;
}

BwStats BwStats::Zero(Index num_components, Index dim) {
  BwStats s;
  s.n = VectorXd::Zero(num_components);
  s.e = MatrixXd::Zero(num_components, dim);
  s.f = MatrixXd::Zero(num_components, dim);
  s.t = 0;
  return s;
}

BwStats AccumulateBw(const GmmModel& ubm, const FeatureMatrix& features) {
  return AccumulateBw(ubm, features.frames);
}

BwStats AccumulateBw(const GmmModel& ubm,
                     const Eigen::Ref<const RowMatrixXd>& frames) {
  if (frames.cols() != ubm.dim())
    throw ShapeError("BW accumulation: feature dim " +
                     std::to_string(frames.cols()) + " vs UBM dim " +
                     std::to_string(ubm.dim()));
  if (frames.rows() == 0) throw ArgumentError("BW accumulation: no frames");
  BwStats s = BwStats::Zero(ubm.num_components(), ubm.dim());
  for (Index start = 0; start < frames.rows(); start += kBlock) {
    const Index len = std::min(kBlock, frames.rows() - start);
    const auto block = frames.middleRows(start, len);
    MatrixXd post = LogJointLikelihoods(ubm, block);
    for (Index r = 0; r < len; ++r) {
      const double lse = LogSumExp(post.row(r));
      post.row(r) = (post.row(r).array() - lse).exp();
      post.row(r) /= post.row(r).sum();
    }
    s.n += post.colwise().sum().transpose();
    s.f.noalias() += post.transpose() * block;
  }
  s.t = frames.rows();
  for (Index i = 0; i < s.n.size(); ++i)
    s.e.row(i) = s.n(i) < kZeroCount ? ubm.means.row(i)
                                     : MatrixXd(s.f.row(i) / s.n(i));
  return s;
}

BwStats MergeBw(const BwStats& a, const BwStats& b) {
  if (a.n.size() != b.n.size() || a.e.cols() != b.e.cols())
    throw ShapeError("BW merge: shape mismatch");
  BwStats s;
  s.n = a.n + b.n;
  s.f = a.f + b.f;
  s.t = a.t + b.t;
  s.e.resize(a.e.rows(), a.e.cols());
  for (Index i = 0; i < s.n.size(); ++i) {
    if (s.n(i) < kZeroCount)
      s.e.row(i) = b.t > a.t ? b.e.row(i) : a.e.row(i);
    else
      s.e.row(i) = s.f.row(i) / s.n(i);
  }
  return s;
}

NbsVector NormalizeZeroth(const BwStats& stats) {
  if (stats.t < 1) throw ArgumentError("normalize: utterance has no frames");
  return {stats.n / static_cast<double>(stats.t)};
}

GmmModel MapAdapt(const GmmModel& ubm, const BwStats& stats,
                  double relevance) {
  if (!(relevance > 0)) throw ArgumentError("MAP relevance must be > 0");
  if (stats.num_components() != ubm.num_components() || stats.dim() != ubm.dim())
    throw ShapeError("MAP adaptation: statistics and UBM shapes differ");
  GmmModel out = ubm;
  out.train_loglik.clear();
  for (Index i = 0; i < ubm.num_components(); ++i) {
    const double alpha = stats.n(i) / (stats.n(i) + relevance);
    out.means.row(i) = alpha * stats.e.row(i) + (1.0 - alpha) * ubm.means.row(i);
  }
  return out;
}

void WriteStats(const std::filesystem::path& path, const BwStats& stats) {
  std::ostringstream os(std::ios::binary);
  os.write("QMSVSTAT", 8);
  io::WriteU32(os, static_cast<std::uint32_t>(stats.num_components()));
  io::WriteU32(os, static_cast<std::uint32_t>(stats.dim()));
  io::WriteU64(os, static_cast<std::uint64_t>(stats.t));
  io::WriteMatrixPayload(os, stats.n);
  io::WriteMatrixPayload(os, stats.e);
  io::WriteMatrixPayload(os, stats.f);
  io::WriteFileAtomic(path, os.str());
}

BwStats ReadStats(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open stats file " + path.string());
  char magic[8];
  is.read(magic, 8);
  if (is.gcount() != 8 || std::memcmp(magic, "QMSVSTAT", 8) != 0)
    throw IoError(path.string() + ": not a stats file");
  const Index c = io::ReadU32(is);
  const Index d = io::ReadU32(is);
  BwStats s;
  s.t = static_cast<Index>(io::ReadU64(is));
  s.n = io::ReadMatrixPayload(is, c, 1);
  s.e = io::ReadMatrixPayload(is, c, d);
  s.f = io::ReadMatrixPayload(is, c, d);
  return s;
}

}  // namespace qmsv
