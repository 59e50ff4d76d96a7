// qmsv/qmsv/quality.hpp

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

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qmsv/common.hpp"
#include "qmsv/stats.hpp"
#include "qmsv/subspace.hpp"

namespace qmsv {

enum class QualityKind { kKl1, kKl2, kKlAvg, kL1, kL2, kBh, kDur1, kDur2, kDur3, kTv };

/// The six measures computed from normalized zeroth-order statistics.
inline constexpr QualityKind kBwQualityKinds[] = {
    QualityKind::kKl1, QualityKind::kKl2, QualityKind::kKlAvg,
    QualityKind::kL1,  QualityKind::kL2,  QualityKind::kBh};

/// Lowercase short form: kl-1, kl-2, kl-avg, l1, l2, bh, dur1, dur2, dur3, tv.
std::string_view ToString(QualityKind kind);
QualityKind ParseQualityKind(std::string_view name);
bool IsBwKind(QualityKind kind);
bool IsDurationKind(QualityKind kind);

inline constexpr double kSimplexFloor = 1e-10;

namespace simplex {

/// Replaces entries below kSimplexFloor by the floor and renormalizes.
template <typename Derived>
VectorXd Floored(const Eigen::MatrixBase<Derived>& p) {
  VectorXd q = p.derived().template cast<double>().cwiseMax(kSimplexFloor);
  return q / q.sum();
}

/// sum p log(p / q); arguments are expected to be floored already.
template <typename DerivedP, typename DerivedQ>
double Kl(const Eigen::MatrixBase<DerivedP>& p,
          const Eigen::MatrixBase<DerivedQ>& q) {
  return (p.array() * (p.array() / q.array()).log()).sum();
}

template <typename DerivedP, typename DerivedQ>
double L1(const Eigen::MatrixBase<DerivedP>& p,
          const Eigen::MatrixBase<DerivedQ>& q) {
  return (p - q).cwiseAbs().sum();
}

template <typename DerivedP, typename DerivedQ>
double L2(const Eigen::MatrixBase<DerivedP>& p,
          const Eigen::MatrixBase<DerivedQ>& q) {
  return (p - q).norm();
}

/// Bhattacharyya coefficient sum sqrt(p_i q_i).
template <typename DerivedP, typename DerivedQ>
double BhattacharyyaCoefficient(const Eigen::MatrixBase<DerivedP>& p,
                                const Eigen::MatrixBase<DerivedQ>& q) {
  return (p.array() * q.array()).sqrt().sum();
}

/// Bhattacharyya (Hellinger-form) distance sqrt(1 - BC(p, q)), in [0, 1].
template <typename DerivedP, typename DerivedQ>
double BhattacharyyaDistance(const Eigen::MatrixBase<DerivedP>& p,
                             const Eigen::MatrixBase<DerivedQ>& q) {
  return std::sqrt(std::max(0.0, 1.0 - BhattacharyyaCoefficient(p, q)));
}

}  // namespace simplex

/// Dissimilarity between an utterance's normalized zeroth-order statistics
/// and the UBM weights. KL kinds floor both vectors first.
double QualityBw(QualityKind kind, const VectorXd& nbs, const VectorXd& weights);
double QualityBw(QualityKind kind, const NbsVector& nbs, const VectorXd& weights);

inline constexpr double kDefaultDurationScale = 1.0;
inline constexpr double kDefaultCentreDuration = 20.0;  // seconds

/// Trial-level duration measures of enrollment duration d_m and test
/// duration d_t (seconds):
///   dur1 = k |log(d_m/d_t)|, dur2 = k log^2(d_m/d_t),
///   dur3 = k log(d_m/d_c) log(d_c/d_t).
double QualityDuration(QualityKind kind, double d_m, double d_t,
                       double k = kDefaultDurationScale,
                       double d_c = kDefaultCentreDuration);

/// 1 / trace of the i-vector posterior covariance.
double QualityUncertainty(const IVector& iv);

/// Trial quality: the product of enrollment and test qualities.
inline double TrialQuality(double q_enroll, double q_test) {
  return q_enroll * q_test;
}

struct QualityRecord {
  std::string utterance_id;
  QualityKind kind = QualityKind::kKl1;
  double value = 0;
  double duration_s = 0;
};

/// Plain text "utterance-id kind value" per line.
void WriteQualityFile(const std::filesystem::path& path,
                      std::span<const QualityRecord> records);
std::vector<QualityRecord> ReadQualityFile(const std::filesystem::path& path);

}  // namespace qmsv
