// qmsv/qmsv/stats.hpp

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

#include "qmsv/common.hpp"
#include "qmsv/frontend.hpp"
#include "qmsv/gmm.hpp"

namespace qmsv {

/// Components whose soft count falls below this are treated as empty: their
/// first-order mean is pinned to the UBM mean so (E_i - mu_i) vanishes.
inline constexpr double kZeroCount = 1e-10;

/// Zeroth- and first-order Baum-Welch statistics of one utterance.
struct BwStats {
  VectorXd n;  // C soft counts N_i
  MatrixXd e;  // C x D first-order means E_i
  MatrixXd f;  // C x D first-order sums sum_t gamma_ti x_t (kept for merging)
  Index t = 0;  // frame count

  Index num_components() const { return n.size(); }
  Index dim() const { return e.cols(); }

  /// The empty accumulator; merging with it is the identity.
  static BwStats Zero(Index num_components, Index dim);
};

/// Normalized zeroth-order statistics N_i / T; lies on the simplex.
struct NbsVector {
  VectorXd values;
};

BwStats AccumulateBw(const GmmModel& ubm, const FeatureMatrix& features);
BwStats AccumulateBw(const GmmModel& ubm,
                     const Eigen::Ref<const RowMatrixXd>& frames);

/// Statistics of the concatenation of the two underlying frame sets.
BwStats MergeBw(const BwStats& a, const BwStats& b);

NbsVector NormalizeZeroth(const BwStats& stats);

/// Means-only MAP adaptation from precomputed statistics of the UBM.
GmmModel MapAdapt(const GmmModel& ubm, const BwStats& stats,
                  double relevance = kDefaultRelevance);

/// Layout (little endian): "QMSVSTAT" | u32 C | u32 D | u64 T |
/// N (C float64) | E (C*D float64, row-major) | F (C*D float64, row-major)
void WriteStats(const std::filesystem::path& path, const BwStats& stats);
BwStats ReadStats(const std::filesystem::path& path);

}  // namespace qmsv
