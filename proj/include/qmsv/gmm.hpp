// qmsv/qmsv/gmm.hpp

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
#include <span>
#include <vector>

#include "qmsv/common.hpp"
#include "qmsv/frontend.hpp"

namespace qmsv {

/// Diagonal-covariance Gaussian mixture. Serves both as the UBM and as a
/// MAP-adapted speaker model.
struct GmmModel {
  VectorXd weights;    // C, on the simplex
  MatrixXd means;      // C x D
  MatrixXd variances;  // C x D, diagonal covariances

  // Training provenance, carried through serialization.
  double variance_floor_fraction = 0.01;
  std::uint64_t seed = 0;
  std::vector<double> train_loglik;  // total log-likelihood per EM iteration

  Index num_components() const { return weights.size(); }
  Index dim() const { return means.cols(); }

  /// Throws ShapeError/ArgumentError if the parameters are inconsistent.
  void Validate() const;
};

struct GmmTrainConfig {
  int n_components = 64;
  int n_iters = 10;
  double variance_floor = 0.01;  // fraction of the global per-dimension variance
  std::uint64_t seed = 0;
  /// Frames considered by the farthest-point initializer.
  Index init_pool = 20000;
};

/// log(w_i) + log N(x_t; mu_i, Sigma_i) for every frame (rows) and component
/// (columns).
MatrixXd LogJointLikelihoods(const GmmModel& model,
                             const Eigen::Ref<const RowMatrixXd>& frames);

/// Per-component posteriors of one frame, computed in the log domain.
VectorXd FramePosteriors(const GmmModel& model,
                         const Eigen::Ref<const VectorXd>& frame);

/// (1/T) sum_t log sum_i w_i N(x_t; mu_i, Sigma_i).
double AvgLogLikelihood(const GmmModel& model, const FeatureMatrix& features);
double AvgLogLikelihood(const GmmModel& model,
                        const Eigen::Ref<const RowMatrixXd>& frames);

/// EM training on pooled frames. Initialization is a seeded farthest-point
/// pick of C frames refined by two hard-assignment passes; variances are
/// floored at variance_floor times the global variance of the data.
GmmModel TrainUbm(const Eigen::Ref<const RowMatrixXd>& pooled,
                  const GmmTrainConfig& cfg);
GmmModel TrainUbm(std::span<const FeatureMatrix> features,
                  const GmmTrainConfig& cfg);

inline constexpr double kDefaultRelevance = 16.0;

/// Means-only MAP adaptation with relevance factor r:
///   mu_i' = a_i E_i + (1 - a_i) mu_i,  a_i = N_i / (N_i + r).
GmmModel MapAdapt(const GmmModel& ubm, const FeatureMatrix& features,
                  double relevance = kDefaultRelevance);

/// Average log-likelihood ratio of the test frames between target and UBM.
double ScoreGmmUbm(const GmmModel& target, const GmmModel& ubm,
                   const FeatureMatrix& test);

/// Scores many means-only adaptations of one UBM against a test segment.
/// Weights and variances are shared, so the frame-dependent quadratic term
/// and the UBM likelihoods are computed once per segment and each target
/// costs a single T x D x C product. Immutable after construction.
class GmmUbmBatchScorer {
 public:
  explicit GmmUbmBatchScorer(const GmmModel& ubm);

  /// Average log-likelihood ratio of `test` for every target; each entry of
  /// `target_means` is a C x D mean matrix adapted from the UBM.
  std::vector<double> Score(std::span<const MatrixXd> target_means,
                            const FeatureMatrix& test) const;

 private:
  GmmModel ubm_;
  MatrixXd inv_var_;       // C x D
  VectorXd log_norm_;      // C, log w_i - 1/2 sum_d log(2 pi var_id)
};

/// Container "QMSVGMM1"; header carries components, dim, floor, seed and the
/// per-iteration log-likelihoods; payload weights (C x 1), means, variances.
void WriteGmm(const std::filesystem::path& path, const GmmModel& model);
GmmModel ReadGmm(const std::filesystem::path& path);

}  // namespace qmsv
