// qmsv/qmsv/subspace.hpp

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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qmsv/common.hpp"
#include "qmsv/gmm.hpp"
#include "qmsv/stats.hpp"

namespace qmsv {

/// Total-variability model M = m + Phi y over the UBM supervector space.
/// Supervector rows are component-major: block i occupies rows [i*D, i*D+D).
struct TvModel {
  MatrixXd phi;    // (C*D) x R
  MatrixXd sigma;  // C x D, diagonal covariances taken from the UBM
  MatrixXd m_bar;  // C x D, UBM means
  std::vector<double> train_objective;

  Index rank() const { return phi.cols(); }
  Index num_components() const { return sigma.rows(); }
  Index dim() const { return sigma.cols(); }
  void Validate() const;
};

struct IVector {
  VectorXd y;
  std::optional<MatrixXd> posterior_cov;
};

/// Caches the per-component R x R terms Phi_i^T Sigma_i^-1 Phi_i so that
/// extraction costs O(C R^2) per utterance. Immutable after construction.
class IvectorExtractor {
 public:
  explicit IvectorExtractor(TvModel model);

  const TvModel& model() const { return model_; }

  /// Posterior mean (I + Phi^T Sigma^-1 N Phi)^-1 Phi^T Sigma^-1 N (E - m)
  /// and, when requested, the posterior covariance.
  IVector Extract(const BwStats& stats, bool with_covariance = true) const;

  /// Precision matrix I + Phi^T Sigma^-1 N Phi of an utterance.
  MatrixXd Precision(const VectorXd& counts) const;
  /// Phi^T Sigma^-1 N (E - m), the linear term of the posterior.
  VectorXd LinearTerm(const BwStats& stats) const;

 private:
  TvModel model_;
  MatrixXd scaled_phi_;           // Sigma^-1 Phi, (C*D) x R
  MatrixXd component_precision_;  // (R*R) x C, column i = vec(Phi_i^T Sigma_i^-1 Phi_i)
};

IVector ExtractIvector(const TvModel& tv, const BwStats& stats);

/// trace of the posterior covariance.
double PosteriorTrace(const IVector& iv);

struct TvTrainConfig {
  Index rank = 32;
  int n_iters = 10;
  std::uint64_t seed = 0;
};

/// EM estimation of Phi for p(E | y) = N(Phi y, N^-1 Sigma), y ~ N(0, I),
/// with Sigma and m fixed to the UBM. train_objective records the marginal
/// log-likelihood of the statistics (up to a Phi-independent constant)
/// before each M-step and once after the last.
TvModel TrainTv(std::span<const BwStats> stats, const GmmModel& ubm,
                const TvTrainConfig& cfg);

struct LdaProjection {
  MatrixXd basis;        // R x P
  VectorXd mean;         // R
  VectorXd eigenvalues;  // P, descending

  Index in_dim() const { return basis.rows(); }
  Index out_dim() const { return basis.cols(); }
};

/// Fisher LDA over labelled vectors (rows). out_dim is clamped to
/// min(R, n_speakers - 1) with a warning on stderr. A singular within-class
/// scatter is regularized by 1e-6 * trace / R on the diagonal.
LdaProjection TrainLda(const MatrixXd& vectors,
                       std::span<const std::string> labels, Index out_dim);

/// (y - mean)^T basis.
VectorXd ProjectLda(const LdaProjection& proj, const VectorXd& y);
VectorXd ProjectLda(const LdaProjection& proj, const IVector& iv);

void WriteTv(const std::filesystem::path& path, const TvModel& model);
TvModel ReadTv(const std::filesystem::path& path);
void WriteLda(const std::filesystem::path& path, const LdaProjection& proj);
LdaProjection ReadLda(const std::filesystem::path& path);

struct NamedVector {
  std::string id;
  VectorXd v;
};

/// Plain text "utterance-id v1 v2 ... vR" per line.
void WriteVectorsText(const std::filesystem::path& path,
                      std::span<const NamedVector> vectors);
std::vector<NamedVector> ReadVectorsText(const std::filesystem::path& path);

}  // namespace qmsv
