// qmsv/qmsv/plda.hpp

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
#include <string>
#include <vector>

#include "qmsv/common.hpp"

namespace qmsv {

/// Gaussian PLDA: y = eta + Psi z + eps, z ~ N(0, I), eps ~ N(0, S) with a
/// full residual covariance S.
struct PldaModel {
  VectorXd eta;           // P
  MatrixXd psi;           // P x Q
  MatrixXd residual_cov;  // P x P
  std::vector<double> train_loglik;

  Index dim() const { return eta.size(); }
  Index rank() const { return psi.cols(); }
  void Validate() const;
};

struct PldaTrainConfig {
  Index q_dim = 8;
  int n_iters = 20;
  std::uint64_t seed = 0;
};

/// EM with exact posteriors of each speaker's latent z given all of the
/// speaker's sessions. eta is the sample mean. train_loglik records the
/// marginal data log-likelihood before each M-step and after the last.
PldaModel TrainPlda(const MatrixXd& vectors,
                    std::span<const std::string> labels,
                    const PldaTrainConfig& cfg);

/// Marginal log-likelihood of labelled data under the model.
double PldaLogLikelihood(const PldaModel& model, const MatrixXd& vectors,
                         std::span<const std::string> labels);

/// Closed-form same-speaker versus different-speaker log-likelihood ratio
/// for single-vector enrollment. Quadratic forms are derived once from
/// B = Psi Psi^T and S at construction:
///   score = -1/2 a'Da - 1/2 b'Db - a'Gb + k,  a, b centred by eta.
class PldaScorer {
 public:
  explicit PldaScorer(const PldaModel& model);
  double Score(const VectorXd& enroll, const VectorXd& test) const;
  Index dim() const { return eta_.size(); }

 private:
  VectorXd eta_;
  MatrixXd diag_term_;
  MatrixXd cross_term_;
  double offset_ = 0;
};

double ScorePlda(const PldaModel& model, const VectorXd& enroll,
                 const VectorXd& test);

void WritePlda(const std::filesystem::path& path, const PldaModel& model);
PldaModel ReadPlda(const std::filesystem::path& path);

}  // namespace qmsv
