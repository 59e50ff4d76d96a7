// qmsv/qmsv/fusion.hpp

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
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qmsv/common.hpp"
#include "qmsv/eval.hpp"
#include "qmsv/quality.hpp"

namespace qmsv {

inline constexpr std::string_view kSystemGmmUbm = "gmm-ubm";
inline constexpr std::string_view kSystemGplda = "ivector-gplda";

/// One enrollment/test pair with its subsystem scores and side information.
/// For duration-based quality kinds, which are defined per trial, q_enroll
/// carries the trial value and q_test is 1.
struct TrialRecord {
  std::string enroll_id;
  std::string test_id;
  std::optional<double> ubm_score;
  std::optional<double> gplda_score;
  std::optional<double> q_enroll;
  std::optional<double> q_test;
  std::optional<bool> is_target;
};

enum class FusionMode { kLinear, kQuality, kCalibration };

std::string_view ToString(FusionMode mode);
FusionMode ParseFusionMode(std::string_view name);

/// f(L) = alpha^T L + theta + beta * q_enroll * q_test, where L holds both
/// subsystem scores (LINEAR, QUALITY) or the GPLDA score only (CALIBRATION).
struct FusionModel {
  FusionMode mode = FusionMode::kLinear;
  std::optional<QualityKind> quality_kind;
  VectorXd alpha;
  double theta = 0;
  double beta = 0;
  // Dev-set mean and scale of the trial-quality product used to condition
  // the optimization; alpha/theta/beta are stored in raw units.
  double q_mean = 0;
  double q_scale = 1;
  std::string dev_set_id;
  double dev_objective = 0;
};

/// Prior-weighted logistic-regression cost of a fusion model on labelled
/// trials at the effective prior of `costs`:
///   pi/Nt sum_tar log(1 + e^-(f + logit pi))
///     + (1-pi)/Nn sum_non log(1 + e^(f + logit pi))
double FusionObjective(const FusionModel& model,
                       std::span<const TrialRecord> dev,
                       const DcfParams& costs = {});

struct FusionTrainOptions {
  double gradient_tolerance = 1e-8;
  int max_iters = 500;
};

/// Minimizes FusionObjective with damped Newton iterations from zero.
FusionModel TrainFusion(std::span<const TrialRecord> dev, FusionMode mode,
                        std::optional<QualityKind> quality_kind,
                        const DcfParams& costs = {},
                        std::string dev_set_id = "dev",
                        const FusionTrainOptions& options = {});

double ApplyFusion(const FusionModel& model, const TrialRecord& trial);

/// Scores of labelled trials after fusion, split by label.
ScoreSet FusedScoreSet(const FusionModel& model,
                       std::span<const TrialRecord> trials);

void WriteFusionModel(const std::filesystem::path& path, const FusionModel& m);
FusionModel ReadFusionModel(const std::filesystem::path& path);

/// One line of a score file: enroll<TAB>test<TAB>system<TAB>score.
struct ScoreEntry {
  std::string enroll_id;
  std::string test_id;
  std::string system;
  double score = 0;
};

void WriteScoreFile(const std::filesystem::path& path,
                    std::span<const ScoreEntry> entries);
std::vector<ScoreEntry> ReadScoreFile(const std::filesystem::path& path);

using TrialKey = std::pair<std::string, std::string>;

/// Key file lines: enroll<TAB>test<TAB>target|nontarget.
std::map<TrialKey, bool> ReadKeyFile(const std::filesystem::path& path);
void WriteKeyFile(const std::filesystem::path& path,
                  const std::vector<std::pair<TrialKey, bool>>& key);

/// Trial list lines: enroll<TAB>test.
std::vector<TrialKey> ReadTrialList(const std::filesystem::path& path);

/// Joins score entries (both systems, if present) with optional labels and
/// per-utterance qualities into trial records, in first-appearance order.
std::vector<TrialRecord> BuildTrials(
    std::span<const ScoreEntry> scores,
    const std::map<TrialKey, bool>* key,
    const std::map<std::string, double>* utterance_quality);

/// Scores of one system split by label; trials without a label are skipped.
ScoreSet ScoreSetForSystem(std::span<const ScoreEntry> scores,
                           const std::map<TrialKey, bool>& key,
                           std::string_view system);

}  // namespace qmsv
