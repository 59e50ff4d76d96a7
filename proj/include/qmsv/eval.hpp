// qmsv/qmsv/eval.hpp

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

#include <string>
#include <vector>

#include "qmsv/common.hpp"

namespace qmsv {

struct DcfParams {
  double c_miss = 10.0;
  double c_fa = 1.0;
  double p_target = 0.01;

  void Validate() const;
  /// c_miss p / (c_miss p + c_fa (1 - p)).
  double EffectivePrior() const;
};

/// Scores of a detection experiment split by ground truth.
struct ScoreSet {
  std::vector<double> target;
  std::vector<double> nontarget;
};

struct DetPoint {
  double p_fa;
  double p_miss;
};

struct MetricsReport {
  double eer = 0;      // percent
  double min_dcf = 0;  // unscaled; tables print 100 * min_dcf
  std::vector<DetPoint> det_points;
  Index n_target = 0;
  Index n_nontarget = 0;
};

/// Equal error rate in percent. Decisions accept iff score > threshold; the
/// threshold sweeps -inf and every distinct score, and the crossing of the
/// miss and false-alarm curves is interpolated linearly between adjacent
/// operating points.
double ComputeEer(const ScoreSet& scores);

/// Minimum of c_miss P_miss p + c_fa P_fa (1 - p) over all thresholds,
/// including accept-all and reject-all.
double ComputeMinDcf(const ScoreSet& scores, const DcfParams& params = {});

/// One operating point per threshold, ordered by increasing p_fa (and
/// decreasing p_miss). Always contains (0, 1) and (1, 0).
std::vector<DetPoint> DetPoints(const ScoreSet& scores);

/// EER (percent) of an ordered operating-point curve.
double EerFromDet(const std::vector<DetPoint>& det);

/// (p_new - p_ref) / p_ref * 100.
double RelativeImprovement(double p_new, double p_ref);

MetricsReport Evaluate(const ScoreSet& scores, const DcfParams& params = {});

/// "condition<TAB>eer<TAB>mindcf100"
std::string FormatMetricsLine(const std::string& condition,
                              const MetricsReport& report);

}  // namespace qmsv
