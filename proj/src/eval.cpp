// qmsv/eval.cpp

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

#include "qmsv/eval.hpp"

#include <algorithm>
#include <cstdio>

namespace qmsv {

namespace {

void CheckBothClasses(const ScoreSet& s) {
  if (s.target.empty() || s.nontarget.empty())
    throw ArgumentError("metrics need at least one target and one nontarget trial");
  for (double v : s.target)
    if (std::isnan(v)) throw ArgumentError("metrics: NaN score");
  for (double v : s.nontarget)
    if (std::isnan(v)) throw ArgumentError("metrics: NaN score");
}

// Operating points for thresholds -inf, v_1 < ... < v_m in sweep order
// (p_fa decreasing).
std::vector<DetPoint> Sweep(const ScoreSet& s) {
  CheckBothClasses(s);
  std::vector<std::pair<double, bool>> all;
  all.reserve(s.target.size() + s.nontarget.size());
  for (double v : s.target) all.emplace_back(v, true);
  for (double v : s.nontarget) all.emplace_back(v, false);
  std::sort(all.begin(), all.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  const double nt = static_cast<double>(s.target.size());
  const double nn = static_cast<double>(s.nontarget.size());
  std::size_t misses = 0, false_alarms = s.nontarget.size();
  std::vector<DetPoint> pts;
  pts.push_back({1.0, 0.0});
  for (std::size_t i = 0; i < all.size();) {
    const double v = all[i].first;
    // Tied scores flip together.
    while (i < all.size() && all[i].first == v) {
      if (all[i].second)
        ++misses;
      else
        --false_alarms;
      ++i;
    }
    pts.push_back({static_cast<double>(false_alarms) / nn,
                   static_cast<double>(misses) / nt});
  }
  return pts;
}

double EerOfSweep(const std::vector<DetPoint>& pts) {
  for (std::size_t k = 0; k < pts.size(); ++k) {
    const double dk = pts[k].p_fa - pts[k].p_miss;
    if (dk > 0) continue;
    if (dk == 0 || k == 0) return 100.0 * pts[k].p_fa;
    const double dprev = pts[k - 1].p_fa - pts[k - 1].p_miss;
    const double t = dprev / (dprev - dk);
    return 100.0 * (pts[k - 1].p_fa + t * (pts[k].p_fa - pts[k - 1].p_fa));
  }
  return 100.0;
}

}  // namespace

void DcfParams::Validate() const {
  if (!(c_miss > 0) || !(c_fa > 0))
    throw ArgumentError("DCF costs must be positive");
  if (!(p_target > 0 && p_target < 1))
    throw ArgumentError("DCF target prior must be in (0, 1)");
}

double DcfParams::EffectivePrior() const {
  Validate();
  return c_miss * p_target / (c_miss * p_target + c_fa * (1.0 - p_target));
}

double ComputeEer(const ScoreSet& scores) { return EerOfSweep(Sweep(scores)); }

double ComputeMinDcf(const ScoreSet& scores, const DcfParams& params) {
  params.Validate();
  const double miss_weight = params.c_miss * params.p_target;
  const double fa_weight = params.c_fa * (1.0 - params.p_target);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : Sweep(scores))
    best = std::min(best, miss_weight * p.p_miss + fa_weight * p.p_fa);
  return best;
}

std::vector<DetPoint> DetPoints(const ScoreSet& scores) {
  auto pts = Sweep(scores);
  std::reverse(pts.begin(), pts.end());
  return pts;
}

double EerFromDet(const std::vector<DetPoint>& det) {
  std::vector<DetPoint> sweep(det.rbegin(), det.rend());
  return EerOfSweep(sweep);
}

double RelativeImprovement(double p_new, double p_ref) {
  if (p_ref == 0) throw ArgumentError("relative improvement: zero reference");
  return (p_new - p_ref) / p_ref * 100.0;
}

MetricsReport Evaluate(const ScoreSet& scores, const DcfParams& params) {
  MetricsReport r;
  r.eer = ComputeEer(scores);
  r.min_dcf = ComputeMinDcf(scores, params);
  r.det_points = DetPoints(scores);
  r.n_target = static_cast<Index>(scores.target.size());
  r.n_nontarget = static_cast<Index>(scores.nontarget.size());
  return r;
}

std::string FormatMetricsLine(const std::string& condition,
                              const MetricsReport& report) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "\t%.4f\t%.4f", report.eer,
                100.0 * report.min_dcf);
  return condition + buf;
}

}  // namespace qmsv
