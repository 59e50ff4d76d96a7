// qmsv/fusion_test.cpp

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

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "doctest.h"
#include "qmsv/fusion.hpp"
#include "test_util.hpp"

using namespace qmsv;
using namespace qmsv::testing;

namespace {

/// The prior-weighted cross-entropy written out from its definition.
double ReferenceObjective(const FusionModel& m, std::span<const TrialRecord> dev,
                          const DcfParams& costs) {
  const double pi = costs.c_miss * costs.p_target /
                    (costs.c_miss * costs.p_target + costs.c_fa * (1 - costs.p_target));
  double nt = 0, nn = 0, ct = 0, cn = 0;
  for (const auto& t : dev) {
    const double s = ApplyFusion(m, t) + std::log(pi / (1 - pi));
    if (*t.is_target) {
      nt += 1;
      ct += std::log1p(std::exp(-s));
    } else {
      nn += 1;
      cn += std::log1p(std::exp(s));
    }
  }
  return pi * ct / nt + (1 - pi) * cn / nn;
}

std::vector<std::size_t> Ordering(const FusionModel& m, std::span<const TrialRecord> dev) {
  std::vector<double> s;
  for (const auto& t : dev) s.push_back(ApplyFusion(m, t));
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return s[a] < s[b]; });
  return idx;
}

}  // namespace

TEST_CASE("fused score arithmetic") {
  TrialRecord t;
  t.ubm_score = 3.0;
  t.gplda_score = 1.0;
  t.q_enroll = 0.5;
  t.q_test = 0.4;
  FusionModel m;
  m.alpha = VectorXd(2);
  m.alpha << 1.0, 0.0;
  CHECK(ApplyFusion(m, t) == 3.0);
  m.mode = FusionMode::kQuality;
  m.alpha << 0.5, 0.5;
  m.theta = -1.0;
  m.beta = 2.0;
  CHECK(ApplyFusion(m, t) == doctest::Approx(1.4));
  m.beta = 0.0;
  FusionModel lin = m;
  lin.mode = FusionMode::kLinear;
  CHECK(ApplyFusion(m, t) == ApplyFusion(lin, t));
  FusionModel cal;
  cal.mode = FusionMode::kCalibration;
  cal.alpha = VectorXd::Constant(1, 2.0);
  cal.theta = 0.5;
  cal.beta = 1.0;
  CHECK(ApplyFusion(cal, t) == doctest::Approx(2.0 + 0.5 + 0.2));
  t.q_test.reset();
  CHECK_THROWS_AS(ApplyFusion(m, t), ArgumentError);
}

TEST_CASE("training minimizes the prior-weighted cross-entropy") {
  std::mt19937_64 rng(51);
  const auto dev = SyntheticDevTrials(300, 3000, rng);
  const DcfParams costs;
  const FusionModel m = TrainFusion(dev, FusionMode::kLinear, std::nullopt, costs);
  CHECK(m.dev_objective == doctest::Approx(ReferenceObjective(m, dev, costs)).epsilon(1e-12));
  CHECK(FusionObjective(m, dev, costs) == doctest::Approx(m.dev_objective).epsilon(1e-12));
  FusionModel zero;
  zero.alpha = VectorXd::Zero(2);
  CHECK(m.dev_objective <= ReferenceObjective(zero, dev, costs));
  // Stationarity: small perturbations of any parameter do not help.
  for (int k = 0; k < 3; ++k)
    for (double h : {1e-4, -1e-4}) {
      FusionModel p = m;
      if (k < 2)
        p.alpha(k) += h;
      else
        p.theta += h;
      CHECK(ReferenceObjective(p, dev, costs) >= m.dev_objective - 1e-12);
    }
}

TEST_CASE("quality fusion never does worse than linear fusion on dev") {
  std::mt19937_64 rng(52);
  const auto dev = SyntheticDevTrials(200, 2000, rng);
  const FusionModel lin = TrainFusion(dev, FusionMode::kLinear, std::nullopt);
  for (auto kind : {QualityKind::kKl1, QualityKind::kBh, QualityKind::kTv}) {
    const FusionModel q = TrainFusion(dev, FusionMode::kQuality, kind);
    CHECK(q.dev_objective <= lin.dev_objective + 1e-6);
    CHECK(q.quality_kind == kind);
  }
  const FusionModel cal = TrainFusion(dev, FusionMode::kCalibration, QualityKind::kL1);
  CHECK(cal.alpha.size() == 1);
}

TEST_CASE("a constant quality reproduces linear decisions") {
  std::mt19937_64 rng(53);
  auto dev = SyntheticDevTrials(100, 1000, rng);
  for (auto& t : dev) t.q_enroll = t.q_test = 0.7;
  const FusionModel lin = TrainFusion(dev, FusionMode::kLinear, std::nullopt);
  const FusionModel q = TrainFusion(dev, FusionMode::kQuality, QualityKind::kL2);
  for (const auto& t : dev) CHECK(ApplyFusion(q, t) == doctest::Approx(ApplyFusion(lin, t)).epsilon(1e-6));
  CHECK(Ordering(q, dev) == Ordering(lin, dev));
}

TEST_CASE("separable dev scores fuse to zero error") {
  std::vector<TrialRecord> dev;
  for (int i = 0; i < 40; ++i) {
    TrialRecord t;
    t.is_target = i < 10;
    t.ubm_score = (*t.is_target ? 5.0 : -5.0) + 0.01 * i;
    t.gplda_score = 0.1 * (i % 3);
    dev.push_back(t);
  }
  FusionTrainOptions opts;
  opts.max_iters = 60;
  const FusionModel m = TrainFusion(dev, FusionMode::kLinear, std::nullopt, {}, "dev", opts);
  CHECK(ComputeEer(FusedScoreSet(m, dev)) == 0.0);
}

TEST_CASE("a shifted system is absorbed by the bias") {
  std::mt19937_64 rng(54);
  auto dev = SyntheticDevTrials(150, 1500, rng);
  const FusionModel a = TrainFusion(dev, FusionMode::kLinear, std::nullopt);
  for (auto& t : dev) *t.ubm_score += 4.0;
  const FusionModel b = TrainFusion(dev, FusionMode::kLinear, std::nullopt);
  CHECK(b.dev_objective == doctest::Approx(a.dev_objective).epsilon(1e-9));
  CHECK(b.alpha(0) == doctest::Approx(a.alpha(0)).epsilon(1e-6));
  CHECK(b.theta == doctest::Approx(a.theta - 4.0 * a.alpha(0)).epsilon(1e-6));
}

TEST_CASE("fusion of independent systems is no worse than the best single one") {
  int ok = 0;
  for (int seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(600 + seed);
    std::normal_distribution<double> normal;
    std::vector<TrialRecord> dev;
    ScoreSet s1, s2;
    for (int i = 0; i < 2000; ++i) {
      TrialRecord t;
      t.is_target = i < 400;
      const double mu = *t.is_target ? 1.5 : 0.0;
      t.ubm_score = mu + normal(rng);
      t.gplda_score = mu + normal(rng);
      (*t.is_target ? s1.target : s1.nontarget).push_back(*t.ubm_score);
      (*t.is_target ? s2.target : s2.nontarget).push_back(*t.gplda_score);
      dev.push_back(t);
    }
    const FusionModel m = TrainFusion(dev, FusionMode::kLinear, std::nullopt);
    if (ComputeEer(FusedScoreSet(m, dev)) <= std::min(ComputeEer(s1), ComputeEer(s2)) + 0.5)
      ++ok;
  }
  CHECK(ok == 10);
}

TEST_CASE("training is deterministic and validates its input") {
  std::mt19937_64 rng(55);
  auto dev = SyntheticDevTrials(50, 500, rng);
  const FusionModel a = TrainFusion(dev, FusionMode::kQuality, QualityKind::kKl2);
  const FusionModel b = TrainFusion(dev, FusionMode::kQuality, QualityKind::kKl2);
  CHECK(a.alpha == b.alpha);
  CHECK(a.beta == b.beta);
  CHECK_THROWS_AS(TrainFusion(dev, FusionMode::kQuality, std::nullopt), ArgumentError);
  std::vector<TrialRecord> one_class(dev.begin(), dev.begin() + 50);
  CHECK_THROWS_AS(TrainFusion(one_class, FusionMode::kLinear, std::nullopt), ArgumentError);
  dev[3].q_enroll.reset();
  CHECK_THROWS_AS(TrainFusion(dev, FusionMode::kQuality, QualityKind::kKl2), ArgumentError);
  CHECK(ParseFusionMode(ToString(FusionMode::kCalibration)) == FusionMode::kCalibration);
  CHECK_THROWS_AS(ParseFusionMode("average"), ArgumentError);
}

TEST_CASE("fusion model, score and key files round trip") {
  std::mt19937_64 rng(56);
  const auto dev = SyntheticDevTrials(30, 300, rng);
  const FusionModel m = TrainFusion(dev, FusionMode::kQuality, QualityKind::kBh, {}, "sre-dev");
  const auto dir = std::filesystem::temp_directory_path();
  WriteFusionModel(dir / "qmsv_fusion.txt", m);
  const FusionModel r = ReadFusionModel(dir / "qmsv_fusion.txt");
  CHECK(r.mode == m.mode);
  CHECK(r.quality_kind == m.quality_kind);
  CHECK(r.alpha == m.alpha);
  CHECK(r.theta == m.theta);
  CHECK(r.beta == m.beta);
  CHECK(r.dev_set_id == "sre-dev");
  CHECK(r.dev_objective == m.dev_objective);

  std::vector<ScoreEntry> scores = {{"a", "x", "gmm-ubm", 1.25},
                                    {"a", "x", "ivector-gplda", -0.5},
                                    {"b", "x", "gmm-ubm", 0.1}};
  WriteScoreFile(dir / "qmsv_scores.tsv", scores);
  const auto back = ReadScoreFile(dir / "qmsv_scores.tsv");
  REQUIRE(back.size() == 3);
  CHECK(back[1].system == "ivector-gplda");
  CHECK(back[1].score == -0.5);

  WriteKeyFile(dir / "qmsv_key.tsv", {{{"a", "x"}, true}, {{"b", "x"}, false}});
  const auto key = ReadKeyFile(dir / "qmsv_key.tsv");
  CHECK(key.at({"a", "x"}));
  CHECK_FALSE(key.at({"b", "x"}));

  const std::map<std::string, double> quality = {{"a", 0.5}, {"x", 0.25}};
  const auto trials = BuildTrials(back, &key, &quality);
  REQUIRE(trials.size() == 2);
  CHECK(*trials[0].ubm_score == 1.25);
  CHECK(*trials[0].gplda_score == -0.5);
  CHECK(*trials[0].is_target);
  CHECK(*trials[0].q_enroll == 0.5);
  CHECK(*trials[0].q_test == 0.25);
  CHECK_FALSE(trials[1].gplda_score.has_value());
  CHECK_FALSE(trials[1].q_enroll.has_value());

  const ScoreSet ubm = ScoreSetForSystem(back, key, kSystemGmmUbm);
  CHECK(ubm.target == std::vector<double>{1.25});
  CHECK(ubm.nontarget == std::vector<double>{0.1});

  std::vector<ScoreEntry> bad = {{"a", "x", "cosine", 1.0}};
  CHECK_THROWS_AS(BuildTrials(bad, nullptr, nullptr), ArgumentError);
  for (const char* f : {"qmsv_fusion.txt", "qmsv_scores.tsv", "qmsv_key.tsv"})
    std::filesystem::remove(dir / f);
}
