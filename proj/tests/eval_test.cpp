// qmsv/eval_test.cpp

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
#include <limits>
#include <random>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "qmsv/eval.hpp"

using namespace qmsv;


TEST_CASE("hand-computed EER and minDCF") {
  const ScoreSet s{{1, 2}, {0, 1.5}};
  CHECK(ComputeEer(s) == doctest::Approx(50.0).epsilon(1e-15));
  CHECK(ComputeMinDcf(s) == doctest::Approx(0.05).epsilon(1e-15));
}

TEST_CASE("perfect separation gives zero EER") {
  const ScoreSet s{{3, 4, 5}, {0, 1, 2}};
  CHECK(ComputeEer(s) == 0.0);
  CHECK(ComputeMinDcf(s) == 0.0);
}

TEST_CASE("fully overlapping scores hit the trivial-decision cost") {
  const ScoreSet s{{0.5, 0.5, 0.5}, {0.5, 0.5}};
  // min(c_miss * P_tar, c_fa * (1 - P_tar)) = min(0.1, 0.99)
  CHECK(ComputeMinDcf(s, {10, 1, 0.01}) == 0.1);
  CHECK(ComputeEer(s) == doctest::Approx(50.0));
}

TEST_CASE("EER and minDCF match brute-force sweeps on random small sets") {
  std::mt19937_64 rng(20260);
  const DcfParams params{10, 1, 0.01};
  for (int trial = 0; trial < 1000; ++trial) {
    const ScoreSet s = oracle::RandomScores(rng);
    CHECK(std::abs(ComputeEer(s) - oracle::Eer(s)) <= 1e-12);
    CHECK(std::abs(ComputeMinDcf(s, params) - oracle::MinDcf(s, params)) <= 1e-12);
  }
}

TEST_CASE("DET points are ordered and consistent with the EER") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const ScoreSet s = oracle::RandomScores(rng);
    const auto det = DetPoints(s);
    REQUIRE(det.size() >= 2);
    CHECK(det.front().p_fa == 0.0);
    CHECK(det.front().p_miss == 1.0);
    CHECK(det.back().p_fa == 1.0);
    CHECK(det.back().p_miss == 0.0);
    for (std::size_t i = 1; i < det.size(); ++i) {
      CHECK(det[i].p_fa >= det[i - 1].p_fa);
      CHECK(det[i].p_miss <= det[i - 1].p_miss);
    }
    CHECK(EerFromDet(det) == doctest::Approx(ComputeEer(s)).epsilon(1e-12));
  }
}

TEST_CASE("metrics are invariant to a monotone transform of the scores") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    ScoreSet s = oracle::RandomScores(rng);
    ScoreSet t = s;
    for (double& v : t.target) v = std::exp(v);
    for (double& v : t.nontarget) v = std::exp(v);
    CHECK(ComputeEer(s) == doctest::Approx(ComputeEer(t)).epsilon(1e-12));
    CHECK(ComputeMinDcf(s) == doctest::Approx(ComputeMinDcf(t)).epsilon(1e-12));
  }
}

TEST_CASE("metric inputs are validated") {
  CHECK_THROWS_AS(ComputeEer({{}, {1.0}}), ArgumentError);
  CHECK_THROWS_AS(ComputeEer({{1.0}, {}}), ArgumentError);
  CHECK_THROWS_AS(ComputeMinDcf({{1.0}, {0.0}}, {10, 1, 0}), ArgumentError);
  CHECK_THROWS_AS(ComputeMinDcf({{1.0}, {0.0}}, {0, 1, 0.01}), ArgumentError);
  CHECK_THROWS_AS(ComputeEer({{std::nan("")}, {0.0}}), ArgumentError);
}

TEST_CASE("relative improvement") {
  CHECK(RelativeImprovement(4.86, 14.75) == doctest::Approx(-67.05).epsilon(1e-4));
  CHECK(RelativeImprovement(2, 1) == 100.0);
  CHECK_THROWS_AS(RelativeImprovement(1, 0), ArgumentError);
}

TEST_CASE("metrics line format") {
  MetricsReport r;
  r.eer = 12.5;
  r.min_dcf = 0.0625;
  CHECK(FormatMetricsLine("Full-Full", r) == "Full-Full\t12.5000\t6.2500");
}

TEST_CASE("effective prior") {
  const DcfParams p{10, 1, 0.01};
  CHECK(p.EffectivePrior() == doctest::Approx(0.1 / 1.09).epsilon(1e-15));
}
