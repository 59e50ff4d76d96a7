// qmsv/quality_test.cpp

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

#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "qmsv/quality.hpp"

using namespace qmsv;

namespace {

// Dirichlet(1) draw, optionally with some coordinates forced to zero the way
// short utterances leave components unvisited.
VectorXd RandomSimplex(std::mt19937_64& rng, Index c, bool sparse) {
  std::gamma_distribution<double> gamma(1.0, 1.0);
  std::bernoulli_distribution drop(0.3);
  VectorXd v(c);
  for (Index i = 0; i < c; ++i) v(i) = sparse && drop(rng) ? 0.0 : gamma(rng);
  if (v.sum() == 0) v(0) = 1.0;
  return v / v.sum();
}

}  // namespace

TEST_CASE("kind names round-trip") {
  for (auto k : {QualityKind::kKl1, QualityKind::kKl2, QualityKind::kKlAvg,
                 QualityKind::kL1, QualityKind::kL2, QualityKind::kBh,
                 QualityKind::kDur1, QualityKind::kDur2, QualityKind::kDur3,
                 QualityKind::kTv})
    CHECK(ParseQualityKind(ToString(k)) == k);
  CHECK(ToString(QualityKind::kKlAvg) == "kl-avg");
  CHECK_THROWS_AS(ParseQualityKind("kl3"), ArgumentError);
  CHECK(IsBwKind(QualityKind::kBh));
  CHECK_FALSE(IsBwKind(QualityKind::kTv));
  CHECK(IsDurationKind(QualityKind::kDur3));
}

TEST_CASE("identical distributions have zero divergence") {
  VectorXd w(4);
  w << 0.1, 0.2, 0.3, 0.4;
  for (auto k : {QualityKind::kKl1, QualityKind::kKl2, QualityKind::kKlAvg,
                 QualityKind::kL1, QualityKind::kL2, QualityKind::kBh})
    CHECK(std::abs(QualityBw(k, w, w)) < 1e-7);
  CHECK(QualityBw(QualityKind::kKl1, w, w) == 0.0);
  CHECK(QualityBw(QualityKind::kKl2, w, w) == 0.0);
}

TEST_CASE("two-component hand arithmetic") {
  VectorXd n(2), w(2);
  n << 1.0, 0.0;
  w << 0.5, 0.5;
  CHECK(QualityBw(QualityKind::kL1, n, w) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(QualityBw(QualityKind::kL2, n, w) ==
        doctest::Approx(std::sqrt(0.5)).epsilon(1e-15));
  // Hellinger form sqrt(1 - sum sqrt(n w)) = sqrt(1 - sqrt(0.5)).
  CHECK(QualityBw(QualityKind::kBh, n, w) ==
        doctest::Approx(std::sqrt(1.0 - std::sqrt(0.5))).epsilon(1e-15));
  // Floored n = (1 - 1e-10, 1e-10) / (1) up to renormalization.
  const double a = 1.0 / (1.0 + 1e-10), b = 1e-10 / (1.0 + 1e-10);
  const double kl1 = a * std::log(a / 0.5) + b * std::log(b / 0.5);
  const double kl2 = 0.5 * std::log(0.5 / a) + 0.5 * std::log(0.5 / b);
  CHECK(QualityBw(QualityKind::kKl1, n, w) == doctest::Approx(kl1).epsilon(1e-12));
  CHECK(QualityBw(QualityKind::kKl2, n, w) == doctest::Approx(kl2).epsilon(1e-12));
}

TEST_CASE("axioms over random simplex pairs") {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<Index> size(2, 64);
  for (int trial = 0; trial < 10000; ++trial) {
    const Index c = size(rng);
    const VectorXd n = RandomSimplex(rng, c, trial % 3 == 0);
    const VectorXd w = RandomSimplex(rng, c, false);
    const double kl1 = QualityBw(QualityKind::kKl1, n, w);
    const double kl2 = QualityBw(QualityKind::kKl2, n, w);
    const double kla = QualityBw(QualityKind::kKlAvg, n, w);
    const double l1 = QualityBw(QualityKind::kL1, n, w);
    const double l2 = QualityBw(QualityKind::kL2, n, w);
    const double bh = QualityBw(QualityKind::kBh, n, w);
    CHECK(kl1 > 0);  // the pair differs after flooring
    CHECK(kl2 > 0);
    CHECK(kla == 0.5 * (kl1 + kl2));
    CHECK(l1 >= 0);
    CHECK(l1 <= 2.0);
    CHECK(l2 >= 0);
    CHECK(l2 <= std::sqrt(2.0));
    CHECK(bh > 0);
    CHECK(bh <= 1.0);
    // Symmetries.
    CHECK(QualityBw(QualityKind::kKl1, w, n) == doctest::Approx(kl2).epsilon(1e-12));
    CHECK(QualityBw(QualityKind::kKlAvg, w, n) == doctest::Approx(kla).epsilon(1e-12));
    CHECK(QualityBw(QualityKind::kL1, w, n) == doctest::Approx(l1).epsilon(1e-12));
    CHECK(QualityBw(QualityKind::kL2, w, n) == doctest::Approx(l2).epsilon(1e-12));
    CHECK(QualityBw(QualityKind::kBh, w, n) == doctest::Approx(bh).epsilon(1e-12));
  }
}

TEST_CASE("KL is zero exactly when the floored vectors coincide") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const VectorXd n = RandomSimplex(rng, 16, true);
    CHECK(QualityBw(QualityKind::kKl1, n, n) == 0.0);
    CHECK(QualityBw(QualityKind::kKl2, n, n) == 0.0);
    // Entries below the floor are indistinguishable after flooring.
    VectorXd m = n;
    for (Index i = 0; i < m.size(); ++i)
      if (m(i) == 0) m(i) = 1e-12;
    m /= m.sum();
    CHECK(QualityBw(QualityKind::kKlAvg, m, n) <= 1e-9);
  }
}

TEST_CASE("statistics-based quality rejects bad input") {
  VectorXd w(3), n(2), bad(3);
  w << 0.2, 0.3, 0.5;
  n << 0.5, 0.5;
  bad << 0.5, 0.5, 0.5;
  CHECK_THROWS_AS(QualityBw(QualityKind::kKl1, n, w), ShapeError);
  CHECK_THROWS_AS(QualityBw(QualityKind::kL1, bad, w), ArgumentError);
  CHECK_THROWS_AS(QualityBw(QualityKind::kDur1, w, w), ArgumentError);
}

TEST_CASE("duration quality hand arithmetic") {
  CHECK(QualityDuration(QualityKind::kDur1, 20, 2) ==
        doctest::Approx(2.302585092994046).epsilon(1e-14));
  CHECK(QualityDuration(QualityKind::kDur2, 20, 2) ==
        doctest::Approx(5.301898110478399).epsilon(1e-14));
  CHECK(QualityDuration(QualityKind::kDur3, 20, 2) == 0.0);
  CHECK(QualityDuration(QualityKind::kDur1, 7, 7) == 0.0);
  CHECK(QualityDuration(QualityKind::kDur2, 7, 7) == 0.0);
  CHECK(QualityDuration(QualityKind::kDur3, 5, 40) ==
        doctest::Approx(std::log(0.25) * std::log(0.5)).epsilon(1e-14));
  CHECK(QualityDuration(QualityKind::kDur1, 5, 40, 2.0) ==
        doctest::Approx(2 * std::log(8.0)).epsilon(1e-14));
  CHECK_THROWS_AS(QualityDuration(QualityKind::kDur1, 0, 2), ArgumentError);
  CHECK_THROWS_AS(QualityDuration(QualityKind::kKl1, 2, 2), ArgumentError);
}

TEST_CASE("uncertainty quality") {
  IVector iv;
  iv.y = VectorXd::Zero(1);
  iv.posterior_cov = MatrixXd::Constant(1, 1, 0.2);
  CHECK(QualityUncertainty(iv) == doctest::Approx(5.0).epsilon(1e-15));
  iv.posterior_cov = MatrixXd::Identity(4, 4);
  CHECK(QualityUncertainty(iv) == 0.25);
  iv.posterior_cov.reset();
  CHECK_THROWS(QualityUncertainty(iv));
}

TEST_CASE("trial quality is the product") {
  CHECK(TrialQuality(0.309, 2.250) == doctest::Approx(0.69525).epsilon(1e-15));
  CHECK(TrialQuality(0.0, 3.0) == 0.0);
  CHECK(TrialQuality(1.5, 2.5) == TrialQuality(2.5, 1.5));
}

TEST_CASE("quality file round trip") {
  const auto path = std::filesystem::temp_directory_path() / "qmsv_quality_test.txt";
  const std::vector<QualityRecord> in = {{"a", QualityKind::kKl1, 0.1 + 0.2, 0},
                                         {"b", QualityKind::kTv, 1e-300, 0},
                                         {"c", QualityKind::kDur3, -2.5, 0}};
  WriteQualityFile(path, in);
  const auto out = ReadQualityFile(path);
  REQUIRE(out.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(out[i].utterance_id == in[i].utterance_id);
    CHECK(out[i].kind == in[i].kind);
    CHECK(out[i].value == in[i].value);
  }
  std::filesystem::remove(path);
}
