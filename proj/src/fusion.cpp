// qmsv/fusion.cpp

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

#include "qmsv/fusion.hpp"

#include <sstream>

#include "qmsv/io.hpp"

namespace qmsv {

namespace {

double Softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double Sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void RequireInputs(FusionMode mode, const TrialRecord& t) {
  const bool need_ubm = mode != FusionMode::kCalibration;
  if (need_ubm && !t.ubm_score)
    throw ArgumentError("trial " + t.enroll_id + "/" + t.test_id +
                        " lacks a gmm-ubm score");
  if (!t.gplda_score)
    throw ArgumentError("trial " + t.enroll_id + "/" + t.test_id +
                        " lacks an ivector-gplda score");
  if (mode != FusionMode::kLinear && (!t.q_enroll || !t.q_test))
    throw ArgumentError("trial " + t.enroll_id + "/" + t.test_id +
                        " lacks quality values");
}

// Design matrix of the trials for a mode: score columns, a bias column and,
// for quality modes, the normalized trial-quality column.
struct Design {
  MatrixXd x;
  VectorXd label;   // 1 target, 0 nontarget
  VectorXd weight;  // per-trial prior weights
  Index n_scores = 0;
};

Design BuildDesign(std::span<const TrialRecord> dev, FusionMode mode,
                   double q_mean, double q_scale, const DcfParams& costs) {
  Design d;
  d.n_scores = mode == FusionMode::kCalibration ? 1 : 2;
  const Index cols = d.n_scores + 1 + (mode == FusionMode::kLinear ? 0 : 1);
  const Index n = static_cast<Index>(dev.size());
  d.x.resize(n, cols);
  d.label.resize(n);
  d.weight.resize(n);
  Index nt = 0, nn = 0;
  for (const auto& t : dev) {
    if (!t.is_target) throw ArgumentError("fusion training needs labelled trials");
    (*t.is_target ? nt : nn) += 1;
  }
  if (nt == 0 || nn == 0)
    throw ArgumentError("fusion training needs both target and nontarget trials");
  const double pi = costs.EffectivePrior();
  for (Index i = 0; i < n; ++i) {
    const auto& t = dev[static_cast<std::size_t>(i)];
    RequireInputs(mode, t);
    Index c = 0;
    if (mode != FusionMode::kCalibration) d.x(i, c++) = *t.ubm_score;
    d.x(i, c++) = *t.gplda_score;
    d.x(i, c++) = 1.0;
    if (mode != FusionMode::kLinear)
      d.x(i, c++) = (TrialQuality(*t.q_enroll, *t.q_test) - q_mean) / q_scale;
    d.label(i) = *t.is_target ? 1.0 : 0.0;
    d.weight(i) = *t.is_target ? pi / nt : (1.0 - pi) / nn;
  }
  return d;
}

double Objective(const Design& d, const VectorXd& w, double offset) {
  const VectorXd z = d.x * w;
  double c = 0;
  for (Index i = 0; i < z.size(); ++i)
    c += d.weight(i) *
         Softplus(d.label(i) > 0 ? -(z(i) + offset) : z(i) + offset);
  return c;
}

}  // namespace

std::string_view ToString(FusionMode mode) {
  switch (mode) {
    case FusionMode::kLinear:
      return "linear";
    case FusionMode::kQuality:
      return "quality";
    case FusionMode::kCalibration:
      return "calibration";
  }
  return "?";
}

FusionMode ParseFusionMode(std::string_view name) {
  if (name == "linear") return FusionMode::kLinear;
  if (name == "quality") return FusionMode::kQuality;
  if (name == "calibration") return FusionMode::kCalibration;
  throw ArgumentError("unknown fusion mode '" + std::string(name) + "'");
}

double ApplyFusion(const FusionModel& model, const TrialRecord& trial) {
  RequireInputs(model.mode, trial);
  double s = model.theta;
  if (model.mode == FusionMode::kCalibration) {
    s += model.alpha(0) * *trial.gplda_score;
  } else {
    s += model.alpha(0) * *trial.ubm_score + model.alpha(1) * *trial.gplda_score;
  }
  if (model.mode != FusionMode::kLinear)
    s += model.beta * TrialQuality(*trial.q_enroll, *trial.q_test);
  return s;
}

double FusionObjective(const FusionModel& model,
                       std::span<const TrialRecord> dev,
                       const DcfParams& costs) {
  const double pi = costs.EffectivePrior();
  const double offset = std::log(pi / (1.0 - pi));
  Index nt = 0, nn = 0;
  for (const auto& t : dev) {
    if (!t.is_target) throw ArgumentError("fusion objective needs labelled trials");
    (*t.is_target ? nt : nn) += 1;
  }
  if (nt == 0 || nn == 0)
    throw ArgumentError("fusion objective needs both classes");
  double c = 0;
  for (const auto& t : dev) {
    const double f = ApplyFusion(model, t) + offset;
    c += *t.is_target ? pi / nt * Softplus(-f) : (1.0 - pi) / nn * Softplus(f);
  }
  return c;
}

FusionModel TrainFusion(std::span<const TrialRecord> dev, FusionMode mode,
                        std::optional<QualityKind> quality_kind,
                        const DcfParams& costs, std::string dev_set_id,
                        const FusionTrainOptions& options) {
  if (mode != FusionMode::kLinear && !quality_kind)
    throw ArgumentError("quality fusion needs a quality kind");
  FusionModel model;
  model.mode = mode;
  model.quality_kind = mode == FusionMode::kLinear ? std::nullopt : quality_kind;
  model.dev_set_id = std::move(dev_set_id);

  if (mode != FusionMode::kLinear) {
    double sum = 0, sq = 0;
    for (const auto& t : dev) {
      RequireInputs(mode, t);
      const double q = TrialQuality(*t.q_enroll, *t.q_test);
      sum += q;
      sq += q * q;
    }
    const double n = static_cast<double>(dev.size());
    model.q_mean = sum / n;
    const double var = std::max(0.0, sq / n - model.q_mean * model.q_mean);
    model.q_scale = var > 1e-300 ? std::sqrt(var) : 1.0;
  }
  const Design d = BuildDesign(dev, mode, model.q_mean, model.q_scale, costs);
  const double pi = costs.EffectivePrior();
  const double offset = std::log(pi / (1.0 - pi));

  const Index p = d.x.cols();
  VectorXd w = VectorXd::Zero(p);
  double obj = Objective(d, w, offset);
  for (int it = 0; it < options.max_iters; ++it) {
    const VectorXd z = d.x * w;
    VectorXd resid(z.size()), curv(z.size());
    for (Index i = 0; i < z.size(); ++i) {
      const double s = Sigmoid(z(i) + offset);
      resid(i) = d.weight(i) * (s - d.label(i));
      curv(i) = d.weight(i) * s * (1.0 - s);
    }
    const VectorXd grad = d.x.transpose() * resid;
    if (grad.norm() < options.gradient_tolerance) break;
    MatrixXd hess = d.x.transpose() * curv.asDiagonal() * d.x;
    hess.diagonal().array() += 1e-12 * (1.0 + hess.diagonal().maxCoeff());
    VectorXd step = hess.ldlt().solve(-grad);
    if (!step.allFinite() || step.dot(grad) >= 0) step = -grad;
    double t = 1.0;
    bool improved = false;
    for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
      const VectorXd cand = w + t * step;
      const double c = Objective(d, cand, offset);
      if (c <= obj + 1e-4 * t * step.dot(grad)) {
        w = cand;
        improved = c < obj;
        obj = c;
        break;
      }
    }
    if (!improved) break;
  }

  // Back to raw units.
  model.alpha = w.head(d.n_scores);
  model.theta = w(d.n_scores);
  if (mode != FusionMode::kLinear) {
    model.beta = w(d.n_scores + 1) / model.q_scale;
    model.theta -= model.beta * model.q_mean;
  }
  model.dev_objective = FusionObjective(model, dev, costs);
  return model;
}

ScoreSet FusedScoreSet(const FusionModel& model,
                       std::span<const TrialRecord> trials) {
  ScoreSet s;
  for (const auto& t : trials) {
    if (!t.is_target) continue;
    (*t.is_target ? s.target : s.nontarget).push_back(ApplyFusion(model, t));
  }
  return s;
}

void WriteFusionModel(const std::filesystem::path& path, const FusionModel& m) {
  std::ostringstream os;
  os << "mode " << ToString(m.mode) << '\n';
  os << "quality_kind " << (m.quality_kind ? ToString(*m.quality_kind) : "none")
     << '\n';
  os << "alpha " << m.alpha.size();
  for (Index i = 0; i < m.alpha.size(); ++i)
    os << ' ' << io::FormatDouble(m.alpha(i));
  os << '\n';
  os << "theta " << io::FormatDouble(m.theta) << '\n';
  os << "beta " << io::FormatDouble(m.beta) << '\n';
  os << "q_mean " << io::FormatDouble(m.q_mean) << '\n';
  os << "q_scale " << io::FormatDouble(m.q_scale) << '\n';
  os << "dev_set " << (m.dev_set_id.empty() ? "-" : m.dev_set_id) << '\n';
  os << "dev_objective " << io::FormatDouble(m.dev_objective) << '\n';
  io::WriteFileAtomic(path, os.str());
}

FusionModel ReadFusionModel(const std::filesystem::path& path) {
  FusionModel m;
  bool have_mode = false, have_alpha = false;
  for (const auto& line : io::ReadLines(path)) {
    const auto f = io::SplitWhitespace(line);
    if (f.size() < 2) throw IoError(path.string() + ": bad line: " + line);
    const std::string& k = f[0];
    if (k == "mode") {
      m.mode = ParseFusionMode(f[1]);
      have_mode = true;
    } else if (k == "quality_kind") {
      if (f[1] != "none") m.quality_kind = ParseQualityKind(f[1]);
    } else if (k == "alpha") {
      const auto n = static_cast<std::size_t>(io::ParseInt(f[1]));
      if (f.size() != n + 2) throw IoError(path.string() + ": bad alpha line");
      m.alpha.resize(static_cast<Index>(n));
      for (std::size_t i = 0; i < n; ++i)
        m.alpha(static_cast<Index>(i)) = io::ParseDouble(f[i + 2]);
      have_alpha = true;
    } else if (k == "theta") {
      m.theta = io::ParseDouble(f[1]);
    } else if (k == "beta") {
      m.beta = io::ParseDouble(f[1]);
    } else if (k == "q_mean") {
      m.q_mean = io::ParseDouble(f[1]);
    } else if (k == "q_scale") {
      m.q_scale = io::ParseDouble(f[1]);
    } else if (k == "dev_set") {
      m.dev_set_id = f[1] == "-" ? "" : f[1];
    } else if (k == "dev_objective") {
      m.dev_objective = io::ParseDouble(f[1]);
    } else {
      throw IoError(path.string() + ": unknown field " + k);
    }
  }
  if (!have_mode || !have_alpha) throw IoError(path.string() + ": incomplete model");
  const Index want = m.mode == FusionMode::kCalibration ? 1 : 2;
  if (m.alpha.size() != want) throw IoError(path.string() + ": alpha size mismatch");
  return m;
}

void WriteScoreFile(const std::filesystem::path& path,
                    std::span<const ScoreEntry> entries) {
  std::ostringstream os;
  for (const auto& e : entries)
    os << e.enroll_id << '\t' << e.test_id << '\t' << e.system << '\t'
       << io::FormatDouble(e.score) << '\n';
  io::WriteFileAtomic(path, os.str());
}

std::vector<ScoreEntry> ReadScoreFile(const std::filesystem::path& path) {
  std::vector<ScoreEntry> out;
  for (const auto& line : io::ReadLines(path)) {
    const auto f = io::SplitTabs(line);
    if (f.size() != 4) throw IoError(path.string() + ": bad score line: " + line);
    out.push_back({f[0], f[1], f[2], io::ParseDouble(f[3])});
  }
  return out;
}

std::map<TrialKey, bool> ReadKeyFile(const std::filesystem::path& path) {
  std::map<TrialKey, bool> out;
  for (const auto& line : io::ReadLines(path)) {
    const auto f = io::SplitTabs(line);
    if (f.size() != 3 || (f[2] != "target" && f[2] != "nontarget"))
      throw IoError(path.string() + ": bad key line: " + line);
    out[{f[0], f[1]}] = f[2] == "target";
  }
  return out;
}

void WriteKeyFile(const std::filesystem::path& path,
                  const std::vector<std::pair<TrialKey, bool>>& key) {
  std::ostringstream os;
  for (const auto& [k, target] : key)
    os << k.first << '\t' << k.second << '\t'
       << (target ? "target" : "nontarget") << '\n';
  io::WriteFileAtomic(path, os.str());
}

std::vector<TrialKey> ReadTrialList(const std::filesystem::path& path) {
  std::vector<TrialKey> out;
  for (const auto& line : io::ReadLines(path)) {
    const auto f = io::SplitTabs(line);
    if (f.size() != 2) throw IoError(path.string() + ": bad trial line: " + line);
    out.emplace_back(f[0], f[1]);
  }
  return out;
}

std::vector<TrialRecord> BuildTrials(
    std::span<const ScoreEntry> scores, const std::map<TrialKey, bool>* key,
    const std::map<std::string, double>* utterance_quality) {
  std::vector<TrialRecord> out;
  std::map<TrialKey, std::size_t> index;
  for (const auto& e : scores) {
    TrialKey k{e.enroll_id, e.test_id};
    auto it = index.find(k);
    if (it == index.end()) {
      it = index.emplace(k, out.size()).first;
      TrialRecord t;
      t.enroll_id = e.enroll_id;
      t.test_id = e.test_id;
      out.push_back(std::move(t));
    }
    TrialRecord& t = out[it->second];
    if (e.system == kSystemGmmUbm)
      t.ubm_score = e.score;
    else if (e.system == kSystemGplda)
      t.gplda_score = e.score;
    else
      throw ArgumentError("unknown system tag '" + e.system + "'");
  }
  for (auto& t : out) {
    if (key) {
      auto k = key->find({t.enroll_id, t.test_id});
      if (k != key->end()) t.is_target = k->second;
    }
    if (utterance_quality) {
      auto qe = utterance_quality->find(t.enroll_id);
      auto qt = utterance_quality->find(t.test_id);
      if (qe != utterance_quality->end()) t.q_enroll = qe->second;
      if (qt != utterance_quality->end()) t.q_test = qt->second;
    }
  }
  return out;
}

ScoreSet ScoreSetForSystem(std::span<const ScoreEntry> scores,
                           const std::map<TrialKey, bool>& key,
                           std::string_view system) {
  ScoreSet s;
  for (const auto& e : scores) {
    if (e.system != system) continue;
    auto k = key.find({e.enroll_id, e.test_id});
    if (k == key.end()) continue;
    (k->second ? s.target : s.nontarget).push_back(e.score);
  }
  return s;
}

}  // namespace qmsv
