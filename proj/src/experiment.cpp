// qmsv/experiment.cpp

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
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include "qmsv/harness.hpp"
#include "qmsv/io.hpp"
#include "qmsv/stats.hpp"

namespace qmsv {

namespace {

constexpr std::size_t kNumBwKinds = std::size(kBwQualityKinds);

std::string Lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string Hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string JoinNames(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : ",") + s;
  return out;
}

bool ParseBool(std::string_view text) {
  const std::string v = Lower(io::Trim(text));
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ArgumentError("expected a boolean, got '" + std::string(text) + "'");
}

// Section -> accepted keys of the plan file.
const std::map<std::string, std::set<std::string>>& PlanKeys() {
  static const std::map<std::string, std::set<std::string>> keys = {
      {"split",
       {"background", "dev", "eval", "dev_set_id", "eval_set_id",
        "allow_dev_eval_overlap"}},
      {"models",
       {"ubm_components", "ubm_iters", "ubm_variance_floor", "ubm_max_frames",
        "relevance", "tv_rank", "tv_iters", "lda_dim", "plda_q_dim",
        "plda_iters"}},
      {"experiment",
       {"conditions", "systems", "fusion_modes", "quality_kinds",
        "skip_frames", "random_min_frames", "random_max_frames", "seed",
        "c_miss", "c_fa", "p_target"}}};
  return keys;
}

class Stopwatch {
 public:
  double Seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void Log(std::ostream* log, const Stopwatch& clock, const std::string& msg) {
  if (!log) return;
  char stamp[32];
  std::snprintf(stamp, sizeof stamp, "[%7.1fs] ", clock.Seconds());
  *log << stamp << msg << std::endl;
}

std::vector<Index> SplitUtterances(const SyntheticCorpus& corpus,
                                   const SpeakerRange& range,
                                   Index first_session, Index last_session) {
  std::vector<Index> out;
  for (Index s = range.first; s <= range.last; ++s)
    for (Index k = first_session; k <= last_session; ++k)
      out.push_back(corpus.Utterance(s, k));
  return out;
}

// Everything the scoring stages need from one truncated segment.
struct Segment {
  std::string id;  // "<utterance>@<duration>"
  Index speaker = 0;
  double duration_s = 0;
  VectorXd projected;  // LDA-projected i-vector
  double q_tv = 0;
  std::array<double, kNumBwKinds> q_bw{};
  MatrixXd map_means;  // enrollment segments only
};

struct SegmentSet {
  std::vector<Segment> segments;
  std::string error;  // set when any utterance could not be cut
};

class SegmentProcessor {
 public:
  SegmentProcessor(const ExperimentPlan& plan, const TrainedModels& models)
      : plan_(plan),
        models_(models),
        extractor_(models.tv),
        scorer_(models.ubm) {}

  Segment Process(const FeatureMatrix& segment, const std::string& id,
                  Index speaker, bool enroll) const {
    Segment s;
    s.id = id;
    s.speaker = speaker;
    s.duration_s = static_cast<double>(segment.num_frames()) * segment.frame_shift;
    const BwStats stats = AccumulateBw(models_.ubm, segment);
    const NbsVector nbs = NormalizeZeroth(stats);
    for (std::size_t k = 0; k < kNumBwKinds; ++k)
      s.q_bw[k] = QualityBw(kBwQualityKinds[k], nbs, models_.ubm.weights);
    const IVector iv = extractor_.Extract(stats, true);
    s.q_tv = QualityUncertainty(iv);
    s.projected = ProjectLda(models_.lda, iv);
    if (enroll) s.map_means = MapAdapt(models_.ubm, stats, plan_.relevance).means;
    return s;
  }

  const GmmUbmBatchScorer& gmm_scorer() const { return scorer_; }

 private:
  const ExperimentPlan& plan_;
  const TrainedModels& models_;
  IvectorExtractor extractor_;
  GmmUbmBatchScorer scorer_;
};

// Scores of one split for every pending condition.
struct SplitScores {
  std::map<DurationSpec, SegmentSet> enroll;
  std::map<DurationSpec, SegmentSet> test;
  std::map<std::string, MatrixXd> gmm;  // condition -> models x tests
  std::map<std::string, std::string> errors;
};

std::string SegmentId(const std::string& utterance, const DurationSpec& d) {
  return utterance + "@" + d.Name();
}

SplitScores ScoreSplit(const ExperimentPlan& plan,
                       const SyntheticCorpus& corpus,
                       const SegmentProcessor& proc, const SpeakerRange& range,
                       const std::vector<Condition>& conditions,
                       std::ostream* log, const Stopwatch& clock,
                       const std::string& split_name) {
  SplitScores out;
  std::set<DurationSpec> enroll_specs, test_specs;
  for (const auto& c : conditions) {
    enroll_specs.insert(c.enroll);
    test_specs.insert(c.test);
  }
  const Index sessions = plan.corpus.sessions_per_speaker;

  auto cut_all = [&](const std::vector<Index>& utts,
                     const std::set<DurationSpec>& specs,
                     std::map<DurationSpec, SegmentSet>& sets, bool enroll,
                     const auto& on_segment) {
    for (const auto& d : specs) sets[d];
    for (Index u : utts) {
      const FeatureMatrix feats = corpus.Generate(u);
      const UtteranceInfo info = corpus.Info(u);
      const Index speaker = u / sessions;
      for (const auto& d : specs) {
        SegmentSet& set = sets[d];
        if (!set.error.empty()) continue;
        try {
          const FeatureMatrix seg = CutSegment(plan, d, feats, info.id,
                                               enroll ? "enroll" : "test");
          set.segments.push_back(
              proc.Process(seg, SegmentId(info.id, d), speaker, enroll));
          on_segment(d, seg, set.segments.size() - 1);
        } catch (const Error& e) {
          set.error = info.id + "@" + d.Name() + ": " + e.what();
          set.segments.clear();
        }
      }
    }
  };

  const auto enroll_utts = SplitUtterances(corpus, range, 0, 0);
  const auto test_utts = SplitUtterances(corpus, range, 1, sessions - 1);
  cut_all(enroll_utts, enroll_specs, out.enroll, true,
          [](const DurationSpec&, const FeatureMatrix&, std::size_t) {});
  Log(log, clock, split_name + ": " + std::to_string(enroll_utts.size()) +
                      " enrollment utterances processed");

  // Enrollment mean matrices per spec, gathered once for batch scoring.
  std::map<DurationSpec, std::vector<MatrixXd>> enroll_means;
  for (const auto& [d, set] : out.enroll)
    for (const auto& s : set.segments) enroll_means[d].push_back(s.map_means);

  const bool gmm = plan.HasSystem(kSystemGmmUbm);
  for (const auto& c : conditions) {
    const auto& es = out.enroll[c.enroll];
    if (!es.error.empty()) out.errors[c.Name()] = es.error;
    if (gmm)
      out.gmm[c.Name()] = MatrixXd::Zero(
          static_cast<Index>(es.segments.size()),
          static_cast<Index>(test_utts.size()));
  }
  cut_all(test_utts, test_specs, out.test, false,
          [&](const DurationSpec& d, const FeatureMatrix& seg, std::size_t j) {
            if (!gmm) return;
            for (const auto& c : conditions) {
              if (!(c.test == d) || out.errors.count(c.Name())) continue;
              const auto scores =
                  proc.gmm_scorer().Score(enroll_means[c.enroll], seg);
              auto& m = out.gmm[c.Name()];
              for (std::size_t i = 0; i < scores.size(); ++i)
                m(static_cast<Index>(i), static_cast<Index>(j)) = scores[i];
            }
          });
  for (const auto& c : conditions) {
    const auto& ts = out.test[c.test];
    if (!ts.error.empty() && !out.errors.count(c.Name()))
      out.errors[c.Name()] = ts.error;
  }
  Log(log, clock, split_name + ": " + std::to_string(test_utts.size()) +
                      " test utterances processed");
  return out;
}

// Trials of one condition plus the segments behind each one.
struct CellTrials {
  std::vector<TrialRecord> trials;
  std::vector<std::pair<const Segment*, const Segment*>> segments;
};

CellTrials BuildCellTrials(const ExperimentPlan& plan, const SplitScores& split,
                           const Condition& cond, const PldaScorer* plda) {
  CellTrials cell;
  const auto& enroll = split.enroll.at(cond.enroll).segments;
  const auto& test = split.test.at(cond.test).segments;
  const MatrixXd* gmm = nullptr;
  if (plan.HasSystem(kSystemGmmUbm)) gmm = &split.gmm.at(cond.Name());
  for (std::size_t i = 0; i < enroll.size(); ++i) {
    for (std::size_t j = 0; j < test.size(); ++j) {
      TrialRecord t;
      t.enroll_id = enroll[i].id;
      t.test_id = test[j].id;
      if (gmm) t.ubm_score = (*gmm)(static_cast<Index>(i), static_cast<Index>(j));
      if (plda) t.gplda_score = plda->Score(enroll[i].projected, test[j].projected);
      t.is_target = enroll[i].speaker == test[j].speaker;
      cell.trials.push_back(std::move(t));
      cell.segments.emplace_back(&enroll[i], &test[j]);
    }
  }
  return cell;
}

double SegmentQuality(const Segment& s, QualityKind kind) {
  if (kind == QualityKind::kTv) return s.q_tv;
  for (std::size_t k = 0; k < kNumBwKinds; ++k)
    if (kBwQualityKinds[k] == kind) return s.q_bw[k];
  throw ArgumentError("not a per-utterance quality kind");
}

// Copies the trials with the quality values of `kind` attached. Duration
// kinds are trial-level: the value goes to q_enroll and q_test is 1.
std::vector<TrialRecord> WithQuality(const CellTrials& cell, QualityKind kind) {
  std::vector<TrialRecord> out = cell.trials;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto& [e, t] = cell.segments[i];
    if (IsDurationKind(kind)) {
      out[i].q_enroll = QualityDuration(kind, e->duration_s, t->duration_s);
      out[i].q_test = 1.0;
    } else {
      out[i].q_enroll = SegmentQuality(*e, kind);
      out[i].q_test = SegmentQuality(*t, kind);
    }
  }
  return out;
}

ScoreSet SystemScoreSet(const std::vector<TrialRecord>& trials,
                        std::string_view system) {
  ScoreSet s;
  for (const auto& t : trials) {
    const auto& v = system == kSystemGmmUbm ? t.ubm_score : t.gplda_score;
    if (!v) throw ArgumentError("system " + std::string(system) + " not scored");
    (*t.is_target ? s.target : s.nontarget).push_back(*v);
  }
  return s;
}

void WriteCellFiles(const std::filesystem::path& dir, const std::string& split,
                    const CellTrials& cell) {
  std::vector<ScoreEntry> scores;
  std::vector<std::pair<TrialKey, bool>> key;
  std::map<std::string, const Segment*> segs;
  for (std::size_t i = 0; i < cell.trials.size(); ++i) {
    const auto& t = cell.trials[i];
    if (t.ubm_score)
      scores.push_back({t.enroll_id, t.test_id, std::string(kSystemGmmUbm), *t.ubm_score});
    if (t.gplda_score)
      scores.push_back({t.enroll_id, t.test_id, std::string(kSystemGplda), *t.gplda_score});
    key.push_back({{t.enroll_id, t.test_id}, *t.is_target});
    segs[cell.segments[i].first->id] = cell.segments[i].first;
    segs[cell.segments[i].second->id] = cell.segments[i].second;
  }
  WriteScoreFile(dir / ("scores-" + split + ".tsv"), scores);
  WriteKeyFile(dir / ("key-" + split + ".tsv"), key);
  std::vector<QualityRecord> q;
  for (const auto& [id, s] : segs) {
    for (std::size_t k = 0; k < kNumBwKinds; ++k)
      q.push_back({id, kBwQualityKinds[k], s->q_bw[k], s->duration_s});
    q.push_back({id, QualityKind::kTv, s->q_tv, s->duration_s});
  }
  WriteQualityFile(dir / ("quality-" + split + ".tsv"), q);
}

void WriteDet(const std::filesystem::path& path, const MetricsReport& r) {
  std::string text = "# p_fa\tp_miss\n";
  for (const auto& p : r.det_points)
    text += io::FormatDouble(p.p_fa) + '\t' + io::FormatDouble(p.p_miss) + '\n';
  io::WriteFileAtomic(path, text);
}

std::string FileSafe(std::string s) {
  for (char& c : s)
    if (c == ':') c = '_';
  return s;
}

std::string ModelsHash(const ExperimentPlan& plan) {
  const io::KeyValueFile full = plan.ToKeyValue();
  io::KeyValueFile kv;
  for (const char* section : {"corpus", "models"})
    for (const auto& [k, v] : full.Section(section)) kv.Set(section, k, v);
  kv.Set("split", "background", plan.background.ToString());
  kv.Set("experiment", "seed", std::to_string(plan.seed));
  return Hex(io::Fnv1a(kv.ToString()));
}

std::string CellHash(const ExperimentPlan& plan, const Condition& cond) {
  ExperimentPlan p = plan;
  p.conditions.clear();
  return Hex(io::Fnv1a(p.ToKeyValue().ToString() + "condition=" + cond.Name()));
}

}  // namespace

// ---------------------------------------------------------------------------

std::string DurationSpec::Name() const {
  switch (kind) {
    case Kind::kFull:
      return "Full";
    case Kind::kRandom:
      return "Random";
    case Kind::kFixed:
      break;
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%gs", seconds);
  return buf;
}

DurationSpec DurationSpec::Parse(std::string_view text) {
  const std::string t = Lower(io::Trim(text));
  DurationSpec d;
  if (t == "full") return d;
  if (t == "random") {
    d.kind = Kind::kRandom;
    return d;
  }
  if (t.size() < 2 || t.back() != 's')
    throw ArgumentError("bad duration '" + std::string(text) + "'");
  d.kind = Kind::kFixed;
  d.seconds = io::ParseDouble(t.substr(0, t.size() - 1));
  if (!(d.seconds > 0) || !std::isfinite(d.seconds))
    throw ArgumentError("bad duration '" + std::string(text) + "'");
  return d;
}

std::string Condition::Name() const { return enroll.Name() + "-" + test.Name(); }

Condition Condition::Parse(std::string_view text) {
  const auto dash = text.find('-');
  if (dash == std::string_view::npos || text.find('-', dash + 1) != std::string_view::npos)
    throw ArgumentError("condition must be <enroll>-<test>: '" + std::string(text) + "'");
  return {DurationSpec::Parse(text.substr(0, dash)),
          DurationSpec::Parse(text.substr(dash + 1))};
}

std::string SpeakerRange::ToString() const {
  return std::to_string(first) + "-" + std::to_string(last);
}

SpeakerRange SpeakerRange::Parse(std::string_view text) {
  const auto dash = text.find('-');
  if (dash == std::string_view::npos)
    throw ArgumentError("speaker range must be <first>-<last>: '" + std::string(text) + "'");
  SpeakerRange r{static_cast<Index>(io::ParseInt(text.substr(0, dash))),
                 static_cast<Index>(io::ParseInt(text.substr(dash + 1)))};
  if (r.first < 0 || r.last < r.first)
    throw ArgumentError("empty speaker range '" + std::string(text) + "'");
  return r;
}

bool ExperimentPlan::HasSystem(std::string_view name) const {
  return std::find(systems.begin(), systems.end(), name) != systems.end();
}

void ExperimentPlan::Validate() const {
  corpus.Validate();
  if (corpus.sessions_per_speaker < 2)
    throw ArgumentError("plan: trials need at least two sessions per speaker");
  for (const auto* r : {&background, &dev, &eval})
    if (r->first < 0 || r->last < r->first || r->last >= corpus.n_speakers)
      throw ArgumentError("plan: speaker range " + r->ToString() +
                          " outside the corpus");
  if (dev.Overlaps(eval) && !allow_dev_eval_overlap)
    throw ArgumentError(
        "plan: dev and eval speaker sets overlap; set "
        "allow_dev_eval_overlap to evaluate fusion on its own dev speakers");
  if (dev_set_id == eval_set_id && !allow_dev_eval_overlap)
    throw ArgumentError("plan: dev and eval set identifiers must differ");
  if (conditions.empty()) throw ArgumentError("plan: no conditions");
  if (systems.empty()) throw ArgumentError("plan: no systems");
  for (const auto& s : systems)
    if (s != kSystemGmmUbm && s != kSystemGplda)
      throw ArgumentError("plan: unknown system '" + s + "'");
  for (auto m : fusion_modes) {
    if (!HasSystem(kSystemGplda) ||
        (m != FusionMode::kCalibration && !HasSystem(kSystemGmmUbm)))
      throw ArgumentError("plan: fusion mode '" + std::string(ToString(m)) +
                          "' needs the systems it combines");
    if (m != FusionMode::kLinear && quality_kinds.empty())
      throw ArgumentError("plan: quality fusion needs quality kinds");
  }
  if (ubm.n_components < 1 || ubm.n_iters < 1 || ubm_max_frames < 1)
    throw ArgumentError("plan: bad UBM settings");
  if (tv.rank < 1 || tv.n_iters < 1 || lda_dim < 1 || plda.q_dim < 1 ||
      plda.n_iters < 1 || !(relevance > 0))
    throw ArgumentError("plan: bad model settings");
  if (skip_frames < 0 || random_min_frames < 1 ||
      random_max_frames < random_min_frames)
    throw ArgumentError("plan: bad truncation settings");
  costs.Validate();
}

ExperimentPlan DeskScalePlan() {
  ExperimentPlan p;
  p.ubm.n_components = 64;
  p.ubm.n_iters = 10;
  p.tv.rank = 32;
  p.tv.n_iters = 10;
  p.lda_dim = 16;
  p.plda.q_dim = 8;
  p.plda.n_iters = 20;
  for (const char* c : {"2s-2s", "5s-5s", "10s-10s", "20s-20s", "Full-2s",
                        "Full-5s", "Full-10s", "Full-20s", "Full-Full",
                        "Random-Random"})
    p.conditions.push_back(Condition::Parse(c));
  p.systems = {std::string(kSystemGmmUbm), std::string(kSystemGplda)};
  p.fusion_modes = {FusionMode::kLinear, FusionMode::kQuality,
                    FusionMode::kCalibration};
  p.quality_kinds = {QualityKind::kKl1,  QualityKind::kKl2,  QualityKind::kKlAvg,
                     QualityKind::kL1,   QualityKind::kL2,   QualityKind::kBh,
                     QualityKind::kTv,   QualityKind::kDur1, QualityKind::kDur2,
                     QualityKind::kDur3};
  return p;
}

ExperimentPlan ExperimentPlan::FromKeyValue(const io::KeyValueFile& kv) {
  for (const auto& section : kv.Sections()) {
    if (section == "corpus") continue;
    const auto known = PlanKeys().find(section);
    if (known == PlanKeys().end())
      throw ArgumentError("plan: unknown section [" + section + "]");
    for (const auto& [key, value] : kv.Section(section))
      if (!known->second.count(key))
        throw ArgumentError("plan: unknown key '" + key + "' in [" + section + "]");
  }
  ExperimentPlan p = DeskScalePlan();
  p.corpus = SynthConfig::FromKeyValue(kv, "corpus");
  if (auto v = kv.Find("split", "background")) p.background = SpeakerRange::Parse(*v);
  if (auto v = kv.Find("split", "dev")) p.dev = SpeakerRange::Parse(*v);
  if (auto v = kv.Find("split", "eval")) p.eval = SpeakerRange::Parse(*v);
  p.dev_set_id = kv.GetString("split", "dev_set_id", p.dev_set_id);
  p.eval_set_id = kv.GetString("split", "eval_set_id", p.eval_set_id);
  if (auto v = kv.Find("split", "allow_dev_eval_overlap"))
    p.allow_dev_eval_overlap = ParseBool(*v);

  p.ubm.n_components = static_cast<int>(kv.GetInt("models", "ubm_components", p.ubm.n_components));
  p.ubm.n_iters = static_cast<int>(kv.GetInt("models", "ubm_iters", p.ubm.n_iters));
  p.ubm.variance_floor = kv.GetDouble("models", "ubm_variance_floor", p.ubm.variance_floor);
  p.ubm_max_frames = kv.GetInt("models", "ubm_max_frames", p.ubm_max_frames);
  p.relevance = kv.GetDouble("models", "relevance", p.relevance);
  p.tv.rank = kv.GetInt("models", "tv_rank", p.tv.rank);
  p.tv.n_iters = static_cast<int>(kv.GetInt("models", "tv_iters", p.tv.n_iters));
  p.lda_dim = kv.GetInt("models", "lda_dim", p.lda_dim);
  p.plda.q_dim = kv.GetInt("models", "plda_q_dim", p.plda.q_dim);
  p.plda.n_iters = static_cast<int>(kv.GetInt("models", "plda_iters", p.plda.n_iters));

  if (auto v = kv.Find("experiment", "conditions")) {
    p.conditions.clear();
    for (const auto& c : io::SplitList(*v)) p.conditions.push_back(Condition::Parse(c));
  }
  if (auto v = kv.Find("experiment", "systems")) p.systems = io::SplitList(*v);
  if (auto v = kv.Find("experiment", "fusion_modes")) {
    p.fusion_modes.clear();
    for (const auto& m : io::SplitList(*v))
      if (m != "none") p.fusion_modes.push_back(ParseFusionMode(m));
  }
  if (auto v = kv.Find("experiment", "quality_kinds")) {
    p.quality_kinds.clear();
    for (const auto& k : io::SplitList(*v))
      if (k != "none") p.quality_kinds.push_back(ParseQualityKind(k));
  }
  p.skip_frames = kv.GetInt("experiment", "skip_frames", p.skip_frames);
  p.random_min_frames = kv.GetInt("experiment", "random_min_frames", p.random_min_frames);
  p.random_max_frames = kv.GetInt("experiment", "random_max_frames", p.random_max_frames);
  p.seed = static_cast<std::uint64_t>(
      kv.GetInt("experiment", "seed", static_cast<long long>(p.seed)));
  p.costs.c_miss = kv.GetDouble("experiment", "c_miss", p.costs.c_miss);
  p.costs.c_fa = kv.GetDouble("experiment", "c_fa", p.costs.c_fa);
  p.costs.p_target = kv.GetDouble("experiment", "p_target", p.costs.p_target);
  p.ubm.seed = p.seed;
  p.tv.seed = p.seed;
  p.plda.seed = p.seed;
  p.Validate();
  return p;
}

ExperimentPlan ExperimentPlan::Load(const std::filesystem::path& path) {
  return FromKeyValue(io::KeyValueFile::Load(path));
}

io::KeyValueFile ExperimentPlan::ToKeyValue() const {
  io::KeyValueFile kv;
  corpus.ToKeyValue(kv, "corpus");
  kv.Set("split", "background", background.ToString());
  kv.Set("split", "dev", dev.ToString());
  kv.Set("split", "eval", eval.ToString());
  kv.Set("split", "dev_set_id", dev_set_id);
  kv.Set("split", "eval_set_id", eval_set_id);
  kv.Set("split", "allow_dev_eval_overlap", allow_dev_eval_overlap ? "true" : "false");
  kv.Set("models", "ubm_components", std::to_string(ubm.n_components));
  kv.Set("models", "ubm_iters", std::to_string(ubm.n_iters));
  kv.Set("models", "ubm_variance_floor", io::FormatDouble(ubm.variance_floor));
  kv.Set("models", "ubm_max_frames", std::to_string(ubm_max_frames));
  kv.Set("models", "relevance", io::FormatDouble(relevance));
  kv.Set("models", "tv_rank", std::to_string(tv.rank));
  kv.Set("models", "tv_iters", std::to_string(tv.n_iters));
  kv.Set("models", "lda_dim", std::to_string(lda_dim));
  kv.Set("models", "plda_q_dim", std::to_string(plda.q_dim));
  kv.Set("models", "plda_iters", std::to_string(plda.n_iters));
  std::vector<std::string> names;
  for (const auto& c : conditions) names.push_back(c.Name());
  kv.Set("experiment", "conditions", JoinNames(names));
  kv.Set("experiment", "systems", JoinNames(systems));
  names.clear();
  for (auto m : fusion_modes) names.emplace_back(ToString(m));
  kv.Set("experiment", "fusion_modes", names.empty() ? "none" : JoinNames(names));
  names.clear();
  for (auto k : quality_kinds) names.emplace_back(ToString(k));
  kv.Set("experiment", "quality_kinds", names.empty() ? "none" : JoinNames(names));
  kv.Set("experiment", "skip_frames", std::to_string(skip_frames));
  kv.Set("experiment", "random_min_frames", std::to_string(random_min_frames));
  kv.Set("experiment", "random_max_frames", std::to_string(random_max_frames));
  kv.Set("experiment", "seed", std::to_string(seed));
  kv.Set("experiment", "c_miss", io::FormatDouble(costs.c_miss));
  kv.Set("experiment", "c_fa", io::FormatDouble(costs.c_fa));
  kv.Set("experiment", "p_target", io::FormatDouble(costs.p_target));
  return kv;
}

std::optional<Index> SegmentFrames(const ExperimentPlan& plan,
                                   const DurationSpec& spec,
                                   const std::string& utterance_id,
                                   std::string_view role) {
  switch (spec.kind) {
    case DurationSpec::Kind::kFull:
      return std::nullopt;
    case DurationSpec::Kind::kFixed:
      return static_cast<Index>(
          std::llround(spec.seconds / plan.corpus.frame_shift_s));
    case DurationSpec::Kind::kRandom:
      break;
  }
  std::mt19937_64 rng(io::Fnv1a(std::to_string(plan.seed) + "/" +
                                std::string(role) + "/" + utterance_id));
  std::uniform_int_distribution<Index> pick(plan.random_min_frames,
                                            plan.random_max_frames);
  return pick(rng);
}

FeatureMatrix CutSegment(const ExperimentPlan& plan, const DurationSpec& spec,
                         const FeatureMatrix& features,
                         const std::string& utterance_id,
                         std::string_view role) {
  const auto keep = SegmentFrames(plan, spec, utterance_id, role);
  if (!keep) return features;
  return TruncateActive(features, plan.skip_frames, keep);
}

TrainedModels TrainBackgroundModels(const ExperimentPlan& plan,
                                    const SyntheticCorpus& corpus,
                                    std::ostream* log) {
  const Stopwatch clock;
  const auto utts = SplitUtterances(corpus, plan.background, 0,
                                    plan.corpus.sessions_per_speaker - 1);
  const Index per_utt = plan.corpus.frames_per_session();
  const Index total = per_utt * static_cast<Index>(utts.size());
  const Index stride = std::max<Index>(1, (total + plan.ubm_max_frames - 1) /
                                              plan.ubm_max_frames);
  const Index rows_per_utt = (per_utt + stride - 1) / stride;
  RowMatrixXd pooled(rows_per_utt * static_cast<Index>(utts.size()),
                     plan.corpus.dim);
  Index row = 0;
  for (Index u : utts) {
    const FeatureMatrix f = corpus.Generate(u);
    for (Index t = 0; t < f.num_frames(); t += stride) pooled.row(row++) = f.frames.row(t);
  }
  pooled.conservativeResize(row, Eigen::NoChange);

  TrainedModels m;
  GmmTrainConfig ucfg = plan.ubm;
  ucfg.seed = plan.seed;
  m.ubm = TrainUbm(pooled, ucfg);
  pooled.resize(0, 0);
  Log(log, clock, "UBM trained on " + std::to_string(row) + " frames");

  std::vector<BwStats> stats;
  std::vector<std::string> labels;
  stats.reserve(utts.size());
  for (Index u : utts) {
    stats.push_back(AccumulateBw(m.ubm, corpus.Generate(u)));
    labels.push_back(corpus.Info(u).speaker);
  }
  TvTrainConfig tcfg = plan.tv;
  tcfg.seed = plan.seed;
  m.tv = TrainTv(stats, m.ubm, tcfg);
  Log(log, clock, "TV model trained on " + std::to_string(stats.size()) + " utterances");

  const IvectorExtractor extractor(m.tv);
  MatrixXd ivecs(static_cast<Index>(stats.size()), m.tv.rank());
  for (std::size_t i = 0; i < stats.size(); ++i)
    ivecs.row(static_cast<Index>(i)) = extractor.Extract(stats[i], false).y.transpose();
  m.lda = TrainLda(ivecs, labels, plan.lda_dim);
  MatrixXd projected(ivecs.rows(), m.lda.out_dim());
  for (Index i = 0; i < ivecs.rows(); ++i)
    projected.row(i) = ProjectLda(m.lda, VectorXd(ivecs.row(i).transpose())).transpose();
  PldaTrainConfig pcfg = plan.plda;
  pcfg.seed = plan.seed;
  m.plda = TrainPlda(projected, labels, pcfg);
  Log(log, clock, "LDA and PLDA trained");
  return m;
}

const MetricsRow* MetricsTable::Find(std::string_view condition,
                                     std::string_view variant) const {
  for (const auto& r : rows)
    if (r.condition == condition && r.variant == variant) return &r;
  return nullptr;
}

std::string MetricsTable::ToTsv() const {
  std::string out =
      "# condition\tvariant\teer_percent\tmin_dcf\tn_target\tn_nontarget\t"
      "dev_objective\tstatus\n";
  for (const auto& r : rows) {
    out += r.condition + '\t' + r.variant + '\t';
    if (r.report) {
      out += io::FormatDouble(r.report->eer) + '\t' +
             io::FormatDouble(r.report->min_dcf) + '\t' +
             std::to_string(r.report->n_target) + '\t' +
             std::to_string(r.report->n_nontarget) + '\t';
    } else {
      out += "nan\tnan\t0\t0\t";
    }
    out += io::FormatDouble(r.dev_objective) + '\t';
    out += r.error.empty() ? "ok" : "error: " + r.error;
    out += '\n';
  }
  return out;
}

MetricsTable MetricsTable::FromTsv(std::string_view text) {
  MetricsTable t;
  std::istringstream is{std::string(text)};
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto f = io::SplitTabs(line);
    if (f.size() != 8) throw IoError("metrics table: expected 8 fields: " + line);
    MetricsRow r;
    r.condition = f[0];
    r.variant = f[1];
    if (f[7] == "ok") {
      MetricsReport rep;
      rep.eer = io::ParseDouble(f[2]);
      rep.min_dcf = io::ParseDouble(f[3]);
      rep.n_target = static_cast<Index>(io::ParseInt(f[4]));
      rep.n_nontarget = static_cast<Index>(io::ParseInt(f[5]));
      r.report = rep;
    } else {
      r.error = f[7].rfind("error: ", 0) == 0 ? f[7].substr(7) : f[7];
    }
    r.dev_objective = f[6] == "nan" ? std::numeric_limits<double>::quiet_NaN()
                                    : io::ParseDouble(f[6]);
    t.rows.push_back(std::move(r));
  }
  return t;
}

MetricsTable RunExperiment(const ExperimentPlan& plan,
                           const ExperimentOptions& options) {
  plan.Validate();
  const Stopwatch clock;
  std::ostream* log = options.log;
  const bool persist = !options.out_dir.empty();
  const SyntheticCorpus corpus(plan.corpus);

  // Conditions whose metrics are already on disk for this exact plan.
  std::map<std::string, MetricsTable> cached;
  std::vector<Condition> pending;
  for (const auto& c : plan.conditions) {
    if (persist) {
      const auto file = options.out_dir / "cells" /
                        (c.Name() + "-" + CellHash(plan, c)) / "metrics.tsv";
      if (std::filesystem::exists(file)) {
        std::ifstream is(file);
        std::stringstream ss;
        ss << is.rdbuf();
        cached[c.Name()] = MetricsTable::FromTsv(ss.str());
        Log(log, clock, c.Name() + ": cached");
        continue;
      }
    }
    pending.push_back(c);
  }

  std::map<std::string, MetricsTable> computed;
  if (!pending.empty()) {
    TrainedModels models;
    const auto model_dir = options.out_dir / ("models-" + ModelsHash(plan));
    const bool have_models =
        persist && std::filesystem::exists(model_dir / "plda.mdl");
    if (have_models) {
      models.ubm = ReadGmm(model_dir / "ubm.mdl");
      models.tv = ReadTv(model_dir / "tv.mdl");
      models.lda = ReadLda(model_dir / "lda.mdl");
      models.plda = ReadPlda(model_dir / "plda.mdl");
      Log(log, clock, "loaded background models from " + model_dir.string());
    } else {
      models = TrainBackgroundModels(plan, corpus, log);
      if (persist) {
        std::filesystem::create_directories(model_dir);
        WriteGmm(model_dir / "ubm.mdl", models.ubm);
        WriteTv(model_dir / "tv.mdl", models.tv);
        WriteLda(model_dir / "lda.mdl", models.lda);
        // Written last: its presence marks a complete model set.
        WritePlda(model_dir / "plda.mdl", models.plda);
      }
    }

    const SegmentProcessor proc(plan, models);
    std::optional<PldaScorer> plda;
    if (plan.HasSystem(kSystemGplda)) plda.emplace(models.plda);
    const bool fusion = !plan.fusion_modes.empty();

    const SplitScores eval = ScoreSplit(plan, corpus, proc, plan.eval, pending,
                                        log, clock, plan.eval_set_id);
    SplitScores dev;
    if (fusion)
      dev = ScoreSplit(plan, corpus, proc, plan.dev, pending, log, clock,
                       plan.dev_set_id);

    for (const auto& cond : pending) {
      const std::string name = cond.Name();
      MetricsTable& table = computed[name];
      std::vector<std::string> variants = plan.systems;
      for (auto m : plan.fusion_modes) {
        if (m == FusionMode::kLinear) {
          variants.emplace_back(ToString(m));
        } else {
          for (auto k : plan.quality_kinds)
            variants.push_back(std::string(ToString(m)) + ":" + std::string(ToString(k)));
        }
      }
      auto fail_all = [&](const std::string& why) {
        for (const auto& v : variants) table.rows.push_back({name, v, std::nullopt,
                                      std::numeric_limits<double>::quiet_NaN(), why});
      };
      std::string error;
      if (eval.errors.count(name)) error = eval.errors.at(name);
      if (fusion && error.empty() && dev.errors.count(name)) error = dev.errors.at(name);
      if (!error.empty()) {
        fail_all(error);
        Log(log, clock, name + ": failed: " + error);
        continue;
      }

      const std::filesystem::path dir =
          options.out_dir / "cells" / (name + "-" + CellHash(plan, cond));
      try {
        const CellTrials eval_cell =
            BuildCellTrials(plan, eval, cond, plda ? &*plda : nullptr);
        CellTrials dev_cell;
        if (fusion) dev_cell = BuildCellTrials(plan, dev, cond, plda ? &*plda : nullptr);
        if (persist) {
          std::filesystem::create_directories(dir);
          WriteCellFiles(dir, plan.eval_set_id, eval_cell);
          if (fusion) WriteCellFiles(dir, plan.dev_set_id, dev_cell);
        }

        auto record = [&](const std::string& variant, auto&& compute) {
          MetricsRow row{name, variant, std::nullopt,
                         std::numeric_limits<double>::quiet_NaN(), ""};
          try {
            const auto [scores, objective] = compute();
            row.report = Evaluate(scores, plan.costs);
            row.dev_objective = objective;
            if (persist) WriteDet(dir / ("det-" + FileSafe(variant) + ".tsv"), *row.report);
          } catch (const Error& e) {
            row.error = e.what();
          }
          table.rows.push_back(std::move(row));
        };

        for (const auto& system : plan.systems)
          record(system, [&] {
            return std::pair{SystemScoreSet(eval_cell.trials, system),
                             std::numeric_limits<double>::quiet_NaN()};
          });

        double linear_objective = std::numeric_limits<double>::quiet_NaN();
        for (auto mode : plan.fusion_modes) {
          std::vector<std::optional<QualityKind>> kinds;
          if (mode == FusionMode::kLinear) {
            kinds.push_back(std::nullopt);
          } else {
            kinds.assign(plan.quality_kinds.begin(), plan.quality_kinds.end());
          }
          for (const auto& kind : kinds) {
            const std::string variant =
                std::string(ToString(mode)) +
                (kind ? ":" + std::string(ToString(*kind)) : "");
            record(variant, [&] {
              const auto dev_trials = kind ? WithQuality(dev_cell, *kind) : dev_cell.trials;
              const auto eval_trials = kind ? WithQuality(eval_cell, *kind) : eval_cell.trials;
              const FusionModel model = TrainFusion(dev_trials, mode, kind, plan.costs,
                                                    plan.dev_set_id);
              if (model.dev_set_id == plan.eval_set_id && !plan.allow_dev_eval_overlap)
                throw ArgumentError("refusing to evaluate a fusion model on its dev set");
              if (persist)
                WriteFusionModel(dir / ("fusion-" + FileSafe(variant) + ".txt"), model);
              if (mode == FusionMode::kLinear) linear_objective = model.dev_objective;
              if (mode == FusionMode::kQuality && std::isfinite(linear_objective) &&
                  model.dev_objective > linear_objective + 1e-6)
                Log(log, clock, name + ": " + variant +
                                    " dev cost exceeds linear fusion");
              return std::pair{FusedScoreSet(model, eval_trials), model.dev_objective};
            });
          }
        }
      } catch (const Error& e) {
        table.rows.clear();
        fail_all(e.what());
      }
      if (persist) io::WriteFileAtomic(dir / "metrics.tsv", table.ToTsv());
      Log(log, clock, name + ": done");
    }

    // Mean quality of the evaluation test segments per duration.
    if (persist) {
      std::string text = "# duration";
      for (auto k : kBwQualityKinds) text += '\t' + std::string(ToString(k));
      text += "\ttv\tn_segments\n";
      for (const auto& [d, set] : eval.test) {
        if (set.segments.empty()) continue;
        std::array<double, kNumBwKinds> sum{};
        double tv = 0;
        for (const auto& s : set.segments) {
          for (std::size_t k = 0; k < kNumBwKinds; ++k) sum[k] += s.q_bw[k];
          tv += s.q_tv;
        }
        const double n = static_cast<double>(set.segments.size());
        text += d.Name();
        for (double v : sum) text += '\t' + io::FormatDouble(v / n);
        text += '\t' + io::FormatDouble(tv / n) + '\t' +
                std::to_string(set.segments.size()) + '\n';
      }
      io::WriteFileAtomic(options.out_dir / "quality-by-duration.tsv", text);
    }
  }

  MetricsTable table;
  for (const auto& c : plan.conditions) {
    const auto& part = cached.count(c.Name()) ? cached.at(c.Name()) : computed.at(c.Name());
    table.rows.insert(table.rows.end(), part.rows.begin(), part.rows.end());
  }
  if (persist) {
    io::WriteFileAtomic(options.out_dir / "metrics.tsv", table.ToTsv());
    io::WriteFileAtomic(options.out_dir / "plan.cfg", plan.ToKeyValue().ToString());
  }
  return table;
}

MatrixXd MeanQualityByDuration(const ExperimentPlan& plan,
                               const SyntheticCorpus& corpus,
                               const GmmModel& ubm,
                               std::span<const Index> utterances,
                               std::span<const DurationSpec> durations) {
  MatrixXd sum = MatrixXd::Zero(static_cast<Index>(durations.size()),
                                static_cast<Index>(kNumBwKinds));
  for (Index u : utterances) {
    const FeatureMatrix feats = corpus.Generate(u);
    const std::string id = corpus.Info(u).id;
    for (std::size_t d = 0; d < durations.size(); ++d) {
      const NbsVector nbs = NormalizeZeroth(
          AccumulateBw(ubm, CutSegment(plan, durations[d], feats, id, "test")));
      for (std::size_t k = 0; k < kNumBwKinds; ++k)
        sum(static_cast<Index>(d), static_cast<Index>(k)) +=
            QualityBw(kBwQualityKinds[k], nbs, ubm.weights);
    }
  }
  return sum / static_cast<double>(utterances.size());
}

}  // namespace qmsv
