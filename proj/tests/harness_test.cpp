// qmsv/harness_test.cpp

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
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "qmsv/harness.hpp"
#include "qmsv/io.hpp"

using namespace qmsv;
namespace fs = std::filesystem;

namespace {

SynthConfig TinyCorpus() {
  SynthConfig c;
  c.n_speakers = 12;
  c.sessions_per_speaker = 2;
  c.full_duration_s = 15.0;
  c.base_components = 8;
  c.seed = 5;
  return c;
}

ExperimentPlan TinyPlan() {
  ExperimentPlan p;
  p.corpus = TinyCorpus();
  p.corpus.n_speakers = 30;
  p.background = {0, 13};
  p.dev = {14, 21};
  p.eval = {22, 29};
  p.ubm.n_components = 8;
  p.ubm.n_iters = 4;
  p.tv.rank = 6;
  p.tv.n_iters = 3;
  p.lda_dim = 4;
  p.plda.q_dim = 2;
  p.plda.n_iters = 5;
  p.skip_frames = 100;
  p.conditions = {Condition::Parse("5s-5s"), Condition::Parse("Full-Full")};
  p.systems = {std::string(kSystemGmmUbm), std::string(kSystemGplda)};
  p.fusion_modes = {FusionMode::kLinear, FusionMode::kQuality};
  p.quality_kinds = {QualityKind::kKl1, QualityKind::kDur2, QualityKind::kTv};
  return p;
}

fs::path FreshDir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string Slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int RunCli(std::vector<std::string> args) {
  args.insert(args.begin(), "qmsv");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return CliDispatch(static_cast<int>(argv.size()), argv.data());
}

/// Largest between-class generalized eigenvalue of per-utterance mean
/// vectors (first `dims` coordinates) for the given labels.
double TopLdaEigenvalue(const MatrixXd& x, const std::vector<std::string>& labels) {
  return TrainLda(x, labels, 1).eigenvalues(0);
}

}  // namespace

TEST_CASE("synthetic corpus layout and determinism") {
  const SyntheticCorpus corpus(TinyCorpus());
  CHECK(corpus.num_utterances() == 24);
  const UtteranceInfo info = corpus.Info(corpus.Utterance(7, 1));
  CHECK(info.id == "spk0007-s1");
  CHECK(info.speaker == "spk0007");
  CHECK(info.session == "s1");
  CHECK(info.num_frames == 1500);
  const FeatureMatrix a = corpus.Generate(3);
  CHECK(a.num_frames() == 1500);
  CHECK(a.dim() == kFeatureDim);
  CHECK(a.vad_applied);
  CHECK(a.frames.allFinite());
  CHECK(SyntheticCorpus(TinyCorpus()).Generate(3).frames == a.frames);
  CHECK(corpus.Generate(4).frames != a.frames);
  SynthConfig other = TinyCorpus();
  other.seed = 6;
  CHECK(SyntheticCorpus(other).Generate(3).frames != a.frames);

  SynthConfig full;
  CHECK(full.frames_per_session() >= 12000);
}

TEST_CASE("same seed writes byte-identical corpora") {
  const fs::path d1 = FreshDir("qmsv_synth_a"), d2 = FreshDir("qmsv_synth_b");
  SynthConfig c = TinyCorpus();
  c.n_speakers = 3;
  const auto m1 = SynthCorpus(c, d1);
  SynthCorpus(c, d2);
  REQUIRE(m1.size() == 6);
  for (const auto& u : m1)
    CHECK(Slurp(d1 / "features" / (u.id + ".feat")) ==
          Slurp(d2 / "features" / (u.id + ".feat")));
  CHECK(Slurp(d1 / "manifest.tsv") == Slurp(d2 / "manifest.tsv"));
  const auto manifest = ReadManifest(d1 / "manifest.tsv");
  REQUIRE(manifest.size() == 6);
  CHECK(manifest[5].id == m1[5].id);
  CHECK(manifest[5].num_frames == 1500);
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("without speaker shifts, labels carry no information") {
  auto p_value = [](double shift) {
    SynthConfig c;
    c.n_speakers = 30;
    c.sessions_per_speaker = 3;
    c.full_duration_s = 10.0;
    c.base_components = 8;
    c.speaker_shift_scale = shift;
    c.seed = 11;
    const SyntheticCorpus corpus(c);
    const Index dims = 4;
    MatrixXd x(corpus.num_utterances(), dims);
    std::vector<std::string> labels;
    for (Index u = 0; u < corpus.num_utterances(); ++u) {
      x.row(u) = corpus.Generate(u).frames.leftCols(dims).colwise().mean();
      labels.push_back(corpus.Info(u).speaker);
    }
    const double observed = TopLdaEigenvalue(x, labels);
    std::mt19937_64 rng(99);
    int at_least = 0;
    const int shuffles = 199;
    for (int s = 0; s < shuffles; ++s) {
      std::shuffle(labels.begin(), labels.end(), rng);
      if (TopLdaEigenvalue(x, labels) >= observed) ++at_least;
    }
    return (1.0 + at_least) / (1.0 + shuffles);
  };
  CHECK(p_value(0.0) > 0.01);
  CHECK(p_value(0.5) <= 0.01);  // the test has power when speakers differ
}

TEST_CASE("duration and condition names") {
  CHECK(DurationSpec::Parse("2s").seconds == 2.0);
  CHECK(DurationSpec::Parse("Full").kind == DurationSpec::Kind::kFull);
  CHECK(DurationSpec::Parse("Random").Name() == "Random");
  CHECK(Condition::Parse("Full-10s").Name() == "Full-10s");
  CHECK(Condition::Parse("2s-2s").enroll == DurationSpec::Parse("2s"));
  CHECK_THROWS(Condition::Parse("2s"));
  CHECK_THROWS(DurationSpec::Parse("two"));
  CHECK(SpeakerRange::Parse("100-149").size() == 50);
  CHECK(SpeakerRange::Parse("1-5").Overlaps(SpeakerRange::Parse("5-9")));
  CHECK_FALSE(SpeakerRange::Parse("1-4").Overlaps(SpeakerRange::Parse("5-9")));
}

TEST_CASE("segments follow the truncation protocol") {
  const ExperimentPlan plan = TinyPlan();
  const SyntheticCorpus corpus(plan.corpus);
  const FeatureMatrix f = corpus.Generate(0);
  const std::string id = corpus.Info(0).id;
  const FeatureMatrix two = CutSegment(plan, DurationSpec::Parse("2s"), f, id, "enroll");
  REQUIRE(two.num_frames() == 200);
  CHECK(two.frames.row(0) == f.frames.row(100));
  CHECK(CutSegment(plan, DurationSpec::Parse("Full"), f, id, "enroll").frames == f.frames);
  const auto r1 = SegmentFrames(plan, DurationSpec::Parse("Random"), id, "enroll");
  const auto r2 = SegmentFrames(plan, DurationSpec::Parse("Random"), id, "enroll");
  REQUIRE(r1);
  CHECK(*r1 == *r2);
  CHECK(*r1 >= 200);
  CHECK(*r1 <= 2000);
  CHECK_THROWS_AS(CutSegment(plan, DurationSpec::Parse("20s"), f, id, "test"),
                  InsufficientSpeechError);
}

TEST_CASE("plans parse, validate and round trip") {
  const auto kv = io::KeyValueFile::Parse(
      "[corpus]\nn_speakers = 40\n"
      "[split]\nbackground = 0-19\ndev = 20-29\neval = 30-39\n"
      "[models]\nubm_components = 16\ntv_rank = 8\n"
      "[experiment]\nconditions = 2s-2s, Full-Full\nsystems = gmm-ubm\n"
      "fusion_modes = none\n");
  const ExperimentPlan p = ExperimentPlan::FromKeyValue(kv);
  CHECK(p.corpus.n_speakers == 40);
  CHECK(p.ubm.n_components == 16);
  CHECK(p.tv.rank == 8);
  CHECK(p.conditions.size() == 2);
  CHECK(p.systems == std::vector<std::string>{"gmm-ubm"});
  CHECK(p.fusion_modes.empty());
  const ExperimentPlan q = ExperimentPlan::FromKeyValue(p.ToKeyValue());
  CHECK(q.ToKeyValue().ToString() == p.ToKeyValue().ToString());

  CHECK_THROWS_AS(ExperimentPlan::FromKeyValue(io::KeyValueFile::Parse(
                      "[corpus]\nmystery = 1\n")),
                  ArgumentError);
  ExperimentPlan overlap = TinyPlan();
  overlap.eval = overlap.dev;
  CHECK_THROWS_AS(overlap.Validate(), ArgumentError);
  overlap.allow_dev_eval_overlap = true;
  overlap.eval_set_id = "dev-again";
  CHECK_NOTHROW(overlap.Validate());
  ExperimentPlan fusion_one_system = TinyPlan();
  fusion_one_system.systems = {"gmm-ubm"};
  CHECK_THROWS_AS(fusion_one_system.Validate(), ArgumentError);
  ExperimentPlan outside = TinyPlan();
  outside.eval = {22, 40};
  CHECK_THROWS_AS(outside.Validate(), ArgumentError);
}

TEST_CASE("metrics tables round trip through TSV") {
  MetricsTable t;
  MetricsReport r;
  r.eer = 12.5;
  r.min_dcf = 0.0412;
  r.n_target = 10;
  r.n_nontarget = 90;
  t.rows.push_back({"2s-2s", "gmm-ubm", r, std::nan(""), ""});
  t.rows.push_back({"2s-2s", "quality:kl-1", std::nullopt, 0.25, "fusion failed"});
  const MetricsTable back = MetricsTable::FromTsv(t.ToTsv());
  REQUIRE(back.rows.size() == 2);
  CHECK(back.Find("2s-2s", "gmm-ubm")->report->eer == 12.5);
  CHECK(back.Find("2s-2s", "gmm-ubm")->report->min_dcf == 0.0412);
  CHECK(back.Find("2s-2s", "quality:kl-1")->error == "fusion failed");
  CHECK(back.Find("2s-2s", "quality:kl-1")->dev_objective == 0.25);
  CHECK(back.Find("Full-Full", "gmm-ubm") == nullptr);
}

TEST_CASE("a one-condition, one-system plan yields one row") {
  ExperimentPlan p = TinyPlan();
  p.conditions = {Condition::Parse("Full-Full")};
  p.systems = {"gmm-ubm"};
  p.fusion_modes.clear();
  const MetricsTable t = RunExperiment(p);
  REQUIRE(t.rows.size() == 1);
  CHECK(t.rows[0].variant == "gmm-ubm");
  REQUIRE(t.rows[0].report);
  CHECK(t.rows[0].report->n_target == 8);
  CHECK(t.rows[0].report->n_nontarget == 56);
}

TEST_CASE("full experiment: every cell, persisted outputs, caching") {
  const ExperimentPlan plan = TinyPlan();
  const fs::path out = FreshDir("qmsv_exp");
  std::ostringstream log;
  const MetricsTable t = RunExperiment(plan, {out, &log});
  // 2 conditions x (2 systems + linear + 3 quality kinds).
  CHECK(t.rows.size() == 12);
  for (const auto& row : t.rows) {
    INFO(row.condition << " " << row.variant << " " << row.error);
    CHECK(row.error.empty());
    REQUIRE(row.report);
    CHECK(row.report->eer >= 0.0);
    CHECK(row.report->eer <= 100.0);
  }
  for (const auto& c : plan.conditions) {
    const MetricsRow* lin = t.Find(c.Name(), "linear");
    for (auto k : plan.quality_kinds) {
      const MetricsRow* q = t.Find(c.Name(), "quality:" + std::string(ToString(k)));
      REQUIRE(q);
      CHECK(q->dev_objective <= lin->dev_objective + 1e-6);
    }
  }
  CHECK(fs::exists(out / "metrics.tsv"));
  CHECK(fs::exists(out / "plan.cfg"));
  bool saw_scores = false;
  for (const auto& e : fs::recursive_directory_iterator(out))
    saw_scores |= e.path().filename() == "scores-eval.tsv";
  CHECK(saw_scores);
  CHECK(log.str().find("cached") == std::string::npos);

  std::ostringstream again_log;
  const MetricsTable again = RunExperiment(plan, {out, &again_log});
  CHECK(again_log.str().find("cached") != std::string::npos);
  CHECK(again.ToTsv() == t.ToTsv());
  CHECK(RunExperiment(plan).ToTsv() == t.ToTsv());
  fs::remove_all(out);
}

TEST_CASE("a failing cell is recorded without aborting the run") {
  ExperimentPlan p = TinyPlan();
  p.conditions = {Condition::Parse("20s-20s"), Condition::Parse("Full-Full")};
  p.fusion_modes.clear();
  const MetricsTable t = RunExperiment(p);
  REQUIRE(t.Find("20s-20s", "gmm-ubm"));
  CHECK(t.Find("20s-20s", "gmm-ubm")->error.find("insufficient") != std::string::npos);
  REQUIRE(t.Find("Full-Full", "gmm-ubm"));
  CHECK(t.Find("Full-Full", "gmm-ubm")->error.empty());
}

TEST_CASE("command-line pipeline") {
  const fs::path d = FreshDir("qmsv_cli");
  const std::string D = d.string();
  CHECK(RunCli({"synth", "--out", D + "/corpus", "--speakers", "12", "--sessions", "2",
                "--duration", "15", "--seed", "3"}) == 0);
  const auto manifest = ReadManifest(d / "corpus" / "manifest.tsv");
  REQUIRE(manifest.size() == 24);

  std::string feat_list, stats_list;
  for (const auto& u : manifest) {
    feat_list += (d / "corpus" / "features" / (u.id + ".feat")).string() + "\n";
    stats_list += (d / "stats" / (u.id + ".stats")).string() + "\n";
  }
  io::WriteFileAtomic(d / "feats.lst", feat_list);
  io::WriteFileAtomic(d / "stats.lst", stats_list);

  CHECK(RunCli({"train-ubm", "--list", D + "/feats.lst", "--out", D + "/ubm.mdl",
                "--components", "8", "--iters", "3", "--max-frames", "20000"}) == 0);
  CHECK(RunCli({"stats", "--list", D + "/feats.lst", "--ubm", D + "/ubm.mdl", "--out-dir",
                D + "/stats"}) == 0);
  CHECK(RunCli({"train-tv", "--list", D + "/stats.lst", "--ubm", D + "/ubm.mdl", "--out",
                D + "/tv.mdl", "--rank", "5", "--iters", "3"}) == 0);
  CHECK(RunCli({"extract-ivec", "--list", D + "/stats.lst", "--tv", D + "/tv.mdl", "--out",
                D + "/ivec.txt", "--quality-out", D + "/q_tv.txt"}) == 0);
  const std::string labels = (d / "corpus" / "manifest.tsv").string();
  CHECK(RunCli({"train-lda", "--vectors", D + "/ivec.txt", "--labels", labels, "--dim", "4",
                "--out", D + "/lda.mdl", "--projected-out", D + "/proj.txt"}) == 0);
  CHECK(RunCli({"train-plda", "--vectors", D + "/proj.txt", "--labels", labels, "--q-dim",
                "2", "--out", D + "/plda.mdl", "--iters", "4"}) == 0);
  CHECK(RunCli({"quality", "--list", D + "/stats.lst", "--ubm", D + "/ubm.mdl", "--tv",
                D + "/tv.mdl", "--kinds", "kl-1,bh,tv", "--out", D + "/q.txt"}) == 0);
  CHECK(RunCli({"quality", "--list", D + "/stats.lst", "--ubm", D + "/ubm.mdl", "--kinds",
                "dur1", "--out", D + "/q_dur.txt"}) == 1);

  std::string trials, key;
  for (const auto& e : manifest) {
    if (e.session != "s0") continue;
    for (const auto& t : manifest) {
      if (t.session == "s0") continue;
      trials += e.id + "\t" + t.id + "\n";
      key += e.id + "\t" + t.id + "\t" + (e.speaker == t.speaker ? "target" : "nontarget") + "\n";
    }
  }
  io::WriteFileAtomic(d / "trials.tsv", trials);
  io::WriteFileAtomic(d / "key.tsv", key);
  CHECK(RunCli({"score", "--system", "gmm-ubm", "--trials", D + "/trials.tsv", "--out",
                D + "/scores.tsv", "--ubm", D + "/ubm.mdl", "--feature-dir",
                D + "/corpus/features"}) == 0);
  CHECK(RunCli({"score", "--system", "ivector-gplda", "--trials", D + "/trials.tsv", "--out",
                D + "/scores.tsv", "--plda", D + "/plda.mdl", "--vectors", D + "/proj.txt",
                "--append"}) == 0);
  CHECK(ReadScoreFile(d / "scores.tsv").size() == 2 * 144);
  CHECK(RunCli({"eval", "--scores", D + "/scores.tsv", "--key", D + "/key.tsv", "--det",
                D + "/det.tsv"}) == 0);
  CHECK(fs::exists(D + "/det.tsv.gmm-ubm"));

  CHECK(RunCli({"train-fusion", "--scores", D + "/scores.tsv", "--key", D + "/key.tsv",
                "--mode", "quality", "--kind", "kl-1", "--quality", D + "/q.txt", "--out",
                D + "/fusion.txt"}) == 0);
  // Applying a model to its own dev set must be acknowledged.
  CHECK(RunCli({"fuse", "--model", D + "/fusion.txt", "--scores", D + "/scores.tsv",
                "--quality", D + "/q.txt", "--set-id", "dev", "--out", D + "/fused.tsv"}) == 1);
  CHECK(RunCli({"fuse", "--model", D + "/fusion.txt", "--scores", D + "/scores.tsv",
                "--quality", D + "/q.txt", "--out", D + "/fused.tsv"}) == 0);
  CHECK(ReadScoreFile(d / "fused.tsv").size() == 144);

  CHECK(RunCli({"eval", "--no-such-flag"}) == 2);
  CHECK(RunCli({"no-such-command"}) == 2);
  CHECK(RunCli({"eval", "--scores", D + "/missing.tsv", "--key", D + "/key.tsv"}) == 1);
  fs::remove_all(d);
}
