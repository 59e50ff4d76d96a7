// qmsv/cli.cpp

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

#include <cstdio>
#include <iostream>
#include <map>
#include <set>

#include "CLI11.hpp"
#include "qmsv/harness.hpp"
#include "qmsv/io.hpp"
#include "qmsv/stats.hpp"

namespace qmsv {

namespace {

namespace fs = std::filesystem;

/// Positional paths plus the non-empty lines of an optional list file.
std::vector<fs::path> CollectPaths(const std::vector<std::string>& positional,
                                   const std::string& list_file) {
  std::vector<fs::path> out(positional.begin(), positional.end());
  if (!list_file.empty())
    for (const auto& line : io::ReadLines(list_file)) out.emplace_back(io::Trim(line));
  if (out.empty()) throw ArgumentError("no input files given");
  return out;
}

std::string IdOf(const fs::path& p) { return p.stem().string(); }

/// First two whitespace-separated fields of each line: id and label. Reads
/// both utt2spk-style files and corpus manifests.
std::map<std::string, std::string> ReadLabels(const fs::path& path) {
  std::map<std::string, std::string> out;
  for (const auto& line : io::ReadLines(path)) {
    const auto f = io::SplitWhitespace(line);
    if (f.size() < 2) throw IoError(path.string() + ": expected <id> <label>: " + line);
    out[f[0]] = f[1];
  }
  return out;
}

std::map<std::string, double> ReadIdValues(const fs::path& path) {
  std::map<std::string, double> out;
  for (const auto& line : io::ReadLines(path)) {
    const auto f = io::SplitWhitespace(line);
    if (f.size() != 2) throw IoError(path.string() + ": expected <id> <value>: " + line);
    out[f[0]] = io::ParseDouble(f[1]);
  }
  return out;
}

void LabelledMatrix(const std::vector<NamedVector>& vectors,
                    const std::map<std::string, std::string>& labels,
                    MatrixXd& rows, std::vector<std::string>& out_labels) {
  if (vectors.empty()) throw ArgumentError("no vectors");
  rows.resize(static_cast<Index>(vectors.size()), vectors.front().v.size());
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    const auto it = labels.find(vectors[i].id);
    if (it == labels.end()) throw ArgumentError("no label for '" + vectors[i].id + "'");
    if (vectors[i].v.size() != rows.cols()) throw ShapeError("vector lengths differ");
    rows.row(static_cast<Index>(i)) = vectors[i].v.transpose();
    out_labels.push_back(it->second);
  }
}

/// Attaches qualities of `kind` to trials: per-utterance values from a
/// quality file, or trial-level duration measures from a durations file.
void AttachQuality(std::vector<TrialRecord>& trials, QualityKind kind,
                   const std::string& quality_file,
                   const std::string& durations_file) {
  if (IsDurationKind(kind)) {
    if (durations_file.empty())
      throw ArgumentError("duration quality kinds need --durations");
    const auto dur = ReadIdValues(durations_file);
    for (auto& t : trials) {
      const auto e = dur.find(t.enroll_id), s = dur.find(t.test_id);
      if (e == dur.end() || s == dur.end())
        throw ArgumentError("no duration for trial " + t.enroll_id + "/" + t.test_id);
      t.q_enroll = QualityDuration(kind, e->second, s->second);
      t.q_test = 1.0;
    }
    return;
  }
  if (quality_file.empty()) throw ArgumentError("quality fusion needs --quality");
  std::map<std::string, double> q;
  for (const auto& r : ReadQualityFile(quality_file))
    if (r.kind == kind) q[r.utterance_id] = r.value;
  for (auto& t : trials) {
    const auto e = q.find(t.enroll_id), s = q.find(t.test_id);
    if (e == q.end() || s == q.end())
      throw ArgumentError("no " + std::string(ToString(kind)) + " quality for trial " +
                          t.enroll_id + "/" + t.test_id);
    t.q_enroll = e->second;
    t.q_test = s->second;
  }
}

std::string FormatTable(const MetricsTable& table) {
  std::string out = "condition\tvariant\teer\tmindcf100\tstatus\n";
  char buf[64];
  for (const auto& r : table.rows) {
    out += r.condition + '\t' + r.variant + '\t';
    if (r.report) {
      std::snprintf(buf, sizeof buf, "%.4f\t%.4f\tok", r.report->eer,
                    100.0 * r.report->min_dcf);
      out += buf;
    } else {
      out += "-\t-\terror: " + r.error;
    }
    out += '\n';
  }
  return out;
}

}  // namespace

int CliDispatch(int argc, char** argv) {
  CLI::App app{"qmsv: quality-aided speaker verification toolkit", "qmsv"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic feature corpus");
  std::string synth_config, synth_out;
  SynthConfig synth_cfg;
  std::optional<long long> synth_seed, synth_speakers, synth_sessions;
  std::optional<double> synth_duration;
  synth->add_option("--config", synth_config, "key=value file with a [corpus] section");
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--seed", synth_seed, "Corpus seed");
  synth->add_option("--speakers", synth_speakers, "Number of speakers");
  synth->add_option("--sessions", synth_sessions, "Sessions per speaker");
  synth->add_option("--duration", synth_duration, "Full session duration in seconds");

  // frontend
  auto* frontend = app.add_subcommand("frontend", "MFCC + VAD + CMVN of a WAVE file");
  std::string fe_wav, fe_out, fe_config;
  bool fe_text = false;
  frontend->add_option("--wav", fe_wav, "16-bit mono PCM WAVE input")->required();
  frontend->add_option("--out", fe_out, "Feature file output")->required();
  frontend->add_option("--config", fe_config, "Frontend key=value overrides");
  frontend->add_flag("--text", fe_text, "Write plain text instead of binary");

  // train-ubm
  auto* train_ubm = app.add_subcommand("train-ubm", "EM training of the UBM");
  std::vector<std::string> ubm_inputs;
  std::string ubm_list, ubm_out;
  GmmTrainConfig ubm_cfg;
  Index ubm_max_frames = 0;
  train_ubm->add_option("features", ubm_inputs, "Feature files");
  train_ubm->add_option("--list", ubm_list, "File listing feature files");
  train_ubm->add_option("--out", ubm_out, "Model output")->required();
  train_ubm->add_option("--components", ubm_cfg.n_components, "Mixture components");
  train_ubm->add_option("--iters", ubm_cfg.n_iters, "EM iterations");
  train_ubm->add_option("--variance-floor", ubm_cfg.variance_floor,
                        "Floor as a fraction of the global variance");
  train_ubm->add_option("--seed", ubm_cfg.seed, "Initialization seed");
  train_ubm->add_option("--max-frames", ubm_max_frames,
                        "Subsample the pooled frames to at most this many (0: all)");

  // stats
  auto* stats = app.add_subcommand("stats", "Baum-Welch statistics of feature files");
  std::string st_ubm, st_list, st_out_dir;
  std::vector<std::string> st_inputs;
  Index st_skip = 0;
  std::optional<Index> st_keep;
  stats->add_option("features", st_inputs, "Feature files");
  stats->add_option("--list", st_list, "File listing feature files");
  stats->add_option("--ubm", st_ubm, "UBM model")->required();
  stats->add_option("--out-dir", st_out_dir, "Directory for <id>.stats files")->required();
  stats->add_option("--skip", st_skip, "Active frames dropped first");
  stats->add_option("--keep", st_keep, "Active frames kept after the skip");

  // train-tv
  auto* train_tv = app.add_subcommand("train-tv", "EM training of the total-variability matrix");
  std::string tv_ubm, tv_list, tv_out;
  std::vector<std::string> tv_inputs;
  TvTrainConfig tv_cfg;
  train_tv->add_option("stats", tv_inputs, "Statistics files");
  train_tv->add_option("--list", tv_list, "File listing statistics files");
  train_tv->add_option("--ubm", tv_ubm, "UBM model")->required();
  train_tv->add_option("--out", tv_out, "Model output")->required();
  train_tv->add_option("--rank", tv_cfg.rank, "Subspace rank");
  train_tv->add_option("--iters", tv_cfg.n_iters, "EM iterations");
  train_tv->add_option("--seed", tv_cfg.seed, "Initialization seed");

  // extract-ivec
  auto* extract = app.add_subcommand("extract-ivec", "i-vector extraction");
  std::string ex_tv, ex_list, ex_out, ex_lda, ex_quality;
  std::vector<std::string> ex_inputs;
  extract->add_option("stats", ex_inputs, "Statistics files");
  extract->add_option("--list", ex_list, "File listing statistics files");
  extract->add_option("--tv", ex_tv, "TV model")->required();
  extract->add_option("--out", ex_out, "Text vectors output")->required();
  extract->add_option("--lda", ex_lda, "Project with this LDA model");
  extract->add_option("--quality-out", ex_quality, "Write the tv quality of each utterance");

  // train-lda
  auto* train_lda = app.add_subcommand("train-lda", "Fisher LDA of i-vectors");
  std::string lda_vectors, lda_labels, lda_out, lda_projected;
  Index lda_dim = 16;
  train_lda->add_option("--vectors", lda_vectors, "Text i-vectors")->required();
  train_lda->add_option("--labels", lda_labels, "utterance->speaker file or manifest")->required();
  train_lda->add_option("--dim", lda_dim, "Output dimension");
  train_lda->add_option("--out", lda_out, "Model output")->required();
  train_lda->add_option("--projected-out", lda_projected, "Also write projected vectors");

  // train-plda
  auto* train_plda = app.add_subcommand("train-plda", "EM training of Gaussian PLDA");
  std::string plda_vectors, plda_labels, plda_out;
  PldaTrainConfig plda_cfg;
  train_plda->add_option("--vectors", plda_vectors, "Text (projected) vectors")->required();
  train_plda->add_option("--labels", plda_labels, "utterance->speaker file or manifest")->required();
  train_plda->add_option("--out", plda_out, "Model output")->required();
  train_plda->add_option("--q-dim", plda_cfg.q_dim, "Eigen-voice rank");
  train_plda->add_option("--iters", plda_cfg.n_iters, "EM iterations");
  train_plda->add_option("--seed", plda_cfg.seed, "Initialization seed");

  // score
  auto* score = app.add_subcommand("score", "Score a trial list with one system");
  std::string sc_system, sc_trials, sc_out, sc_ubm, sc_feature_dir, sc_plda, sc_vectors;
  double sc_relevance = kDefaultRelevance;
  bool sc_append = false;
  score->add_option("--system", sc_system, "gmm-ubm or ivector-gplda")
      ->required()
      ->check(CLI::IsMember({std::string(kSystemGmmUbm), std::string(kSystemGplda)}));
  score->add_option("--trials", sc_trials, "Trial list: enroll<TAB>test")->required();
  score->add_option("--out", sc_out, "Score file output")->required();
  score->add_option("--ubm", sc_ubm, "UBM model (gmm-ubm)");
  score->add_option("--feature-dir", sc_feature_dir, "Directory of <id>.feat files (gmm-ubm)");
  score->add_option("--relevance", sc_relevance, "MAP relevance factor (gmm-ubm)");
  score->add_option("--plda", sc_plda, "PLDA model (ivector-gplda)");
  score->add_option("--vectors", sc_vectors, "Projected text vectors (ivector-gplda)");
  score->add_flag("--append", sc_append, "Append to an existing score file");

  // quality
  auto* quality = app.add_subcommand("quality", "Per-utterance quality measures");
  std::string q_ubm, q_tv, q_list, q_out, q_kinds = "kl-1,kl-2,kl-avg,l1,l2,bh";
  std::vector<std::string> q_inputs;
  quality->add_option("stats", q_inputs, "Statistics files");
  quality->add_option("--list", q_list, "File listing statistics files");
  quality->add_option("--ubm", q_ubm, "UBM model")->required();
  quality->add_option("--tv", q_tv, "TV model (needed for kind tv)");
  quality->add_option("--kinds", q_kinds, "Comma-separated quality kinds");
  quality->add_option("--out", q_out, "Quality file output")->required();

  // train-fusion
  auto* train_fusion = app.add_subcommand("train-fusion", "Train a fusion model on dev trials");
  std::string tf_scores, tf_key, tf_mode = "linear", tf_kind, tf_quality, tf_durations,
      tf_out, tf_dev_id = "dev";
  train_fusion->add_option("--scores", tf_scores, "Score file with both systems")->required();
  train_fusion->add_option("--key", tf_key, "Key file")->required();
  train_fusion->add_option("--mode", tf_mode, "linear, quality or calibration");
  train_fusion->add_option("--kind", tf_kind, "Quality kind");
  train_fusion->add_option("--quality", tf_quality, "Quality file");
  train_fusion->add_option("--durations", tf_durations, "utterance seconds file");
  train_fusion->add_option("--dev-set-id", tf_dev_id, "Identifier of the dev set");
  train_fusion->add_option("--out", tf_out, "Fusion model output")->required();

  // fuse
  auto* fuse = app.add_subcommand("fuse", "Apply a fusion model");
  std::string fu_model, fu_scores, fu_quality, fu_durations, fu_out, fu_set_id = "eval";
  bool fu_allow_dev = false;
  fuse->add_option("--model", fu_model, "Fusion model")->required();
  fuse->add_option("--scores", fu_scores, "Score file with both systems")->required();
  fuse->add_option("--quality", fu_quality, "Quality file");
  fuse->add_option("--durations", fu_durations, "utterance seconds file");
  fuse->add_option("--set-id", fu_set_id, "Identifier of the scored set");
  fuse->add_flag("--allow-dev-set", fu_allow_dev,
                 "Permit applying the model to its own dev set");
  fuse->add_option("--out", fu_out, "Fused score file output")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "EER and minDCF of a score file");
  std::string ev_scores, ev_key, ev_system, ev_det, ev_condition = "all";
  DcfParams ev_costs;
  eval->add_option("--scores", ev_scores, "Score file")->required();
  eval->add_option("--key", ev_key, "Key file")->required();
  eval->add_option("--system", ev_system, "Evaluate only this system tag");
  eval->add_option("--det", ev_det, "Write DET points here");
  eval->add_option("--condition", ev_condition, "Label of the output line");
  eval->add_option("--c-miss", ev_costs.c_miss, "Miss cost");
  eval->add_option("--c-fa", ev_costs.c_fa, "False-alarm cost");
  eval->add_option("--p-target", ev_costs.p_target, "Target prior");

  // experiment
  auto* experiment = app.add_subcommand("experiment", "Run a synthetic-corpus experiment plan");
  std::string exp_plan, exp_out;
  bool exp_quiet = false, exp_allow_dev = false;
  experiment->add_option("--plan", exp_plan, "Plan file")->required();
  experiment->add_option("--out", exp_out, "Output directory (scores, models, metrics)");
  experiment->add_flag("--allow-dev-eval-overlap", exp_allow_dev,
                       "Permit evaluating fusion on its own dev speakers");
  experiment->add_flag("--quiet", exp_quiet, "No progress log");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*synth) {
      if (!synth_config.empty())
        synth_cfg = SynthConfig::FromKeyValue(io::KeyValueFile::Load(synth_config), "corpus");
      if (synth_seed) synth_cfg.seed = static_cast<std::uint64_t>(*synth_seed);
      if (synth_speakers) synth_cfg.n_speakers = *synth_speakers;
      if (synth_sessions) synth_cfg.sessions_per_speaker = *synth_sessions;
      if (synth_duration) synth_cfg.full_duration_s = *synth_duration;
      const auto manifest = SynthCorpus(synth_cfg, synth_out);
      std::cout << "wrote " << manifest.size() << " utterances to " << synth_out << '\n';
    } else if (*frontend) {
      FrontendConfig cfg;
      if (!fe_config.empty()) cfg = FrontendConfig::FromKeyValue(io::KeyValueFile::Load(fe_config));
      const FeatureMatrix f = ProcessAudio(ReadAudio(fe_wav), cfg);
      if (fe_text) WriteFeaturesText(fe_out, f); else WriteFeatures(fe_out, f);
      std::cout << fe_out << ": " << f.num_frames() << " frames x " << f.dim() << '\n';
    } else if (*train_ubm) {
      const auto paths = CollectPaths(ubm_inputs, ubm_list);
      std::vector<FeatureMatrix> feats;
      Index total = 0;
      for (const auto& p : paths) {
        feats.push_back(ReadFeatures(p));
        total += feats.back().num_frames();
      }
      if (ubm_max_frames > 0 && total > ubm_max_frames) {
        const Index stride = (total + ubm_max_frames - 1) / ubm_max_frames;
        for (auto& f : feats) {
          RowMatrixXd kept((f.num_frames() + stride - 1) / stride, f.dim());
          for (Index t = 0, r = 0; t < f.num_frames(); t += stride) kept.row(r++) = f.frames.row(t);
          f.frames = std::move(kept);
        }
      }
      const GmmModel ubm = TrainUbm(feats, ubm_cfg);
      WriteGmm(ubm_out, ubm);
      std::cout << "UBM log-likelihood per iteration:";
      for (double v : ubm.train_loglik) std::cout << ' ' << v;
      std::cout << '\n';
    } else if (*stats) {
      const GmmModel ubm = ReadGmm(st_ubm);
      fs::create_directories(st_out_dir);
      for (const auto& p : CollectPaths(st_inputs, st_list)) {
        FeatureMatrix f = ReadFeatures(p);
        if (st_skip > 0 || st_keep) f = TruncateActive(f, st_skip, st_keep);
        WriteStats(fs::path(st_out_dir) / (IdOf(p) + ".stats"), AccumulateBw(ubm, f));
      }
    } else if (*train_tv) {
      const GmmModel ubm = ReadGmm(tv_ubm);
      std::vector<BwStats> all;
      for (const auto& p : CollectPaths(tv_inputs, tv_list)) all.push_back(ReadStats(p));
      const TvModel tv = TrainTv(all, ubm, tv_cfg);
      WriteTv(tv_out, tv);
    } else if (*extract) {
      const IvectorExtractor extractor(ReadTv(ex_tv));
      std::optional<LdaProjection> lda;
      if (!ex_lda.empty()) lda = ReadLda(ex_lda);
      std::vector<NamedVector> vectors;
      std::vector<QualityRecord> qualities;
      for (const auto& p : CollectPaths(ex_inputs, ex_list)) {
        const BwStats s = ReadStats(p);
        const IVector iv = extractor.Extract(s, !ex_quality.empty());
        vectors.push_back({IdOf(p), lda ? ProjectLda(*lda, iv) : iv.y});
        if (!ex_quality.empty())
          qualities.push_back({IdOf(p), QualityKind::kTv, QualityUncertainty(iv),
                               static_cast<double>(s.t) * 0.01});
      }
      WriteVectorsText(ex_out, vectors);
      if (!ex_quality.empty()) WriteQualityFile(ex_quality, qualities);
    } else if (*train_lda) {
      MatrixXd rows;
      std::vector<std::string> labels;
      const auto vectors = ReadVectorsText(lda_vectors);
      LabelledMatrix(vectors, ReadLabels(lda_labels), rows, labels);
      const LdaProjection lda = TrainLda(rows, labels, lda_dim);
      WriteLda(lda_out, lda);
      if (!lda_projected.empty()) {
        std::vector<NamedVector> projected;
        for (const auto& v : vectors) projected.push_back({v.id, ProjectLda(lda, v.v)});
        WriteVectorsText(lda_projected, projected);
      }
    } else if (*train_plda) {
      MatrixXd rows;
      std::vector<std::string> labels;
      LabelledMatrix(ReadVectorsText(plda_vectors), ReadLabels(plda_labels), rows, labels);
      WritePlda(plda_out, TrainPlda(rows, labels, plda_cfg));
    } else if (*score) {
      const auto trials = ReadTrialList(sc_trials);
      std::vector<ScoreEntry> out;
      if (sc_append && fs::exists(sc_out)) out = ReadScoreFile(sc_out);
      if (sc_system == kSystemGmmUbm) {
        if (sc_ubm.empty() || sc_feature_dir.empty())
          throw ArgumentError("gmm-ubm scoring needs --ubm and --feature-dir");
        const GmmModel ubm = ReadGmm(sc_ubm);
        const GmmUbmBatchScorer scorer(ubm);
        auto features = [&](const std::string& id) {
          return ReadFeatures(fs::path(sc_feature_dir) / (id + ".feat"));
        };
        std::map<std::string, MatrixXd> models;
        std::map<std::string, std::vector<std::string>> by_test;
        std::vector<std::string> test_order;
        for (const auto& [e, t] : trials) {
          if (!models.count(e)) models[e] = MapAdapt(ubm, features(e), sc_relevance).means;
          if (!by_test.count(t)) test_order.push_back(t);
          by_test[t].push_back(e);
        }
        std::map<TrialKey, double> scored;
        for (const auto& t : test_order) {
          std::vector<MatrixXd> means;
          for (const auto& e : by_test[t]) means.push_back(models[e]);
          const auto s = scorer.Score(means, features(t));
          for (std::size_t i = 0; i < s.size(); ++i) scored[{by_test[t][i], t}] = s[i];
        }
        for (const auto& k : trials)
          out.push_back({k.first, k.second, sc_system, scored.at(k)});
      } else {
        if (sc_plda.empty() || sc_vectors.empty())
          throw ArgumentError("ivector-gplda scoring needs --plda and --vectors");
        const PldaScorer scorer(ReadPlda(sc_plda));
        std::map<std::string, VectorXd> vecs;
        for (auto& v : ReadVectorsText(sc_vectors)) vecs[v.id] = std::move(v.v);
        auto get = [&](const std::string& id) -> const VectorXd& {
          const auto it = vecs.find(id);
          if (it == vecs.end()) throw ArgumentError("no vector for '" + id + "'");
          return it->second;
        };
        for (const auto& [e, t] : trials)
          out.push_back({e, t, sc_system, scorer.Score(get(e), get(t))});
      }
      WriteScoreFile(sc_out, out);
    } else if (*quality) {
      const GmmModel ubm = ReadGmm(q_ubm);
      std::optional<IvectorExtractor> extractor;
      std::vector<QualityKind> kinds;
      for (const auto& k : io::SplitList(q_kinds)) {
        kinds.push_back(ParseQualityKind(k));
        if (IsDurationKind(kinds.back()))
          throw ArgumentError("duration kinds are trial-level; pass --durations to "
                              "train-fusion and fuse instead");
        if (kinds.back() == QualityKind::kTv && !extractor) {
          if (q_tv.empty()) throw ArgumentError("kind tv needs --tv");
          extractor.emplace(ReadTv(q_tv));
        }
      }
      std::vector<QualityRecord> records;
      for (const auto& p : CollectPaths(q_inputs, q_list)) {
        const BwStats s = ReadStats(p);
        const NbsVector nbs = NormalizeZeroth(s);
        for (auto k : kinds) {
          const double v = k == QualityKind::kTv
                               ? QualityUncertainty(extractor->Extract(s, true))
                               : QualityBw(k, nbs, ubm.weights);
          records.push_back({IdOf(p), k, v, 0});
        }
      }
      WriteQualityFile(q_out, records);
    } else if (*train_fusion) {
      const FusionMode mode = ParseFusionMode(tf_mode);
      std::optional<QualityKind> kind;
      if (mode != FusionMode::kLinear) {
        if (tf_kind.empty()) throw ArgumentError("--kind is required for mode " + tf_mode);
        kind = ParseQualityKind(tf_kind);
      }
      const auto scores = ReadScoreFile(tf_scores);
      const auto key = ReadKeyFile(tf_key);
      std::vector<TrialRecord> trials;
      for (auto& t : BuildTrials(scores, &key, nullptr))
        if (t.is_target) trials.push_back(std::move(t));
      if (kind) AttachQuality(trials, *kind, tf_quality, tf_durations);
      const FusionModel model = TrainFusion(trials, mode, kind, {}, tf_dev_id);
      WriteFusionModel(tf_out, model);
      std::cout << "dev objective " << io::FormatDouble(model.dev_objective) << '\n';
    } else if (*fuse) {
      const FusionModel model = ReadFusionModel(fu_model);
      if (model.dev_set_id == fu_set_id && !fu_allow_dev)
        throw ArgumentError("fusion model was trained on set '" + fu_set_id +
                            "'; pass --allow-dev-set to apply it there");
      const auto scores = ReadScoreFile(fu_scores);
      auto trials = BuildTrials(scores, nullptr, nullptr);
      if (model.quality_kind)
        AttachQuality(trials, *model.quality_kind, fu_quality, fu_durations);
      std::vector<ScoreEntry> out;
      for (const auto& t : trials)
        out.push_back({t.enroll_id, t.test_id, "fused", ApplyFusion(model, t)});
      WriteScoreFile(fu_out, out);
    } else if (*eval) {
      const auto scores = ReadScoreFile(ev_scores);
      const auto key = ReadKeyFile(ev_key);
      std::vector<std::string> systems;
      if (!ev_system.empty()) {
        systems.push_back(ev_system);
      } else {
        std::set<std::string> seen;
        for (const auto& s : scores)
          if (seen.insert(s.system).second) systems.push_back(s.system);
      }
      for (const auto& system : systems) {
        const MetricsReport r = Evaluate(ScoreSetForSystem(scores, key, system), ev_costs);
        const std::string label =
            systems.size() > 1 ? ev_condition + "/" + system : ev_condition;
        std::cout << FormatMetricsLine(label, r) << '\n';
        if (!ev_det.empty()) {
          std::string text = "# p_fa\tp_miss\n";
          for (const auto& p : r.det_points)
            text += io::FormatDouble(p.p_fa) + '\t' + io::FormatDouble(p.p_miss) + '\n';
          io::WriteFileAtomic(systems.size() > 1 ? ev_det + "." + system : ev_det, text);
        }
      }
    } else if (*experiment) {
      io::KeyValueFile kv = io::KeyValueFile::Load(exp_plan);
      if (exp_allow_dev) kv.Set("split", "allow_dev_eval_overlap", "true");
      const ExperimentPlan plan = ExperimentPlan::FromKeyValue(kv);
      ExperimentOptions options;
      options.out_dir = exp_out;
      options.log = exp_quiet ? nullptr : &std::cerr;
      const MetricsTable table = RunExperiment(plan, options);
      std::cout << FormatTable(table);
    }
  } catch (const std::exception& e) {
    std::cerr << "qmsv: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace qmsv
