// qmsv/qmsv/harness.hpp

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

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qmsv/common.hpp"
#include "qmsv/eval.hpp"
#include "qmsv/frontend.hpp"
#include "qmsv/fusion.hpp"
#include "qmsv/gmm.hpp"
#include "qmsv/plda.hpp"
#include "qmsv/quality.hpp"
#include "qmsv/subspace.hpp"

namespace qmsv {

namespace io {
class KeyValueFile;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

/// Generator of feature-domain utterances. Every session draws frames from a
/// base diagonal GMM whose means are shifted by a low-rank speaker offset
/// (fixed per speaker) and by session offsets drawn fresh per session: a
/// low-rank channel term, a within-speaker term in the speaker subspace and
/// small full-rank noise.
/// Components are emitted in runs so neighbouring frames are correlated the
/// way phone-length segments are in real speech.
struct SynthConfig {
  Index n_speakers = 200;
  Index sessions_per_speaker = 3;
  double full_duration_s = 120.0;
  double speaker_shift_scale = 0.04;
  double channel_shift_scale = 0.02;
  Index base_components = 64;
  std::uint64_t seed = 1;

  Index dim = kFeatureDim;
  Index speaker_rank = 10;
  Index channel_rank = 5;
  /// Per-session perturbation inside the speaker subspace: the part of the
  /// session variability that looks like a change of speaker.
  double within_speaker_scale = 0.02;
  /// Standard deviation of the full-rank per-session supervector offset.
  double session_noise_scale = 0.02;
  double base_mean_scale = 0.5;  // spread of the base generator's means
  double mean_run_frames = 6.0;  // expected length of a same-component run
  double frame_shift_s = 0.010;

  /// Frames per session: round(full_duration_s / frame_shift_s).
  Index frames_per_session() const;
  void Validate() const;

  /// Reads overrides from one section of a key=value file; unknown keys in
  /// that section are rejected.
  static SynthConfig FromKeyValue(const io::KeyValueFile& kv,
                                  const std::string& section);
  void ToKeyValue(io::KeyValueFile& kv, const std::string& section) const;
};

struct UtteranceInfo {
  std::string id;       // "spk0007-s1"
  std::string speaker;  // "spk0007"
  std::string session;  // "s1"
  Index num_frames = 0;
};

/// Utterance `u` belongs to speaker u / sessions_per_speaker and session
/// u % sessions_per_speaker. Generation is a pure function of the config, so
/// utterances can be regenerated on demand instead of being held in memory.
class SyntheticCorpus {
 public:
  explicit SyntheticCorpus(SynthConfig cfg);

  const SynthConfig& config() const { return cfg_; }
  const GmmModel& generator() const { return base_; }
  Index num_utterances() const;
  UtteranceInfo Info(Index utterance) const;
  Index Utterance(Index speaker, Index session) const;
  FeatureMatrix Generate(Index utterance) const;

 private:
  VectorXd SpeakerOffset(Index speaker) const;
  VectorXd ChannelOffset(Index utterance) const;

  SynthConfig cfg_;
  GmmModel base_;
  MatrixXd speaker_loading_;  // (C*D) x speaker_rank
  MatrixXd channel_loading_;  // (C*D) x channel_rank
};

/// Manifest lines: utterance-id<TAB>speaker-id<TAB>session-id<TAB>n-frames.
void WriteManifest(const std::filesystem::path& path,
                   std::span<const UtteranceInfo> entries);
std::vector<UtteranceInfo> ReadManifest(const std::filesystem::path& path);

/// Writes <out>/features/<id>.feat for every utterance plus
/// <out>/manifest.tsv. Output is byte-identical for identical configs.
std::vector<UtteranceInfo> SynthCorpus(const SynthConfig& cfg,
                                       const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// Duration protocol

/// One side of a condition: a fixed number of active frames after the
/// skipped lead-in, the whole utterance, or a per-utterance random length.
struct DurationSpec {
  enum class Kind { kFixed, kFull, kRandom };
  Kind kind = Kind::kFull;
  double seconds = 0;  // kFixed only

  /// "2s", "Full", "Random".
  std::string Name() const;
  static DurationSpec Parse(std::string_view text);
  friend bool operator==(const DurationSpec&, const DurationSpec&) = default;
  friend auto operator<=>(const DurationSpec&, const DurationSpec&) = default;
};

/// "<enroll>-<test>", e.g. "2s-2s", "Full-10s", "Random-Random".
struct Condition {
  DurationSpec enroll;
  DurationSpec test;

  std::string Name() const;
  static Condition Parse(std::string_view text);
};

/// Speaker indices [first, last] of the synthetic corpus.
struct SpeakerRange {
  Index first = 0;
  Index last = -1;

  Index size() const { return last - first + 1; }
  bool Contains(Index s) const { return s >= first && s <= last; }
  bool Overlaps(const SpeakerRange& o) const {
    return first <= o.last && o.first <= last;
  }
  std::string ToString() const;
  static SpeakerRange Parse(std::string_view text);  // "100-149"
};

struct ExperimentPlan {
  SynthConfig corpus;

  SpeakerRange background{0, 99};  // UBM, TV, LDA and PLDA training
  SpeakerRange dev{100, 149};      // fusion training
  SpeakerRange eval{150, 199};     // reported metrics
  std::string dev_set_id = "dev";
  std::string eval_set_id = "eval";
  /// Evaluating fusion on the speakers it was trained on must be requested
  /// explicitly.
  bool allow_dev_eval_overlap = false;

  GmmTrainConfig ubm;
  Index ubm_max_frames = 120000;  // background frames subsampled for the UBM
  double relevance = kDefaultRelevance;
  TvTrainConfig tv;
  Index lda_dim = 16;
  PldaTrainConfig plda;

  std::vector<Condition> conditions;
  std::vector<std::string> systems;  // subset of {gmm-ubm, ivector-gplda}
  std::vector<FusionMode> fusion_modes;
  std::vector<QualityKind> quality_kinds;

  Index skip_frames = 500;  // active frames dropped before truncation
  Index random_min_frames = 200;
  Index random_max_frames = 2000;
  std::uint64_t seed = 1;  // random durations and model initialization
  DcfParams costs;

  bool HasSystem(std::string_view name) const;
  void Validate() const;

  static ExperimentPlan FromKeyValue(const io::KeyValueFile& kv);
  static ExperimentPlan Load(const std::filesystem::path& path);
  io::KeyValueFile ToKeyValue() const;
};

/// Active frames kept by a duration spec for one utterance; nullopt for Full.
/// Random lengths are a pure function of the plan seed, the utterance id
/// and the role ("enroll" or "test").
std::optional<Index> SegmentFrames(const ExperimentPlan& plan, const DurationSpec& spec,
                    const std::string& utterance_id, std::string_view role);

/// Truncation used by the experiment: Full keeps every frame; fixed and
/// random specs drop the plan's lead-in and keep the requested length.
FeatureMatrix CutSegment(const ExperimentPlan& plan, const DurationSpec& spec,
                         const FeatureMatrix& features,
                         const std::string& utterance_id,
                         std::string_view role);

// ---------------------------------------------------------------------------
// Experiment

struct TrainedModels {
  GmmModel ubm;
  TvModel tv;
  LdaProjection lda;
  PldaModel plda;
};

/// Trains the UBM, TV, LDA and PLDA models on the plan's background split.
TrainedModels TrainBackgroundModels(const ExperimentPlan& plan,
                                    const SyntheticCorpus& corpus,
                                    std::ostream* log = nullptr);

struct MetricsRow {
  std::string condition;
  std::string variant;  // system name, "linear", "calibration", "quality:<kind>"
  std::optional<MetricsReport> report;
  double dev_objective = std::numeric_limits<double>::quiet_NaN();
  std::string error;  // non-empty when the cell failed
};

struct MetricsTable {
  std::vector<MetricsRow> rows;

  const MetricsRow* Find(std::string_view condition,
                         std::string_view variant) const;
  /// TSV: condition variant eer mindcf100 n_target n_nontarget dev_objective status.
  std::string ToTsv() const;
  static MetricsTable FromTsv(std::string_view text);
};

struct ExperimentOptions {
  std::filesystem::path out_dir;  // empty: nothing persisted, no caching
  std::ostream* log = nullptr;
};

/// Runs every condition x system x fusion variant of the plan. Intermediate
/// scores, keys, qualities, fusion models and DET points are written under
/// out_dir/cells/<condition>-<hash>/; a cell whose metrics file already
/// exists for the same content hash is loaded instead of recomputed.
MetricsTable RunExperiment(const ExperimentPlan& plan,
                           const ExperimentOptions& options = {});

/// Mean of each Baum-Welch quality kind over the given utterances for each
/// duration, as in the duration-versus-quality analysis. Rows follow
/// `durations`, columns follow kBwQualityKinds.
MatrixXd MeanQualityByDuration(const ExperimentPlan& plan,
                               const SyntheticCorpus& corpus,
                               const GmmModel& ubm,
                               std::span<const Index> utterances,
                               std::span<const DurationSpec> durations);

/// The desk-scale default plan: C=64, R=32, LDA 16, PLDA 8, the nine fixed
/// conditions plus Random-Random, both systems, all fusion variants.
ExperimentPlan DeskScalePlan();

// ---------------------------------------------------------------------------
// Command line

/// Entry point of the qmsv tool. Returns the process exit status: 0 on
/// success, 1 on a runtime error, 2 on a usage error.
int CliDispatch(int argc, char** argv);

}  // namespace qmsv
