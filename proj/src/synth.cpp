// qmsv/synth.cpp

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
#include <cstdio>
#include <fstream>
#include <random>

#include "qmsv/harness.hpp"
#include "qmsv/io.hpp"

namespace qmsv {

namespace {

// SplitMix64 finalizer; derives independent stream seeds from a base seed.
std::uint64_t Mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t StreamSeed(std::uint64_t seed, std::uint64_t stream,
                         std::uint64_t index) {
  return Mix(Mix(Mix(seed) ^ stream) ^ index);
}

constexpr std::uint64_t kBaseStream = 1;
constexpr std::uint64_t kSpeakerStream = 2;
constexpr std::uint64_t kChannelStream = 3;
constexpr std::uint64_t kFrameStream = 4;

MatrixXd GaussianMatrix(std::mt19937_64& rng, Index rows, Index cols,
                        double sd) {
  std::normal_distribution<double> normal(0.0, sd);
  MatrixXd m(rows, cols);
  for (Index c = 0; c < cols; ++c)
    for (Index r = 0; r < rows; ++r) m(r, c) = normal(rng);
  return m;
}

const char* const kSynthKeys[] = {
    "n_speakers",          "sessions_per_speaker", "full_duration_s",
    "speaker_shift_scale", "channel_shift_scale",  "base_components",
    "seed",                "dim",                  "speaker_rank",
    "channel_rank",        "session_noise_scale",  "within_speaker_scale",  "base_mean_scale",
    "mean_run_frames",     "frame_shift_s"};

}  // namespace

Index SynthConfig::frames_per_session() const {
  return static_cast<Index>(std::llround(full_duration_s / frame_shift_s));
}

void SynthConfig::Validate() const {
  if (n_speakers < 1 || sessions_per_speaker < 1 || base_components < 1 ||
      dim < 1 || speaker_rank < 1 || channel_rank < 1)
    throw ArgumentError("synth config: counts must be >= 1");
  if (!(speaker_shift_scale >= 0) || !(channel_shift_scale >= 0) ||
      !(session_noise_scale >= 0) || !(within_speaker_scale >= 0) || !(base_mean_scale >= 0))
    throw ArgumentError("synth config: scales must be >= 0");
  if (!(frame_shift_s > 0) || !(full_duration_s > 0) ||
      frames_per_session() < 1)
    throw ArgumentError("synth config: duration must cover at least one frame");
  if (!(mean_run_frames >= 1))
    throw ArgumentError("synth config: mean_run_frames must be >= 1");
}

SynthConfig SynthConfig::FromKeyValue(const io::KeyValueFile& kv,
                                      const std::string& section) {
  for (const auto& [key, value] : kv.Section(section)) {
    if (std::none_of(std::begin(kSynthKeys), std::end(kSynthKeys),
                     [&](const char* k) { return key == k; }))
      throw ArgumentError("synth config: unknown key '" + key + "'");
  }
  SynthConfig c;
  const auto& s = section;
  c.n_speakers = kv.GetInt(s, "n_speakers", c.n_speakers);
  c.sessions_per_speaker =
      kv.GetInt(s, "sessions_per_speaker", c.sessions_per_speaker);
  c.full_duration_s = kv.GetDouble(s, "full_duration_s", c.full_duration_s);
  c.speaker_shift_scale =
      kv.GetDouble(s, "speaker_shift_scale", c.speaker_shift_scale);
  c.channel_shift_scale =
      kv.GetDouble(s, "channel_shift_scale", c.channel_shift_scale);
  c.base_components = kv.GetInt(s, "base_components", c.base_components);
  c.seed = static_cast<std::uint64_t>(
      kv.GetInt(s, "seed", static_cast<long long>(c.seed)));
  c.dim = kv.GetInt(s, "dim", c.dim);
  c.speaker_rank = kv.GetInt(s, "speaker_rank", c.speaker_rank);
  c.channel_rank = kv.GetInt(s, "channel_rank", c.channel_rank);
  c.session_noise_scale =
      kv.GetDouble(s, "session_noise_scale", c.session_noise_scale);
  c.within_speaker_scale =
      kv.GetDouble(s, "within_speaker_scale", c.within_speaker_scale);
  c.base_mean_scale = kv.GetDouble(s, "base_mean_scale", c.base_mean_scale);
  c.mean_run_frames = kv.GetDouble(s, "mean_run_frames", c.mean_run_frames);
  c.frame_shift_s = kv.GetDouble(s, "frame_shift_s", c.frame_shift_s);
  c.Validate();
  return c;
}

void SynthConfig::ToKeyValue(io::KeyValueFile& kv,
                             const std::string& section) const {
  auto set_int = [&](const char* k, long long v) {
    kv.Set(section, k, std::to_string(v));
  };
  auto set_double = [&](const char* k, double v) {
    kv.Set(section, k, io::FormatDouble(v));
  };
  set_int("n_speakers", n_speakers);
  set_int("sessions_per_speaker", sessions_per_speaker);
  set_double("full_duration_s", full_duration_s);
  set_double("speaker_shift_scale", speaker_shift_scale);
  set_double("channel_shift_scale", channel_shift_scale);
  set_int("base_components", base_components);
  set_int("seed", static_cast<long long>(seed));
  set_int("dim", dim);
  set_int("speaker_rank", speaker_rank);
  set_int("channel_rank", channel_rank);
  set_double("session_noise_scale", session_noise_scale);
  set_double("within_speaker_scale", within_speaker_scale);
  set_double("base_mean_scale", base_mean_scale);
  set_double("mean_run_frames", mean_run_frames);
  set_double("frame_shift_s", frame_shift_s);
}

SyntheticCorpus::SyntheticCorpus(SynthConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.Validate();
  const Index c = cfg_.base_components;
  const Index d = cfg_.dim;
  std::mt19937_64 rng(StreamSeed(cfg_.seed, kBaseStream, 0));
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> uniform(0.5, 1.5);

  base_.weights.resize(c);
  for (Index i = 0; i < c; ++i) base_.weights(i) = std::exp(0.5 * normal(rng));
  base_.weights /= base_.weights.sum();
  base_.means = GaussianMatrix(rng, c, d, cfg_.base_mean_scale);
  base_.variances.resize(c, d);
  for (Index i = 0; i < c; ++i)
    for (Index j = 0; j < d; ++j) base_.variances(i, j) = uniform(rng);
  base_.seed = cfg_.seed;

  // Entries N(0, 1/rank): each supervector coordinate of an offset then has
  // unit variance before scaling.
  speaker_loading_ = GaussianMatrix(
      rng, c * d, cfg_.speaker_rank,
      1.0 / std::sqrt(static_cast<double>(cfg_.speaker_rank)));
  channel_loading_ = GaussianMatrix(
      rng, c * d, cfg_.channel_rank,
      1.0 / std::sqrt(static_cast<double>(cfg_.channel_rank)));
}

Index SyntheticCorpus::num_utterances() const {
  return cfg_.n_speakers * cfg_.sessions_per_speaker;
}

Index SyntheticCorpus::Utterance(Index speaker, Index session) const {
  if (speaker < 0 || speaker >= cfg_.n_speakers || session < 0 ||
      session >= cfg_.sessions_per_speaker)
    throw ArgumentError("synthetic corpus: speaker/session out of range");
  return speaker * cfg_.sessions_per_speaker + session;
}

UtteranceInfo SyntheticCorpus::Info(Index utterance) const {
  if (utterance < 0 || utterance >= num_utterances())
    throw ArgumentError("synthetic corpus: utterance index out of range");
  const Index spk = utterance / cfg_.sessions_per_speaker;
  const Index sess = utterance % cfg_.sessions_per_speaker;
  char speaker[32];
  std::snprintf(speaker, sizeof speaker, "spk%04lld",
                static_cast<long long>(spk));
  UtteranceInfo info;
  info.speaker = speaker;
  info.session = "s" + std::to_string(sess);
  info.id = info.speaker + "-" + info.session;
  info.num_frames = cfg_.frames_per_session();
  return info;
}

VectorXd SyntheticCorpus::SpeakerOffset(Index speaker) const {
  std::mt19937_64 rng(StreamSeed(cfg_.seed, kSpeakerStream,
                                 static_cast<std::uint64_t>(speaker)));
  const VectorXd z = GaussianMatrix(rng, cfg_.speaker_rank, 1, 1.0);
  return cfg_.speaker_shift_scale * (speaker_loading_ * z);
}

VectorXd SyntheticCorpus::ChannelOffset(Index utterance) const {
  std::mt19937_64 rng(StreamSeed(cfg_.seed, kChannelStream,
                                 static_cast<std::uint64_t>(utterance)));
  const VectorXd x = GaussianMatrix(rng, cfg_.channel_rank, 1, 1.0);
  const VectorXd w = GaussianMatrix(rng, cfg_.speaker_rank, 1, 1.0);
  const VectorXd noise = GaussianMatrix(
      rng, cfg_.base_components * cfg_.dim, 1, cfg_.session_noise_scale);
  return cfg_.channel_shift_scale * (channel_loading_ * x) +
         cfg_.within_speaker_scale * (speaker_loading_ * w) + noise;
}

FeatureMatrix SyntheticCorpus::Generate(Index utterance) const {
  const UtteranceInfo info = Info(utterance);
  const Index c = cfg_.base_components;
  const Index d = cfg_.dim;
  const VectorXd offset = SpeakerOffset(utterance / cfg_.sessions_per_speaker) +
                          ChannelOffset(utterance);
  // Component-major supervector back to a C x D matrix.
  const MatrixXd means =
      base_.means + Eigen::Map<const RowMatrixXd>(offset.data(), c, d);
  const MatrixXd sd = base_.variances.cwiseSqrt();

  std::mt19937_64 rng(StreamSeed(cfg_.seed, kFrameStream,
                                 static_cast<std::uint64_t>(utterance)));
  std::normal_distribution<double> normal;
  std::discrete_distribution<Index> pick(base_.weights.data(),
                                         base_.weights.data() + c);
  std::geometric_distribution<Index> extra(1.0 / cfg_.mean_run_frames);

  FeatureMatrix out;
  out.frames.resize(info.num_frames, d);
  out.vad_applied = true;
  out.frame_shift = cfg_.frame_shift_s;
  Index t = 0;
  while (t < info.num_frames) {
    const Index comp = pick(rng);
    const Index run = std::min(1 + extra(rng), info.num_frames - t);
    for (Index k = 0; k < run; ++k, ++t)
      for (Index j = 0; j < d; ++j)
        out.frames(t, j) = means(comp, j) + sd(comp, j) * normal(rng);
  }
  return out;
}

void WriteManifest(const std::filesystem::path& path,
                   std::span<const UtteranceInfo> entries) {
  std::string text;
  for (const auto& e : entries)
    text += e.id + '\t' + e.speaker + '\t' + e.session + '\t' +
            std::to_string(e.num_frames) + '\n';
  io::WriteFileAtomic(path, text);
}

std::vector<UtteranceInfo> ReadManifest(const std::filesystem::path& path) {
  std::vector<UtteranceInfo> out;
  for (const auto& line : io::ReadLines(path)) {
    const auto f = io::SplitTabs(line);
    if (f.size() != 4)
      throw IoError(path.string() + ": manifest line needs 4 fields: " + line);
    out.push_back({f[0], f[1], f[2], static_cast<Index>(io::ParseInt(f[3]))});
  }
  return out;
}

std::vector<UtteranceInfo> SynthCorpus(const SynthConfig& cfg,
                                       const std::filesystem::path& out_dir) {
  const SyntheticCorpus corpus(cfg);
  std::filesystem::create_directories(out_dir / "features");
  std::vector<UtteranceInfo> manifest;
  for (Index u = 0; u < corpus.num_utterances(); ++u) {
    UtteranceInfo info = corpus.Info(u);
    WriteFeatures(out_dir / "features" / (info.id + ".feat"),
                  corpus.Generate(u));
    manifest.push_back(std::move(info));
  }
  WriteManifest(out_dir / "manifest.tsv", manifest);
  io::KeyValueFile kv;
  cfg.ToKeyValue(kv, "corpus");
  io::WriteFileAtomic(out_dir / "synth.cfg", kv.ToString());
  return manifest;
}

}  // namespace qmsv
