// qmsv/qmsv/frontend.hpp

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

#include <cstddef>
#include <filesystem>
#include <optional>
#include <vector>

#include "qmsv/common.hpp"

namespace qmsv {

namespace io {
class KeyValueFile;
}

struct AudioSignal {
  VectorXd samples;  // amplitudes in [-1, 1]
  int sample_rate = 8000;
};

/// Utterance features, one frame per row. The frontend produces 57 columns
/// (19 static cepstra, deltas, double deltas); synthetic corpora may use a
/// different width.
struct FeatureMatrix {
  RowMatrixXd frames;
  bool vad_applied = false;
  bool cmvn_applied = false;
  double frame_shift = 0.010;  // seconds

  Index num_frames() const { return frames.rows(); }
  Index dim() const { return frames.cols(); }
};

inline constexpr int kStaticCepstra = 19;
inline constexpr int kFeatureDim = 3 * kStaticCepstra;

struct FrontendConfig {
  double frame_len_s = 0.020;
  double frame_shift_s = 0.010;
  int n_cepstra = kStaticCepstra;
  int n_filters = 27;
  /// Taper coefficient a of w(n) = a - (1-a) cos(2 pi n / (N-1)); 0.54 is
  /// the Hamming window.
  double window_alpha = 0.54;
  double vad_energy_quantile = 0.4;
  int delta_window = 2;

  void Validate() const;
  /// Overrides any field present in the file's top-level section.
  static FrontendConfig FromKeyValue(const io::KeyValueFile& kv);
};

inline constexpr double kLogEnergyFloor = 1e-10;

/// Thrown by TruncateActive when the utterance is too short.
class InsufficientSpeechError : public Error {
 public:
  InsufficientSpeechError(Index available, Index required);
  Index available() const { return available_; }
  Index required() const { return required_; }

 private:
  Index available_;
  Index required_;
};

/// Reads a single-channel 16-bit linear PCM RIFF/WAVE file at 8 or 16 kHz.
AudioSignal ReadAudio(const std::filesystem::path& path);
/// Writes a single-channel 16-bit PCM WAVE file; samples are clipped.
void WriteAudio(const std::filesystem::path& path, const AudioSignal& signal);

/// Number of frames the framing of `num_samples` produces (0 if shorter than
/// one frame).
Index NumFrames(Index num_samples, int sample_rate, const FrontendConfig& cfg);

/// MFCCs with appended deltas and double deltas. Flags are cleared.
FeatureMatrix ExtractMfcc(const AudioSignal& signal, const FrontendConfig& cfg);

/// Per-frame log energies (natural log of the raw frame's sum of squares,
/// floored at kLogEnergyFloor).
VectorXd FrameLogEnergies(const AudioSignal& signal, const FrontendConfig& cfg);

/// Energy-based speech activity mask, one entry per frame. A frame is active
/// iff its log energy is at least the utterance's vad_energy_quantile
/// quantile and above the log floor. Callers must handle all-false masks.
std::vector<bool> EnergyVad(const AudioSignal& signal, const FrontendConfig& cfg);

/// Keeps the rows where mask is true and marks vad_applied.
FeatureMatrix ApplyVad(const FeatureMatrix& features,
                       const std::vector<bool>& mask);

/// Per-dimension mean and variance normalization over all frames. A column
/// with zero variance is only mean-subtracted (it becomes all zero).
FeatureMatrix Cmvn(const FeatureMatrix& features);

/// Sentinel for TruncateActive's keep argument.
inline constexpr std::optional<Index> kKeepAll = std::nullopt;

/// Drops the first `skip` active frames and keeps the next `keep` (all of the
/// remainder if keep is kKeepAll).
FeatureMatrix TruncateActive(const FeatureMatrix& features, Index skip,
                             std::optional<Index> keep);

/// Full pipeline: MFCC, energy VAD, CMVN.
FeatureMatrix ProcessAudio(const AudioSignal& signal, const FrontendConfig& cfg);

// Feature file layout (little endian):
//   "QMSVFEAT" | u32 T | u32 D | u8 vad_applied | u8 cmvn_applied |
//   T*D float64, row-major
void WriteFeatures(const std::filesystem::path& path,
                   const FeatureMatrix& features);
FeatureMatrix ReadFeatures(const std::filesystem::path& path);
/// Plain text, one frame per line, space separated, for debugging.
void WriteFeaturesText(const std::filesystem::path& path,
                       const FeatureMatrix& features);

}  // namespace qmsv
