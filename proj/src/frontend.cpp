// qmsv/frontend.cpp

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

#include "qmsv/frontend.hpp"

#include <algorithm>
#include <complex>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include <unsupported/Eigen/FFT>

#include "qmsv/io.hpp"

namespace qmsv {

namespace {

int FrameSamples(double seconds, int sample_rate) {
  return static_cast<int>(std::lround(seconds * sample_rate));
}

double HzToMel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double MelToHz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

// Triangular filters on the linear frequency axis, evaluated at FFT bin
// centres. Rows are filters, columns bins 0..nfft/2.
MatrixXd MelFilterbank(int n_filters, int nfft, int sample_rate) {
  const int n_bins = nfft / 2 + 1;
  const double mel_hi = HzToMel(sample_rate / 2.0);
  VectorXd edges(n_filters + 2);
  for (int i = 0; i < n_filters + 2; ++i)
    edges(i) = MelToHz(mel_hi * i / (n_filters + 1));
  MatrixXd fb = MatrixXd::Zero(n_filters, n_bins);
  for (int m = 0; m < n_filters; ++m) {
    const double lo = edges(m), mid = edges(m + 1), hi = edges(m + 2);
    for (int k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / nfft;
      if (f > lo && f <= mid)
        fb(m, k) = (f - lo) / (mid - lo);
      else if (f > mid && f < hi)
        fb(m, k) = (hi - f) / (hi - mid);
    }
  }
  return fb;
}

// Regression deltas over +-window frames, edges replicated.
RowMatrixXd Deltas(const RowMatrixXd& x, int window) {
  const Index t_count = x.rows();
  double denom = 0;
  for (int n = 1; n <= window; ++n) denom += 2.0 * n * n;
  RowMatrixXd d = RowMatrixXd::Zero(t_count, x.cols());
  for (Index t = 0; t < t_count; ++t) {
    for (int n = 1; n <= window; ++n) {
      const Index ahead = std::min<Index>(t + n, t_count - 1);
      const Index behind = std::max<Index>(t - n, 0);
      d.row(t) += n * (x.row(ahead) - x.row(behind));
    }
    d.row(t) /= denom;
  }
  return d;
}

void CheckSignal(const AudioSignal& signal) {
  if (signal.sample_rate <= 0) throw ArgumentError("sample rate must be > 0");
  if (signal.samples.size() == 0) throw ArgumentError("empty audio signal");
}

std::uint32_t ReadU32At(const std::vector<char>& b, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[off + i]))
         << (8 * i);
  return v;
}

std::uint16_t ReadU16At(const std::vector<char>& b, std::size_t off) {
  return static_cast<std::uint16_t>(
      static_cast<unsigned char>(b[off]) |
      (static_cast<unsigned char>(b[off + 1]) << 8));
}

}  // namespace

void FrontendConfig::Validate() const {
  if (!(frame_shift_s > 0) || !(frame_len_s > frame_shift_s))
    throw ArgumentError("frontend: need frame_len_s > frame_shift_s > 0");
  if (n_cepstra < 1) throw ArgumentError("frontend: n_cepstra must be >= 1");
  if (n_filters <= n_cepstra)
    throw ArgumentError("frontend: n_filters must exceed n_cepstra");
  if (!(vad_energy_quantile > 0 && vad_energy_quantile < 1))
    throw ArgumentError("frontend: vad_energy_quantile must be in (0,1)");
  if (delta_window < 1) throw ArgumentError("frontend: delta_window must be >= 1");
}

FrontendConfig FrontendConfig::FromKeyValue(const io::KeyValueFile& kv) {
  FrontendConfig c;
  c.frame_len_s = kv.GetDouble("", "frame_len_s", c.frame_len_s);
  c.frame_shift_s = kv.GetDouble("", "frame_shift_s", c.frame_shift_s);
  c.n_cepstra = static_cast<int>(kv.GetInt("", "n_cepstra", c.n_cepstra));
  c.n_filters = static_cast<int>(kv.GetInt("", "n_filters", c.n_filters));
  c.window_alpha = kv.GetDouble("", "window_alpha", c.window_alpha);
  c.vad_energy_quantile =
      kv.GetDouble("", "vad_energy_quantile", c.vad_energy_quantile);
  c.delta_window =
      static_cast<int>(kv.GetInt("", "delta_window", c.delta_window));
  for (const auto& [key, value] : kv.Section("")) {
    static const char* kKnown[] = {"frame_len_s",  "frame_shift_s",
                                   "n_cepstra",    "n_filters",
                                   "window_alpha", "vad_energy_quantile",
                                   "delta_window"};
    if (std::none_of(std::begin(kKnown), std::end(kKnown),
                     [&](const char* k) { return key == k; }))
      throw ArgumentError("frontend config: unknown key '" + key + "'");
  }
  c.Validate();
  return c;
}

InsufficientSpeechError::InsufficientSpeechError(Index available,
                                                 Index required)
    : Error("insufficient active speech: available=" +
            std::to_string(available) + " required=" +
            std::to_string(required)),
      available_(available),
      required_(required) {}

AudioSignal ReadAudio(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open audio file " + path.string());
  std::vector<char> b((std::istreambuf_iterator<char>(is)),
                      std::istreambuf_iterator<char>());
  if (b.size() < 12 || std::memcmp(b.data(), "RIFF", 4) != 0 ||
      std::memcmp(b.data() + 8, "WAVE", 4) != 0)
    throw IoError(path.string() + ": not a RIFF/WAVE file");
  std::size_t off = 12;
  bool have_fmt = false;
  std::uint16_t channels = 0, bits = 0;
  std::uint32_t rate = 0;
  while (off + 8 <= b.size()) {
    const std::string id(b.data() + off, 4);
    const std::uint32_t size = ReadU32At(b, off + 4);
    const std::size_t body = off + 8;
    if (body + size > b.size()) throw IoError(path.string() + ": truncated chunk");
    if (id == "fmt ") {
      if (size < 16) throw IoError(path.string() + ": bad fmt chunk");
      const std::uint16_t format = ReadU16At(b, body);
      channels = ReadU16At(b, body + 2);
      rate = ReadU32At(b, body + 4);
      bits = ReadU16At(b, body + 14);
      if (format != 1)
        throw IoError(path.string() + ": unsupported encoding (need linear PCM)");
      if (channels != 1)
        throw IoError(path.string() + ": unsupported channel count " +
                      std::to_string(channels));
      if (bits != 16)
        throw IoError(path.string() + ": unsupported sample width " +
                      std::to_string(bits));
      if (rate != 8000 && rate != 16000)
        throw IoError(path.string() + ": unsupported sample rate " +
                      std::to_string(rate));
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw IoError(path.string() + ": data before fmt chunk");
      const std::size_t n = size / 2;
      if (n == 0) throw IoError(path.string() + ": zero-length audio");
      AudioSignal s;
      s.sample_rate = static_cast<int>(rate);
      s.samples.resize(static_cast<Index>(n));
      for (std::size_t i = 0; i < n; ++i)
        s.samples(static_cast<Index>(i)) =
            static_cast<std::int16_t>(ReadU16At(b, body + 2 * i)) / 32768.0;
      return s;
    }
    off = body + size + (size & 1);
  }
  throw IoError(path.string() + ": no data chunk");
}

void WriteAudio(const std::filesystem::path& path, const AudioSignal& signal) {
  CheckSignal(signal);
  std::ostringstream os(std::ios::binary);
  const auto n = static_cast<std::uint32_t>(signal.samples.size());
  os.write("RIFF", 4);
  io::WriteU32(os, 36 + 2 * n);
  os.write("WAVEfmt ", 8);
  io::WriteU32(os, 16);
  os.put(1), os.put(0);  // PCM
  os.put(1), os.put(0);  // mono
  io::WriteU32(os, static_cast<std::uint32_t>(signal.sample_rate));
  io::WriteU32(os, static_cast<std::uint32_t>(signal.sample_rate) * 2);
  os.put(2), os.put(0);
  os.put(16), os.put(0);
  os.write("data", 4);
  io::WriteU32(os, 2 * n);
  for (Index i = 0; i < signal.samples.size(); ++i) {
    const double v = std::clamp(signal.samples(i) * 32768.0, -32768.0, 32767.0);
    const auto s = static_cast<std::uint16_t>(
        static_cast<std::int16_t>(std::lround(v)));
    os.put(static_cast<char>(s & 0xff));
    os.put(static_cast<char>(s >> 8));
  }
  io::WriteFileAtomic(path, os.str());
}

Index NumFrames(Index num_samples, int sample_rate, const FrontendConfig& cfg) {
  const int len = FrameSamples(cfg.frame_len_s, sample_rate);
  const int shift = FrameSamples(cfg.frame_shift_s, sample_rate);
  if (num_samples < len) return 0;
  return 1 + (num_samples - len) / shift;
}

FeatureMatrix ExtractMfcc(const AudioSignal& signal, const FrontendConfig& cfg) {
  CheckSignal(signal);
  cfg.Validate();
  const Index t_count = NumFrames(signal.samples.size(), signal.sample_rate, cfg);
  if (t_count < 1) throw ArgumentError("signal shorter than one frame");
  const int len = FrameSamples(cfg.frame_len_s, signal.sample_rate);
  const int shift = FrameSamples(cfg.frame_shift_s, signal.sample_rate);
  int nfft = 1;
  while (nfft < len) nfft *= 2;

  VectorXd window(len);
  for (int n = 0; n < len; ++n)
    window(n) = cfg.window_alpha - (1.0 - cfg.window_alpha) *
                                       std::cos(2.0 * std::numbers::pi * n /
                                                (len - 1));
  const MatrixXd fb = MelFilterbank(cfg.n_filters, nfft, signal.sample_rate);
  MatrixXd dct(cfg.n_cepstra, cfg.n_filters);
  for (int c = 0; c < cfg.n_cepstra; ++c)
    for (int m = 0; m < cfg.n_filters; ++m)
      dct(c, m) = std::cos(std::numbers::pi * (c + 1) * (m + 0.5) / cfg.n_filters);

  Eigen::FFT<double> fft;
  std::vector<double> buf(nfft, 0.0);
  std::vector<std::complex<double>> spec;
  RowMatrixXd cep(t_count, cfg.n_cepstra);
  VectorXd power(nfft / 2 + 1);
  for (Index t = 0; t < t_count; ++t) {
    std::fill(buf.begin(), buf.end(), 0.0);
    for (int n = 0; n < len; ++n)
      buf[n] = signal.samples(t * shift + n) * window(n);
    fft.fwd(spec, buf);
    for (int k = 0; k <= nfft / 2; ++k) power(k) = std::norm(spec[k]);
    VectorXd log_mel = (fb * power).array().max(kLogEnergyFloor).log();
    cep.row(t) = (dct * log_mel).transpose();
  }

  FeatureMatrix out;
  out.frame_shift = cfg.frame_shift_s;
  const RowMatrixXd d1 = Deltas(cep, cfg.delta_window);
  const RowMatrixXd d2 = Deltas(d1, cfg.delta_window);
  out.frames.resize(t_count, 3 * cfg.n_cepstra);
  out.frames << cep, d1, d2;
  return out;
}

VectorXd FrameLogEnergies(const AudioSignal& signal, const FrontendConfig& cfg) {
  CheckSignal(signal);
  cfg.Validate();
  const Index t_count = NumFrames(signal.samples.size(), signal.sample_rate, cfg);
  const int len = FrameSamples(cfg.frame_len_s, signal.sample_rate);
  const int shift = FrameSamples(cfg.frame_shift_s, signal.sample_rate);
  VectorXd e(t_count);
  for (Index t = 0; t < t_count; ++t)
    e(t) = std::log(std::max(
        signal.samples.segment(t * shift, len).squaredNorm(), kLogEnergyFloor));
  return e;
}

std::vector<bool> EnergyVad(const AudioSignal& signal,
                            const FrontendConfig& cfg) {
  const VectorXd e = FrameLogEnergies(signal, cfg);
  const Index t_count = e.size();
  std::vector<bool> mask(static_cast<std::size_t>(t_count), false);
  if (t_count == 0) return mask;
  std::vector<double> sorted(e.data(), e.data() + t_count);
  std::sort(sorted.begin(), sorted.end());
  const auto idx = std::min<std::size_t>(
      static_cast<std::size_t>(std::floor(cfg.vad_energy_quantile * t_count)),
      static_cast<std::size_t>(t_count - 1));
  const double threshold = sorted[idx];
  const double floor = std::log(kLogEnergyFloor);
  for (Index t = 0; t < t_count; ++t)
    mask[static_cast<std::size_t>(t)] = e(t) >= threshold && e(t) > floor;
  return mask;
}

FeatureMatrix ApplyVad(const FeatureMatrix& features,
                       const std::vector<bool>& mask) {
  if (static_cast<Index>(mask.size()) != features.num_frames())
    throw ShapeError("VAD mask length does not match frame count");
  const auto kept = static_cast<Index>(std::count(mask.begin(), mask.end(), true));
  FeatureMatrix out = features;
  out.frames.resize(kept, features.dim());
  Index r = 0;
  for (Index t = 0; t < features.num_frames(); ++t)
    if (mask[static_cast<std::size_t>(t)]) out.frames.row(r++) = features.frames.row(t);
  out.vad_applied = true;
  return out;
}

FeatureMatrix Cmvn(const FeatureMatrix& features) {
  if (features.num_frames() < 2)
    throw ArgumentError("CMVN needs at least two frames");
  FeatureMatrix out = features;
  const double t_count = static_cast<double>(features.num_frames());
  for (Index d = 0; d < features.dim(); ++d) {
    auto col = out.frames.col(d);
    if (col.maxCoeff() == col.minCoeff()) {
      col.setZero();
      continue;
    }
    const double mean = col.sum() / t_count;
    col.array() -= mean;
    const double var = col.squaredNorm() / t_count;
    if (var > 0) col /= std::sqrt(var);
  }
  out.cmvn_applied = true;
  return out;
}

FeatureMatrix TruncateActive(const FeatureMatrix& features, Index skip,
                             std::optional<Index> keep) {
  if (skip < 0 || (keep && *keep < 0))
    throw ArgumentError("truncate: negative frame count");
  if (!features.vad_applied && !(skip == 0 && !keep))
    throw ArgumentError("truncate: VAD must be applied first");
  const Index total = features.num_frames();
  const Index available = std::max<Index>(total - skip, 0);
  const Index want = keep ? *keep : available;
  if (skip + want > total || (!keep && available == 0 && skip > 0))
    throw InsufficientSpeechError(available, want);
  FeatureMatrix out = features;
  out.frames = features.frames.middleRows(skip, want);
  return out;
}

FeatureMatrix ProcessAudio(const AudioSignal& signal, const FrontendConfig& cfg) {
  FeatureMatrix f = ExtractMfcc(signal, cfg);
  f = ApplyVad(f, EnergyVad(signal, cfg));
  if (f.num_frames() < 2)
    throw InsufficientSpeechError(f.num_frames(), 2);
  return Cmvn(f);
}

void WriteFeatures(const std::filesystem::path& path,
                   const FeatureMatrix& features) {
  std::ostringstream os(std::ios::binary);
  os.write("QMSVFEAT", 8);
  io::WriteU32(os, static_cast<std::uint32_t>(features.num_frames()));
  io::WriteU32(os, static_cast<std::uint32_t>(features.dim()));
  io::WriteU8(os, features.vad_applied ? 1 : 0);
  io::WriteU8(os, features.cmvn_applied ? 1 : 0);
  io::WriteMatrixPayload(os, features.frames);
  io::WriteFileAtomic(path, os.str());
}

FeatureMatrix ReadFeatures(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open feature file " + path.string());
  char magic[8];
  is.read(magic, 8);
  if (is.gcount() != 8 || std::memcmp(magic, "QMSVFEAT", 8) != 0)
    throw IoError(path.string() + ": not a feature file");
  FeatureMatrix f;
  const Index t_count = io::ReadU32(is);
  const Index dim = io::ReadU32(is);
  f.vad_applied = io::ReadU8(is) != 0;
  f.cmvn_applied = io::ReadU8(is) != 0;
  f.frames = io::ReadMatrixPayload(is, t_count, dim);
  return f;
}

void WriteFeaturesText(const std::filesystem::path& path,
                       const FeatureMatrix& features) {
  std::ostringstream os;
  for (Index t = 0; t < features.num_frames(); ++t) {
    for (Index d = 0; d < features.dim(); ++d) {
      if (d) os << ' ';
      os << io::FormatDouble(features.frames(t, d));
    }
    os << '\n';
  }
  io::WriteFileAtomic(path, os.str());
}

}  // namespace qmsv
