// qmsv/frontend_test.cpp

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
#include <complex>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include "doctest.h"
#include "qmsv/frontend.hpp"
#include "qmsv/io.hpp"

using namespace qmsv;
namespace fs = std::filesystem;

namespace {

AudioSignal Tone(double hz, Index n, int rate = 8000, double amp = 0.5) {
  AudioSignal s;
  s.sample_rate = rate;
  s.samples.resize(n);
  for (Index i = 0; i < n; ++i) s.samples(i) = amp * std::sin(2 * M_PI * hz * i / rate);
  return s;
}

AudioSignal Noise(Index n, std::mt19937_64& rng, double amp) {
  std::normal_distribution<double> normal(0.0, amp);
  AudioSignal s;
  s.samples.resize(n);
  for (Index i = 0; i < n; ++i) s.samples(i) = std::clamp(normal(rng), -1.0, 1.0);
  return s;
}

/// Static cepstra of one frame from a direct DFT and DCT: Hamming-type
/// window, zero padding to a power of two, HTK mel triangles on [0, fs/2],
/// log filter energies, DCT-II coefficients 1..n_cepstra.
std::vector<double> ReferenceCepstra(const AudioSignal& s, Index start,
                                     const FrontendConfig& cfg) {
  const int rate = s.sample_rate;
  const int len = static_cast<int>(std::lround(cfg.frame_len_s * rate));
  int nfft = 1;
  while (nfft < len) nfft *= 2;
  std::vector<double> x(nfft, 0.0);
  for (int n = 0; n < len; ++n)
    x[n] = s.samples(start + n) *
           (cfg.window_alpha - (1 - cfg.window_alpha) * std::cos(2 * M_PI * n / (len - 1)));
  std::vector<double> power(nfft / 2 + 1);
  for (int k = 0; k <= nfft / 2; ++k) {
    std::complex<double> acc = 0;
    for (int n = 0; n < nfft; ++n)
      acc += x[n] * std::polar(1.0, -2 * M_PI * k * n / nfft);
    power[k] = std::norm(acc);
  }
  auto mel = [](double hz) { return 2595.0 * std::log10(1 + hz / 700.0); };
  auto hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1); };
  const int m_count = cfg.n_filters;
  std::vector<double> log_energy(m_count);
  for (int m = 0; m < m_count; ++m) {
    const double top = mel(rate / 2.0);
    const double lo = hz(top * m / (m_count + 1));
    const double mid = hz(top * (m + 1) / (m_count + 1));
    const double hi = hz(top * (m + 2) / (m_count + 1));
    double e = 0;
    for (int k = 0; k <= nfft / 2; ++k) {
      const double f = static_cast<double>(k) * rate / nfft;
      double w = 0;
      if (f > lo && f <= mid) w = (f - lo) / (mid - lo);
      if (f > mid && f < hi) w = (hi - f) / (hi - mid);
      e += w * power[k];
    }
    log_energy[m] = std::log(std::max(e, kLogEnergyFloor));
  }
  std::vector<double> cep(cfg.n_cepstra);
  for (int c = 0; c < cfg.n_cepstra; ++c) {
    double acc = 0;
    for (int m = 0; m < m_count; ++m)
      acc += log_energy[m] * std::cos(M_PI * (c + 1) * (m + 0.5) / m_count);
    cep[c] = acc;
  }
  return cep;
}

FeatureMatrix ActiveFeatures(Index t, Index d = 3) {
  FeatureMatrix f;
  f.frames.resize(t, d);
  for (Index i = 0; i < t; ++i)
    for (Index k = 0; k < d; ++k) f.frames(i, k) = static_cast<double>(i * d + k);
  f.vad_applied = true;
  return f;
}

}  // namespace

TEST_CASE("frame count follows the framing formula") {
  const FrontendConfig cfg;
  CHECK(NumFrames(8000, 8000, cfg) == 99);
  CHECK(NumFrames(159, 8000, cfg) == 0);
  for (Index n : {160, 161, 239, 240, 241, 1000, 12345}) {
    CHECK(NumFrames(n, 8000, cfg) == 1 + (n - 160) / 80);
    CHECK(ExtractMfcc(Tone(300, n), cfg).num_frames() == 1 + (n - 160) / 80);
  }
  CHECK_THROWS_AS(ExtractMfcc(Tone(300, 100), cfg), ArgumentError);
}

TEST_CASE("static cepstra match a direct DFT/DCT computation") {
  const FrontendConfig cfg;
  std::mt19937_64 rng(61);
  const AudioSignal s = Noise(1600, rng, 0.2);
  const FeatureMatrix f = ExtractMfcc(s, cfg);
  REQUIRE(f.dim() == kFeatureDim);
  for (Index t : {Index{0}, Index{7}, f.num_frames() - 1}) {
    const auto ref = ReferenceCepstra(s, t * 80, cfg);
    for (int c = 0; c < kStaticCepstra; ++c)
      CHECK(std::abs(f.frames(t, c) - ref[c]) < 1e-6);
  }
}

TEST_CASE("a pure tone gives constant cepstra and vanishing deltas") {
  const FrontendConfig cfg;
  const AudioSignal s = Tone(1000.0, 8000);
  const FeatureMatrix f = ExtractMfcc(s, cfg);
  const auto ref = ReferenceCepstra(s, 80 * 10, cfg);
  for (Index t = 2; t < f.num_frames() - 2; ++t) {
    for (int c = 0; c < kStaticCepstra; ++c) {
      CHECK(std::abs(f.frames(t, c) - ref[c]) < 1e-6);
      CHECK(std::abs(f.frames(t, kStaticCepstra + c)) < 1e-6);
      CHECK(std::abs(f.frames(t, 2 * kStaticCepstra + c)) < 1e-6);
    }
  }
}

TEST_CASE("deltas are regressions over the window") {
  const FrontendConfig cfg;
  std::mt19937_64 rng(62);
  const FeatureMatrix f = ExtractMfcc(Noise(4000, rng, 0.3), cfg);
  const Index t_count = f.num_frames();
  auto stat = [&](Index t, int c) {
    return f.frames(std::clamp<Index>(t, 0, t_count - 1), c);
  };
  for (Index t : {Index{0}, Index{1}, Index{10}, t_count - 1}) {
    for (int c : {0, 5, 18}) {
      const double d = (stat(t + 1, c) - stat(t - 1, c) +
                        2 * (stat(t + 2, c) - stat(t - 2, c))) / 10.0;
      CHECK(f.frames(t, kStaticCepstra + c) == doctest::Approx(d).epsilon(1e-12));
    }
  }
}

TEST_CASE("silence stays finite") {
  AudioSignal s;
  s.samples = VectorXd::Zero(2000);
  const FeatureMatrix f = ExtractMfcc(s, FrontendConfig{});
  CHECK(f.frames.allFinite());
  const auto mask = EnergyVad(s, FrontendConfig{});
  CHECK(mask.size() == static_cast<std::size_t>(f.num_frames()));
  CHECK(std::count(mask.begin(), mask.end(), true) == 0);
}

TEST_CASE("energy VAD keeps the loud share of an alternating signal") {
  std::mt19937_64 rng(63);
  AudioSignal s = Noise(80000, rng, 0.001);
  std::normal_distribution<double> loud(0.0, 0.3);
  // Blocks of 50 frames: 30 loud, 20 quiet.
  for (Index i = 0; i < s.samples.size(); ++i)
    if ((i / 80) % 50 < 30) s.samples(i) = std::clamp(loud(rng), -1.0, 1.0);
  const auto mask = EnergyVad(s, FrontendConfig{});
  const double active = static_cast<double>(std::count(mask.begin(), mask.end(), true)) /
                        static_cast<double>(mask.size());
  CHECK(active == doctest::Approx(0.6).epsilon(0.05));
  CHECK(EnergyVad(s, FrontendConfig{}) == mask);

  AudioSignal flat;
  flat.samples = VectorXd::Constant(2000, 0.25);
  const auto all = EnergyVad(flat, FrontendConfig{});
  CHECK(std::count(all.begin(), all.end(), false) == 0);
}

TEST_CASE("CMVN normalizes, is idempotent and zeroes constant columns") {
  std::mt19937_64 rng(64);
  std::normal_distribution<double> normal(3.0, 2.0);
  FeatureMatrix f;
  f.frames.resize(500, 4);
  for (Index i = 0; i < f.frames.size(); ++i) f.frames.data()[i] = normal(rng);
  f.frames.col(2).setConstant(7.0);
  const FeatureMatrix a = Cmvn(f);
  CHECK(a.cmvn_applied);
  for (Index d : {0, 1, 3}) {
    CHECK(std::abs(a.frames.col(d).mean()) < 1e-10);
    CHECK(std::abs(a.frames.col(d).squaredNorm() / 500.0 - 1.0) < 1e-8);
  }
  CHECK(a.frames.col(2).isZero(0));
  const FeatureMatrix b = Cmvn(a);
  CHECK((b.frames - a.frames).cwiseAbs().maxCoeff() < 1e-10);
  FeatureMatrix one;
  one.frames = RowMatrixXd::Ones(1, 4);
  CHECK_THROWS_AS(Cmvn(one), ArgumentError);
}

TEST_CASE("truncation keeps the requested window of active frames") {
  const FeatureMatrix f = ActiveFeatures(3000);
  const FeatureMatrix a = TruncateActive(f, 500, 200);
  REQUIRE(a.num_frames() == 200);
  CHECK(a.frames.row(0) == f.frames.row(500));
  CHECK(a.frames.row(199) == f.frames.row(699));
  const FeatureMatrix b = TruncateActive(f, 500, 400);
  CHECK(b.frames.topRows(200) == a.frames);
  CHECK(TruncateActive(f, 0, kKeepAll).frames == f.frames);
  CHECK(TruncateActive(f, 500, kKeepAll).num_frames() == 2500);
  try {
    TruncateActive(ActiveFeatures(600), 500, 200);
    FAIL("expected insufficient speech");
  } catch (const InsufficientSpeechError& e) {
    CHECK(e.available() == 100);
    CHECK(e.required() == 200);
  }
  FeatureMatrix raw = ActiveFeatures(100);
  raw.vad_applied = false;
  CHECK_THROWS_AS(TruncateActive(raw, 10, 20), ArgumentError);
}

TEST_CASE("VAD mask application") {
  const FeatureMatrix f = ActiveFeatures(5);
  const FeatureMatrix g = ApplyVad(f, {true, false, true, false, true});
  REQUIRE(g.num_frames() == 3);
  CHECK(g.frames.row(1) == f.frames.row(2));
  CHECK(g.vad_applied);
  CHECK_THROWS_AS(ApplyVad(f, {true}), ShapeError);
}

TEST_CASE("full pipeline yields normalized voice-active features") {
  std::mt19937_64 rng(65);
  AudioSignal s = Noise(16000, rng, 0.001);
  std::normal_distribution<double> loud(0.0, 0.2);
  for (Index i = 4000; i < 12000; ++i) s.samples(i) = loud(rng);
  const FeatureMatrix f = ProcessAudio(s, FrontendConfig{});
  CHECK(f.vad_applied);
  CHECK(f.cmvn_applied);
  CHECK(f.dim() == kFeatureDim);
  CHECK(f.num_frames() < NumFrames(16000, 8000, FrontendConfig{}));
  CHECK(std::abs(f.frames.col(0).mean()) < 1e-10);
}

TEST_CASE("WAV reading and writing") {
  const fs::path dir = fs::temp_directory_path();
  AudioSignal s;
  s.samples.resize(8000);
  for (Index i = 0; i < 8000; ++i) s.samples(i) = (i % 2 ? 0.5 : -0.25);
  WriteAudio(dir / "qmsv_a.wav", s);
  const AudioSignal r = ReadAudio(dir / "qmsv_a.wav");
  CHECK(r.sample_rate == 8000);
  CHECK(r.samples.size() == 8000);
  CHECK(r.samples(1) == 16384.0 / 32768.0);
  CHECK(r.samples(0) == -0.25);

  // Patch the header to claim two channels.
  std::string bytes;
  {
    std::ifstream is(dir / "qmsv_a.wav", std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(is), {});
  }
  bytes[22] = 2;
  io::WriteFileAtomic(dir / "qmsv_stereo.wav", bytes);
  try {
    ReadAudio(dir / "qmsv_stereo.wav");
    FAIL("stereo accepted");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("unsupported channel count") != std::string::npos);
  }
  io::WriteFileAtomic(dir / "qmsv_junk.wav", "not audio at all");
  CHECK_THROWS_AS(ReadAudio(dir / "qmsv_junk.wav"), IoError);
  CHECK_THROWS_AS(ReadAudio(dir / "qmsv_missing.wav"), IoError);
  for (const char* f : {"qmsv_a.wav", "qmsv_stereo.wav", "qmsv_junk.wav"})
    fs::remove(dir / f);
}

TEST_CASE("feature files round trip") {
  FeatureMatrix f = ActiveFeatures(7, 57);
  f.cmvn_applied = true;
  const fs::path path = fs::temp_directory_path() / "qmsv_f.feat";
  WriteFeatures(path, f);
  const FeatureMatrix r = ReadFeatures(path);
  CHECK(r.frames == f.frames);
  CHECK(r.vad_applied);
  CHECK(r.cmvn_applied);
  fs::remove(path);
}

TEST_CASE("configuration parsing and validation") {
  const auto kv = io::KeyValueFile::Parse("n_filters = 30\nvad_energy_quantile = 0.5\n");
  const FrontendConfig c = FrontendConfig::FromKeyValue(kv);
  CHECK(c.n_filters == 30);
  CHECK(c.vad_energy_quantile == 0.5);
  CHECK_THROWS_AS(FrontendConfig::FromKeyValue(io::KeyValueFile::Parse("bogus = 1\n")),
                  ArgumentError);
  FrontendConfig bad;
  bad.frame_shift_s = 0.03;
  CHECK_THROWS_AS(bad.Validate(), ArgumentError);
}
