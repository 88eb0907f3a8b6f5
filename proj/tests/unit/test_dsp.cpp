#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>

#include "stemfit/common/error.hpp"
#include "stemfit/common/rng.hpp"
#include "stemfit/dsp/dsp.hpp"

using namespace stemfit::dsp;

namespace {

AudioChunk sine(double hz, double seconds, double amplitude = 1.0, int rate = 16000) {
  AudioChunk c;
  c.sample_rate = rate;
  c.samples.resize(static_cast<std::size_t>(std::llround(seconds * rate)));
  for (std::size_t i = 0; i < c.samples.size(); ++i) {
    c.samples[i] = static_cast<float>(amplitude * std::sin(2.0 * std::numbers::pi * hz * i / rate));
  }
  return c;
}

AudioChunk noise(std::size_t n, std::uint64_t seed, double amplitude = 0.3) {
  stemfit::Rng rng(seed);
  AudioChunk c;
  c.samples.resize(n);
  for (auto& s : c.samples) s = static_cast<float>(amplitude * rng.uniform(-1.0, 1.0));
  return c;
}

}  // namespace

TEST_CASE("8 s of silence gives an 80x800 grid at the log floor") {
  AudioChunk z;
  z.samples.assign(8 * 16000, 0.0f);
  const auto lms = log_mel(z);
  CHECK(lms.n_mels == 80);
  CHECK(lms.n_frames == 800);
  const float floor = std::log(1e-10f);
  for (float v : lms.values) REQUIRE(v == doctest::Approx(floor).epsilon(1e-6));
}

TEST_CASE("analysis sizes derive from seconds") {
  MelConfig cfg;
  CHECK(cfg.window_samples() == 400);
  CHECK(cfg.hop_samples() == 160);
  CHECK(cfg.n_fft() == 512);
  cfg.sample_rate = 8000;
  CHECK(cfg.window_samples() == 200);
  CHECK(cfg.n_fft() == 256);
}

TEST_CASE("440 Hz peaks in the filter bracketing 440 Hz") {
  // Oracle: HTK centers recomputed from the formula, independent of the library.
  const double mel_max = 2595.0 * std::log10(1.0 + 8000.0 / 700.0);
  std::vector<double> centers(80);
  for (int m = 0; m < 80; ++m) {
    const double mel = mel_max * (m + 1) / 81.0;
    centers[m] = 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
  }
  int below = -1;
  for (int m = 0; m < 80; ++m) {
    if (centers[m] <= 440.0) below = m;
  }
  REQUIRE(below >= 0);
  REQUIRE(centers[below + 1] > 440.0);

  MelFrontend fe;
  for (int m = 0; m < 80; ++m) CHECK(fe.filterbank().center_hz[m] == doctest::Approx(centers[m]).epsilon(1e-12));

  const auto lms = fe(sine(440.0, 1.0, 0.5));
  for (std::size_t t = 2; t + 2 < lms.n_frames; ++t) {
    int arg = 0;
    for (int m = 1; m < 80; ++m) {
      if (lms.at(m, t) > lms.at(arg, t)) arg = m;
    }
    CHECK((arg == below || arg == below + 1));
  }
}

TEST_CASE("log_mel rejects empty audio and mismatched rates") {
  CHECK_THROWS_AS(log_mel(AudioChunk{}), std::invalid_argument);
  auto c = sine(100, 0.5);
  c.sample_rate = 22050;
  CHECK_THROWS_AS(log_mel(c), std::invalid_argument);
}

TEST_CASE("one-hop shift moves columns by one") {
  const auto base = noise(16000 + 160, 3);
  AudioChunk a, b;
  a.samples.assign(base.samples.begin() + 160, base.samples.end());
  b.samples.assign(base.samples.begin(), base.samples.end() - 160);
  MelFrontend fe;
  const auto la = fe(a);
  const auto lb = fe(b);
  // a[n] = b[n + hop], so column t of a matches column t + 1 of b.
  double worst = 0.0;
  for (std::size_t t = 3; t + 5 < la.n_frames; ++t) {
    for (std::size_t m = 0; m < 80; ++m) worst = std::max(worst, double(std::abs(la.at(m, t) - lb.at(m, t + 1))));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("doubling amplitude adds ln 4 above the floor") {
  const auto x = noise(8000, 11);
  auto y = x;
  for (auto& s : y.samples) s *= 2.0f;
  MelFrontend fe;
  const auto lx = fe(x);
  const auto ly = fe(y);
  const float floor = std::log(1e-10f);
  std::size_t compared = 0;
  for (std::size_t i = 0; i < lx.values.size(); ++i) {
    if (lx.values[i] > floor + 1.0f) {
      CHECK(ly.values[i] - lx.values[i] == doctest::Approx(std::log(4.0)).epsilon(1e-4));
      ++compared;
    }
  }
  CHECK(compared > lx.values.size() / 2);
}

TEST_CASE("patch grid arithmetic") {
  LogMelSpectrogram lms{80, 800, std::vector<float>(80 * 800, 0.0f)};
  auto seq = patchify(lms);
  CHECK(seq.size() == 250);
  CHECK(seq.n_freq_patches == 5);
  CHECK(seq.n_time_patches == 50);
  CHECK(seq.patches.size() == 250 * 256);

  LogMelSpectrogram small{80, 160, std::vector<float>(80 * 160, 1.5f)};
  auto s2 = patchify(small);
  CHECK(s2.size() == 50);
  for (std::size_t k = 1; k < s2.size(); ++k) {
    CHECK(std::equal(s2.patch(0).begin(), s2.patch(0).end(), s2.patch(k).begin()));
  }
}

TEST_CASE("patch layout is frequency-major with mel-major tiles") {
  LogMelSpectrogram lms{32, 40, {}};
  lms.values.resize(32 * 40);
  for (std::size_t m = 0; m < 32; ++m)
    for (std::size_t t = 0; t < 40; ++t) lms.values[m * 40 + t] = float(m * 1000 + t);
  const auto seq = patchify(lms, -7.0f);
  REQUIRE(seq.n_time_patches == 3);
  // patch f=1, t=2, tile (i=3, j=4) -> mel 19, frame 36
  CHECK(seq.patch(1 * 3 + 2)[3 * 16 + 4] == 19036.0f);
  // frame 40 and beyond are padding
  CHECK(seq.patch(2)[0 * 16 + 8] == -7.0f);
  CHECK(seq.patch(2)[0 * 16 + 7] == 39.0f);
}

TEST_CASE("unpatchify(patchify(x)) is bit-exact, padded or not") {
  for (std::size_t frames : {800u, 803u, 17u}) {
    const auto a = noise(frames * 80, frames);
    LogMelSpectrogram lms{80, frames, a.samples};
    const auto back = unpatchify(patchify(lms));
    CHECK(back.n_frames == frames);
    CHECK(back.values == lms.values);
  }
  LogMelSpectrogram bad{70, 16, std::vector<float>(70 * 16)};
  CHECK_THROWS_AS(patchify(bad), stemfit::ShapeError);
}

TEST_CASE("silence detection") {
  AudioChunk zeros;
  zeros.samples.assign(16000, 0.0f);
  CHECK(is_silent(zeros));
  CHECK_FALSE(is_silent(sine(440, 1.0, 1.0)));
  // RMS of a sine is A/sqrt(2): -60 dB amplitude is about -63 dBFS.
  const double amp = std::pow(10.0, -60.0 / 20.0);
  const auto quiet = sine(440, 1.0, amp);
  CHECK(rms_dbfs(quiet.samples) == doctest::Approx(-60.0 - 20.0 * std::log10(std::sqrt(2.0))).epsilon(1e-3));
  CHECK(is_silent(quiet));
  CHECK_FALSE(is_silent(quiet, -70.0));
}

TEST_CASE("WAV write/read round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "stemfit_test_dsp";
  std::filesystem::create_directories(dir);
  const auto path = dir / "x.wav";
  const auto x = noise(1234, 99, 0.9);
  write_wav(path, x);
  const auto y = read_wav(path);
  REQUIRE(y.samples.size() == x.samples.size());
  CHECK(y.sample_rate == 16000);
  for (std::size_t i = 0; i < x.samples.size(); ++i) {
    const float q = static_cast<float>(std::lround(x.samples[i] * 32767.0) / 32768.0);
    REQUIRE(y.samples[i] == q);
  }
  CHECK_THROWS_AS(read_wav(dir / "missing.wav"), stemfit::IoError);
  std::filesystem::remove_all(dir);
}
