// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

namespace stemfit::dsp {

inline constexpr std::size_t kPatchSize = 16;
inline constexpr std::size_t kPatchDim = kPatchSize * kPatchSize;
inline constexpr double kDefaultSilenceDb = -48.0;

// Mono samples in [-1, 1].
struct AudioChunk {
  std::vector<float> samples;
  int sample_rate = 16000;

  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

struct MelConfig {
  int sample_rate = 16000;
  std::size_t n_mels = 80;
  double window_seconds = 0.025;
  double hop_seconds = 0.010;
  double log_floor = 1e-10;

  std::size_t window_samples() const;
  std::size_t hop_samples() const;
  // Smallest power of two holding one window.
  std::size_t n_fft() const;
};

// Row-major [n_mels x n_frames] grid of natural-log mel energies.
struct LogMelSpectrogram {
  std::size_t n_mels = 0;
  std::size_t n_frames = 0;
  std::vector<float> values;

  float at(std::size_t mel, std::size_t frame) const { return values[mel * n_frames + frame]; }
};

// HTK mel scale.
double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Triangular filterbank: n_mels filters with unit peaks, HTK scale on
// [0, Nyquist]. weights is row-major [n_mels x (n_fft/2 + 1)].
struct MelFilterbank {
  std::size_t n_mels = 0;
  std::size_t n_bins = 0;
  std::vector<double> weights;
  std::vector<double> center_hz;  // peak frequency of each filter
};

MelFilterbank make_mel_filterbank(const MelConfig& cfg);

// Log-mel frontend: Hann window, centered frames with reflect padding, power
// spectrum, mel filterbank, ln(max(x, floor)). Frame count is exactly
// samples / hop. Holds the FFT plan, so build once and reuse.
class MelFrontend {
 public:
  explicit MelFrontend(MelConfig cfg = {});
  ~MelFrontend();
  MelFrontend(const MelFrontend&) = delete;
  MelFrontend& operator=(const MelFrontend&) = delete;

  LogMelSpectrogram operator()(const AudioChunk& chunk) const;

  const MelConfig& config() const noexcept { return cfg_; }
  const MelFilterbank& filterbank() const noexcept { return bank_; }

 private:
  struct Plan;
  MelConfig cfg_;
  MelFilterbank bank_;
  std::vector<float> window_;  // n_fft long, window centered, zeros outside
  // Sparse filter rows: first bin and weights per filter.
  std::vector<std::size_t> filter_start_;
  std::vector<std::vector<float>> filter_weights_;
  std::unique_ptr<Plan> plan_;
};

// One-shot convenience wrapper around MelFrontend.
LogMelSpectrogram log_mel(const AudioChunk& chunk, const MelConfig& cfg = {});

// K flattened 16x16 tiles in frequency-major raster order: patch index
// f * n_time_patches + t; inside a tile, value (i, j) sits at i * 16 + j
// with i the mel offset and j the frame offset.
struct PatchSequence {
  std::vector<float> patches;  // [K x 256]
  std::size_t n_freq_patches = 0;
  std::size_t n_time_patches = 0;
  std::size_t n_mels = 0;
  std::size_t n_frames = 0;  // before time padding

  std::size_t size() const { return n_freq_patches * n_time_patches; }
  std::span<const float> patch(std::size_t k) const {
    return std::span(patches).subspan(k * kPatchDim, kPatchDim);
  }
};

// n_mels must be a multiple of 16; the time axis is padded with `pad_value`
// up to the next multiple of 16.
PatchSequence patchify(const LogMelSpectrogram& lms, float pad_value);
PatchSequence patchify(const LogMelSpectrogram& lms);  // pads with ln(1e-10)
LogMelSpectrogram unpatchify(const PatchSequence& seq);

double rms(std::span<const float> samples);
// 20 log10(rms); -inf for digital silence.
double rms_dbfs(std::span<const float> samples);
bool is_silent(std::span<const float> samples, double threshold_db = kDefaultSilenceDb);
inline bool is_silent(const AudioChunk& chunk, double threshold_db = kDefaultSilenceDb) {
  return is_silent(chunk.samples, threshold_db);
}

// PCM 16-bit or IEEE float 32-bit; channels are averaged to mono.
AudioChunk read_wav(const std::filesystem::path& path);
// Mono 16-bit PCM.
void write_wav(const std::filesystem::path& path, const AudioChunk& chunk);

}  // namespace stemfit::dsp
