// SPDX-License-Identifier: Apache-2.0
#include "stemfit/dsp/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <mutex>
#include <numbers>
#include <string>

#include <fftw3.h>

#include "stemfit/common/error.hpp"

namespace stemfit::dsp {

namespace {

// The FFTW planner is not thread-safe; execution on fresh buffers is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwDeleter {
  void operator()(void* p) const { fftwf_free(p); }
};

std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
  i %= period;
  if (i < 0) i += period;
  if (i >= static_cast<std::ptrdiff_t>(n)) i = period - i;
  return static_cast<std::size_t>(i);
}

}  // namespace

std::size_t MelConfig::window_samples() const {
  return static_cast<std::size_t>(std::llround(window_seconds * sample_rate));
}

std::size_t MelConfig::hop_samples() const {
  return static_cast<std::size_t>(std::llround(hop_seconds * sample_rate));
}

std::size_t MelConfig::n_fft() const {
  std::size_t n = 1;
  while (n < window_samples()) n <<= 1;
  return n;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

MelFilterbank make_mel_filterbank(const MelConfig& cfg) {
  MelFilterbank fb;
  fb.n_mels = cfg.n_mels;
  const std::size_t n_fft = cfg.n_fft();
  fb.n_bins = n_fft / 2 + 1;
  const double nyquist = cfg.sample_rate / 2.0;
  const double mel_max = hz_to_mel(nyquist);
  std::vector<double> edges(cfg.n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(mel_max * static_cast<double>(i) / static_cast<double>(cfg.n_mels + 1));
  }
  fb.weights.assign(fb.n_mels * fb.n_bins, 0.0);
  fb.center_hz.resize(fb.n_mels);
  for (std::size_t m = 0; m < fb.n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    fb.center_hz[m] = mid;
    for (std::size_t k = 0; k < fb.n_bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / static_cast<double>(n_fft);
      const double up = (f - lo) / (mid - lo);
      const double down = (hi - f) / (hi - mid);
      fb.weights[m * fb.n_bins + k] = std::max(0.0, std::min(up, down));
    }
  }
  return fb;
}

struct MelFrontend::Plan {
  fftwf_plan plan = nullptr;
  std::size_t n_fft = 0;
  ~Plan() {
    if (plan != nullptr) {
      std::lock_guard lock(planner_mutex());
      fftwf_destroy_plan(plan);
    }
  }
};

MelFrontend::MelFrontend(MelConfig cfg)
    : cfg_(cfg), bank_(make_mel_filterbank(cfg)), plan_(std::make_unique<Plan>()) {
  const std::size_t n_fft = cfg_.n_fft();
  const std::size_t win = cfg_.window_samples();
  const std::size_t hop = cfg_.hop_samples();
  if (win == 0 || hop == 0 || cfg_.n_mels == 0) {
    throw std::invalid_argument("mel frontend: window, hop and n_mels must be positive");
  }
  window_.assign(n_fft, 0.0f);
  const std::size_t offset = (n_fft - win) / 2;
  for (std::size_t i = 0; i < win; ++i) {
    // periodic Hann
    window_[offset + i] = static_cast<float>(
        0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(win)));
  }
  filter_start_.resize(bank_.n_mels);
  filter_weights_.resize(bank_.n_mels);
  for (std::size_t m = 0; m < bank_.n_mels; ++m) {
    const double* row = bank_.weights.data() + m * bank_.n_bins;
    std::size_t first = bank_.n_bins, last = 0;
    for (std::size_t k = 0; k < bank_.n_bins; ++k) {
      if (row[k] > 0.0) {
        first = std::min(first, k);
        last = k;
      }
    }
    if (first == bank_.n_bins) {
      filter_start_[m] = 0;
      continue;  // narrower than one bin: always floored
    }
    filter_start_[m] = first;
    for (std::size_t k = first; k <= last; ++k) filter_weights_[m].push_back(static_cast<float>(row[k]));
  }

  plan_->n_fft = n_fft;
  std::unique_ptr<float, FftwDeleter> in(fftwf_alloc_real(n_fft));
  std::unique_ptr<fftwf_complex, FftwDeleter> out(fftwf_alloc_complex(n_fft / 2 + 1));
  std::lock_guard lock(planner_mutex());
  plan_->plan = fftwf_plan_dft_r2c_1d(static_cast<int>(n_fft), in.get(), out.get(), FFTW_ESTIMATE);
  if (plan_->plan == nullptr) throw std::runtime_error("mel frontend: FFT planning failed");
}

MelFrontend::~MelFrontend() = default;

LogMelSpectrogram MelFrontend::operator()(const AudioChunk& chunk) const {
  const std::size_t n = chunk.samples.size();
  if (n == 0) throw std::invalid_argument("log_mel: empty audio");
  if (chunk.sample_rate != cfg_.sample_rate) {
    throw std::invalid_argument("log_mel: chunk sample rate " + std::to_string(chunk.sample_rate) +
                                " differs from frontend rate " + std::to_string(cfg_.sample_rate));
  }
  const std::size_t n_fft = plan_->n_fft;
  const std::size_t hop = cfg_.hop_samples();
  if (n < cfg_.window_samples()) {
    throw std::invalid_argument("log_mel: chunk shorter than one analysis window");
  }
  const std::size_t n_frames = n / hop;
  const std::size_t n_bins = n_fft / 2 + 1;
  const auto floor = static_cast<float>(cfg_.log_floor);

  LogMelSpectrogram lms;
  lms.n_mels = cfg_.n_mels;
  lms.n_frames = n_frames;
  lms.values.assign(lms.n_mels * n_frames, 0.0f);

  std::unique_ptr<float, FftwDeleter> in(fftwf_alloc_real(n_fft));
  std::unique_ptr<fftwf_complex, FftwDeleter> out(fftwf_alloc_complex(n_bins));
  std::vector<float> power(n_bins);
  const float* x = chunk.samples.data();
  const auto half = static_cast<std::ptrdiff_t>(n_fft / 2);
  for (std::size_t t = 0; t < n_frames; ++t) {
    const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(t * hop) - half;
    float* buf = in.get();
    if (start >= 0 && start + static_cast<std::ptrdiff_t>(n_fft) <= static_cast<std::ptrdiff_t>(n)) {
      for (std::size_t j = 0; j < n_fft; ++j) buf[j] = x[start + static_cast<std::ptrdiff_t>(j)] * window_[j];
    } else {
      for (std::size_t j = 0; j < n_fft; ++j) {
        buf[j] = x[reflect_index(start + static_cast<std::ptrdiff_t>(j), n)] * window_[j];
      }
    }
    fftwf_execute_dft_r2c(plan_->plan, buf, out.get());
    const fftwf_complex* bins = out.get();
    for (std::size_t k = 0; k < n_bins; ++k) power[k] = bins[k][0] * bins[k][0] + bins[k][1] * bins[k][1];
    for (std::size_t m = 0; m < lms.n_mels; ++m) {
      const auto& w = filter_weights_[m];
      const float* p = power.data() + filter_start_[m];
      float e = 0.0f;
      for (std::size_t i = 0; i < w.size(); ++i) e += w[i] * p[i];
      lms.values[m * n_frames + t] = std::log(std::max(e, floor));
    }
  }
  return lms;
}

LogMelSpectrogram log_mel(const AudioChunk& chunk, const MelConfig& cfg) {
  return MelFrontend(cfg)(chunk);
}

PatchSequence patchify(const LogMelSpectrogram& lms) {
  return patchify(lms, static_cast<float>(std::log(1e-10)));
}

PatchSequence patchify(const LogMelSpectrogram& lms, float pad_value) {
  if (lms.n_mels == 0 || lms.n_mels % kPatchSize != 0) {
    throw ShapeError("patchify: n_mels " + std::to_string(lms.n_mels) + " is not a multiple of 16");
  }
  if (lms.n_frames == 0) throw ShapeError("patchify: no frames");
  PatchSequence seq;
  seq.n_mels = lms.n_mels;
  seq.n_frames = lms.n_frames;
  seq.n_freq_patches = lms.n_mels / kPatchSize;
  seq.n_time_patches = (lms.n_frames + kPatchSize - 1) / kPatchSize;
  seq.patches.assign(seq.size() * kPatchDim, pad_value);
  for (std::size_t f = 0; f < seq.n_freq_patches; ++f) {
    for (std::size_t t = 0; t < seq.n_time_patches; ++t) {
      float* dst = seq.patches.data() + (f * seq.n_time_patches + t) * kPatchDim;
      for (std::size_t i = 0; i < kPatchSize; ++i) {
        const std::size_t mel = f * kPatchSize + i;
        for (std::size_t j = 0; j < kPatchSize; ++j) {
          const std::size_t frame = t * kPatchSize + j;
          if (frame < lms.n_frames) dst[i * kPatchSize + j] = lms.at(mel, frame);
        }
      }
    }
  }
  return seq;
}

LogMelSpectrogram unpatchify(const PatchSequence& seq) {
  if (seq.patches.size() != seq.size() * kPatchDim) {
    throw ShapeError("unpatchify: payload size does not match the patch grid");
  }
  LogMelSpectrogram lms;
  lms.n_mels = seq.n_freq_patches * kPatchSize;
  lms.n_frames = seq.n_frames != 0 ? seq.n_frames : seq.n_time_patches * kPatchSize;
  lms.values.assign(lms.n_mels * lms.n_frames, 0.0f);
  for (std::size_t f = 0; f < seq.n_freq_patches; ++f) {
    for (std::size_t t = 0; t < seq.n_time_patches; ++t) {
      const float* src = seq.patches.data() + (f * seq.n_time_patches + t) * kPatchDim;
      for (std::size_t i = 0; i < kPatchSize; ++i) {
        for (std::size_t j = 0; j < kPatchSize; ++j) {
          const std::size_t frame = t * kPatchSize + j;
          if (frame < lms.n_frames) {
            lms.values[(f * kPatchSize + i) * lms.n_frames + frame] = src[i * kPatchSize + j];
          }
        }
      }
    }
  }
  return lms;
}

double rms(std::span<const float> samples) {
  if (samples.empty()) return 0.0;
  double ss = 0.0;
  for (float s : samples) ss += static_cast<double>(s) * s;
  return std::sqrt(ss / static_cast<double>(samples.size()));
}

double rms_dbfs(std::span<const float> samples) {
  const double r = rms(samples);
  if (r <= 0.0) return -std::numeric_limits<double>::infinity();
  return 20.0 * std::log10(r);
}

bool is_silent(std::span<const float> samples, double threshold_db) {
  return rms_dbfs(samples) < threshold_db;
}

namespace {

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>(v >> 8));
}

}  // namespace

AudioChunk read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open WAV file '" + path.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* b = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::string where = "WAV '" + path.string() + "'";
  if (bytes.size() < 12 || std::memcmp(b, "RIFF", 4) != 0 || std::memcmp(b + 8, "WAVE", 4) != 0) {
    throw FormatError(where + ": not a RIFF/WAVE file");
  }
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t size = read_u32(b + pos + 4);
    const unsigned char* body = b + pos + 8;
    if (pos + 8 + size > bytes.size()) {
      throw FormatError(where + ": chunk at byte offset " + std::to_string(pos) + " is truncated");
    }
    if (std::memcmp(b + pos, "fmt ", 4) == 0 && size >= 16) {
      format = read_u16(body);
      channels = read_u16(body + 2);
      rate = read_u32(body + 4);
      bits = read_u16(body + 14);
      if (format == 0xFFFE && size >= 26) format = read_u16(body + 24);  // extensible
    } else if (std::memcmp(b + pos, "data", 4) == 0) {
      data = body;
      data_size = size;
    }
    pos += 8 + size + (size & 1u);
  }
  if (channels == 0 || rate == 0) throw FormatError(where + ": missing fmt chunk");
  if (data == nullptr) throw FormatError(where + ": missing data chunk");
  const bool pcm16 = format == 1 && bits == 16;
  const bool f32 = format == 3 && bits == 32;
  if (!pcm16 && !f32) {
    throw FormatError(where + ": unsupported encoding (format " + std::to_string(format) + ", " +
                      std::to_string(bits) + " bits)");
  }
  const std::size_t frame_bytes = static_cast<std::size_t>(channels) * (bits / 8);
  const std::size_t frames = data_size / frame_bytes;
  AudioChunk chunk;
  chunk.sample_rate = static_cast<int>(rate);
  chunk.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* s = data + i * frame_bytes + c * (bits / 8);
      if (pcm16) {
        acc += static_cast<std::int16_t>(read_u16(s)) / 32768.0;
      } else {
        float v;
        std::memcpy(&v, s, 4);
        acc += v;
      }
    }
    chunk.samples[i] = static_cast<float>(acc / channels);
  }
  return chunk;
}

void write_wav(const std::filesystem::path& path, const AudioChunk& chunk) {
  const auto n = static_cast<std::uint32_t>(chunk.samples.size());
  std::string out;
  out.reserve(44 + 2 * static_cast<std::size_t>(n));
  out += "RIFF";
  put_u32(out, 36 + 2 * n);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(chunk.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(chunk.sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out += "data";
  put_u32(out, 2 * n);
  for (float s : chunk.samples) {
    const double clamped = std::clamp(static_cast<double>(s), -1.0, 1.0);
    put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(clamped * 32767.0))));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write WAV file '" + path.string() + "'");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace stemfit::dsp
