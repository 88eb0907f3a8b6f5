// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "stemfit/corpus/corpus.hpp"

namespace stemfit::corpus {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr std::array<int, 7> kMajor = {0, 2, 4, 5, 7, 9, 11};

double midi_hz(double note) { return 440.0 * std::pow(2.0, (note - 69.0) / 12.0); }

// Semitone offset of a scale degree (may exceed one octave).
int degree_semitones(int degree) {
  const int oct = degree >= 0 ? degree / 7 : -((-degree + 6) / 7);
  const int d = degree - 7 * oct;
  return 12 * oct + kMajor[static_cast<std::size_t>(d)];
}

// Triad on scale degree `root`: semitone offsets root, third, fifth.
std::array<int, 3> triad(int root) {
  return {degree_semitones(root), degree_semitones(root + 2), degree_semitones(root + 4)};
}

struct Grid {
  double beat;       // seconds
  double bar;        // seconds
  std::size_t bars;  // bars needed to cover the stem
};

Grid grid_for(const TrackParams& p, std::size_t n, int sr) {
  Grid g;
  g.beat = 60.0 / p.tempo_bpm;
  g.bar = 4.0 * g.beat;
  const double total = static_cast<double>(n) / sr;
  g.bars = static_cast<std::size_t>(std::ceil(total / g.bar)) + 1;
  return g;
}

int chord_of_bar(const TrackParams& p, std::size_t bar) {
  if (p.progression.empty()) return 0;
  return p.progression[bar % p.progression.size()];
}

// Adds a harmonic tone starting at `t0` seconds. amp(k) gives the relative
// amplitude of harmonic k; env(t) the envelope. Harmonics above 0.45 sr are
// dropped so the result is band-limited.
template <class Amp, class Env>
void add_tone(std::vector<double>& out, int sr, double t0, double dur, double f0, int max_harm,
              Amp amp, Env env, double vibrato_depth = 0.0, double vibrato_hz = 5.5) {
  const auto start = static_cast<std::ptrdiff_t>(std::llround(t0 * sr));
  const auto len = static_cast<std::ptrdiff_t>(std::llround(dur * sr));
  const double nyq = 0.45 * sr;
  int harmonics = max_harm;
  while (harmonics > 1 && harmonics * f0 * (1.0 + vibrato_depth) > nyq) --harmonics;
  std::vector<double> amps(static_cast<std::size_t>(harmonics));
  for (int k = 1; k <= harmonics; ++k) amps[static_cast<std::size_t>(k - 1)] = amp(k);
  double phase = 0.0;
  for (std::ptrdiff_t i = 0; i < len; ++i) {
    const std::ptrdiff_t n = start + i;
    if (n < 0) continue;
    if (n >= static_cast<std::ptrdiff_t>(out.size())) break;
    const double t = static_cast<double>(i) / sr;
    const double e = env(t);
    double f = f0;
    if (vibrato_depth > 0.0) f *= 1.0 + vibrato_depth * std::sin(kTwoPi * vibrato_hz * t);
    double s = 0.0;
    for (int k = 1; k <= harmonics; ++k) s += amps[static_cast<std::size_t>(k - 1)] * std::sin(k * phase);
    out[static_cast<std::size_t>(n)] += e * s;
    phase += kTwoPi * f / sr;
    if (phase > kTwoPi * 1024.0) phase = std::fmod(phase, kTwoPi);
  }
}

// attack / release in seconds, exponential decay constant `decay` (<= 0: none)
auto adsr(double dur, double attack, double release, double decay) {
  return [=](double t) {
    double e = 1.0;
    if (attack > 0.0 && t < attack) e = t / attack;
    if (decay > 0.0) e *= std::exp(-t / decay);
    const double tail = dur - t;
    if (release > 0.0 && tail < release) e *= std::max(0.0, tail / release);
    return e;
  };
}

void drums(std::vector<double>& out, const std::string& inst, const TrackParams& p, int sr, Rng& rng) {
  const Grid g = grid_for(p, out.size(), sr);
  const double eighth = g.beat / 2.0;
  const bool electronic = inst.find("electronic") != std::string::npos;
  // One-bar loop on an eighth-note grid.
  std::array<bool, 8> kick{}, snare{}, hat{};
  kick[0] = true;
  for (int i = 1; i < 8; ++i) kick[static_cast<std::size_t>(i)] = (i != 2 && i != 6) && rng.bernoulli(0.3);
  snare[2] = snare[6] = true;
  for (auto& h : hat) h = rng.bernoulli(0.85);
  const double kick_decay = electronic ? 0.30 : 0.16;
  for (std::size_t bar = 0; bar < g.bars; ++bar) {
    for (int s = 0; s < 8; ++s) {
      const double t0 = bar * g.bar + s * eighth;
      const auto start = static_cast<std::size_t>(std::llround(t0 * sr));
      if (kick[static_cast<std::size_t>(s)]) {
        double phase = 0.0;
        for (std::size_t i = 0; i < static_cast<std::size_t>(0.4 * sr) && start + i < out.size(); ++i) {
          const double t = static_cast<double>(i) / sr;
          const double f = 48.0 + 90.0 * std::exp(-t / 0.03);
          phase += kTwoPi * f / sr;
          out[start + i] += 0.9 * std::exp(-t / kick_decay) * std::sin(phase);
        }
      }
      if (snare[static_cast<std::size_t>(s)]) {
        double prev = 0.0;
        for (std::size_t i = 0; i < static_cast<std::size_t>(0.25 * sr) && start + i < out.size(); ++i) {
          const double t = static_cast<double>(i) / sr;
          const double w = rng.uniform(-1.0, 1.0);
          const double hp = w - prev;
          prev = w;
          out[start + i] += 0.45 * std::exp(-t / 0.07) * hp + 0.3 * std::exp(-t / 0.04) * std::sin(kTwoPi * 185.0 * t);
        }
      }
      if (hat[static_cast<std::size_t>(s)]) {
        double prev = 0.0;
        const double decay = electronic ? 0.015 : 0.03;
        for (std::size_t i = 0; i < static_cast<std::size_t>(0.08 * sr) && start + i < out.size(); ++i) {
          const double t = static_cast<double>(i) / sr;
          const double w = rng.uniform(-1.0, 1.0);
          out[start + i] += 0.18 * std::exp(-t / decay) * (w - prev);
          prev = w;
        }
      }
    }
  }
}

void bass(std::vector<double>& out, const std::string& inst, const TrackParams& p, int sr, Rng& rng) {
  const Grid g = grid_for(p, out.size(), sr);
  const double eighth = g.beat / 2.0;
  // 0 rest, 1 root, 2 fifth, 3 octave
  std::array<int, 8> pattern{};
  pattern[0] = 1;
  for (std::size_t i = 1; i < 8; ++i) {
    const double u = rng.uniform();
    pattern[i] = u < 0.25 ? 0 : u < 0.65 ? 1 : u < 0.85 ? 2 : 3;
  }
  const bool synth = inst.find("synth") != std::string::npos;
  for (std::size_t bar = 0; bar < g.bars; ++bar) {
    const int root = degree_semitones(chord_of_bar(p, bar));
    for (std::size_t s = 0; s < 8; ++s) {
      if (pattern[s] == 0) continue;
      const int offset = pattern[s] == 1 ? 0 : pattern[s] == 2 ? 7 : 12;
      const double f0 = midi_hz(36 + p.key_pc + root + offset);
      const double dur = 0.9 * eighth;
      if (synth) {
        add_tone(out, sr, bar * g.bar + s * eighth, dur, f0, 14, [](int k) { return 0.5 / k; },
                 adsr(dur, 0.005, 0.02, 0.0));
      } else {
        add_tone(out, sr, bar * g.bar + s * eighth, dur, f0, 4,
                 [](int k) { return k == 1 ? 0.8 : k == 2 ? 0.35 : 0.12; }, adsr(dur, 0.004, 0.02, 0.25));
      }
    }
  }
}

void guitar(std::vector<double>& out, const std::string& inst, const TrackParams& p, int sr, Rng& rng) {
  const Grid g = grid_for(p, out.size(), sr);
  const double step = g.beat / 4.0;
  const bool acoustic = inst.find("acoustic") != std::string::npos;
  std::array<int, 16> pattern{};  // -1 rest, else chord-tone index 0..3
  for (auto& x : pattern) x = rng.bernoulli(0.2) ? -1 : static_cast<int>(rng.index(4));
  pattern[0] = 0;
  for (std::size_t bar = 0; bar < g.bars; ++bar) {
    const auto tri = triad(chord_of_bar(p, bar));
    for (std::size_t s = 0; s < 16; ++s) {
      if (pattern[s] < 0) continue;
      const int tone = pattern[s] == 3 ? tri[0] + 12 : tri[static_cast<std::size_t>(pattern[s])];
      const double f0 = midi_hz(52 + p.key_pc + tone);
      const double dur = 1.6 * step;
      if (acoustic) {
        add_tone(out, sr, bar * g.bar + s * step, dur, f0, 16,
                 [](int k) { return (k % 2 ? 1.0 : 0.5) / (k * k); }, adsr(dur, 0.002, 0.03, 0.12));
      } else {
        add_tone(out, sr, bar * g.bar + s * step, dur, f0, 24, [](int k) { return 0.35 / k; },
                 adsr(dur, 0.003, 0.03, 0.25));
      }
    }
  }
}

// Formant centre / bandwidth pairs for five vowels.
constexpr std::array<std::array<double, 4>, 5> kVowels = {{
    {800, 80, 1200, 90},   // a
    {500, 60, 1750, 100},  // e
    {300, 50, 2300, 120},  // i
    {450, 60, 850, 80},    // o
    {325, 50, 700, 70},    // u
}};

void vocals(std::vector<double>& out, const std::string& inst, const TrackParams& p, int sr, Rng& rng) {
  const Grid g = grid_for(p, out.size(), sr);
  const bool female = inst.find("female") != std::string::npos;
  const bool backing = inst.find("backing") != std::string::npos;
  const int base = female ? 64 : 52;
  int degree = 0;
  for (std::size_t bar = 0; bar < g.bars; ++bar) {
    const auto chord = chord_of_bar(p, bar);
    double t = 0.0;
    bool first = true;
    while (t < 4.0 - 1e-9) {
      const double len = rng.bernoulli(0.6) ? 1.0 : 2.0;
      const double beats = std::min(len, 4.0 - t);
      if (first) {
        degree = chord + 2 * static_cast<int>(rng.index(3));  // chord tone on the downbeat
      } else {
        degree += static_cast<int>(rng.integer(-2, 2));
        degree = std::clamp(degree, -3, 9);
      }
      first = false;
      if (!rng.bernoulli(0.15)) {
        const double dur = beats * g.beat * 0.92;
        const auto& v = kVowels[rng.index(kVowels.size())];
        auto voice = [&](int deg, double gain) {
          const double f0 = midi_hz(base + p.key_pc + degree_semitones(deg));
          auto amp = [f0, v, gain](int k) {
            const double f = k * f0;
            const double a1 = 1.0 / (1.0 + std::pow((f - v[0]) / v[1], 2.0));
            const double a2 = 0.6 / (1.0 + std::pow((f - v[2]) / v[3], 2.0));
            return gain * (a1 + a2 + 0.02) / std::sqrt(static_cast<double>(k));
          };
          add_tone(out, sr, bar * g.bar + t * g.beat, dur, f0, 40, amp, adsr(dur, 0.03, 0.06, 0.0), 0.006);
        };
        voice(degree, backing ? 0.6 : 1.0);
        if (backing) voice(degree + 2, 0.45);
      }
      t += beats;
    }
  }
}

void keys(std::vector<double>& out, const std::string& inst, const TrackParams& p, int sr, Rng& rng) {
  const Grid g = grid_for(p, out.size(), sr);
  const bool organ = inst.find("organ") != std::string::npos;
  std::array<bool, 8> hits{};  // eighth positions with a chord
  hits[0] = true;
  for (std::size_t i = 1; i < 8; ++i) hits[i] = rng.bernoulli(i % 2 == 0 ? 0.6 : 0.2);
  const double eighth = g.beat / 2.0;
  for (std::size_t bar = 0; bar < g.bars; ++bar) {
    const auto tri = triad(chord_of_bar(p, bar));
    for (std::size_t s = 0; s < 8; ++s) {
      if (!hits[s]) continue;
      std::size_t next = s + 1;
      while (next < 8 && !hits[next]) ++next;
      const double dur = organ ? (next - s) * eighth * 0.95 : 2.0 * eighth;
      for (int tone : tri) {
        const double f0 = midi_hz(60 + p.key_pc + tone);
        if (organ) {
          add_tone(out, sr, bar * g.bar + s * eighth, dur, f0, 8,
                   [](int k) { return (k == 1 || k == 2 || k == 4 || k == 8) ? 0.25 : k == 3 ? 0.15 : 0.0; },
                   adsr(dur, 0.01, 0.02, 0.0));
        } else {
          add_tone(out, sr, bar * g.bar + s * eighth, dur, f0, 10,
                   [](int k) { return 0.3 / std::pow(static_cast<double>(k), 1.5); }, adsr(dur, 0.002, 0.05, 0.35));
        }
      }
    }
  }
}

void strings(std::vector<double>& out, const std::string& inst, const TrackParams& p, int sr, Rng& rng) {
  const Grid g = grid_for(p, out.size(), sr);
  const bool cello = inst.find("cello") != std::string::npos;
  const int base = cello ? 43 : 67;
  // Half-note line on chord tones.
  for (std::size_t bar = 0; bar < g.bars; ++bar) {
    const auto tri = triad(chord_of_bar(p, bar));
    for (int half = 0; half < 2; ++half) {
      const int tone = tri[rng.index(3)];
      const double dur = 2.0 * g.beat * 0.97;
      add_tone(out, sr, bar * g.bar + half * 2.0 * g.beat, dur, midi_hz(base + p.key_pc + tone), 12,
               [](int k) { return 0.4 / (k * std::sqrt(static_cast<double>(k))); }, adsr(dur, 0.12, 0.12, 0.0),
               0.004, 5.0);
    }
  }
}

}  // namespace

const char* kind_name(StemKind kind) {
  switch (kind) {
    case StemKind::kDrums: return "drums";
    case StemKind::kBass: return "bass";
    case StemKind::kGuitar: return "guitar";
    case StemKind::kVocals: return "vocals";
    case StemKind::kPiano: return "piano";
    case StemKind::kStrings: return "strings";
  }
  return "?";
}

TrackParams draw_track_params(Rng& rng) {
  TrackParams p;
  p.tempo_bpm = std::round(rng.uniform(70.0, 140.0) * 100.0) / 100.0;
  p.key_pc = static_cast<int>(rng.index(12));
  static constexpr std::array<int, 4> kChoices = {0, 3, 4, 5};  // I IV V vi
  p.progression = {0};
  for (int i = 1; i < 4; ++i) p.progression.push_back(kChoices[rng.index(kChoices.size())]);
  return p;
}

std::vector<float> synthesize_stem(StemKind kind, const std::string& instrument, const TrackParams& params,
                                   std::size_t n_samples, int sample_rate, Rng& rng) {
  if (n_samples == 0) throw std::invalid_argument("synthesize_stem: zero length");
  std::vector<double> buf(n_samples, 0.0);
  switch (kind) {
    case StemKind::kDrums: drums(buf, instrument, params, sample_rate, rng); break;
    case StemKind::kBass: bass(buf, instrument, params, sample_rate, rng); break;
    case StemKind::kGuitar: guitar(buf, instrument, params, sample_rate, rng); break;
    case StemKind::kVocals: vocals(buf, instrument, params, sample_rate, rng); break;
    case StemKind::kPiano: keys(buf, instrument, params, sample_rate, rng); break;
    case StemKind::kStrings: strings(buf, instrument, params, sample_rate, rng); break;
  }
  double ss = 0.0, peak = 0.0;
  for (double x : buf) {
    ss += x * x;
    peak = std::max(peak, std::abs(x));
  }
  const double r = std::sqrt(ss / static_cast<double>(n_samples));
  // -20 dBFS RMS, peak at most 0.9
  const double gain = r > 0.0 ? std::min(0.1 / r, 0.9 / peak) : 0.0;
  std::vector<float> out(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) out[i] = static_cast<float>(buf[i] * gain);
  return out;
}

}  // namespace stemfit::corpus
