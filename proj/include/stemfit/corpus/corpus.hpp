// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stemfit/common/rng.hpp"
#include "stemfit/dsp/dsp.hpp"

namespace stemfit::corpus {

struct StemRecord {
  std::string stem_id;
  std::string audio;  // path relative to the corpus root
  std::vector<std::string> labels;  // root-to-leaf taxonomy path, possibly empty
};

struct TrackManifest {
  std::string track_id;
  double tempo_bpm = 120.0;
  int key_pc = 0;
  std::vector<StemRecord> stems;
};

struct Corpus {
  std::filesystem::path root;
  int sample_rate = 16000;
  double duration_seconds = 0.0;
  std::uint64_t seed = 0;
  std::vector<TrackManifest> tracks;
};

inline constexpr const char* kManifestName = "manifest.json";

// Instrument used for the index and the evaluation taxonomy: the second
// level of the path, else the first, else "unlabeled". Category: the first.
std::string instrument_of(const StemRecord& s);
std::string category_of(const StemRecord& s);

// manifest.json inside `root` (or `root` itself if it names a file).
Corpus load_corpus(const std::filesystem::path& root);
void save_manifest(const Corpus& corpus, const std::filesystem::path& path);
std::string manifest_json(const Corpus& corpus);

// ---- synthesis --------------------------------------------------------

enum class StemKind { kDrums, kBass, kGuitar, kVocals, kPiano, kStrings };
const char* kind_name(StemKind kind);

// Track-level musical parameters shared by every stem of a track.
struct TrackParams {
  double tempo_bpm = 120.0;
  int key_pc = 0;
  std::vector<int> progression;  // scale degree (0..6) of each bar's chord
};

TrackParams draw_track_params(Rng& rng);

// Deterministic synthesiser: `instrument` picks the timbre variant for the
// kind (e.g. "synth bass" vs "bass guitar"). Output is RMS-normalised.
std::vector<float> synthesize_stem(StemKind kind, const std::string& instrument,
                                   const TrackParams& params, std::size_t n_samples,
                                   int sample_rate, Rng& rng);

struct GenerateOptions {
  std::size_t n_tracks = 60;
  std::size_t min_stems = 4;
  std::size_t max_stems = 6;
  double duration_seconds = 8.0;
  int sample_rate = 16000;
  std::uint64_t seed = 0;
  double unlabeled_fraction = 0.1;
  bool overwrite = false;
  std::size_t workers = 1;
};

// Writes <out>/manifest.json and <out>/<track>/<stem>.wav. Refuses a
// non-empty directory unless overwrite is set.
Corpus generate_corpus(const GenerateOptions& opt, const std::filesystem::path& out);

// ---- audio access and pair sampling ----------------------------------

struct LoadedTrack {
  const TrackManifest* manifest = nullptr;
  std::vector<dsp::AudioChunk> stems;  // same order as manifest->stems
};

// Every stem decoded into memory; shapes are validated.
class AudioCorpus {
 public:
  explicit AudioCorpus(Corpus corpus);
  const Corpus& corpus() const noexcept { return corpus_; }
  const std::vector<LoadedTrack>& tracks() const noexcept { return tracks_; }
  const LoadedTrack& track(std::string_view track_id) const;
  int sample_rate() const noexcept { return corpus_.sample_rate; }

 private:
  Corpus corpus_;
  std::vector<LoadedTrack> tracks_;
};

// Sample-wise sum clamped to [-1, 1].
dsp::AudioChunk mix(std::span<const dsp::AudioChunk> stems);

struct PairProvenance {
  std::string track_id;
  std::string target_stem;
  std::vector<std::string> context_stems;
  std::size_t offset = 0;  // samples
  std::size_t length = 0;  // samples
  std::string label;
};

struct TrainingPair {
  dsp::AudioChunk context;
  dsp::AudioChunk target;
  std::string label;
  PairProvenance provenance;
};

struct SamplerOptions {
  double chunk_seconds = 8.0;
  double silence_db = dsp::kDefaultSilenceDb;
  std::size_t max_tries = 32;
  double inclusion_probability = 0.5;
};

// Uniform target stem; every other stem joins the context independently with
// the inclusion probability (redrawn while empty); uniform offset; up to
// max_tries draws until both chunks are non-silent; label drawn uniformly
// from the target's path, or "music" when the path is empty. Returns nullopt
// (and logs a warning) when no valid pair is found.
std::optional<TrainingPair> sample_pair(const LoadedTrack& track, Rng& rng, const SamplerOptions& opt);

// Rebuilds the exact pair described by a provenance record.
TrainingPair reconstruct_pair(const AudioCorpus& audio, const PairProvenance& p);

// First offset (on a hop grid of chunk/4) whose chunk is non-silent.
std::optional<std::size_t> first_non_silent_offset(const dsp::AudioChunk& audio, std::size_t length,
                                                   double silence_db = dsp::kDefaultSilenceDb);

dsp::AudioChunk slice(const dsp::AudioChunk& audio, std::size_t offset, std::size_t length);

}  // namespace stemfit::corpus
