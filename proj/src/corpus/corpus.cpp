// SPDX-License-Identifier: Apache-2.0
#include "stemfit/corpus/corpus.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "stemfit/common/error.hpp"
#include "stemfit/common/log.hpp"

namespace stemfit::corpus {

namespace fs = std::filesystem;
using nlohmann::json;

std::string instrument_of(const StemRecord& s) {
  if (s.labels.size() >= 2) return s.labels[1];
  if (!s.labels.empty()) return s.labels[0];
  return "unlabeled";
}

std::string category_of(const StemRecord& s) {
  return s.labels.empty() ? std::string("unlabeled") : s.labels[0];
}

std::string manifest_json(const Corpus& corpus) {
  json tracks = json::array();
  for (const auto& t : corpus.tracks) {
    json stems = json::array();
    for (const auto& s : t.stems) {
      stems.push_back({{"stem_id", s.stem_id}, {"audio", s.audio}, {"labels", s.labels}});
    }
    tracks.push_back({{"track_id", t.track_id}, {"tempo_bpm", t.tempo_bpm}, {"key_pc", t.key_pc}, {"stems", stems}});
  }
  json doc = {{"format", "stemfit-corpus"},
              {"version", 1},
              {"sample_rate", corpus.sample_rate},
              {"duration_s", corpus.duration_seconds},
              {"seed", corpus.seed},
              {"tracks", tracks}};
  return doc.dump(2) + "\n";
}

void save_manifest(const Corpus& corpus, const fs::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write manifest " + path.string());
  f << manifest_json(corpus);
  if (!f) throw IoError("short write on manifest " + path.string());
}

Corpus load_corpus(const fs::path& root) {
  const fs::path file = fs::is_directory(root) ? root / kManifestName : root;
  std::ifstream f(file, std::ios::binary);
  if (!f) throw IoError("cannot open manifest " + file.string());
  json doc;
  try {
    doc = json::parse(f);
  } catch (const json::parse_error& e) {
    throw FormatError("manifest " + file.string() + ": " + e.what());
  }
  Corpus c;
  c.root = file.parent_path();
  try {
    c.sample_rate = doc.value("sample_rate", 16000);
    c.duration_seconds = doc.value("duration_s", 0.0);
    c.seed = doc.value("seed", std::uint64_t{0});
    for (const auto& jt : doc.at("tracks")) {
      TrackManifest t;
      t.track_id = jt.at("track_id").get<std::string>();
      t.tempo_bpm = jt.value("tempo_bpm", 120.0);
      t.key_pc = jt.value("key_pc", 0);
      for (const auto& js : jt.at("stems")) {
        StemRecord s;
        s.stem_id = js.at("stem_id").get<std::string>();
        s.audio = js.at("audio").get<std::string>();
        if (js.contains("labels")) s.labels = js.at("labels").get<std::vector<std::string>>();
        t.stems.push_back(std::move(s));
      }
      if (t.stems.size() < 2) throw FormatError("track " + t.track_id + " has fewer than 2 stems");
      c.tracks.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw FormatError("manifest " + file.string() + ": " + e.what());
  }
  return c;
}

// ---- generation ------------------------------------------------------

namespace {

struct KindInfo {
  StemKind kind;
  const char* category;
  // instrument name and its variants, as in the default taxonomy
  std::vector<std::pair<const char*, std::vector<const char*>>> instruments;
};

const std::vector<KindInfo>& kinds() {
  static const std::vector<KindInfo> k = {
      {StemKind::kDrums, "drums",
       {{"drum kit", {"acoustic drum kit", "electronic drum kit"}}}},
      {StemKind::kBass, "bass",
       {{"bass guitar", {"electric bass guitar", "fretless bass guitar"}},
        {"synth bass", {"analog synth bass", "sub bass"}}}},
      {StemKind::kGuitar, "guitar",
       {{"electric guitar", {"lead electric guitar", "rhythm electric guitar"}},
        {"acoustic guitar", {"strummed acoustic guitar", "fingerpicked acoustic guitar"}}}},
      {StemKind::kVocals, "vocals",
       {{"lead vocals", {"male lead vocals", "female lead vocals"}},
        {"backing vocals", {"harmony vocals", "choir"}}}},
      {StemKind::kPiano, "keys",
       {{"piano", {"grand piano", "electric piano"}}, {"organ", {"hammond organ", "church organ"}}}},
      {StemKind::kStrings, "strings",
       {{"violin", {"solo violin", "violin section"}}, {"cello", {"solo cello", "cello section"}}}},
  };
  return k;
}

struct GeneratedTrack {
  TrackManifest manifest;
  std::vector<std::vector<float>> audio;
};

GeneratedTrack generate_track(const GenerateOptions& opt, std::size_t index) {
  Rng rng = Rng(opt.seed).stream(index);
  GeneratedTrack out;
  char id[16];
  std::snprintf(id, sizeof id, "t%03zu", index);
  out.manifest.track_id = id;
  const TrackParams params = draw_track_params(rng);
  out.manifest.tempo_bpm = params.tempo_bpm;
  out.manifest.key_pc = params.key_pc;

  const std::size_t n_stems = static_cast<std::size_t>(
      rng.integer(static_cast<std::int64_t>(opt.min_stems), static_cast<std::int64_t>(opt.max_stems)));
  // Base kinds first, extras fill up to six.
  const std::size_t n_samples = static_cast<std::size_t>(std::llround(opt.duration_seconds * opt.sample_rate));
  for (std::size_t s = 0; s < n_stems; ++s) {
    const auto& info = kinds()[s];
    Rng stem_rng = rng.stream(1000 + s);
    const auto& [instrument, variants] = info.instruments[stem_rng.index(info.instruments.size())];
    const char* variant = variants[stem_rng.index(variants.size())];
    // The synthesiser keys its timbre on the most specific name.
    const std::string timbre = std::string(variant) + " / " + instrument;
    out.audio.push_back(synthesize_stem(info.kind, timbre, params, n_samples, opt.sample_rate, stem_rng));
    StemRecord rec;
    rec.stem_id = kind_name(info.kind);
    rec.audio = out.manifest.track_id + "/" + rec.stem_id + ".wav";
    if (!stem_rng.bernoulli(opt.unlabeled_fraction)) rec.labels = {info.category, instrument, variant};
    out.manifest.stems.push_back(std::move(rec));
  }
  return out;
}

}  // namespace

Corpus generate_corpus(const GenerateOptions& opt, const fs::path& out) {
  if (opt.n_tracks < 1) throw ConfigError("generate_corpus: n_tracks must be >= 1");
  if (opt.min_stems < 2 || opt.max_stems < opt.min_stems || opt.max_stems > kinds().size()) {
    throw ConfigError("generate_corpus: stems per track must satisfy 2 <= min <= max <= " +
                      std::to_string(kinds().size()));
  }
  if (!(opt.duration_seconds > 0.0)) throw ConfigError("generate_corpus: duration must be positive");
  if (!(opt.unlabeled_fraction >= 0.0 && opt.unlabeled_fraction <= 1.0)) {
    throw ConfigError("generate_corpus: unlabeled_fraction must lie in [0, 1]");
  }
  std::error_code ec;
  if (fs::exists(out) && !fs::is_empty(out, ec)) {
    if (!opt.overwrite) throw IoError("output directory " + out.string() + " is not empty (use overwrite)");
    fs::remove_all(out);
  }
  fs::create_directories(out);

  Corpus corpus;
  corpus.root = out;
  corpus.sample_rate = opt.sample_rate;
  corpus.duration_seconds = opt.duration_seconds;
  corpus.seed = opt.seed;
  corpus.tracks.resize(opt.n_tracks);

  // Each track depends only on (seed, index), so worker count does not
  // change the output.
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr err;
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= opt.n_tracks) return;
      try {
        GeneratedTrack g = generate_track(opt, i);
        fs::create_directories(out / g.manifest.track_id);
        for (std::size_t s = 0; s < g.audio.size(); ++s) {
          dsp::AudioChunk chunk{std::move(g.audio[s]), opt.sample_rate};
          dsp::write_wav(out / g.manifest.stems[s].audio, chunk);
        }
        corpus.tracks[i] = std::move(g.manifest);
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!err) err = std::current_exception();
        next = opt.n_tracks;
        return;
      }
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(opt.workers, 1, opt.n_tracks);
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (err) std::rethrow_exception(err);
  save_manifest(corpus, out / kManifestName);
  log().info("generated {} tracks in {}", opt.n_tracks, out.string());
  return corpus;
}

// ---- audio access ----------------------------------------------------

AudioCorpus::AudioCorpus(Corpus corpus) : corpus_(std::move(corpus)) {
  tracks_.reserve(corpus_.tracks.size());
  for (const auto& t : corpus_.tracks) {
    LoadedTrack lt;
    lt.manifest = &t;
    for (const auto& s : t.stems) {
      auto chunk = dsp::read_wav(corpus_.root / s.audio);
      if (chunk.sample_rate != corpus_.sample_rate) {
        throw FormatError(s.audio + ": sample rate " + std::to_string(chunk.sample_rate) + " != corpus rate " +
                          std::to_string(corpus_.sample_rate));
      }
      if (!lt.stems.empty() && chunk.samples.size() != lt.stems.front().samples.size()) {
        throw FormatError(s.audio + ": stem length differs from the other stems of " + t.track_id);
      }
      lt.stems.push_back(std::move(chunk));
    }
    tracks_.push_back(std::move(lt));
  }
}

const LoadedTrack& AudioCorpus::track(std::string_view track_id) const {
  for (const auto& t : tracks_) {
    if (t.manifest->track_id == track_id) return t;
  }
  throw ConfigError("unknown track " + std::string(track_id));
}

dsp::AudioChunk mix(std::span<const dsp::AudioChunk> stems) {
  if (stems.empty()) throw std::invalid_argument("mix: no stems");
  dsp::AudioChunk out;
  out.sample_rate = stems.front().sample_rate;
  out.samples.assign(stems.front().samples.size(), 0.0f);
  for (const auto& s : stems) {
    if (s.samples.size() != out.samples.size() || s.sample_rate != out.sample_rate) {
      throw std::invalid_argument("mix: stems differ in length or sample rate");
    }
  }
  // Summing in double keeps the result independent of stem order.
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    double acc = 0.0;
    for (const auto& s : stems) acc += s.samples[i];
    out.samples[i] = static_cast<float>(std::clamp(acc, -1.0, 1.0));
  }
  return out;
}

dsp::AudioChunk slice(const dsp::AudioChunk& audio, std::size_t offset, std::size_t length) {
  if (offset + length > audio.samples.size()) {
    throw std::out_of_range("slice: [" + std::to_string(offset) + ", " + std::to_string(offset + length) +
                            ") exceeds " + std::to_string(audio.samples.size()) + " samples");
  }
  dsp::AudioChunk out;
  out.sample_rate = audio.sample_rate;
  out.samples.assign(audio.samples.begin() + static_cast<std::ptrdiff_t>(offset),
                     audio.samples.begin() + static_cast<std::ptrdiff_t>(offset + length));
  return out;
}

std::optional<std::size_t> first_non_silent_offset(const dsp::AudioChunk& audio, std::size_t length,
                                                   double silence_db) {
  if (length == 0 || length > audio.samples.size()) return std::nullopt;
  const std::size_t hop = std::max<std::size_t>(1, length / 4);
  for (std::size_t off = 0; off + length <= audio.samples.size(); off += hop) {
    const std::span<const float> view(audio.samples.data() + off, length);
    if (!dsp::is_silent(view, silence_db)) return off;
  }
  return std::nullopt;
}

namespace {

std::size_t chunk_samples(double seconds, int rate) {
  return static_cast<std::size_t>(std::llround(seconds * rate));
}

TrainingPair build_pair(const LoadedTrack& track, std::size_t target, const std::vector<std::size_t>& context,
                        std::size_t offset, std::size_t length) {
  std::vector<dsp::AudioChunk> parts;
  parts.reserve(context.size());
  for (std::size_t c : context) parts.push_back(slice(track.stems[c], offset, length));
  TrainingPair p;
  p.context = mix(parts);
  p.target = slice(track.stems[target], offset, length);
  p.provenance.track_id = track.manifest->track_id;
  p.provenance.target_stem = track.manifest->stems[target].stem_id;
  for (std::size_t c : context) p.provenance.context_stems.push_back(track.manifest->stems[c].stem_id);
  p.provenance.offset = offset;
  p.provenance.length = length;
  return p;
}

}  // namespace

std::optional<TrainingPair> sample_pair(const LoadedTrack& track, Rng& rng, const SamplerOptions& opt) {
  const std::size_t n = track.stems.size();
  if (n < 2) throw std::invalid_argument("sample_pair: track " + track.manifest->track_id + " has < 2 stems");
  const std::size_t total = track.stems.front().samples.size();
  const std::size_t length = chunk_samples(opt.chunk_seconds, track.stems.front().sample_rate);
  if (length == 0 || length > total) {
    throw ConfigError("sample_pair: chunk of " + std::to_string(length) + " samples does not fit track " +
                      track.manifest->track_id);
  }
  for (std::size_t attempt = 0; attempt < opt.max_tries; ++attempt) {
    const std::size_t target = rng.index(n);
    std::vector<std::size_t> context;
    do {
      context.clear();
      for (std::size_t s = 0; s < n; ++s) {
        if (s != target && rng.bernoulli(opt.inclusion_probability)) context.push_back(s);
      }
    } while (context.empty());
    const std::size_t offset = rng.index(total - length + 1);
    TrainingPair p = build_pair(track, target, context, offset, length);
    if (dsp::is_silent(p.context, opt.silence_db) || dsp::is_silent(p.target, opt.silence_db)) continue;
    const auto& labels = track.manifest->stems[target].labels;
    p.label = labels.empty() ? std::string("music") : labels[rng.index(labels.size())];
    p.provenance.label = p.label;
    return p;
  }
  log().warn("track {}: no non-silent pair after {} tries, skipped", track.manifest->track_id, opt.max_tries);
  return std::nullopt;
}

TrainingPair reconstruct_pair(const AudioCorpus& audio, const PairProvenance& prov) {
  const LoadedTrack& track = audio.track(prov.track_id);
  auto index_of = [&](const std::string& id) {
    for (std::size_t s = 0; s < track.manifest->stems.size(); ++s) {
      if (track.manifest->stems[s].stem_id == id) return s;
    }
    throw ConfigError("track " + prov.track_id + " has no stem " + id);
  };
  const std::size_t target = index_of(prov.target_stem);
  std::vector<std::size_t> context;
  for (const auto& c : prov.context_stems) context.push_back(index_of(c));
  TrainingPair p = build_pair(track, target, context, prov.offset, prov.length);
  p.label = prov.label;
  p.provenance.label = prov.label;
  return p;
}

}  // namespace stemfit::corpus
