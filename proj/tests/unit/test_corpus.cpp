#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "stemfit/common/error.hpp"
#include "stemfit/corpus/corpus.hpp"

using namespace stemfit;
using namespace stemfit::corpus;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto d = fs::temp_directory_path() / ("stemfit_test_corpus_" + name);
  fs::remove_all(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return out;
}

GenerateOptions small(std::uint64_t seed) {
  GenerateOptions o;
  o.n_tracks = 4;
  o.duration_seconds = 3.0;
  o.seed = seed;
  return o;
}

// Half-wave rectified energy flux at 10 ms frames.
std::vector<double> onset_envelope(const std::vector<float>& x, int rate) {
  const std::size_t hop = rate / 100;
  std::vector<double> energy;
  for (std::size_t i = 0; i + hop <= x.size(); i += hop) {
    double e = 0;
    for (std::size_t j = 0; j < hop; ++j) e += double(x[i + j]) * x[i + j];
    energy.push_back(std::log(1e-8 + e));
  }
  std::vector<double> flux(energy.size(), 0.0);
  for (std::size_t t = 1; t < energy.size(); ++t) flux[t] = std::max(0.0, energy[t] - energy[t - 1]);
  double mean = 0;
  for (double v : flux) mean += v;
  mean /= flux.size();
  for (double& v : flux) v -= mean;
  return flux;
}

std::size_t autocorr_peak(const std::vector<double>& env, std::size_t lo, std::size_t hi) {
  std::size_t best = lo;
  double best_v = -1e300;
  for (std::size_t lag = lo; lag <= hi; ++lag) {
    double acc = 0;
    for (std::size_t t = 0; t + lag < env.size(); ++t) acc += env[t] * env[t + lag];
    acc /= double(env.size() - lag);
    if (acc > best_v) {
      best_v = acc;
      best = lag;
    }
  }
  return best;
}

TrackManifest two_stem_manifest() {
  TrackManifest m;
  m.track_id = "x";
  m.stems = {{"a", "a.wav", {"guitar", "electric guitar", "lead electric guitar"}}, {"b", "b.wav", {}}};
  return m;
}

dsp::AudioChunk tone(std::size_t n, double hz, double amp = 0.3) {
  dsp::AudioChunk c;
  c.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) c.samples[i] = float(amp * std::sin(2 * M_PI * hz * i / 16000.0));
  return c;
}

}  // namespace

TEST_CASE("same seed gives a byte-identical corpus, independent of worker count") {
  const auto a = scratch("a"), b = scratch("b"), c = scratch("c");
  generate_corpus(small(7), a);
  generate_corpus(small(7), b);
  auto par = small(7);
  par.workers = 3;
  generate_corpus(par, c);
  const auto ta = tree(a);
  CHECK(ta.size() == 1 + [&] {
    std::size_t n = 0;
    for (const auto& t : load_corpus(a).tracks) n += t.stems.size();
    return n;
  }());
  CHECK(ta == tree(b));
  CHECK(ta == tree(c));
  const auto d = scratch("d");
  generate_corpus(small(8), d);
  CHECK(ta != tree(d));
  for (const auto& p : {a, b, c, d}) fs::remove_all(p);
}

TEST_CASE("generator contract: stems non-silent, labels are taxonomy paths, manifest round trip") {
  const auto dir = scratch("contract");
  auto opt = small(3);
  opt.n_tracks = 12;
  opt.unlabeled_fraction = 0.3;
  const Corpus made = generate_corpus(opt, dir);
  const Corpus read = load_corpus(dir);
  CHECK(manifest_json(read) == manifest_json(made));
  std::size_t unlabeled = 0;
  const AudioCorpus audio(read);
  for (const auto& t : audio.tracks()) {
    CHECK(t.manifest->tempo_bpm >= 70.0);
    CHECK(t.manifest->tempo_bpm <= 140.0);
    CHECK(t.manifest->key_pc >= 0);
    CHECK(t.manifest->key_pc < 12);
    CHECK(t.stems.size() >= 4);
    CHECK(t.stems.size() <= 6);
    for (std::size_t s = 0; s < t.stems.size(); ++s) {
      CHECK_FALSE(dsp::is_silent(t.stems[s]));
      CHECK(t.stems[s].samples.size() == 48000);
      const auto& labels = t.manifest->stems[s].labels;
      if (labels.empty()) {
        ++unlabeled;
        CHECK(instrument_of(t.manifest->stems[s]) == "unlabeled");
      } else {
        CHECK(labels.size() == 3);
        CHECK(instrument_of(t.manifest->stems[s]) == labels[1]);
        CHECK(category_of(t.manifest->stems[s]) == labels[0]);
      }
    }
  }
  CHECK(unlabeled > 0);
  fs::remove_all(dir);
}

TEST_CASE("stems of one track share the tempo period") {
  // Oracle: autocorrelation of onset envelopes of drums and bass, searched in
  // [0.75, 1.25] of the beat, peaks at 60/BPM seconds (10 ms frames, +-2).
  const auto dir = scratch("tempo");
  auto opt = small(21);
  opt.n_tracks = 10;
  opt.duration_seconds = 8.0;
  const AudioCorpus audio(generate_corpus(opt, dir));
  for (const auto& t : audio.tracks()) {
    const double beat_frames = 60.0 / t.manifest->tempo_bpm * 100.0;
    const auto lo = static_cast<std::size_t>(std::floor(0.75 * beat_frames));
    const auto hi = static_cast<std::size_t>(std::ceil(1.25 * beat_frames));
    for (std::size_t s : {0u, 1u}) {
      const auto env = onset_envelope(t.stems[s].samples, 16000);
      const double peak = double(autocorr_peak(env, lo, hi));
      INFO(t.manifest->track_id, " ", t.manifest->stems[s].stem_id, " bpm ", t.manifest->tempo_bpm);
      CHECK(std::abs(peak - beat_frames) <= 2.0);
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("generation refuses a non-empty directory") {
  const auto dir = scratch("refuse");
  fs::create_directories(dir);
  std::ofstream(dir / "keep.txt") << "x";
  CHECK_THROWS_AS(generate_corpus(small(1), dir), IoError);
  auto o = small(1);
  o.overwrite = true;
  CHECK_NOTHROW(generate_corpus(o, dir));
  CHECK_FALSE(fs::exists(dir / "keep.txt"));
  o.n_tracks = 0;
  CHECK_THROWS_AS(generate_corpus(o, scratch("zero")), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("two-stem track: context is always the other stem") {
  const auto m = two_stem_manifest();
  LoadedTrack t{&m, {tone(16000, 220), tone(16000, 330)}};
  Rng rng(5);
  SamplerOptions o;
  o.chunk_seconds = 0.5;
  for (int i = 0; i < 200; ++i) {
    auto p = sample_pair(t, rng, o);
    REQUIRE(p);
    REQUIRE(p->provenance.context_stems.size() == 1);
    CHECK(p->provenance.context_stems[0] != p->provenance.target_stem);
    if (p->provenance.target_stem == "b") CHECK(p->label == "music");
  }
}

TEST_CASE("label levels are drawn uniformly along the path") {
  const auto m = two_stem_manifest();
  LoadedTrack t{&m, {tone(4000, 220), tone(4000, 330)}};
  Rng rng(99);
  SamplerOptions o;
  o.chunk_seconds = 0.1;
  std::map<std::string, std::size_t> counts;
  std::size_t n = 0;
  while (n < 30000) {
    auto p = sample_pair(t, rng, o);
    REQUIRE(p);
    if (p->provenance.target_stem != "a") continue;
    ++counts[p->label];
    ++n;
  }
  CHECK(counts.size() == 3);
  for (const auto& [label, c] : counts) CHECK(std::abs(double(c) / n - 1.0 / 3.0) < 0.02);
}

TEST_CASE("silent material is rejected, provenance reconstructs pairs bit-exactly") {
  const auto dir = scratch("pairs");
  const AudioCorpus audio(generate_corpus(small(11), dir));
  Rng rng(1);
  SamplerOptions o;
  o.chunk_seconds = 1.0;
  for (int i = 0; i < 40; ++i) {
    const auto& t = audio.tracks()[i % audio.tracks().size()];
    auto p = sample_pair(t, rng, o);
    REQUIRE(p);
    const auto& ctx = p->provenance.context_stems;
    CHECK(std::find(ctx.begin(), ctx.end(), p->provenance.target_stem) == ctx.end());
    CHECK_FALSE(ctx.empty());
    CHECK_FALSE(dsp::is_silent(p->context));
    CHECK_FALSE(dsp::is_silent(p->target));
    const auto back = reconstruct_pair(audio, p->provenance);
    CHECK(back.context.samples == p->context.samples);
    CHECK(back.target.samples == p->target.samples);
    CHECK(back.label == p->label);
  }
  // Fully silent track: every try fails, the track is skipped.
  const auto m = two_stem_manifest();
  dsp::AudioChunk z;
  z.samples.assign(16000, 0.0f);
  LoadedTrack silent{&m, {z, z}};
  CHECK_FALSE(sample_pair(silent, rng, o).has_value());
  // Leading silence: the first non-silent offset lies on the quarter-chunk grid.
  auto late = tone(16000, 440);
  std::fill(late.samples.begin(), late.samples.begin() + 9000, 0.0f);
  CHECK(first_non_silent_offset(late, 4000) == std::optional<std::size_t>(6000));
  CHECK(first_non_silent_offset(z, 4000) == std::nullopt);
  fs::remove_all(dir);
}

TEST_CASE("mix identities") {
  const auto a = tone(1000, 300, 0.4);
  const auto b = tone(1000, 470, 0.5);
  CHECK(mix(std::vector{a}).samples == a.samples);
  auto neg = a;
  for (auto& x : neg.samples) x = -x;
  for (float x : mix(std::vector{a, neg}).samples) CHECK(x == 0.0f);
  CHECK(mix(std::vector{a, b}).samples == mix(std::vector{b, a}).samples);
  const auto big = tone(1000, 300, 0.9);
  for (float x : mix(std::vector{big, big}).samples) CHECK(std::abs(x) <= 1.0f);
  CHECK_THROWS_AS(mix(std::vector{a, tone(999, 300)}), std::invalid_argument);
}
