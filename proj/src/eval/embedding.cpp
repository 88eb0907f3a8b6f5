// SPDX-License-Identifier: Apache-2.0
#include "stemfit/eval/embedding.hpp"

#include <json.hpp>

#include "stemfit/common/error.hpp"
#include "stemfit/common/log.hpp"
#include "stemfit/model/checkpoint.hpp"

namespace stemfit::eval {

namespace {

std::vector<float> to_vector(const ndgrad::Tensor& t) { return {t.data().begin(), t.data().end()}; }

struct StemRef {
  std::size_t track;
  std::size_t stem;
  std::size_t offset;
};

// Indexed stems in corpus order, with their evaluation offsets.
std::vector<StemRef> plan(const corpus::AudioCorpus& audio, std::size_t chunk, double silence_db, bool warn) {
  std::vector<StemRef> out;
  for (std::size_t t = 0; t < audio.tracks().size(); ++t) {
    const auto& track = audio.tracks()[t];
    for (std::size_t s = 0; s < track.stems.size(); ++s) {
      const auto off = eval_offset(track.stems[s], chunk, silence_db);
      if (!off) {
        if (warn) {
          log().warn("stem {}/{} has no non-silent chunk, excluded", track.manifest->track_id,
                     track.manifest->stems[s].stem_id);
        }
        continue;
      }
      out.push_back({t, s, *off});
    }
  }
  return out;
}

}  // namespace

std::optional<std::size_t> eval_offset(const dsp::AudioChunk& stem, std::size_t chunk_samples, double silence_db) {
  return corpus::first_non_silent_offset(stem, chunk_samples, silence_db);
}

std::vector<float> embed_chunk(const dsp::AudioChunk& chunk, const model::Encoder& encoder,
                               const training::Featurizer& features) {
  ndgrad::NoGradGuard guard;
  const auto x = features(std::span(&chunk, 1));
  return to_vector(model::pool(encoder.forward(x, 1, features.grid()), 1));
}

RetrievalIndex build_index(const corpus::AudioCorpus& audio, const model::Encoder& encoder,
                           const training::Featurizer& features, const EmbedOptions& opt) {
  const std::size_t chunk = features.config().chunk_samples();
  const auto refs = plan(audio, chunk, opt.silence_db, true);
  RetrievalIndex index;
  index.entries.resize(refs.size());
  training::parallel_for(refs.size(), opt.workers, [&](std::size_t i) {
    const auto& track = audio.tracks()[refs[i].track];
    const auto& rec = track.manifest->stems[refs[i].stem];
    IndexEntry& e = index.entries[i];
    e.embedding = embed_chunk(corpus::slice(track.stems[refs[i].stem], refs[i].offset, chunk), encoder, features);
    e.track_id = track.manifest->track_id;
    e.stem_id = rec.stem_id;
    e.instrument = corpus::instrument_of(rec);
    e.category = corpus::category_of(rec);
  });
  return index;
}

std::string query_label(const corpus::StemRecord& stem) {
  return stem.labels.empty() ? std::string(conditioning::kFallbackLabel) : corpus::instrument_of(stem);
}

Query make_query(const corpus::LoadedTrack& track, std::size_t excluded, std::size_t offset, const std::string& label,
                 const QueryModels& models, conditioning::LookupReport* report) {
  if (!models.encoder || !models.features) throw std::invalid_argument("make_query: encoder and features are required");
  if (track.stems.size() < 2) throw ConfigError("make_query: track " + track.manifest->track_id + " has < 2 stems");
  const std::size_t chunk = models.features->config().chunk_samples();
  std::vector<dsp::AudioChunk> parts;
  for (std::size_t s = 0; s < track.stems.size(); ++s) {
    if (s != excluded) parts.push_back(corpus::slice(track.stems[s], offset, chunk));
  }
  const auto context = corpus::mix(parts);

  ndgrad::NoGradGuard guard;
  const auto grid = models.features->grid();
  const auto z = models.encoder->forward((*models.features)(std::span(&context, 1)), 1, grid);
  Query q;
  q.track_id = track.manifest->track_id;
  q.stem_id = track.manifest->stems[excluded].stem_id;
  q.label = label;
  if (!models.predictor) {
    q.embedding = to_vector(model::pool(z, 1));
    return q;
  }
  if (!models.table) throw std::invalid_argument("make_query: a predictor needs a conditioning table");
  const auto e = models.table->lookup(label, report);
  const ndgrad::Tensor cond({1, e.vector.size()}, e.vector);
  q.embedding = to_vector(model::pool(models.predictor->forward(z, cond, 1), 1));
  return q;
}

std::vector<Query> make_queries(const corpus::AudioCorpus& audio, const RetrievalIndex& index,
                                const QueryModels& models, const LabelFn& label_of, const EmbedOptions& opt,
                                conditioning::LookupReport* report) {
  const std::size_t chunk = models.features->config().chunk_samples();
  const auto refs = plan(audio, chunk, opt.silence_db, false);
  std::vector<Query> out(refs.size());
  std::vector<conditioning::LookupReport> reports(refs.size());
  training::parallel_for(refs.size(), opt.workers, [&](std::size_t i) {
    const auto& track = audio.tracks()[refs[i].track];
    out[i] = make_query(track, refs[i].stem, refs[i].offset, label_of(track, refs[i].stem), models, &reports[i]);
  });
  if (report) {
    for (const auto& r : reports) {
      report->hits += r.hits;
      for (const auto& [label, n] : r.misses) report->misses[label] += n;
    }
  }
  for (const auto& q : out) {
    if (!index.find(q.track_id, q.stem_id)) throw ConfigError("query " + q.track_id + "/" + q.stem_id + " not indexed");
  }
  return out;
}

std::vector<Query> self_queries(const RetrievalIndex& index) {
  std::vector<Query> out;
  for (const auto& e : index.entries) out.push_back({e.embedding, e.track_id, e.stem_id, e.instrument});
  return out;
}

std::string wrong_category_label(const corpus::StemRecord& stem, const conditioning::InstrumentTaxonomy& taxonomy,
                                 Rng& rng) {
  const std::string own = corpus::category_of(stem);
  std::vector<const conditioning::InstrumentTaxonomy::Category*> others;
  for (const auto& c : taxonomy.categories) {
    if (c.name != own && !c.instruments.empty()) others.push_back(&c);
  }
  if (others.empty()) throw ConfigError("taxonomy has no category other than '" + own + "'");
  const auto* cat = others[rng.index(others.size())];
  return cat->instruments[rng.index(cat->instruments.size())].name;
}

EfficacyResult conditioning_efficacy(const corpus::AudioCorpus& audio, const RetrievalIndex& index,
                                     const QueryModels& models, const conditioning::InstrumentTaxonomy& taxonomy,
                                     std::uint64_t seed, Distance distance, const EmbedOptions& opt) {
  if (!models.predictor) throw std::invalid_argument("conditioning_efficacy: needs a predictor");
  const std::size_t chunk = models.features->config().chunk_samples();
  const auto refs = plan(audio, chunk, opt.silence_db, false);
  std::vector<char> win(refs.size(), 0);
  training::parallel_for(refs.size(), opt.workers, [&](std::size_t i) {
    const auto& track = audio.tracks()[refs[i].track];
    const auto& rec = track.manifest->stems[refs[i].stem];
    Rng rng = Rng(seed).stream(i);
    const auto right = make_query(track, refs[i].stem, refs[i].offset, query_label(rec), models);
    const auto wrong =
        make_query(track, refs[i].stem, refs[i].offset, wrong_category_label(rec, taxonomy, rng), models);
    const auto truth = index.find(right.track_id, right.stem_id);
    if (!truth) throw ConfigError("efficacy: " + right.track_id + "/" + right.stem_id + " not indexed");
    const auto& gt = index.entries[*truth].embedding;
    win[i] = distance_between(right.embedding, gt, distance) < distance_between(wrong.embedding, gt, distance);
  });
  EfficacyResult r;
  r.queries = refs.size();
  for (char w : win) r.wins += static_cast<std::size_t>(w);
  return r;
}

namespace {

template <class Item, class Describe>
void save_entries(const std::vector<Item>& items, const std::filesystem::path& path, const char* kind,
                  std::uint64_t digest, Describe describe) {
  model::Checkpoint ckpt;
  ckpt.config_digest = digest;
  nlohmann::json meta = {{"kind", kind}, {"entries", nlohmann::json::array()}};
  for (const auto& it : items) {
    ckpt.add(model::NamedTensor{it.track_id + "/" + it.stem_id, {it.embedding.size()}, it.embedding});
    meta["entries"].push_back(describe(it));
  }
  ckpt.meta = meta.dump();
  model::save_checkpoint(ckpt, path);
}

nlohmann::json read_meta(const model::Checkpoint& ckpt, const char* kind, const std::filesystem::path& path) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(ckpt.meta);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": metadata is not JSON: " + e.what());
  }
  if (meta.value("kind", std::string()) != kind) {
    throw FormatError(path.string() + ": expected an embedding dump of kind '" + kind + "'");
  }
  if (meta.at("entries").size() != ckpt.tensors.size()) {
    throw FormatError(path.string() + ": metadata and tensor counts differ");
  }
  return meta;
}

}  // namespace

void save_index(const RetrievalIndex& index, const std::filesystem::path& path, std::uint64_t config_digest) {
  save_entries(index.entries, path, "index", config_digest, [](const IndexEntry& e) {
    return nlohmann::json{{"track_id", e.track_id}, {"stem_id", e.stem_id}, {"instrument", e.instrument},
                          {"category", e.category}};
  });
}

RetrievalIndex load_index(const std::filesystem::path& path) {
  const auto ckpt = model::load_checkpoint(path);
  const auto meta = read_meta(ckpt, "index", path);
  RetrievalIndex index;
  try {
    for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
      const auto& m = meta["entries"][i];
      index.entries.push_back({ckpt.tensors[i].data, m.at("track_id"), m.at("stem_id"), m.at("instrument"),
                               m.at("category")});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return index;
}

void save_queries(const std::vector<Query>& queries, const std::filesystem::path& path, std::uint64_t config_digest) {
  save_entries(queries, path, "queries", config_digest, [](const Query& q) {
    return nlohmann::json{{"track_id", q.track_id}, {"stem_id", q.stem_id}, {"label", q.label}};
  });
}

std::vector<Query> load_queries(const std::filesystem::path& path) {
  const auto ckpt = model::load_checkpoint(path);
  const auto meta = read_meta(ckpt, "queries", path);
  std::vector<Query> out;
  try {
    for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
      const auto& m = meta["entries"][i];
      out.push_back({ckpt.tensors[i].data, m.at("track_id"), m.at("stem_id"), m.at("label")});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return out;
}

}  // namespace stemfit::eval
