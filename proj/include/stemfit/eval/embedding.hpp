// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "stemfit/conditioning/conditioning.hpp"
#include "stemfit/corpus/corpus.hpp"
#include "stemfit/eval/retrieval.hpp"
#include "stemfit/model/encoder.hpp"
#include "stemfit/model/predictor.hpp"
#include "stemfit/training/features.hpp"

namespace stemfit::eval {

struct EmbedOptions {
  double silence_db = dsp::kDefaultSilenceDb;
  std::size_t workers = 1;
};

// Evaluation chunk of a stem: the first non-silent offset on the
// quarter-chunk grid, or nullopt for an all-silent stem.
std::optional<std::size_t> eval_offset(const dsp::AudioChunk& stem, std::size_t chunk_samples, double silence_db);

// Pooled encoder output for one chunk. Each chunk is encoded on its own, so
// the value does not depend on batching or worker count.
std::vector<float> embed_chunk(const dsp::AudioChunk& chunk, const model::Encoder& encoder,
                               const training::Featurizer& features);

// One entry per stem (all-silent stems are skipped with a warning).
RetrievalIndex build_index(const corpus::AudioCorpus& audio, const model::Encoder& encoder,
                           const training::Featurizer& features, const EmbedOptions& opt = {});

struct QueryModels {
  const model::Encoder* encoder = nullptr;
  // nullptr: pooled context embeddings are used directly (no predictor).
  const model::FilmPredictor* predictor = nullptr;
  const conditioning::EmbeddingTable* table = nullptr;
  const training::Featurizer* features = nullptr;
};

// Mix of every stem but `excluded`, taken at the excluded stem's evaluation
// offset, encoded, predicted under `label` and pooled.
Query make_query(const corpus::LoadedTrack& track, std::size_t excluded, std::size_t offset, const std::string& label,
                 const QueryModels& models, conditioning::LookupReport* report = nullptr);

// Conditioning label of a stem for fine conditioning: the instrument level,
// "music" when the stem has no labels.
std::string query_label(const corpus::StemRecord& stem);

// Label choice per (track, stem index).
using LabelFn = std::function<std::string(const corpus::LoadedTrack&, std::size_t)>;

// One query per indexed stem, in corpus order.
std::vector<Query> make_queries(const corpus::AudioCorpus& audio, const RetrievalIndex& index,
                                const QueryModels& models, const LabelFn& label_of, const EmbedOptions& opt = {},
                                conditioning::LookupReport* report = nullptr);

// Index entries used as their own queries (perfect-embedding fixture).
std::vector<Query> self_queries(const RetrievalIndex& index);

// Instrument label from a different category than the stem's own (seeded
// choice among the table's instrument-level labels of other categories).
std::string wrong_category_label(const corpus::StemRecord& stem, const conditioning::InstrumentTaxonomy& taxonomy,
                                 Rng& rng);

struct EfficacyResult {
  std::size_t queries = 0;
  std::size_t wins = 0;  // true stem closer under the correct label
  double percent() const { return queries ? 100.0 * static_cast<double>(wins) / static_cast<double>(queries) : 0.0; }
};

// For each query: distance to the ground truth under the correct label vs
// under a label from another category.
EfficacyResult conditioning_efficacy(const corpus::AudioCorpus& audio, const RetrievalIndex& index,
                                     const QueryModels& models, const conditioning::InstrumentTaxonomy& taxonomy,
                                     std::uint64_t seed, Distance distance = Distance::kEuclidean,
                                     const EmbedOptions& opt = {});

// Embedding dump in the checkpoint container: one tensor per entry named
// "track/stem", metadata (labels) as JSON.
void save_index(const RetrievalIndex& index, const std::filesystem::path& path, std::uint64_t config_digest = 0);
RetrievalIndex load_index(const std::filesystem::path& path);
void save_queries(const std::vector<Query>& queries, const std::filesystem::path& path, std::uint64_t config_digest = 0);
std::vector<Query> load_queries(const std::filesystem::path& path);

}  // namespace stemfit::eval
