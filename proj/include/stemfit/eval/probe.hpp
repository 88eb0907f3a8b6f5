// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "stemfit/corpus/corpus.hpp"
#include "stemfit/model/encoder.hpp"
#include "stemfit/training/features.hpp"

namespace stemfit::eval {

// Patch embeddings of one sequence [K x d] on `grid` -> [n_freq * d]: the
// d-dim embeddings of each frequency row are concatenated and averaged over
// the time axis. Entry f * d + c is the time mean of channel c in row f.
std::vector<float> global_embedding(const ndgrad::Tensor& z, model::PatchGrid grid);
inline std::size_t global_width(std::size_t embed_dim, model::PatchGrid grid) { return embed_dim * grid.n_freq; }

struct ProbeConfig {
  std::size_t hidden = 512;
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  std::vector<double> learning_rates = {1e-3, 1e-4};
  std::size_t seeds = 3;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ProbeSet {
  std::vector<std::vector<float>> x;
  std::vector<std::size_t> y;  // class ids
};

struct ProbeRun {
  double lr = 0;
  std::vector<double> accuracy;  // percent, one per seed
  double mean = 0;
};

struct ProbeResult {
  std::size_t n_classes = 0;
  std::size_t n_train = 0, n_test = 0;
  std::vector<ProbeRun> runs;  // one per learning rate
  double best_lr = 0;
  double accuracy = 0;  // mean over seeds at the best learning rate, percent

  std::string to_json() const;
};

// One-hidden-layer ReLU MLP with a softmax output trained by cross-entropy
// with AdamW, for every (learning rate, seed) pair. Inputs are standardised
// with training-set statistics. Rejects a training split with fewer than
// two classes.
ProbeResult probe(const ProbeSet& train, const ProbeSet& test, const ProbeConfig& cfg = {});

// Global embeddings of the evaluation chunk of every stem, labelled at
// `level` ("category" or "instrument"), split by track: every
// `test_every`-th track (by corpus order) goes to the test set. Unlabelled
// stems are skipped.
struct ProbeDataset {
  ProbeSet train, test;
  std::vector<std::string> classes;
};
ProbeDataset probe_dataset(const corpus::AudioCorpus& audio, const model::Encoder& encoder,
                           const training::Featurizer& features, const std::string& level, std::size_t test_every = 5,
                           double silence_db = dsp::kDefaultSilenceDb, std::size_t workers = 1);

}  // namespace stemfit::eval
