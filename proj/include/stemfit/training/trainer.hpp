// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stemfit/conditioning/conditioning.hpp"
#include "stemfit/corpus/corpus.hpp"
#include "stemfit/model/checkpoint.hpp"
#include "stemfit/model/ema.hpp"
#include "stemfit/model/encoder.hpp"
#include "stemfit/model/predictor.hpp"
#include "stemfit/ndgrad/optim.hpp"
#include "stemfit/training/features.hpp"
#include "stemfit/training/losses.hpp"

namespace stemfit::training {

struct PhaseConfig {
  std::int64_t steps = 2000;
  std::size_t batch_size = 16;
  double base_lr = 1e-3;
  std::int64_t warmup_steps = 100;
  double weight_decay = 0.05;
  std::uint64_t seed = 0;
  // 0 writes the checkpoint only at the end.
  std::int64_t checkpoint_every = 0;
  std::int64_t log_every = 100;

  void validate() const;
  ndgrad::LrSchedule schedule() const { return {base_lr, warmup_steps, steps}; }
};

struct Phase1Config : PhaseConfig {
  ContrastiveMode mode = ContrastiveMode::kFullBatch;
};

struct Phase2Config : PhaseConfig {
  double ema_tau0 = 0.996;
  double ema_tau_end = 1.0;
  model::EmaSchedule ema() const { return {ema_tau0, ema_tau_end, steps}; }
};

struct DataOptions {
  corpus::SamplerOptions sampler;  // chunk_seconds is taken from the featurizer
  std::size_t workers = 1;
};

// Destinations; empty paths disable the corresponding output.
struct RunOutput {
  std::filesystem::path metrics_log;  // one JSON object per line and step
  std::filesystem::path checkpoint;
  std::uint64_t config_digest = 0;
  std::string meta;
};

struct StepRecord {
  std::int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double tau = 0.0;  // phase 1: temperature, phase 2: EMA rate applied after the step
};

struct Batch {
  std::vector<dsp::AudioChunk> context;
  std::vector<dsp::AudioChunk> target;
  std::vector<std::string> labels;
  std::vector<corpus::PairProvenance> provenance;

  std::size_t size() const { return context.size(); }
  std::string describe() const;
};

// `size` pairs from distinct tracks (tracks drawn without replacement, those
// without a valid pair skipped). Fewer usable tracks than `size` is a
// ConfigError.
Batch sample_batch(const corpus::AudioCorpus& audio, std::size_t size, Rng& rng,
                   const corpus::SamplerOptions& sampler);

// Generator for the batch of a given step: each step has its own stream, so
// a run is a pure function of (seed, step).
Rng batch_rng(std::uint64_t seed, std::int64_t step);

struct TrainResult {
  std::vector<StepRecord> log;
  model::Checkpoint checkpoint;
};

// Contrastive pretraining of the encoder and the temperature.
TrainResult train_phase1(const corpus::AudioCorpus& audio, const Featurizer& features, model::Encoder& encoder,
                         Temperature& temperature, const Phase1Config& cfg, const DataOptions& data = {},
                         const RunOutput& out = {});

// JEPA training. `target` is reset to a copy of `online` before the first
// step and afterwards changes only through the EMA update.
TrainResult train_phase2(const corpus::AudioCorpus& audio, const Featurizer& features, model::Encoder& online,
                         model::Encoder& target, model::FilmPredictor& predictor,
                         const conditioning::EmbeddingTable& table, const Phase2Config& cfg,
                         const DataOptions& data = {}, const RunOutput& out = {});

// Checkpoint layouts. Phase 1: encoder.*, log_tau. Phase 2: encoder.*,
// target.*, predictor.*. Optimizer moments as optim.m.* / optim.v.*.
inline constexpr const char* kEncoderPrefix = "encoder.";
inline constexpr const char* kTargetPrefix = "target.";
inline constexpr const char* kPredictorPrefix = "predictor.";
inline constexpr const char* kLogTauName = "log_tau";

}  // namespace stemfit::training
