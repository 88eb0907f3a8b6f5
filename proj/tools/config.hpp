// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

#include "stemfit/conditioning/conditioning.hpp"
#include "stemfit/corpus/corpus.hpp"
#include "stemfit/eval/probe.hpp"
#include "stemfit/eval/retrieval.hpp"
#include "stemfit/model/encoder.hpp"
#include "stemfit/model/predictor.hpp"
#include "stemfit/training/features.hpp"
#include "stemfit/training/trainer.hpp"

namespace stemfit::cli {

using Json = nlohmann::json;

// Complete default configuration for a named preset ("desk" or "full").
Json preset(const std::string& name);

// Overlays `overlay` onto `base`. Every key of `overlay` must already exist in
// `base` with a compatible type (integers stay integers, arrays keep their
// element type); violations are ConfigErrors naming the dotted key.
void merge_config(Json& base, const Json& overlay, const std::string& where = "");

// "a.b.c=value": the value is parsed as JSON when possible, else taken as a
// string.
void apply_override(Json& config, const std::string& assignment);

// Sets every "seed" key in the tree.
void set_all_seeds(Json& config, std::uint64_t seed);

Json load_config_file(const std::filesystem::path& path);

// Preset, then the file (if any), then overrides in order, then seed and
// workers (when given). The result is validated.
struct ConfigSources {
  std::string preset = "desk";
  std::filesystem::path file;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
};
Json resolve_config(const ConfigSources& sources);

// Typed views; each throws ConfigError on invalid values.
corpus::GenerateOptions generate_options(const Json& c);
training::FeatureConfig feature_config(const Json& c);
model::EncoderConfig encoder_config(const Json& c);
model::PredictorConfig predictor_config(const Json& c);
conditioning::FixtureOptions fixture_options(const Json& c);
corpus::SamplerOptions sampler_options(const Json& c);
training::Phase1Config phase1_config(const Json& c);
training::Phase2Config phase2_config(const Json& c);
eval::ProbeConfig probe_config(const Json& c);
std::size_t workers(const Json& c);
std::uint64_t model_seed(const Json& c);

void validate_config(const Json& c);

std::uint64_t config_digest(const Json& c);

}  // namespace stemfit::cli
