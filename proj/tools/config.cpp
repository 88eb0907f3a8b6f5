// SPDX-License-Identifier: Apache-2.0
#include "config.hpp"

#include <fstream>
#include <sstream>

#include "stemfit/common/digest.hpp"
#include "stemfit/common/error.hpp"

namespace stemfit::cli {

namespace {

Json phase_section(std::int64_t steps, std::size_t batch, std::int64_t warmup, std::int64_t log_every) {
  return {{"steps", steps},        {"batch_size", batch},   {"base_lr", 1e-3},  {"warmup_steps", warmup},
          {"weight_decay", 0.05},  {"seed", 7},             {"checkpoint_every", 0}, {"log_every", log_every}};
}

Json desk() {
  Json c;
  c["workers"] = 1;
  c["corpus"] = {{"n_tracks", 60},
                 {"min_stems", 4},
                 {"max_stems", 6},
                 {"duration_seconds", 8.0},
                 {"sample_rate", 16000},
                 {"unlabeled_fraction", 0.1},
                 {"seed", 7}};
  c["features"] = {{"chunk_seconds", 2.56}, {"n_mels", 80},  {"window_seconds", 0.025},
                   {"hop_seconds", 0.010},  {"mean", -6.5},  {"stddev", 8.0}};
  c["model"] = {{"seed", 7},
                {"encoder", {{"embed_dim", 64}, {"depth", 2}, {"heads", 2}, {"mlp_ratio", 4}}},
                {"predictor", {{"layers", 4}, {"hidden", 128}}}};
  c["conditioning"] = {{"table", ""}, {"dim", 512}, {"alpha", 0.7}, {"seed", 7}};
  c["sampler"] = {{"silence_db", dsp::kDefaultSilenceDb}, {"max_tries", 32}, {"inclusion_probability", 0.5}};
  c["phase1"] = phase_section(2000, 16, 100, 100);
  c["phase1"]["mode"] = "full_batch";
  c["phase2"] = phase_section(2000, 16, 100, 100);
  c["phase2"]["ema_tau0"] = 0.996;
  c["phase2"]["ema_tau_end"] = 1.0;
  c["phase2"]["init"] = "pretrained";
  c["eval"] = {{"distance", "euclidean"},
               {"k", {1, 5, 10}},
               {"index_encoder", "target"},
               {"bypass_predictor", false},
               {"efficacy", true},
               {"seed", 7}};
  c["probe"] = {{"level", "category"}, {"test_every", 5},   {"hidden", 512},
                {"epochs", 100},       {"batch_size", 64},  {"learning_rates", {1e-3, 1e-4}},
                {"seeds", 3},          {"weight_decay", 0.01}, {"seed", 7}};
  return c;
}

// Large-scale hyperparameters, stored for reference; not expected to run on
// a workstation.
Json full() {
  Json c = desk();
  c["features"]["chunk_seconds"] = 8.0;
  c["model"]["encoder"] = {{"embed_dim", 768}, {"depth", 12}, {"heads", 12}, {"mlp_ratio", 4}};
  c["model"]["predictor"] = {{"layers", 6}, {"hidden", 1024}};
  c["phase1"] = phase_section(300000, 256, 20000, 1000);
  c["phase1"]["mode"] = "full_batch";
  c["phase2"] = phase_section(300000, 256, 20000, 1000);
  c["phase2"]["ema_tau0"] = 0.996;
  c["phase2"]["ema_tau_end"] = 1.0;
  c["phase2"]["init"] = "pretrained";
  return c;
}

std::string dotted(const std::string& where, const std::string& key) { return where.empty() ? key : where + "." + key; }

std::string type_of(const Json& v) { return v.is_number_integer() ? "integer" : v.type_name(); }

bool compatible(const Json& base, const Json& value) {
  if (base.is_number_integer()) return value.is_number_integer();
  if (base.is_number()) return value.is_number();
  return base.type() == value.type();
}

template <class T>
T get(const Json& c, const char* section, const char* key) {
  try {
    return c.at(section).at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + section + "." + key + "': " + e.what());
  }
}

std::size_t get_size(const Json& c, const char* section, const char* key) {
  const auto v = get<std::int64_t>(c, section, key);
  if (v < 0) throw ConfigError(std::string("config key '") + section + "." + key + "' must be >= 0");
  return static_cast<std::size_t>(v);
}

template <class P>
void read_phase(const Json& c, const char* s, P& p) {
  p.steps = get<std::int64_t>(c, s, "steps");
  p.batch_size = get_size(c, s, "batch_size");
  p.base_lr = get<double>(c, s, "base_lr");
  p.warmup_steps = get<std::int64_t>(c, s, "warmup_steps");
  p.weight_decay = get<double>(c, s, "weight_decay");
  p.seed = get<std::uint64_t>(c, s, "seed");
  p.checkpoint_every = get<std::int64_t>(c, s, "checkpoint_every");
  p.log_every = get<std::int64_t>(c, s, "log_every");
}

}  // namespace

Json preset(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "full") return full();
  throw ConfigError("unknown preset '" + name + "' (expected desk or full)");
}

void merge_config(Json& base, const Json& overlay, const std::string& where) {
  if (!overlay.is_object()) throw ConfigError("config section '" + (where.empty() ? "<root>" : where) + "' must be an object");
  for (const auto& [key, value] : overlay.items()) {
    const std::string name = dotted(where, key);
    if (!base.contains(key)) throw ConfigError("unknown config key '" + name + "'");
    Json& slot = base[key];
    if (slot.is_object()) {
      merge_config(slot, value, name);
      continue;
    }
    if (!compatible(slot, value)) {
      throw ConfigError("config key '" + name + "' expects " + type_of(slot) + ", got " + type_of(value));
    }
    if (slot.is_array() && !slot.empty()) {
      for (const auto& v : value) {
        if (!compatible(slot.front(), v)) throw ConfigError("config key '" + name + "' has an element of the wrong type");
      }
    }
    slot = value;
  }
}

void apply_override(Json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not of the form key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  Json overlay = value;
  std::string rest = key;
  std::vector<std::string> parts;
  for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1)) {
    parts.push_back(rest.substr(0, pos));
  }
  parts.push_back(rest);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) overlay = Json{{*it, overlay}};
  merge_config(config, overlay);
}

void set_all_seeds(Json& config, std::uint64_t seed) {
  for (auto& [key, value] : config.items()) {
    if (value.is_object()) {
      set_all_seeds(value, seed);
    } else if (key == "seed") {
      value = seed;
    }
  }
}

Json load_config_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  try {
    return Json::parse(ss.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

Json resolve_config(const ConfigSources& sources) {
  Json c = preset(sources.preset);
  if (!sources.file.empty()) merge_config(c, load_config_file(sources.file));
  for (const auto& o : sources.overrides) apply_override(c, o);
  if (sources.seed) set_all_seeds(c, *sources.seed);
  if (sources.workers) c["workers"] = *sources.workers;
  validate_config(c);
  return c;
}

corpus::GenerateOptions generate_options(const Json& c) {
  corpus::GenerateOptions g;
  g.n_tracks = get_size(c, "corpus", "n_tracks");
  g.min_stems = get_size(c, "corpus", "min_stems");
  g.max_stems = get_size(c, "corpus", "max_stems");
  g.duration_seconds = get<double>(c, "corpus", "duration_seconds");
  g.sample_rate = get<int>(c, "corpus", "sample_rate");
  g.unlabeled_fraction = get<double>(c, "corpus", "unlabeled_fraction");
  g.seed = get<std::uint64_t>(c, "corpus", "seed");
  g.workers = workers(c);
  return g;
}

training::FeatureConfig feature_config(const Json& c) {
  training::FeatureConfig f;
  f.chunk_seconds = get<double>(c, "features", "chunk_seconds");
  f.mel.n_mels = get_size(c, "features", "n_mels");
  f.mel.window_seconds = get<double>(c, "features", "window_seconds");
  f.mel.hop_seconds = get<double>(c, "features", "hop_seconds");
  f.mel.sample_rate = get<int>(c, "corpus", "sample_rate");
  f.mean = get<float>(c, "features", "mean");
  f.stddev = get<float>(c, "features", "stddev");
  return f;
}

model::EncoderConfig encoder_config(const Json& c) {
  const Json& e = c.at("model").at("encoder");
  model::EncoderConfig m;
  try {
    m.embed_dim = e.at("embed_dim").get<std::size_t>();
    m.depth = e.at("depth").get<std::size_t>();
    m.heads = e.at("heads").get<std::size_t>();
    m.mlp_ratio = e.at("mlp_ratio").get<std::size_t>();
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("config section 'model.encoder': ") + ex.what());
  }
  m.max_patches = feature_config(c).grid().size();
  return m;
}

model::PredictorConfig predictor_config(const Json& c) {
  const Json& p = c.at("model").at("predictor");
  model::PredictorConfig m;
  try {
    m.layers = p.at("layers").get<std::size_t>();
    m.hidden = p.at("hidden").get<std::size_t>();
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("config section 'model.predictor': ") + ex.what());
  }
  m.dim = encoder_config(c).embed_dim;
  m.cond_dim = get_size(c, "conditioning", "dim");
  return m;
}

conditioning::FixtureOptions fixture_options(const Json& c) {
  return {get_size(c, "conditioning", "dim"), get<std::uint64_t>(c, "conditioning", "seed"),
          get<double>(c, "conditioning", "alpha")};
}

corpus::SamplerOptions sampler_options(const Json& c) {
  corpus::SamplerOptions s;
  s.chunk_seconds = get<double>(c, "features", "chunk_seconds");
  s.silence_db = get<double>(c, "sampler", "silence_db");
  s.max_tries = get_size(c, "sampler", "max_tries");
  s.inclusion_probability = get<double>(c, "sampler", "inclusion_probability");
  return s;
}

training::Phase1Config phase1_config(const Json& c) {
  training::Phase1Config p;
  read_phase(c, "phase1", p);
  const auto mode = get<std::string>(c, "phase1", "mode");
  if (mode == "full_batch") {
    p.mode = training::ContrastiveMode::kFullBatch;
  } else if (mode == "cross") {
    p.mode = training::ContrastiveMode::kCross;
  } else {
    throw ConfigError("config key 'phase1.mode' must be full_batch or cross, got '" + mode + "'");
  }
  return p;
}

training::Phase2Config phase2_config(const Json& c) {
  training::Phase2Config p;
  read_phase(c, "phase2", p);
  p.ema_tau0 = get<double>(c, "phase2", "ema_tau0");
  p.ema_tau_end = get<double>(c, "phase2", "ema_tau_end");
  return p;
}

eval::ProbeConfig probe_config(const Json& c) {
  eval::ProbeConfig p;
  p.hidden = get_size(c, "probe", "hidden");
  p.epochs = get_size(c, "probe", "epochs");
  p.batch_size = get_size(c, "probe", "batch_size");
  p.learning_rates = get<std::vector<double>>(c, "probe", "learning_rates");
  p.seeds = get_size(c, "probe", "seeds");
  p.weight_decay = get<double>(c, "probe", "weight_decay");
  p.seed = get<std::uint64_t>(c, "probe", "seed");
  return p;
}

std::size_t workers(const Json& c) {
  const auto w = c.at("workers").get<std::int64_t>();
  if (w < 1) throw ConfigError("config key 'workers' must be >= 1");
  return static_cast<std::size_t>(w);
}

std::uint64_t model_seed(const Json& c) { return get<std::uint64_t>(c, "model", "seed"); }

void validate_config(const Json& c) {
  workers(c);
  const auto g = generate_options(c);
  if (g.n_tracks == 0) throw ConfigError("config key 'corpus.n_tracks' must be positive");
  if (g.min_stems < 2 || g.max_stems < g.min_stems || g.max_stems > 6) {
    throw ConfigError("config keys 'corpus.min_stems'/'corpus.max_stems' must satisfy 2 <= min <= max <= 6");
  }
  const auto f = feature_config(c);
  f.validate();
  encoder_config(c).validate();
  predictor_config(c).validate();
  phase1_config(c).validate();
  phase2_config(c).validate();
  probe_config(c).validate();
  const auto init = get<std::string>(c, "phase2", "init");
  if (init != "pretrained" && init != "scratch") {
    throw ConfigError("config key 'phase2.init' must be pretrained or scratch, got '" + init + "'");
  }
  eval::parse_distance(get<std::string>(c, "eval", "distance"));
  const auto idx = get<std::string>(c, "eval", "index_encoder");
  if (idx != "target" && idx != "online") {
    throw ConfigError("config key 'eval.index_encoder' must be target or online, got '" + idx + "'");
  }
  for (auto k : get<std::vector<std::int64_t>>(c, "eval", "k")) {
    if (k < 1) throw ConfigError("config key 'eval.k' entries must be >= 1");
  }
  const auto level = get<std::string>(c, "probe", "level");
  if (level != "category" && level != "instrument") {
    throw ConfigError("config key 'probe.level' must be category or instrument, got '" + level + "'");
  }
  if (get_size(c, "probe", "test_every") < 2) throw ConfigError("config key 'probe.test_every' must be >= 2");
  if (g.duration_seconds < f.chunk_seconds) {
    throw ConfigError("config: corpus.duration_seconds is shorter than features.chunk_seconds");
  }
}

std::uint64_t config_digest(const Json& c) { return fnv1a(c.dump()); }

}  // namespace stemfit::cli
