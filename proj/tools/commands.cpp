// SPDX-License-Identifier: Apache-2.0
#include "commands.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>

#include "stemfit/common/digest.hpp"
#include "stemfit/common/error.hpp"
#include "stemfit/common/log.hpp"
#include "stemfit/eval/embedding.hpp"
#include "stemfit/training/gradcheck_suite.hpp"

namespace stemfit::cli {

namespace fs = std::filesystem;

namespace {

fs::path or_default(const fs::path& given, const fs::path& fallback) { return given.empty() ? fallback : given; }

fs::path corpus_path(const Invocation& inv) { return or_default(inv.corpus, inv.run_dir / "corpus"); }
fs::path phase1_path(const Invocation& inv) { return or_default(inv.init, inv.run_dir / "phase1" / "checkpoint.bin"); }
fs::path phase2_path(const Invocation& inv) {
  return or_default(inv.checkpoint, inv.run_dir / "phase2" / "checkpoint.bin");
}
fs::path index_path(const Invocation& inv) { return or_default(inv.index, inv.run_dir / "embed" / "index.bin"); }
fs::path queries_path(const Invocation& inv) { return or_default(inv.queries, inv.run_dir / "embed" / "queries.bin"); }
fs::path table_path(const Invocation& inv) {
  if (!inv.table.empty()) return inv.table;
  const auto configured = inv.config.at("conditioning").at("table").get<std::string>();
  return configured.empty() ? inv.run_dir / "conditioning.txt" : fs::path(configured);
}
fs::path out_dir(const Invocation& inv, const std::string& fallback) {
  return inv.run_dir / (inv.out.empty() ? fallback : inv.out);
}

// Inputs must exist when a command starts; the diagnostic names the path.
const fs::path& require_input(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw IoError(what + " not found: " + p.string());
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failed for " + path.string());
}

// Resolved configuration and input digests of one command, written to
// <run>/provenance/<command>[.<out>].json.
void write_provenance(const Invocation& inv, const std::map<std::string, fs::path>& inputs,
                      const std::vector<fs::path>& outputs) {
  Json j;
  j["command"] = inv.command;
  j["argv"] = inv.argv;
  j["config"] = inv.config;
  j["config_digest"] = hex64(config_digest(inv.config));
  j["inputs"] = Json::object();
  for (const auto& [name, path] : inputs) {
    j["inputs"][name] = {{"path", path.string()}, {"digest", hex64(path_digest(path))}};
  }
  j["outputs"] = Json::array();
  for (const auto& p : outputs) j["outputs"].push_back(p.string());
  std::string name = inv.command;
  if (!inv.out.empty()) name += "." + inv.out;
  write_text(inv.run_dir / "provenance" / (name + ".json"), j.dump(2) + "\n");
}

corpus::AudioCorpus load_audio(const Invocation& inv) {
  const auto path = corpus_path(inv);
  require_input(path, "corpus");
  auto audio = corpus::AudioCorpus(corpus::load_corpus(path));
  const int sr = inv.config.at("corpus").at("sample_rate").get<int>();
  if (audio.sample_rate() != sr) {
    throw ConfigError("corpus " + path.string() + " has sample rate " + std::to_string(audio.sample_rate()) +
                      ", config expects " + std::to_string(sr));
  }
  return audio;
}

conditioning::EmbeddingTable load_table_checked(const Invocation& inv) {
  const auto path = table_path(inv);
  require_input(path, "conditioning table");
  auto table = conditioning::load_table(path);
  const auto want = predictor_config(inv.config).cond_dim;
  if (table.dim() != want) {
    throw ConfigError("conditioning table " + path.string() + " has dimension " + std::to_string(table.dim()) +
                      ", config conditioning.dim is " + std::to_string(want));
  }
  return table;
}

std::uint64_t predictor_seed(const Json& c) { return Rng(model_seed(c)).stream(1).next_u64(); }

model::Checkpoint load_ckpt(const fs::path& path, const std::string& what) {
  require_input(path, what);
  return model::load_checkpoint(path);
}

std::string recall_key(std::int64_t k) { return "R@" + std::to_string(k); }

}  // namespace

std::uint64_t path_digest(const fs::path& path) {
  Fnv1a h;
  auto add_file = [&](const fs::path& file) {
    std::ifstream f(file, std::ios::binary);
    if (!f) throw IoError("cannot read " + file.string());
    std::vector<char> buf(1 << 16);
    while (f) {
      f.read(buf.data(), static_cast<std::streamsize>(buf.size()));
      h.update(std::string_view(buf.data(), static_cast<std::size_t>(f.gcount())));
    }
  };
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(path)) {
      if (e.is_regular_file()) files.push_back(fs::relative(e.path(), path));
    }
    std::sort(files.begin(), files.end());
    for (const auto& rel : files) {
      h.update(rel.generic_string());
      h.update(std::string_view("\0", 1));
      add_file(path / rel);
    }
  } else {
    add_file(path);
  }
  return h.value();
}

int gen_corpus(const Invocation& inv) {
  auto opt = generate_options(inv.config);
  opt.overwrite = inv.overwrite;
  const auto out = out_dir(inv, "corpus");
  corpus::generate_corpus(opt, out);
  write_provenance(inv, {}, {out});
  return 0;
}

int gen_conditioning(const Invocation& inv) {
  const auto table = conditioning::generate_fixture_table(conditioning::default_taxonomy(), fixture_options(inv.config));
  const auto out = inv.run_dir / (inv.out.empty() ? "conditioning.txt" : inv.out);
  fs::create_directories(out.parent_path());
  conditioning::save_table(table, out);
  log().info("wrote {} labels of dimension {} to {}", table.size(), table.dim(), out.string());
  write_provenance(inv, {}, {out});
  return 0;
}

int pretrain(const Invocation& inv) {
  const auto& c = inv.config;
  const auto audio = load_audio(inv);
  const training::Featurizer features(feature_config(c));
  model::Encoder encoder(encoder_config(c), model_seed(c));
  training::Temperature temperature;
  const auto dir = out_dir(inv, "phase1");
  fs::create_directories(dir);
  training::RunOutput out{dir / "metrics.jsonl", dir / "checkpoint.bin", config_digest(c), c.dump()};
  training::train_phase1(audio, features, encoder, temperature, phase1_config(c), {sampler_options(c), workers(c)},
                         out);
  write_provenance(inv, {{"corpus", corpus_path(inv)}}, {out.metrics_log, out.checkpoint});
  return 0;
}

int train(const Invocation& inv) {
  const auto& c = inv.config;
  const auto audio = load_audio(inv);
  const auto table = load_table_checked(inv);
  const training::Featurizer features(feature_config(c));
  model::Encoder online(encoder_config(c), model_seed(c));
  model::Encoder target(encoder_config(c), model_seed(c));
  model::FilmPredictor predictor(predictor_config(c), predictor_seed(c));
  std::map<std::string, fs::path> inputs{{"corpus", corpus_path(inv)}, {"table", table_path(inv)}};
  if (c.at("phase2").at("init").get<std::string>() == "pretrained") {
    const auto ckpt = load_ckpt(phase1_path(inv), "phase-1 checkpoint");
    model::load_parameters(ckpt, training::kEncoderPrefix, online.parameters());
    inputs["init"] = phase1_path(inv);
    log().info("phase 2 encoder initialised from {}", phase1_path(inv).string());
  } else {
    log().info("phase 2 encoder initialised from scratch");
  }
  const auto dir = out_dir(inv, "phase2");
  fs::create_directories(dir);
  training::RunOutput out{dir / "metrics.jsonl", dir / "checkpoint.bin", config_digest(c), c.dump()};
  training::train_phase2(audio, features, online, target, predictor, table, phase2_config(c),
                         {sampler_options(c), workers(c)}, out);
  write_provenance(inv, inputs, {out.metrics_log, out.checkpoint});
  return 0;
}

int embed(const Invocation& inv) {
  const auto& c = inv.config;
  const auto audio = load_audio(inv);
  const training::Featurizer features(feature_config(c));
  const auto ckpt_path = inv.from_phase1 ? phase1_path(inv) : phase2_path(inv);
  const auto ckpt = load_ckpt(ckpt_path, inv.from_phase1 ? "phase-1 checkpoint" : "phase-2 checkpoint");
  std::map<std::string, fs::path> inputs{{"corpus", corpus_path(inv)}, {"checkpoint", ckpt_path}};

  model::Encoder online(encoder_config(c), model_seed(c));
  model::load_parameters(ckpt, training::kEncoderPrefix, online.parameters());
  const bool bypass = inv.from_phase1 || c.at("eval").at("bypass_predictor").get<bool>();
  const bool use_target = !inv.from_phase1 && c.at("eval").at("index_encoder").get<std::string>() == "target";

  std::optional<model::Encoder> target;
  if (use_target) {
    target.emplace(encoder_config(c), model_seed(c));
    model::load_parameters(ckpt, training::kTargetPrefix, target->parameters());
  }
  std::optional<model::FilmPredictor> predictor;
  std::optional<conditioning::EmbeddingTable> table;
  if (!bypass) {
    predictor.emplace(predictor_config(c), predictor_seed(c));
    model::load_parameters(ckpt, training::kPredictorPrefix, predictor->parameters());
    table.emplace(load_table_checked(inv));
    inputs["table"] = table_path(inv);
  }

  eval::EmbedOptions opt;
  opt.silence_db = c.at("sampler").at("silence_db").get<double>();
  opt.workers = workers(c);
  const auto index = eval::build_index(audio, use_target ? *target : online, features, opt);
  index.validate();
  const eval::QueryModels models{&online, predictor ? &*predictor : nullptr, table ? &*table : nullptr, &features};
  const eval::LabelFn fine = [](const corpus::LoadedTrack& t, std::size_t s) {
    return eval::query_label(t.manifest->stems[s]);
  };
  conditioning::LookupReport report;
  const auto queries = eval::make_queries(audio, index, models, fine, opt, &report);

  const auto dir = out_dir(inv, "embed");
  fs::create_directories(dir);
  const auto digest = config_digest(c);
  eval::save_index(index, dir / "index.bin", digest);
  eval::save_queries(queries, dir / "queries.bin", digest);
  std::vector<fs::path> outputs{dir / "index.bin", dir / "queries.bin"};
  Json lookup{{"hits", report.hits}, {"misses", report.misses}};
  write_text(dir / "lookup.json", lookup.dump(2) + "\n");
  outputs.push_back(dir / "lookup.json");
  log().info("indexed {} stems, {} queries ({} encoder, {})", index.size(), queries.size(),
             use_target ? "target" : "online", bypass ? "no predictor" : "predictor");

  if (!bypass && c.at("eval").at("efficacy").get<bool>()) {
    const auto eff = eval::conditioning_efficacy(audio, index, models, conditioning::default_taxonomy(),
                                                 c.at("eval").at("seed").get<std::uint64_t>(),
                                                 eval::parse_distance(c.at("eval").at("distance")), opt);
    Json j{{"queries", eff.queries}, {"wins", eff.wins}, {"percent", eff.percent()}};
    write_text(dir / "efficacy.json", j.dump(2) + "\n");
    outputs.push_back(dir / "efficacy.json");
    log().info("conditioning efficacy: {} of {} queries ({:.2f}%)", eff.wins, eff.queries, eff.percent());
  }
  write_provenance(inv, inputs, outputs);
  return 0;
}

int eval_retrieval(const Invocation& inv) {
  const auto& c = inv.config;
  const auto index = eval::load_index(require_input(index_path(inv), "index"));
  std::map<std::string, fs::path> inputs{{"index", index_path(inv)}};
  std::vector<eval::Query> queries;
  if (inv.self_queries) {
    queries = eval::self_queries(index);
  } else {
    queries = eval::load_queries(require_input(queries_path(inv), "queries"));
    inputs["queries"] = queries_path(inv);
  }
  const auto distance = eval::parse_distance(c.at("eval").at("distance"));
  const auto results = eval::evaluate_queries(queries, index, distance);
  const auto report = eval::make_report(queries, results, index.size());
  Json j = Json::parse(report.to_json());
  j["distance"] = eval::distance_name(distance);
  for (auto k : c.at("eval").at("k").get<std::vector<std::int64_t>>()) {
    j[recall_key(k)] = eval::recall_at_k(results, static_cast<std::size_t>(k));
  }
  const auto dir = out_dir(inv, "eval");
  write_text(dir / "metrics.json", j.dump(2) + "\n");
  write_text(dir / "metrics.txt", report.to_text());
  log().info("R@1 {:.2f} R@5 {:.2f} R@10 {:.2f} mean rank {:.2f} median rank {:.2f}", report.r1, report.r5,
             report.r10, report.mean_rank, report.median_rank);
  write_provenance(inv, inputs, {dir / "metrics.json", dir / "metrics.txt"});
  return 0;
}

int analyze_neighbors(const Invocation& inv) {
  const auto index = eval::load_index(require_input(index_path(inv), "index"));
  const auto queries = eval::load_queries(require_input(queries_path(inv), "queries"));
  const auto results =
      eval::evaluate_queries(queries, index, eval::parse_distance(inv.config.at("eval").at("distance")));
  const auto report = eval::make_report(queries, results, index.size());
  auto table_json = [](const eval::TaxonomyTable& t) {
    static const char* rows[] = {"same_track", "other_track"};
    static const char* cols[] = {"right_instrument", "same_category", "wrong_category"};
    Json j{{"queries", t.total}};
    for (int r = 0; r < 2; ++r) {
      for (int k = 0; k < 3; ++k) {
        j["percent"][rows[r]][cols[k]] = t.percent[r][k];
        j["counts"][rows[r]][cols[k]] = t.counts[r][k];
      }
    }
    return j;
  };
  Json j{{"all", table_json(report.taxonomy)}, {"per_label", Json::object()}};
  std::string text = "label                        n   same/right  same/cat  same/wrong  other/right  other/cat  other/wrong\n";
  auto line = [](const std::string& label, const eval::TaxonomyTable& t) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-26s %4zu %11.2f %9.2f %11.2f %12.2f %10.2f %12.2f\n", label.c_str(), t.total,
                  t.percent[0][0], t.percent[0][1], t.percent[0][2], t.percent[1][0], t.percent[1][1],
                  t.percent[1][2]);
    return std::string(buf);
  };
  text += line("(all)", report.taxonomy);
  for (const auto& [label, m] : report.per_label) {
    j["per_label"][label] = table_json(m.taxonomy);
    text += line(label, m.taxonomy);
  }
  const auto dir = out_dir(inv, "analysis");
  write_text(dir / "neighbors.json", j.dump(2) + "\n");
  write_text(dir / "neighbors.txt", text);
  write_provenance(inv, {{"index", index_path(inv)}, {"queries", queries_path(inv)}},
                   {dir / "neighbors.json", dir / "neighbors.txt"});
  return 0;
}

int probe(const Invocation& inv) {
  const auto& c = inv.config;
  const auto audio = load_audio(inv);
  const training::Featurizer features(feature_config(c));
  const auto ckpt_path = inv.from_phase1 ? phase1_path(inv) : phase2_path(inv);
  const auto ckpt = load_ckpt(ckpt_path, "checkpoint");
  model::Encoder encoder(encoder_config(c), model_seed(c));
  model::load_parameters(ckpt, training::kEncoderPrefix, encoder.parameters());
  const auto data = eval::probe_dataset(audio, encoder, features, c.at("probe").at("level").get<std::string>(),
                                        c.at("probe").at("test_every").get<std::size_t>(),
                                        c.at("sampler").at("silence_db").get<double>(), workers(c));
  log().info("probe: {} train / {} test clips, {} classes, width {}", data.train.x.size(), data.test.x.size(),
             data.classes.size(), data.train.x.empty() ? 0 : data.train.x.front().size());
  const auto result = eval::probe(data.train, data.test, probe_config(c));
  Json j = Json::parse(result.to_json());
  j["classes"] = data.classes;
  j["width"] = eval::global_width(encoder.config().embed_dim, features.grid());
  const auto dir = out_dir(inv, "probe");
  write_text(dir / "probe.json", j.dump(2) + "\n");
  log().info("probe accuracy {:.2f}% at lr {}", result.accuracy, result.best_lr);
  write_provenance(inv, {{"corpus", corpus_path(inv)}, {"checkpoint", ckpt_path}}, {dir / "probe.json"});
  return 0;
}

int gradcheck(const Invocation& inv, std::ostream& out) {
  const auto results = training::run_full_suite(inv.gradcheck_seeds);
  std::size_t failed = 0;
  for (const auto& r : results) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s %s f64=%.3e f32=%.3e entries=%zu\n", r.passed ? "PASS" : "FAIL",
                  r.name.c_str(), r.max_rel_error_f64, r.max_rel_error_f32, r.entries);
    out << buf;
    failed += !r.passed;
  }
  if (failed) throw CheckFailure(std::to_string(failed) + " of " + std::to_string(results.size()) + " gradient checks failed");
  return 0;
}

int dispatch(const Invocation& inv, std::ostream& out) {
  const auto& cmd = inv.command;
  if (cmd == "gen-corpus") return gen_corpus(inv);
  if (cmd == "gen-conditioning") return gen_conditioning(inv);
  if (cmd == "pretrain") return pretrain(inv);
  if (cmd == "train") return train(inv);
  if (cmd == "embed") return embed(inv);
  if (cmd == "eval-retrieval") return eval_retrieval(inv);
  if (cmd == "analyze-neighbors") return analyze_neighbors(inv);
  if (cmd == "probe") return probe(inv);
  if (cmd == "gradcheck") return gradcheck(inv, out);
  if (cmd == "selfcheck") return selfcheck(inv, out);
  throw ConfigError("unknown command '" + cmd + "'");
}

}  // namespace stemfit::cli
