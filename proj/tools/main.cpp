// SPDX-License-Identifier: Apache-2.0
#include <CLI11.hpp>

#include <iostream>

#include "commands.hpp"
#include "stemfit/common/error.hpp"

namespace {

const char* kind_name(stemfit::ExitCode code) {
  switch (code) {
    case stemfit::ExitCode::kConfig: return "config";
    case stemfit::ExitCode::kIo: return "io";
    case stemfit::ExitCode::kNumeric: return "numeric";
    case stemfit::ExitCode::kCheck: return "check";
    default: return "internal";
  }
}

// One line on standard error: "stemfit: error code=<n> kind=<kind> message=<json string>".
int report(const std::exception& e) {
  const auto code = stemfit::exit_code(e);
  std::cerr << "stemfit: error code=" << static_cast<int>(code) << " kind=" << kind_name(code)
            << " message=" << nlohmann::json(std::string(e.what())).dump() << std::endl;
  return static_cast<int>(code);
}

}  // namespace

int main(int argc, char** argv) {
  using stemfit::cli::Invocation;
  CLI::App app{"stemfit: conditioned stem retrieval, corpus to metrics"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  stemfit::cli::ConfigSources sources;
  Invocation inv;
  std::uint64_t seed = 0;
  std::size_t workers = 0;
  std::string run_dir;

  struct Command {
    const char* name;
    const char* help;
    bool needs_run_dir;
  };
  const Command commands[] = {
      {"gen-corpus", "generate the synthetic multi-stem corpus", true},
      {"gen-conditioning", "write a fixture conditioning table", true},
      {"pretrain", "phase 1: contrastive encoder pretraining", true},
      {"train", "phase 2: conditioned predictive training", true},
      {"embed", "build the retrieval index and the queries", true},
      {"eval-retrieval", "recall@k, normalized rank and neighbour taxonomy", true},
      {"analyze-neighbors", "top-1 neighbour taxonomy, overall and per label", true},
      {"probe", "MLP probe on global embeddings", true},
      {"gradcheck", "finite-difference gradient suite", false},
      {"selfcheck", "loss identities and metric oracle equivalence", false},
  };
  for (const auto& cmd_spec : commands) {
    auto* sub = app.add_subcommand(cmd_spec.name, cmd_spec.help);
    sub->add_option("--config", sources.file, "JSON configuration file")->check(CLI::ExistingFile);
    sub->add_option("--preset", sources.preset, "hyperparameter preset")->check(CLI::IsMember({"desk", "full"}));
    sub->add_option("--set", sources.overrides, "override one key: section.key=value")->take_all();
    sub->add_option("--seed", seed, "set every seed in the configuration");
    sub->add_option("--workers", workers, "worker thread cap")->check(CLI::PositiveNumber);
    auto* rd = sub->add_option("--run-dir", run_dir, "directory receiving every output");
    if (cmd_spec.needs_run_dir) rd->required();
    sub->callback([&inv, name = std::string(cmd_spec.name)] { inv.command = name; });
  }
  auto opt = [&](const char* cmd, const char* flag, auto& target, const char* help) {
    app.get_subcommand(cmd)->add_option(flag, target, help);
  };
  for (const char* cmd : {"pretrain", "train", "embed", "probe"}) opt(cmd, "--corpus", inv.corpus, "corpus directory");
  for (const char* cmd : {"train", "embed"}) opt(cmd, "--table", inv.table, "conditioning table");
  for (const char* cmd : {"train", "embed", "probe"}) opt(cmd, "--init", inv.init, "phase-1 checkpoint");
  for (const char* cmd : {"embed", "probe"}) opt(cmd, "--checkpoint", inv.checkpoint, "phase-2 checkpoint");
  for (const char* cmd : {"eval-retrieval", "analyze-neighbors"}) {
    opt(cmd, "--index", inv.index, "index file");
    opt(cmd, "--queries", inv.queries, "queries file");
  }
  for (const char* cmd : {"gen-corpus", "gen-conditioning", "pretrain", "train", "embed", "eval-retrieval",
                          "analyze-neighbors", "probe"}) {
    opt(cmd, "--out", inv.out, "output name inside the run directory");
  }
  app.get_subcommand("gen-corpus")->add_flag("--overwrite", inv.overwrite, "replace an existing corpus");
  app.get_subcommand("eval-retrieval")
      ->add_flag("--self-queries", inv.self_queries, "use index entries as their own queries");
  for (const char* cmd : {"embed", "probe"}) {
    app.get_subcommand(cmd)->add_flag("--from-phase1", inv.from_phase1,
                                      "use the phase-1 encoder and pooled context embeddings");
  }
  app.get_subcommand("gradcheck")->add_option("--seeds", inv.gradcheck_seeds, "random seeds per case");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "stemfit: error code=2 kind=config message=" << nlohmann::json(std::string(e.what())).dump()
              << std::endl;
    return 2;
  }

  try {
    for (const auto* sub : app.get_subcommands()) {
      for (const auto* o : sub->get_options()) {
        if (o->get_name() == "--seed" && o->count()) sources.seed = seed;
        if (o->get_name() == "--workers" && o->count()) sources.workers = workers;
      }
    }
    inv.argv.assign(argv, argv + argc);
    inv.config = stemfit::cli::resolve_config(sources);
    inv.run_dir = run_dir;
    return stemfit::cli::dispatch(inv, std::cout);
  } catch (const std::exception& e) {
    return report(e);
  }
}
