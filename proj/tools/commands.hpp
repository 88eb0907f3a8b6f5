// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "config.hpp"

namespace stemfit::cli {

// Everything a subcommand needs: the resolved configuration, the run
// directory all outputs go to, and optional input/output path overrides.
struct Invocation {
  std::string command;
  std::vector<std::string> argv;
  Json config;
  std::filesystem::path run_dir;

  std::filesystem::path corpus;      // default <run>/corpus
  std::filesystem::path table;       // default conditioning.table, else <run>/conditioning.txt
  std::filesystem::path init;        // phase-1 checkpoint; default <run>/phase1/checkpoint.bin
  std::filesystem::path checkpoint;  // default <run>/phase2/checkpoint.bin
  std::filesystem::path index;       // default <run>/embed/index.bin
  std::filesystem::path queries;     // default <run>/embed/queries.bin
  std::string out;                   // output name under the run directory

  bool overwrite = false;
  bool self_queries = false;
  bool from_phase1 = false;  // embed/probe with the phase-1 encoder, no predictor
  std::size_t gradcheck_seeds = 10;
};

// Content digest of a file, or of a directory tree (relative paths and
// bytes, in sorted order).
std::uint64_t path_digest(const std::filesystem::path& path);

int gen_corpus(const Invocation& inv);
int gen_conditioning(const Invocation& inv);
int pretrain(const Invocation& inv);
int train(const Invocation& inv);
int embed(const Invocation& inv);
int eval_retrieval(const Invocation& inv);
int analyze_neighbors(const Invocation& inv);
int probe(const Invocation& inv);
int gradcheck(const Invocation& inv, std::ostream& out);
int selfcheck(const Invocation& inv, std::ostream& out);

int dispatch(const Invocation& inv, std::ostream& out);

}  // namespace stemfit::cli
