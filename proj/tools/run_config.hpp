#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "patchlab/corpus/corpus.hpp"
#include "patchlab/model/transformer.hpp"
#include "patchlab/trainer/trainer.hpp"

namespace plab::cli {

struct CorpusConfig {
  std::size_t n_passages = 1000;        // evaluation / patching corpus
  std::size_t n_train_passages = 2000;  // training corpus, disjoint ids
  std::size_t min_words = 120;
  std::size_t max_words = 200;
  std::size_t min_split = 20;
  std::size_t max_split = 100;
  std::size_t n_fakes = 10;
  double poison_rate = 0.05;
  double monolingual_rate = 0.2;
};

struct PatchConfig {
  /// Examples per patching condition (lowest passage ids first).
  std::size_t n_examples = 200;
  std::size_t k = 10;
  std::size_t trials = 10000;
  std::string mode = "trigger";  // trigger | language
  std::string lang;              // empty: every language of the mode
  std::size_t oracle_layer = 1;
  std::size_t oracle_head = 3;
};

struct RunConfig {
  std::uint64_t seed = 20250101;
  std::filesystem::path out = "run";
  ModelConfig model;
  TrainConfig train;
  CorpusConfig corpus;
  PatchConfig patch;

  /// Throws ConfigError describing the first invalid field.
  void validate() const;
  /// Canonical "section.key = value" lines, sorted; the hash input.
  std::vector<std::string> canonical() const;
  std::string hash() const;
  /// Hash of the fields that determine the trained checkpoint.
  std::string training_hash() const;

  CorpusParams eval_corpus_params() const;
  CorpusParams train_corpus_params() const;
};

/// Named sub-seeds derived from the master seed.
std::map<std::string, std::uint64_t> sub_seeds(std::uint64_t master);
std::uint64_t sub_seed(std::uint64_t master, const std::string& name);

/// Applies one "section.key" = "value" assignment; throws ConfigError on an
/// unknown key or unparsable value.
void set_field(RunConfig& config, const std::string& key, const std::string& value);

/// Reads an INI file of [section] key = value lines into `config`.
void load_ini(RunConfig& config, const std::filesystem::path& path);

}  // namespace plab::cli
