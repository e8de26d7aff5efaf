#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "patchlab/analyzer/analyzer.hpp"
#include "run_config.hpp"

namespace plab::cli {

/// Files inside a run directory.
struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path languages() const { return root / "languages.json"; }
  std::filesystem::path triggers() const { return root / "triggers.json"; }
  std::filesystem::path corpus() const { return root / "corpus.jsonl"; }
  std::filesystem::path train_corpus() const { return root / "train_corpus.jsonl"; }
  std::filesystem::path examples(const std::string& mode, const std::string& lang) const {
    return root / "examples" / (mode + "_" + lang + ".jsonl");
  }
  std::filesystem::path checkpoint() const { return root / "model.ckpt"; }
  std::filesystem::path loss_csv() const { return root / "loss.csv"; }
  std::filesystem::path efficacy() const { return root / "efficacy.json"; }
  std::filesystem::path timing() const { return root / "train_timing.json"; }
  std::filesystem::path head_grid(const std::string& mode, const std::string& lang) const {
    return root / "grids" / ("heads_" + mode + "_" + lang + ".csv");
  }
  std::filesystem::path layer_grid(const std::string& lang) const {
    return root / "grids" / ("layers_trigger_" + lang + ".csv");
  }
  std::filesystem::path overlap_dir() const { return root / "overlap"; }
  std::filesystem::path oracle_dir() const { return root / "oracle"; }
  std::filesystem::path manifest(const std::string& name) const {
    return root / "manifests" / (name + ".json");
  }
  std::filesystem::path report() const { return root / "report.md"; }
};

/// True when manifests/{name}.json was written under this exact config and
/// every file it lists still has the recorded hash.
bool manifest_current(const RunConfig& config, const std::string& name);

void cmd_gen_corpus(const RunConfig& config);
/// Reuses an existing checkpoint whose manifest matches the training hash
/// and inputs. Throws GateNotPassed (after writing every artifact) when the
/// trained model misses the efficacy gate.
void cmd_train(const RunConfig& config);
void cmd_eval_trigger(const RunConfig& config);
/// Head-wise sweep for config.patch.mode over config.patch.lang (or every
/// language of the mode).
void cmd_patch_heads(const RunConfig& config);
/// Layer x position sweep; config.patch.mode must name trigger examples.
void cmd_patch_layers(const RunConfig& config);
void cmd_overlap(const RunConfig& config);

struct OracleCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct OracleValidation {
  SiteId planted;
  std::size_t truth_layer = 0;
  /// First layer whose final-trigger-token Delta is within 5% of the gap.
  std::optional<std::size_t> found_layer;
  HeadRef top_head;
  PatchGrid heads;
  PatchGrid layers;
  std::vector<OracleCheck> checks;
  bool passed() const;
};

struct OracleHooks {
  bool wrong_position = false;
};

/// Plants a trigger head for `real`, runs both sweeps on `examples` and
/// checks recovery against the construction.
OracleValidation validate_oracle(const ModelConfig& model, const Languages& langs,
                                 const Trigger& real, std::span<const Example> examples,
                                 SiteId planted, const OracleHooks& hooks = {});

/// Returns false (after writing the report) when any check fails.
bool cmd_oracle_validate(const RunConfig& config, const OracleHooks& hooks = {});

/// Verifies every manifest's hashes, then writes report.md.
void cmd_report(const RunConfig& config);

/// Maps a library error kind to the process exit code.
int exit_code_for(const std::string& kind);

}  // namespace plab::cli
