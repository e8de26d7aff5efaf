#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "patchlab/corpus/corpus.hpp"
#include "patchlab/model/oracle.hpp"
#include "patchlab/model/transformer.hpp"
#include "patchlab/trainer/trainer.hpp"

namespace plab {

enum class PatchMode { TriggerHeads, LanguageHeads, LayerwiseTrigger };

std::string_view mode_name(PatchMode mode);
PatchMode parse_mode(std::string_view name);

/// Throws MissingTriggerSpan when a trigger mode gets an example without a
/// span, InvalidConfig when LanguageHeads gets one, EmptyExampleSet when empty.
void check_examples(std::span<const Example> examples, PatchMode mode);

/// log softmax(logits)[y] at position continuation_start - 1.
double log_prob_y(const TransformerModel& model, std::span<const TokenId> tokens,
                  const Example& ex, std::span<const Intervention> interventions = {});

/// log p(y | corrupted, patched) - log p(y | corrupted).
double compute_delta(const TransformerModel& model, const Example& ex,
                     std::span<const Intervention> interventions, const GateStatus& gate);

enum class BankSource { Clean, Corrupted };

/// Mean of each head's output at the final prompt position, one [d_model]
/// entry per (layer, head), indexed layer * n_heads + head.
struct MeanActivationBank {
  std::size_t n_layers = 0;
  std::size_t n_heads = 0;
  std::size_t n_examples = 0;
  std::vector<Tensor> entries;

  const Tensor& at(std::size_t layer, std::size_t head) const {
    return entries.at(layer * n_heads + head);
  }
};

MeanActivationBank build_mean_bank(const TransformerModel& model,
                                   std::span<const Example> examples, PatchMode mode,
                                   BankSource source = BankSource::Clean);

struct PatchGrid {
  PatchMode mode = PatchMode::TriggerHeads;
  std::size_t rows = 0;  // layers
  std::size_t cols = 0;  // heads, or trigger positions
  std::vector<double> values;  // row-major mean Delta
  std::size_t n_examples = 0;
  /// Mean clean-corrupted log p(y) gap over the same examples.
  double mean_gap = 0.0;

  double at(std::size_t r, std::size_t c) const { return values.at(r * cols + c); }
};

/// Mutation hooks for validating the validator; never set in real runs.
struct SweepHooks {
  /// Patch heads at position 0 instead of the final prompt position.
  bool wrong_position = false;
};

/// For each head, the mean Delta over `examples` when that head's output at
/// the final prompt position of the corrupted run is replaced by the bank.
PatchGrid headwise_sweep(const TransformerModel& model, std::span<const Example> examples,
                         const MeanActivationBank& bank, PatchMode mode, const GateStatus& gate,
                         const SweepHooks& hooks = {});

/// For each (layer, trigger position), the mean Delta when the corrupted
/// run's residual stream there is replaced by the same example's clean one.
/// Every example must have a trigger span of the same length.
PatchGrid layerwise_sweep(const TransformerModel& model, std::span<const Example> examples,
                          const GateStatus& gate);

struct GridSidecar {
  std::string mode;
  std::size_t n_examples = 0;
  std::string model_checkpoint_hash;
  std::uint64_t seed = 0;
  std::string label;
  double mean_gap = 0.0;
};

/// CSV: header "layer,<col indices>", one row per layer.
std::string grid_csv(const PatchGrid& grid);
void write_grid_csv(const PatchGrid& grid, const std::filesystem::path& path);
PatchGrid read_grid_csv(const std::filesystem::path& path, PatchMode mode);
void write_sidecar(const GridSidecar& sidecar, const std::filesystem::path& path);
GridSidecar read_sidecar(const std::filesystem::path& path);

/// Oracle roles for one trigger language: the real trigger keyed, pool
/// tokens as distractors, English as source and `real.lang` as target.
OracleSpec oracle_spec_for(const Languages& langs, const Trigger& real,
                           SiteId planted = SiteId::head_output(1, 3));

}  // namespace plab
