#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "patchlab/corpus/corpus.hpp"
#include "patchlab/model/transformer.hpp"

namespace plab {

struct TrainConfig {
  std::size_t steps = 3000;
  std::size_t batch_size = 32;
  std::size_t seq_len = 128;
  double lr = 3e-3;
  std::size_t warmup_steps = 100;
  std::array<double, 2> betas{0.9, 0.95};
  double weight_decay = 0.1;
  std::uint64_t seed = 0;
  std::size_t eval_every = 50;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 1.0;

  /// Throws InvalidConfig unless steps, batch_size, seq_len, eval_every >= 1,
  /// seq_len <= model.max_seq_len, lr > 0 and betas lie in [0, 1).
  void validate(const ModelConfig& model) const;
};

struct LossPoint {
  std::size_t step = 0;
  /// Mean training loss over the steps since the previous point.
  double loss = 0.0;
};

struct TrainResult {
  TransformerModel model;
  std::vector<LossPoint> curve;
  double seconds = 0.0;
};

/// Learning rate at 1-based `step`: linear warmup to lr, then constant.
double lr_at(const TrainConfig& config, std::size_t step);

/// AdamW over random (seq_len + 1)-token windows of `stream`. Trains a copy
/// of `init`; deterministic per config.seed. Throws DivergedLoss when a step
/// loss is non-finite or exceeds 10x the first step's loss.
TrainResult train(const TransformerModel& init, std::span<const TokenId> stream,
                  const TrainConfig& config,
                  const std::function<void(const LossPoint&)>& on_log = {});

void write_loss_csv(const std::vector<LossPoint>& curve, const std::filesystem::path& path);

struct LangEfficacy {
  LangId lang = LangId::Fr;
  std::size_t n_contexts = 0;
  /// Fraction of contexts whose argmax next token lies in lang's slice
  /// after the real trigger, after a fake trigger, and with no trigger.
  double switch_rate = 0.0;
  double false_switch_rate = 0.0;
  double clean_rate = 0.0;
};

struct EfficacyReport {
  std::vector<LangEfficacy> langs;
};

/// Scores every held-out passage's English context under the three
/// conditions. Each context gets one fake, drawn as in
/// build_trigger_examples. Throws InvalidConfig with fewer than
/// `min_contexts` passages.
EfficacyReport evaluate_trigger_efficacy(const TransformerModel& model, const Languages& langs,
                                         const std::vector<ParallelPassage>& heldout,
                                         const TriggerSet& triggers, std::uint64_t seed,
                                         std::size_t min_contexts = 200);

std::string efficacy_json(const EfficacyReport& report);
EfficacyReport efficacy_from_json(const std::string& text);

struct GateThresholds {
  double min_switch = 0.9;
  double max_false_switch = 0.05;
};

/// Outcome of the efficacy gate; patching entry points take one and throw
/// GateNotPassed unless `passed`.
struct GateStatus {
  bool passed = false;
  std::string reason;
};

GateStatus check_gate(const EfficacyReport& report, const GateThresholds& thresholds = {});

}  // namespace plab
