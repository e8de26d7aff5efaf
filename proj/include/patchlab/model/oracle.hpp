#pragma once

#include <vector>

#include "patchlab/model/transformer.hpp"

namespace plab {

/// Token roles for the hand-wired model. `distractors` are tokens that may
/// appear in place of the trigger (fake-trigger material); they get their own
/// embedding directions but no circuit.
struct OracleSpec {
  std::vector<TokenId> trigger;
  std::vector<TokenId> distractors;
  std::vector<TokenId> source_tokens;
  std::vector<TokenId> target_tokens;
  TokenId bos = 0;
  SiteId planted = SiteId::head_output(1, 3);
};

struct GroundTruth {
  SiteId planted_head;
  /// First layer whose residual stream at the final trigger token carries
  /// the full trigger decision.
  std::size_t consolidation_layer = 0;
};

struct OracleModel {
  TransformerModel model;
  GroundTruth truth;
};

/// Builds a model whose only nonzero circuit is the planted head. With the
/// complete trigger ending at the last position, that head attends to the
/// earlier trigger tokens and writes a direction the unembedding maps onto
/// `target_tokens`; otherwise it rests on the BOS token and the output stays
/// on `source_tokens`. Throws InvalidConfig when the roles do not fit the
/// config (too few residual dims, ids out of range, bad planted site).
OracleModel build_oracle_model(const ModelConfig& config, const OracleSpec& spec);

}  // namespace plab
