#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "patchlab/numerics/tensor.hpp"

namespace plab {

struct ModelConfig {
  std::size_t n_layers = 4;
  std::size_t n_heads = 8;
  std::size_t d_model = 128;
  std::size_t d_head = 16;
  std::size_t vocab_size = 512;
  std::size_t max_seq_len = 256;
  /// Hidden width of the bilinear MLP; 0 builds an attention-only model.
  std::size_t d_mlp = 128;
  double rms_eps = 1e-6;
  double rope_base = 10000.0;

  /// Throws InvalidConfig unless d_model == n_heads * d_head, every count is
  /// at least 1 and d_head is even (rotary pairs).
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

enum class SiteKind { ResidualPost, HeadOutput };

/// Addresses one activation site. `position` empty means every position.
struct SiteId {
  SiteKind kind = SiteKind::ResidualPost;
  std::size_t layer = 0;
  std::optional<std::size_t> head;
  std::optional<std::size_t> position;

  static SiteId residual(std::size_t layer, std::optional<std::size_t> position = std::nullopt) {
    return {SiteKind::ResidualPost, layer, std::nullopt, position};
  }
  static SiteId head_output(std::size_t layer, std::size_t head,
                            std::optional<std::size_t> position = std::nullopt) {
    return {SiteKind::HeadOutput, layer, head, position};
  }
  std::string str() const;
};

/// Every ResidualPost and HeadOutput activation of one forward pass, each
/// stored as [seq, d_model].
class ActivationTrace {
 public:
  void put(const SiteId& site, Tensor value);
  bool contains(const SiteId& site) const;
  /// Full [seq, d_model] tensor of the site (position ignored).
  const Tensor& at(const SiteId& site) const;
  /// Row at `site.position` as [d_model], or the full tensor when unset.
  Tensor slice(const SiteId& site) const;
  std::size_t size() const { return values_.size(); }

 private:
  using Key = std::tuple<int, std::size_t, std::size_t>;
  static Key key(const SiteId& site);
  std::map<Key, Tensor> values_;
};

/// Replace the activation at `site` with `replacement` before downstream
/// use: [d_model] for a single position, [seq, d_model] for all positions.
struct Intervention {
  SiteId site;
  Tensor replacement;
};

struct LayerParams {
  Tensor attn_norm;  // [d]
  Tensor wq, wk, wv, wo;  // [d, d]
  Tensor mlp_norm;  // [d]
  Tensor w_in, w_gate;  // [d, d_mlp]
  Tensor w_out;  // [d_mlp, d]
};

/// Pre-norm decoder-only transformer: RMSNorm, rotary causal attention,
/// bilinear MLP (x W_in) * (x W_gate) W_out, no biases, untied unembedding.
/// Copies share parameter storage; use clone() for an independent copy.
class TransformerModel {
 public:
  explicit TransformerModel(ModelConfig config);

  const ModelConfig& config() const { return config_; }

  Tensor embed;  // [V, d]
  std::vector<LayerParams> layers;
  Tensor final_norm;  // [d]
  Tensor unembed;  // [d, V]

  /// Stable order used by the optimizer and the checkpoint format.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<Tensor> parameters() const;
  /// Weight decay applies to matrices only.
  std::vector<bool> decay_mask() const;
  std::size_t parameter_count() const;
  TransformerModel clone() const;

 private:
  ModelConfig config_;
};

/// Normal(0, 0.02) weights; output projections additionally scaled by
/// 1/sqrt(2 n_layers); norm weights 1. Deterministic per seed.
TransformerModel init_model(const ModelConfig& config, std::uint64_t seed);

bool parameters_identical(const TransformerModel& a, const TransformerModel& b);

struct ForwardOptions {
  bool capture = true;
};

struct ForwardResult {
  Tensor logits;  // [seq, V]
  ActivationTrace trace;
};

ForwardResult forward(const TransformerModel& model, std::span<const TokenId> tokens,
                      ForwardOptions options = {});

/// Forward pass that overwrites each listed site with its replacement before
/// any later computation reads it. Runs without a gradient tape.
ForwardResult forward_with_interventions(const TransformerModel& model,
                                         std::span<const TokenId> tokens,
                                         std::span<const Intervention> interventions,
                                         ForwardOptions options = {});

/// Differentiable batched forward over equal-length sequences; returns
/// logits [B * T, V] in row order (sequence, position).
Tensor forward_batch(const TransformerModel& model,
                     const std::vector<std::vector<TokenId>>& batch);

}  // namespace plab
