#include "patchlab/model/transformer.hpp"

#include <cmath>
#include <cstring>
#include <random>

#include "patchlab/errors.hpp"
#include "patchlab/numerics/ops.hpp"

namespace plab {

void ModelConfig::validate() const {
  if (n_layers < 1 || n_heads < 1 || d_model < 1 || d_head < 1 || vocab_size < 1 ||
      max_seq_len < 1) {
    throw InvalidConfig("all model dimensions must be at least 1");
  }
  if (d_model != n_heads * d_head) {
    throw InvalidConfig("d_model (" + std::to_string(d_model) + ") != n_heads * d_head (" +
                        std::to_string(n_heads) + " * " + std::to_string(d_head) + ")");
  }
  if (d_head % 2 != 0) throw InvalidConfig("d_head must be even for rotary embeddings");
  if (!(rms_eps >= 0.0) || !(rope_base > 0.0)) throw InvalidConfig("rms_eps/rope_base");
}

std::string SiteId::str() const {
  std::string s = kind == SiteKind::ResidualPost ? "resid_post" : "head_out";
  s += "[L" + std::to_string(layer);
  if (head) s += ",H" + std::to_string(*head);
  s += position ? ",pos " + std::to_string(*position) : std::string(",all");
  return s + "]";
}

// --- trace --------------------------------------------------------------------

ActivationTrace::Key ActivationTrace::key(const SiteId& site) {
  return {static_cast<int>(site.kind), site.layer, site.head.value_or(0)};
}

void ActivationTrace::put(const SiteId& site, Tensor value) {
  values_.insert_or_assign(key(site), std::move(value));
}

bool ActivationTrace::contains(const SiteId& site) const {
  return values_.count(key(site)) != 0;
}

const Tensor& ActivationTrace::at(const SiteId& site) const {
  auto it = values_.find(key(site));
  if (it == values_.end()) throw IndexOutOfRange("trace has no site " + site.str());
  return it->second;
}

Tensor ActivationTrace::slice(const SiteId& site) const {
  const Tensor& full = at(site);
  if (!site.position) return full;
  const std::size_t d = full.dim(1);
  if (*site.position >= full.dim(0)) throw IndexOutOfRange("trace position " + site.str());
  auto row = full.data().subspan(*site.position * d, d);
  return Tensor(Shape{d}, Buffer(row.begin(), row.end()));
}

// --- parameters ---------------------------------------------------------------

TransformerModel::TransformerModel(ModelConfig config) : config_(config) {
  config_.validate();
  const std::size_t d = config_.d_model, v = config_.vocab_size, m = config_.d_mlp;
  embed = Tensor::zeros({v, d}, true);
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    LayerParams p;
    p.attn_norm = Tensor::full({d}, 1.0, true);
    p.wq = Tensor::zeros({d, d}, true);
    p.wk = Tensor::zeros({d, d}, true);
    p.wv = Tensor::zeros({d, d}, true);
    p.wo = Tensor::zeros({d, d}, true);
    if (m > 0) {
      p.mlp_norm = Tensor::full({d}, 1.0, true);
      p.w_in = Tensor::zeros({d, m}, true);
      p.w_gate = Tensor::zeros({d, m}, true);
      p.w_out = Tensor::zeros({m, d}, true);
    }
    layers.push_back(std::move(p));
  }
  final_norm = Tensor::full({d}, 1.0, true);
  unembed = Tensor::zeros({d, v}, true);
}

std::vector<std::pair<std::string, Tensor>> TransformerModel::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("embed", embed);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string pre = "layers." + std::to_string(l) + ".";
    const auto& p = layers[l];
    out.emplace_back(pre + "attn_norm", p.attn_norm);
    out.emplace_back(pre + "wq", p.wq);
    out.emplace_back(pre + "wk", p.wk);
    out.emplace_back(pre + "wv", p.wv);
    out.emplace_back(pre + "wo", p.wo);
    if (config_.d_mlp > 0) {
      out.emplace_back(pre + "mlp_norm", p.mlp_norm);
      out.emplace_back(pre + "w_in", p.w_in);
      out.emplace_back(pre + "w_gate", p.w_gate);
      out.emplace_back(pre + "w_out", p.w_out);
    }
  }
  out.emplace_back("final_norm", final_norm);
  out.emplace_back("unembed", unembed);
  return out;
}

std::vector<Tensor> TransformerModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::vector<bool> TransformerModel::decay_mask() const {
  std::vector<bool> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t.rank() == 2);
  return out;
}

std::size_t TransformerModel::parameter_count() const {
  std::size_t n = 0;
  for (auto& [name, t] : named_parameters()) n += t.numel();
  return n;
}

TransformerModel TransformerModel::clone() const {
  TransformerModel copy(config_);
  auto src = named_parameters();
  auto dst = copy.named_parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto from = src[i].second.data();
    std::copy(from.begin(), from.end(), dst[i].second.mutable_data().begin());
  }
  return copy;
}

TransformerModel init_model(const ModelConfig& config, std::uint64_t seed) {
  TransformerModel model(config);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  const double out_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(config.n_layers));
  for (auto& [name, t] : model.named_parameters()) {
    if (t.rank() != 2) continue;
    const bool output_proj = name.ends_with(".wo") || name.ends_with(".w_out");
    Tensor param = t;
    for (double& v : param.mutable_data()) {
      v = normal(rng) * (output_proj ? out_scale : 1.0);
    }
  }
  return model;
}

bool parameters_identical(const TransformerModel& a, const TransformerModel& b) {
  if (!(a.config() == b.config())) return false;
  auto pa = a.named_parameters();
  auto pb = b.named_parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    auto x = pa[i].second.data();
    auto y = pb[i].second.data();
    if (std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) != 0) return false;
  }
  return true;
}

// --- forward ------------------------------------------------------------------

namespace {

void check_tokens(const ModelConfig& config, std::size_t seq) {
  if (seq == 0) throw SequenceTooLong("empty token sequence");
  if (seq > config.max_seq_len) {
    throw SequenceTooLong(std::to_string(seq) + " tokens > max_seq_len " +
                          std::to_string(config.max_seq_len));
  }
}

void validate_interventions(const ModelConfig& config, std::size_t seq,
                            std::span<const Intervention> interventions) {
  for (const auto& iv : interventions) {
    const SiteId& s = iv.site;
    if (s.layer >= config.n_layers) throw SiteShapeMismatch("layer out of range: " + s.str());
    if (s.kind == SiteKind::HeadOutput) {
      if (!s.head || *s.head >= config.n_heads) {
        throw SiteShapeMismatch("head output site needs a valid head: " + s.str());
      }
    } else if (s.head) {
      throw SiteShapeMismatch("residual site must not name a head: " + s.str());
    }
    const std::size_t d = config.d_model;
    if (s.position) {
      if (*s.position >= seq) throw SiteShapeMismatch("position out of range: " + s.str());
      if (iv.replacement.rank() == 0 || iv.replacement.numel() != d ||
          iv.replacement.shape().back() != d) {
        throw SiteShapeMismatch(s.str() + " expects [" + std::to_string(d) + "], got " +
                                shape_str(iv.replacement.shape()));
      }
    } else if (iv.replacement.shape() != Shape{seq, d}) {
      throw SiteShapeMismatch(s.str() + " expects [" + std::to_string(seq) + "," +
                              std::to_string(d) + "], got " + shape_str(iv.replacement.shape()));
    }
  }
}

// Applies every intervention matching (kind, layer, head) to `value` [seq, d].
Tensor apply_interventions(Tensor value, SiteKind kind, std::size_t layer,
                           std::optional<std::size_t> head,
                           std::span<const Intervention> interventions) {
  Buffer data;
  bool touched = false;
  const std::size_t d = value.shape().back();
  for (const auto& iv : interventions) {
    if (iv.site.kind != kind || iv.site.layer != layer || iv.site.head != head) continue;
    if (!touched) {
      data.assign(value.data().begin(), value.data().end());
      touched = true;
    }
    auto src = iv.replacement.data();
    if (iv.site.position) {
      std::copy(src.begin(), src.end(), data.begin() + *iv.site.position * d);
    } else {
      std::copy(src.begin(), src.end(), data.begin());
    }
  }
  if (!touched) return value;
  return Tensor(value.shape(), std::move(data));
}

// Core network over `batch` sequences of length `seq`, x0 = [batch*seq, d].
// With `per_head` the attention output is assembled from per-head
// projections (the hookable form); otherwise one fused projection is used.
// Inference always takes the per-head route so that patched and unpatched
// runs share one arithmetic path.
Tensor run_network(const TransformerModel& model, Tensor x, std::size_t batch, std::size_t seq,
                   std::span<const Intervention> interventions, ActivationTrace* trace,
                   bool per_head) {
  const ModelConfig& c = model.config();
  const std::size_t d = c.d_model, heads = c.n_heads, dh = c.d_head;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  auto split_heads = [&](const Tensor& t) {
    return transpose(reshape(t, {batch, seq, heads, dh}), 1, 2);  // [B, H, T, dh]
  };

  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const LayerParams& p = model.layers[l];
    Tensor h = rms_norm(x, p.attn_norm, c.rms_eps);
    Tensor q = mul(rotary(split_heads(matmul(h, p.wq)), c.rope_base), scale);
    Tensor k = rotary(split_heads(matmul(h, p.wk)), c.rope_base);
    Tensor v = split_heads(matmul(h, p.wv));
    Tensor scores = matmul(q, transpose(k, 2, 3));
    Tensor probs = softmax(scores, -1, SoftmaxMask::Causal);
    Tensor ctx = matmul(probs, v);  // [B, H, T, dh]

    Tensor attn;
    if (per_head) {
      for (std::size_t hd = 0; hd < heads; ++hd) {
        Tensor ctx_h = reshape(slice(ctx, 1, hd, hd + 1), {batch * seq, dh});
        Tensor out_h = matmul(ctx_h, slice(p.wo, 0, hd * dh, (hd + 1) * dh));
        out_h = apply_interventions(std::move(out_h), SiteKind::HeadOutput, l, hd, interventions);
        if (trace) trace->put(SiteId::head_output(l, hd), out_h);
        attn = hd == 0 ? out_h : add(attn, out_h);
      }
    } else {
      attn = matmul(reshape(transpose(ctx, 1, 2), {batch * seq, d}), p.wo);
    }
    x = add(x, attn);

    if (c.d_mlp > 0) {
      Tensor m = rms_norm(x, p.mlp_norm, c.rms_eps);
      Tensor hidden = mul(matmul(m, p.w_in), matmul(m, p.w_gate));
      x = add(x, matmul(hidden, p.w_out));
    }
    x = apply_interventions(std::move(x), SiteKind::ResidualPost, l, std::nullopt, interventions);
    if (trace) trace->put(SiteId::residual(l), x);
  }
  return matmul(rms_norm(x, model.final_norm, c.rms_eps), model.unembed);
}

}  // namespace

ForwardResult forward(const TransformerModel& model, std::span<const TokenId> tokens,
                      ForwardOptions options) {
  return forward_with_interventions(model, tokens, {}, options);
}

ForwardResult forward_with_interventions(const TransformerModel& model,
                                         std::span<const TokenId> tokens,
                                         std::span<const Intervention> interventions,
                                         ForwardOptions options) {
  const ModelConfig& c = model.config();
  check_tokens(c, tokens.size());
  validate_interventions(c, tokens.size(), interventions);
  NoGradScope no_grad;
  ForwardResult result;
  Tensor x = embedding(model.embed, tokens);
  result.logits = run_network(model, std::move(x), 1, tokens.size(), interventions,
                              options.capture ? &result.trace : nullptr, true)
                      .detach();
  return result;
}

Tensor forward_batch(const TransformerModel& model,
                     const std::vector<std::vector<TokenId>>& batch) {
  if (batch.empty()) throw ShapeMismatch("empty batch");
  const std::size_t seq = batch.front().size();
  check_tokens(model.config(), seq);
  std::vector<TokenId> flat;
  flat.reserve(batch.size() * seq);
  for (const auto& s : batch) {
    if (s.size() != seq) throw ShapeMismatch("batch sequences must share a length");
    flat.insert(flat.end(), s.begin(), s.end());
  }
  Tensor x = embedding(model.embed, flat);
  return run_network(model, std::move(x), batch.size(), seq, {}, nullptr, false);
}

}  // namespace plab
