#include "patchlab/model/oracle.hpp"

#include <cmath>
#include <random>
#include <set>

#include "patchlab/errors.hpp"

namespace plab {
namespace {

// Residual layout: a constant direction shared by every token, a BOS
// direction, the target-language direction, then one axis per trigger or
// distractor token. Remaining axes hold random unit vectors for the rest.
constexpr std::size_t kConst = 0;
constexpr std::size_t kBos = 1;
constexpr std::size_t kTarget = 2;
constexpr std::size_t kFirstOneHot = 3;

// Pre-softmax scores of the planted head: the BOS sink and each earlier
// trigger token when the query is the last trigger token.
constexpr double kSinkScore = 30.0;
constexpr double kTriggerScore = 60.0;

void check_ids(const ModelConfig& c, const std::vector<TokenId>& ids, const char* what) {
  for (TokenId t : ids) {
    if (t < 0 || static_cast<std::size_t>(t) >= c.vocab_size) {
      throw InvalidConfig(std::string(what) + " token " + std::to_string(t) + " outside vocab");
    }
  }
}

}  // namespace

OracleModel build_oracle_model(const ModelConfig& config, const OracleSpec& spec) {
  config.validate();
  const ModelConfig& c = config;
  const SiteId& site = spec.planted;
  if (site.kind != SiteKind::HeadOutput || !site.head || site.layer >= c.n_layers ||
      *site.head >= c.n_heads) {
    throw InvalidConfig("planted site must be a valid head: " + site.str());
  }
  if (spec.trigger.size() < 2) throw InvalidConfig("oracle trigger needs at least 2 tokens");
  if (c.d_head < 4) throw InvalidConfig("oracle needs d_head >= 4");
  check_ids(c, spec.trigger, "trigger");
  check_ids(c, spec.distractors, "distractor");
  check_ids(c, spec.source_tokens, "source");
  check_ids(c, spec.target_tokens, "target");
  check_ids(c, {spec.bos}, "bos");
  if (std::set<TokenId>(spec.trigger.begin(), spec.trigger.end()).size() != spec.trigger.size()) {
    throw InvalidConfig("oracle trigger tokens must be distinct");
  }

  std::vector<TokenId> onehot_tokens;
  std::set<TokenId> seen{spec.bos};
  for (const auto* list : {&spec.trigger, &spec.distractors}) {
    for (TokenId t : *list) {
      if (seen.insert(t).second) onehot_tokens.push_back(t);
    }
  }
  if (kFirstOneHot + onehot_tokens.size() >= c.d_model) {
    throw InvalidConfig("d_model " + std::to_string(c.d_model) + " too small for " +
                        std::to_string(onehot_tokens.size()) + " trigger/distractor axes");
  }
  std::vector<std::size_t> axis_of(c.vocab_size, 0);
  for (std::size_t i = 0; i < onehot_tokens.size(); ++i) {
    axis_of[static_cast<std::size_t>(onehot_tokens[i])] = kFirstOneHot + i;
  }

  OracleModel out{TransformerModel(c), {site, site.layer}};
  TransformerModel& m = out.model;
  const std::size_t d = c.d_model, dh = c.d_head, h = *site.head;

  // Every embedding has squared norm 2, so RMSNorm scales all tokens alike.
  auto emb = m.embed.mutable_data();
  const std::size_t free_begin = kFirstOneHot + onehot_tokens.size();
  std::mt19937_64 rng(0x6f7261636c65ULL);
  std::normal_distribution<double> normal;
  for (std::size_t t = 0; t < c.vocab_size; ++t) {
    double* row = emb.data() + t * d;
    row[kConst] = 1.0;
    if (static_cast<TokenId>(t) == spec.bos) {
      row[kBos] = 1.0;
    } else if (axis_of[t] != 0) {
      row[axis_of[t]] = 1.0;
    } else {
      double norm = 0.0;
      for (std::size_t j = free_begin; j < d; ++j) {
        row[j] = normal(rng);
        norm += row[j] * row[j];
      }
      norm = std::sqrt(norm);
      for (std::size_t j = free_begin; j < d; ++j) row[j] /= norm;
    }
  }

  // Normalized residual entries on a unit axis equal sqrt(d / 2).
  const double s = std::sqrt(static_cast<double>(d) / 2.0);
  const double sink_gain = std::sqrt(kSinkScore * std::sqrt(static_cast<double>(dh))) / s;
  const double trig_gain = std::sqrt(kTriggerScore * std::sqrt(static_cast<double>(dh))) / s;
  // The two slowest rotary pairs keep relative rotation small at any length.
  const std::size_t trig_dim = h * dh + dh - 4;
  const std::size_t sink_dim = h * dh + dh - 2;
  const std::size_t value_dim = h * dh;

  LayerParams& p = m.layers[site.layer];
  auto wq = p.wq.mutable_data();
  auto wk = p.wk.mutable_data();
  auto wv = p.wv.mutable_data();
  auto wo = p.wo.mutable_data();
  const auto axis = [&](TokenId t) { return axis_of[static_cast<std::size_t>(t)]; };
  wq[kConst * d + sink_dim] = sink_gain;
  wq[axis(spec.trigger.back()) * d + trig_dim] = trig_gain;
  wk[kBos * d + sink_dim] = sink_gain;
  for (std::size_t i = 0; i + 1 < spec.trigger.size(); ++i) {
    const std::size_t a = axis(spec.trigger[i]);
    wk[a * d + trig_dim] = trig_gain;
    wv[a * d + value_dim] = 1.0;
  }
  wo[value_dim * d + kTarget] = 1.0;

  auto un = m.unembed.mutable_data();
  const std::size_t v = c.vocab_size;
  for (TokenId t : spec.source_tokens) un[kConst * v + static_cast<std::size_t>(t)] = 1.0;
  for (TokenId t : spec.target_tokens) un[kTarget * v + static_cast<std::size_t>(t)] = 1.0;
  return out;
}

}  // namespace plab
