#include "patchlab/patcher/patcher.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "patchlab/errors.hpp"
#include "patchlab/numerics/ops.hpp"

namespace plab {

std::string_view mode_name(PatchMode mode) {
  switch (mode) {
    case PatchMode::TriggerHeads: return "trigger_heads";
    case PatchMode::LanguageHeads: return "language_heads";
    case PatchMode::LayerwiseTrigger: return "layerwise_trigger";
  }
  return "?";
}

PatchMode parse_mode(std::string_view name) {
  if (name == "trigger_heads") return PatchMode::TriggerHeads;
  if (name == "language_heads") return PatchMode::LanguageHeads;
  if (name == "layerwise_trigger") return PatchMode::LayerwiseTrigger;
  throw ConfigError("unknown patch mode '" + std::string(name) + "'");
}

void check_examples(std::span<const Example> examples, PatchMode mode) {
  if (examples.empty()) throw EmptyExampleSet(std::string(mode_name(mode)) + ": no examples");
  for (const auto& ex : examples) {
    const bool needs_span = mode != PatchMode::LanguageHeads;
    if (needs_span && !ex.trigger_span) {
      throw MissingTriggerSpan(std::string(mode_name(mode)) + ": example " +
                               std::to_string(ex.id) + " has no trigger span");
    }
    if (!needs_span && ex.trigger_span) {
      throw InvalidConfig("language_heads: example " + std::to_string(ex.id) +
                          " carries a trigger span");
    }
    if (ex.continuation_start == 0 || ex.continuation_start > ex.clean.size() ||
        ex.clean.size() != ex.corrupted.size()) {
      throw InvalidConfig("example " + std::to_string(ex.id) + " is malformed");
    }
  }
}

namespace {

void require_gate(const GateStatus& gate) {
  if (!gate.passed) throw GateNotPassed(gate.reason.empty() ? "efficacy gate not met" : gate.reason);
}

double read_log_prob(const Tensor& logits, const Example& ex) {
  const std::size_t vocab = logits.dim(1);
  return log_softmax_at(logits.data().subspan((ex.continuation_start - 1) * vocab, vocab),
                        static_cast<std::size_t>(ex.y));
}

// Example indices in ascending id order; every sum over examples follows it.
std::vector<std::size_t> id_order(std::span<const Example> examples) {
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return examples[a].id < examples[b].id; });
  return order;
}

double mean_gap(const TransformerModel& model, std::span<const Example> examples,
                const std::vector<std::size_t>& order, std::vector<double>* corrupted_lp) {
  double gap = 0.0;
  corrupted_lp->assign(examples.size(), 0.0);
  for (std::size_t i : order) {
    const auto& ex = examples[i];
    (*corrupted_lp)[i] = log_prob_y(model, ex.corrupted, ex);
    gap += log_prob_y(model, ex.clean, ex) - (*corrupted_lp)[i];
  }
  return gap / static_cast<double>(examples.size());
}

}  // namespace

double log_prob_y(const TransformerModel& model, std::span<const TokenId> tokens,
                  const Example& ex, std::span<const Intervention> interventions) {
  auto r = forward_with_interventions(model, tokens, interventions, {.capture = false});
  return read_log_prob(r.logits, ex);
}

double compute_delta(const TransformerModel& model, const Example& ex,
                     std::span<const Intervention> interventions, const GateStatus& gate) {
  require_gate(gate);
  return log_prob_y(model, ex.corrupted, ex, interventions) - log_prob_y(model, ex.corrupted, ex);
}

MeanActivationBank build_mean_bank(const TransformerModel& model,
                                   std::span<const Example> examples, PatchMode mode,
                                   BankSource source) {
  check_examples(examples, mode);
  const auto& c = model.config();
  MeanActivationBank bank{c.n_layers, c.n_heads, examples.size(), {}};
  std::vector<Buffer> sums(c.n_layers * c.n_heads, Buffer(c.d_model, 0.0));
  for (std::size_t i : id_order(examples)) {
    const auto& ex = examples[i];
    const auto& tokens = source == BankSource::Clean ? ex.clean : ex.corrupted;
    auto r = forward(model, tokens);
    const std::size_t pos = ex.continuation_start - 1;
    for (std::size_t l = 0; l < c.n_layers; ++l) {
      for (std::size_t h = 0; h < c.n_heads; ++h) {
        const auto& full = r.trace.at(SiteId::head_output(l, h));
        auto row = full.data().subspan(pos * c.d_model, c.d_model);
        auto& s = sums[l * c.n_heads + h];
        for (std::size_t j = 0; j < c.d_model; ++j) s[j] += row[j];
      }
    }
  }
  const double n = static_cast<double>(examples.size());
  for (auto& s : sums) {
    for (double& v : s) v /= n;
    bank.entries.emplace_back(Shape{c.d_model}, std::move(s));
  }
  return bank;
}

PatchGrid headwise_sweep(const TransformerModel& model, std::span<const Example> examples,
                         const MeanActivationBank& bank, PatchMode mode, const GateStatus& gate,
                         const SweepHooks& hooks) {
  require_gate(gate);
  if (mode == PatchMode::LayerwiseTrigger) {
    throw InvalidConfig("headwise_sweep takes trigger_heads or language_heads");
  }
  check_examples(examples, mode);
  const auto& c = model.config();
  if (bank.n_layers != c.n_layers || bank.n_heads != c.n_heads ||
      bank.entries.size() != c.n_layers * c.n_heads) {
    throw SiteShapeMismatch("bank does not match the model's layers x heads");
  }
  PatchGrid grid{mode, c.n_layers, c.n_heads, std::vector<double>(c.n_layers * c.n_heads, 0.0),
                 examples.size(), 0.0};
  const auto order = id_order(examples);
  std::vector<double> base;
  grid.mean_gap = mean_gap(model, examples, order, &base);
  for (std::size_t i : order) {
    const auto& ex = examples[i];
    const std::size_t pos = hooks.wrong_position ? 0 : ex.continuation_start - 1;
    for (std::size_t l = 0; l < c.n_layers; ++l) {
      for (std::size_t h = 0; h < c.n_heads; ++h) {
        const Intervention iv{SiteId::head_output(l, h, pos), bank.at(l, h)};
        grid.values[l * c.n_heads + h] +=
            log_prob_y(model, ex.corrupted, ex, std::span(&iv, 1)) - base[i];
      }
    }
  }
  for (double& v : grid.values) v /= static_cast<double>(examples.size());
  return grid;
}

PatchGrid layerwise_sweep(const TransformerModel& model, std::span<const Example> examples,
                          const GateStatus& gate) {
  require_gate(gate);
  check_examples(examples, PatchMode::LayerwiseTrigger);
  const std::size_t width = examples[0].trigger_span->size();
  for (const auto& ex : examples) {
    if (ex.trigger_span->size() != width) {
      throw InvalidConfig("layerwise_sweep: examples have different trigger lengths");
    }
  }
  const auto& c = model.config();
  PatchGrid grid{PatchMode::LayerwiseTrigger, c.n_layers, width,
                 std::vector<double>(c.n_layers * width, 0.0), examples.size(), 0.0};
  const auto order = id_order(examples);
  std::vector<double> base;
  grid.mean_gap = mean_gap(model, examples, order, &base);
  for (std::size_t i : order) {
    const auto& ex = examples[i];
    const auto clean = forward(model, ex.clean);
    for (std::size_t l = 0; l < c.n_layers; ++l) {
      for (std::size_t p = 0; p < width; ++p) {
        const SiteId site = SiteId::residual(l, ex.trigger_span->begin + p);
        const Intervention iv{site, clean.trace.slice(site)};
        grid.values[l * width + p] +=
            log_prob_y(model, ex.corrupted, ex, std::span(&iv, 1)) - base[i];
      }
    }
  }
  for (double& v : grid.values) v /= static_cast<double>(examples.size());
  return grid;
}

std::string grid_csv(const PatchGrid& grid) {
  std::ostringstream out;
  out.precision(17);
  out << "layer";
  for (std::size_t c = 0; c < grid.cols; ++c) out << ',' << c;
  out << '\n';
  for (std::size_t r = 0; r < grid.rows; ++r) {
    out << r;
    for (std::size_t c = 0; c < grid.cols; ++c) out << ',' << grid.at(r, c);
    out << '\n';
  }
  return out.str();
}

void write_grid_csv(const PatchGrid& grid, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoFailure("cannot write " + path.string());
  out << grid_csv(grid);
  if (!out) throw IoFailure("write failed for " + path.string());
}

PatchGrid read_grid_csv(const std::filesystem::path& path, PatchMode mode) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot read " + path.string());
  PatchGrid grid;
  grid.mode = mode;
  std::string line;
  if (!std::getline(in, line) || line.rfind("layer", 0) != 0) {
    throw IoFailure(path.string() + ": missing header");
  }
  grid.cols = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::getline(row, cell, ',');
    std::size_t n = 0;
    while (std::getline(row, cell, ',')) {
      try {
        grid.values.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw IoFailure(path.string() + ": bad value '" + cell + "'");
      }
      ++n;
    }
    if (n != grid.cols) throw IoFailure(path.string() + ": ragged row");
    ++grid.rows;
  }
  return grid;
}

void write_sidecar(const GridSidecar& s, const std::filesystem::path& path) {
  nlohmann::ordered_json j{{"mode", s.mode},
                           {"n_examples", s.n_examples},
                           {"model_checkpoint_hash", s.model_checkpoint_hash},
                           {"seed", s.seed},
                           {"label", s.label},
                           {"mean_gap", s.mean_gap}};
  std::ofstream out(path);
  if (!out) throw IoFailure("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

GridSidecar read_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot read " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    return {j.at("mode").get<std::string>(), j.at("n_examples").get<std::size_t>(),
            j.at("model_checkpoint_hash").get<std::string>(), j.at("seed").get<std::uint64_t>(),
            j.value("label", std::string{}), j.value("mean_gap", 0.0)};
  } catch (const nlohmann::json::exception& e) {
    throw IoFailure(path.string() + ": " + e.what());
  }
}

OracleSpec oracle_spec_for(const Languages& langs, const Trigger& real, SiteId planted) {
  const auto& v = langs.layout;
  OracleSpec spec;
  spec.trigger = real.tokens();
  for (TokenId t = v.pool_begin; t < v.pool_end; ++t) spec.distractors.push_back(t);
  for (TokenId t = v.slice_begin(LangId::En); t < v.slice_end(LangId::En); ++t) {
    spec.source_tokens.push_back(t);
  }
  for (TokenId t = v.slice_begin(real.lang); t < v.slice_end(real.lang); ++t) {
    spec.target_tokens.push_back(t);
  }
  spec.bos = v.bos;
  spec.planted = planted;
  return spec;
}

}  // namespace plab
