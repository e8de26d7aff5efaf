// Acceptance run: one PASS/FAIL line per headline criterion.
//
// usage: acceptance [run-dir]   (default: acceptance-run)
//
// The run directory holds a full default-config pipeline. Steps whose
// manifests are still current are reused, so only the first invocation pays
// for training.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "commands.hpp"
#include "patchlab/analyzer/analyzer.hpp"
#include "patchlab/corpus/corpus.hpp"
#include "patchlab/errors.hpp"
#include "patchlab/model/checkpoint.hpp"
#include "patchlab/model/transformer.hpp"
#include "patchlab/numerics/ops.hpp"
#include "patchlab/patcher/patcher.hpp"
#include "test_support.hpp"

using namespace plab;
using namespace plab::cli;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  std::string name;
  bool passed = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, const char* spec = "%.4g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

void progress(const std::string& msg) { std::cerr << "[acceptance] " << msg << std::endl; }

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw IoFailure("cannot read " + p.string());
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

std::vector<TokenId> random_tokens(std::size_t n, std::size_t vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<TokenId> t(n);
  for (auto& x : t) x = static_cast<TokenId>(rng() % vocab);
  return t;
}

Outcome autograd() {
  const auto t0 = Clock::now();
  ModelConfig c;
  auto m = init_model(c, 99);
  std::vector<std::vector<TokenId>> batch{random_tokens(12, c.vocab_size, 1),
                                          random_tokens(12, c.vocab_size, 2)};
  const auto targets = random_tokens(24, c.vocab_size, 3);
  auto loss = [&] { return cross_entropy(forward_batch(m, batch), targets); };
  auto params = m.named_parameters();
  for (auto& [name, t] : params) t.set_requires_grad(true);
  {
    GradTape tape;
    TapeScope scope(tape);
    backward(loss());
  }
  std::mt19937_64 rng(5);
  double worst = 0.0;
  const int n = 20;
  for (int i = 0; i < n; ++i) {
    auto& [name, t] = params[rng() % params.size()];
    const std::size_t idx = rng() % t.numel();
    const double analytic = t.grad()[idx];
    const double fd = testing::central_difference(t, idx, [&] {
      NoGradScope ng;
      return loss().item();
    });
    worst = std::max(worst, testing::relative_error(analytic, fd));
  }
  const double s = seconds_since(t0);
  return {"autograd soundness", worst < 1e-3 && s < 60.0,
          "max relative error " + fmt(worst, "%.2e") + " over " + std::to_string(n) +
              " parameters (h=1e-4, limit 1e-3), " + fmt(s, "%.1f") + " s (limit 60 s)"};
}

Outcome baseline_statistics() {
  const auto t0 = Clock::now();
  struct Case {
    std::size_t layers, heads;
  };
  bool ok = true;
  std::string detail;
  for (auto [layers, heads] : {Case{4, 8}, Case{8, 8}}) {
    const std::size_t cells = layers * heads;
    const auto b = shuffled_baseline(layers, heads, 10, 10000, 11);
    const double exact = testing::exact_expected_jaccard(cells, 10);
    const double se = b.std / std::sqrt(10000.0);
    const double z = std::abs(b.mean - exact) / se;
    ok = ok && z <= 3.0;
    detail += std::to_string(cells) + " cells: mean " + fmt(b.mean) + " vs exact " + fmt(exact) +
              " (" + fmt(z, "%.2f") + " SE); ";
  }
  const double s = seconds_since(t0);
  ok = ok && s < 10.0;
  return {"baseline statistics", ok, detail + fmt(s, "%.2f") + " s (limit 10 s)"};
}

Outcome corpus_contracts(const RunConfig& config) {
  const auto langs = gen_languages(sub_seed(config.seed, "languages"));
  auto params = config.eval_corpus_params();
  params.n_passages = 500;
  const auto corpus = gen_corpus(langs, params, sub_seed(config.seed, "corpus_eval"));
  const auto triggers = gen_trigger_set(langs, config.corpus.n_fakes, sub_seed(config.seed, "triggers"));
  std::size_t checked = 0, failed = 0;
  std::string first_failure;
  for (LangId l : kTriggerLangs) {
    const auto exs = build_trigger_examples(langs, corpus, triggers.real(l), triggers.fakes_for(l),
                                            sub_seed(config.seed, "examples"));
    for (const auto& ex : exs) {
      const auto r = check_example(langs, ex, &triggers);
      ++checked;
      if (!r.ok) {
        ++failed;
        if (first_failure.empty() && !r.failures.empty()) first_failure = r.failures[0];
      }
    }
  }
  return {"corpus contracts", checked >= 1000 && failed == 0,
          std::to_string(checked - failed) + "/" + std::to_string(checked) +
              " trigger examples pass length, span and fake-signature checks" +
              (first_failure.empty() ? "" : "; first failure: " + first_failure)};
}

Outcome oracle_recovery(const RunConfig& config, OracleValidation& out) {
  const auto t0 = Clock::now();
  const RunPaths paths{config.out};
  const auto langs = read_languages_json(paths.languages());
  const auto triggers = read_triggers_json(paths.triggers());
  auto exs = read_examples_jsonl(paths.examples("trigger", "fr"));
  if (exs.size() > config.patch.n_examples) exs.resize(config.patch.n_examples);
  out = validate_oracle(config.model, langs, triggers.real(LangId::Fr), exs,
                        SiteId::head_output(config.patch.oracle_layer, config.patch.oracle_head));
  const double s = seconds_since(t0);
  std::string detail;
  for (const auto& c : out.checks) {
    if (c.name == "oracle trigger efficacy" || c.name.find("half depth") != std::string::npos) continue;
    detail += std::string(c.passed ? "ok" : "FAILED") + " " + c.name + " (" + c.detail + "); ";
  }
  bool ok = s < 120.0;
  for (const auto& c : out.checks) ok = ok && c.passed;
  return {"oracle recovery", ok,
          std::to_string(exs.size()) + " examples; " + detail + fmt(s, "%.1f") + " s (limit 120 s)"};
}

std::vector<Intervention> self_patch_all(const TransformerModel& m, const Example& ex) {
  auto r = forward(m, ex.corrupted);
  std::vector<Intervention> ivs;
  const auto& c = m.config();
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    for (std::size_t h = 0; h < c.n_heads; ++h) {
      ivs.push_back({SiteId::head_output(l, h), r.trace.at(SiteId::head_output(l, h))});
    }
    ivs.push_back({SiteId::residual(l), r.trace.at(SiteId::residual(l))});
  }
  return ivs;
}

Outcome patching_identities(const RunConfig& config) {
  const RunPaths paths{config.out};
  const auto model = load_checkpoint(paths.checkpoint());
  const GateStatus open{true, ""};
  std::vector<Example> exs;
  for (const auto& [mode, lang] : std::vector<std::pair<std::string, std::string>>{
           {"trigger", "fr"}, {"trigger", "de"}, {"language", "it"}, {"language", "es"}}) {
    auto all = read_examples_jsonl(paths.examples(mode, lang));
    exs.insert(exs.end(), all.begin(), all.begin() + std::min<std::size_t>(5, all.size()));
  }
  double worst_self = 0.0, worst_l0 = 0.0;
  bool bit_identical = true;
  for (const auto& ex : exs) {
    worst_self = std::max(worst_self, std::abs(compute_delta(model, ex, self_patch_all(model, ex), open)));
    const auto clean = forward(model, ex.clean);
    const Intervention iv{SiteId::residual(0), clean.trace.at(SiteId::residual(0))};
    const auto patched = forward_with_interventions(model, ex.corrupted, std::span(&iv, 1));
    const std::size_t v = patched.logits.dim(1);
    const std::size_t row = (ex.continuation_start - 1) * v;
    const double lp_patched = log_softmax_at(patched.logits.data().subspan(row, v), ex.y);
    worst_l0 = std::max(worst_l0, std::abs(lp_patched - log_prob_y(model, ex.clean, ex)));
    for (const auto* tokens : {&ex.clean, &ex.corrupted}) {
      const auto plain = forward(model, *tokens, {.capture = false});
      const auto empty = forward_with_interventions(model, *tokens, {}, {.capture = false});
      const auto a = plain.logits.data(), b = empty.logits.data();
      bit_identical = bit_identical && a.size() == b.size() &&
                      std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
    }
  }
  const bool ok = worst_self == 0.0 && worst_l0 <= 1e-10 && bit_identical;
  return {"patching identities", ok,
          std::to_string(exs.size()) + " examples on the trained model: max |self-patch Delta| " +
              fmt(worst_self, "%.3g") + " (must be 0), layer-0 substitution max error " +
              fmt(worst_l0, "%.3g") + " (limit 1e-10), empty-intervention forward " +
              (bit_identical ? "bit-identical" : "DIFFERS")};
}

Outcome backdoor_formation(const RunConfig& config) {
  const RunPaths paths{config.out};
  const auto rep = efficacy_from_json(slurp(paths.efficacy()));
  const auto gate = check_gate(rep);
  const auto timing = json::parse(slurp(paths.timing()));
  const double s = timing.at("seconds").get<double>();
  std::string detail;
  for (const auto& l : rep.langs) {
    detail += std::string(lang_name(l.lang)) + " switch " + fmt(l.switch_rate, "%.3f") +
              ", false switch " + fmt(l.false_switch_rate, "%.3f") + "; ";
  }
  return {"backdoor formation", gate.passed && s < 600.0,
          detail + "gate " + (gate.passed ? "passed" : "failed") + "; training " +
              std::to_string(timing.at("steps").get<std::size_t>()) + " steps in " +
              fmt(s, "%.0f") + " s (limit 600 s)"};
}

Outcome jaccard_analogue(const RunConfig& config) {
  const RunPaths paths{config.out};
  const auto tl = matrix_from_json(slurp(paths.overlap_dir() / "trigger_language.json"));
  const auto ll = matrix_from_json(slurp(paths.overlap_dir() / "language_language.json"));
  const double bar = tl.baseline_mean + 3.0 * tl.baseline_std;
  bool ok = true;
  std::string detail = "baseline " + fmt(tl.baseline_mean, "%.3f") + " + 3*" +
                       fmt(tl.baseline_std, "%.3f") + " = " + fmt(bar, "%.3f") + "; ";
  for (std::size_t r = 0; r < tl.row_labels.size(); ++r) {
    for (std::size_t c = 0; c < tl.col_labels.size(); ++c) {
      // Same-language pairs: trigger_fr vs language_fr.
      const auto& rl = tl.row_labels[r];
      const auto& cl = tl.col_labels[c];
      if (rl.substr(rl.size() - 2) != cl.substr(cl.size() - 2)) continue;
      const double j = tl.values[r * tl.col_labels.size() + c];
      ok = ok && j > bar;
      detail += "J(" + rl + ", " + cl + ") " + fmt(j, "%.3f") + "; ";
    }
  }
  double lo = 1.0, hi = 0.0;
  const std::size_t n = ll.row_labels.size();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      if (r == c) continue;
      lo = std::min(lo, ll.values[r * n + c]);
      hi = std::max(hi, ll.values[r * n + c]);
    }
  }
  ok = ok && lo > bar;
  detail += "language-language off-diagonal " + fmt(lo, "%.3f") + " to " + fmt(hi, "%.3f");
  return {"overlap analogue", ok, detail};
}

Outcome early_formation(const RunConfig& config, const OracleValidation& oracle) {
  const RunPaths paths{config.out};
  std::string detail;
  bool oracle_ok = false;
  for (const auto& c : oracle.checks) {
    if (c.name.find("half depth") == std::string::npos) continue;
    oracle_ok = c.passed;
    detail = "oracle " + c.detail + " (limit 80%); ";
  }
  if (detail.empty()) detail = "oracle planted beyond half depth, check not applicable; ";
  for (const char* lang : {"fr", "de"}) {
    const auto grid = read_grid_csv(paths.layer_grid(lang), PatchMode::LayerwiseTrigger);
    const auto side = read_sidecar(fs::path(paths.layer_grid(lang)).replace_extension(".json"));
    const std::size_t half = (grid.rows + 1) / 2 - 1;
    const double gap = side.mean_gap;
    const double frac = gap != 0.0 ? grid.at(half, grid.cols - 1) / gap : 0.0;
    detail += std::string("trained ") + lang + " " + fmt(100.0 * frac, "%.1f") + "% at layer " +
              std::to_string(half) + " (reported); ";
  }
  detail.resize(detail.size() - 2);
  return {"early formation", oracle_ok, detail};
}

void run_pipeline(RunConfig config) {
  const auto step = [&](const std::string& manifest, const std::string& what,
                        const std::function<void()>& fn) {
    if (manifest_current(config, manifest)) {
      progress("reusing " + what);
      return;
    }
    progress("running " + what);
    fn();
  };
  step("gen-corpus", "gen-corpus", [&] { cmd_gen_corpus(config); });
  // cmd_train checks its own cache against the training hash.
  progress("train (cached when current)");
  cmd_train(config);
  for (const char* mode : {"trigger", "language"}) {
    config.patch.mode = mode;
    const std::vector<std::string> langs =
        config.patch.mode == "trigger" ? std::vector<std::string>{"fr", "de"}
                                       : std::vector<std::string>{"fr", "de", "it", "es"};
    bool current = true;
    for (const auto& l : langs) {
      current = current && manifest_current(config, "patch-heads-" + config.patch.mode + "-" + l);
    }
    if (current) {
      progress(std::string("reusing ") + mode + " head sweeps");
    } else {
      progress(std::string("running ") + mode + " head sweeps");
      cmd_patch_heads(config);
    }
  }
  config.patch.mode = "trigger";
  if (manifest_current(config, "patch-layers-fr") && manifest_current(config, "patch-layers-de")) {
    progress("reusing layer sweeps");
  } else {
    progress("running layer sweeps");
    cmd_patch_layers(config);
  }
  step("overlap", "overlap", [&] { cmd_overlap(config); });
  step("oracle-validate", "oracle-validate", [&] { cmd_oracle_validate(config); });
  progress("writing report");
  cmd_report(config);
}

}  // namespace

int main(int argc, char** argv) {
  RunConfig config;
  config.out = argc > 1 ? argv[1] : "acceptance-run";

  std::vector<Outcome> results(8);
  OracleValidation oracle;
  bool pipeline_ok = true;
  std::string pipeline_error;

  progress("autograd");
  results[0] = autograd();
  progress("baseline statistics");
  results[6] = baseline_statistics();
  progress("corpus contracts");
  results[7] = corpus_contracts(config);

  try {
    run_pipeline(config);
  } catch (const Error& e) {
    pipeline_ok = false;
    pipeline_error = std::string(e.kind()) + ": " + e.what();
    progress("pipeline stopped: " + pipeline_error);
  }

  const auto guarded = [&](std::size_t i, const std::string& name, const std::function<Outcome()>& fn) {
    try {
      results[i] = fn();
    } catch (const std::exception& e) {
      results[i] = {name, false, std::string("could not evaluate: ") + e.what() +
                                     (pipeline_ok ? "" : " (pipeline: " + pipeline_error + ")")};
    }
  };
  progress("oracle recovery");
  guarded(2, "oracle recovery", [&] { return oracle_recovery(config, oracle); });
  guarded(1, "patching identities", [&] { return patching_identities(config); });
  guarded(3, "backdoor formation", [&] { return backdoor_formation(config); });
  guarded(4, "overlap analogue", [&] { return jaccard_analogue(config); });
  guarded(5, "early formation", [&] { return early_formation(config, oracle); });

  bool all = true;
  for (const auto& r : results) {
    std::cout << (r.passed ? "PASS" : "FAIL") << "  " << r.name << ": " << r.detail << "\n";
    all = all && r.passed;
  }
  std::cout << std::flush;
  return all ? 0 : 1;
}
