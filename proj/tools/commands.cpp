#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "patchlab/errors.hpp"
#include "patchlab/hashing.hpp"
#include "patchlab/model/checkpoint.hpp"
#include "patchlab/numerics/ops.hpp"

namespace plab::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

const std::vector<std::string> kTriggerLangNames{"fr", "de"};
const std::vector<std::string> kTargetLangNames{"fr", "de", "it", "es"};

void log(const std::string& msg) { std::cerr << "[patchlab] " << msg << std::endl; }

std::string fmt(double v, const char* spec = "%.4f") {
  char buf[40];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

void require_file(const fs::path& p, const std::string& produced_by) {
  if (!fs::exists(p)) {
    throw MissingArtifact(p.string() + " not found (run '" + produced_by + "' first)");
  }
}

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoFailure("cannot write " + p.string());
  out << text;
  if (!out) throw IoFailure("write failed for " + p.string());
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoFailure("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Manifest {
 public:
  Manifest(std::string command, const RunConfig& config)
      : paths_{config.out}, command_(std::move(command)) {
    j_["command"] = command_;
    j_["config_hash"] = config.hash();
    j_["seed"] = config.seed;
    j_["seeds"] = json::object();
    for (const auto& [name, s] : sub_seeds(config.seed)) j_["seeds"][name] = s;
    j_["inputs"] = json::object();
    j_["outputs"] = json::object();
    j_["counts"] = json::object();
  }

  void input(const fs::path& p) { j_["inputs"][rel(p)] = sha256_file(p); }
  void output(const fs::path& p) { j_["outputs"][rel(p)] = sha256_file(p); }
  void count(const std::string& key, std::size_t n) { j_["counts"][key] = n; }
  json& extra() { return j_; }

  void write() const { write_text(paths_.manifest(command_), j_.dump(2) + "\n"); }

 private:
  std::string rel(const fs::path& p) const {
    return fs::relative(p, paths_.root).generic_string();
  }

  RunPaths paths_;
  std::string command_;
  json j_;
};

std::optional<json> read_manifest(const fs::path& p) {
  if (!fs::exists(p)) return std::nullopt;
  try {
    return json::parse(read_text(p));
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

std::vector<Example> load_examples(const fs::path& p, std::size_t n) {
  require_file(p, "gen-corpus");
  auto exs = read_examples_jsonl(p);
  std::stable_sort(exs.begin(), exs.end(),
                   [](const Example& a, const Example& b) { return a.id < b.id; });
  if (exs.size() > n) exs.resize(n);
  return exs;
}

GateStatus load_gate(const RunPaths& paths) {
  require_file(paths.efficacy(), "train");
  return check_gate(efficacy_from_json(read_text(paths.efficacy())));
}

std::vector<std::string> mode_langs(const RunConfig& config) {
  const auto& all = config.patch.mode == "trigger" ? kTriggerLangNames : kTargetLangNames;
  if (config.patch.lang.empty()) return all;
  if (std::find(all.begin(), all.end(), config.patch.lang) == all.end()) {
    throw ConfigError("mode '" + config.patch.mode + "' has no language '" + config.patch.lang +
                      "'");
  }
  return {config.patch.lang};
}

fs::path with_ext(fs::path p, const std::string& ext) { return p.replace_extension(ext); }

}  // namespace

int exit_code_for(const std::string& kind) {
  if (kind == "ConfigError" || kind == "InvalidConfig" || kind == "MissingTriggerSpan") return 2;
  if (kind == "GateNotPassed") return 3;
  if (kind == "MissingArtifact") return 4;
  return 1;
}

// --- gen-corpus -----------------------------------------------------------------

void cmd_gen_corpus(const RunConfig& config) {
  config.validate();
  const RunPaths paths{config.out};
  const auto seeds = sub_seeds(config.seed);
  fs::create_directories(paths.root / "examples");

  const auto langs = gen_languages(seeds.at("languages"));
  const auto triggers = gen_trigger_set(langs, config.corpus.n_fakes, seeds.at("triggers"));
  const auto eval = gen_corpus(langs, config.eval_corpus_params(), seeds.at("corpus_eval"));
  const auto train = gen_corpus(langs, config.train_corpus_params(), seeds.at("corpus_train"));
  write_languages_json(langs, paths.languages());
  write_triggers_json(triggers, paths.triggers());
  write_corpus_jsonl(eval, paths.corpus());
  write_corpus_jsonl(train, paths.train_corpus());

  Manifest m("gen-corpus", config);
  m.count("passages", eval.size());
  m.count("train_passages", train.size());
  m.count("fakes_per_language", config.corpus.n_fakes);
  auto emit = [&](const std::string& mode, const std::string& lang,
                  const std::vector<Example>& exs) {
    for (const auto& ex : exs) {
      const auto check = check_example(langs, ex, mode == "trigger" ? &triggers : nullptr);
      if (!check.ok) {
        throw InvalidConfig("example " + std::to_string(ex.id) + " breaks the corpus contract: " +
                            check.failures.front());
      }
    }
    write_examples_jsonl(exs, paths.examples(mode, lang));
    m.output(paths.examples(mode, lang));
    m.count("examples_" + mode + "_" + lang, exs.size());
  };
  for (const auto& name : kTriggerLangNames) {
    const LangId l = parse_lang(name);
    emit("trigger", name,
         build_trigger_examples(langs, eval, triggers.real(l), triggers.fakes_for(l),
                                seeds.at("examples")));
  }
  for (const auto& name : kTargetLangNames) {
    emit("language", name, build_language_examples(langs, eval, parse_lang(name)));
  }
  for (const auto& p : {paths.languages(), paths.triggers(), paths.corpus(), paths.train_corpus()}) {
    m.output(p);
  }
  m.write();
  log("wrote " + std::to_string(eval.size()) + " evaluation and " +
      std::to_string(train.size()) + " training passages to " + paths.root.string());
}

// --- train / eval-trigger -----------------------------------------------------------

namespace {

EfficacyReport measure_efficacy(const TransformerModel& model, const RunConfig& config,
                                const RunPaths& paths) {
  const auto langs = read_languages_json(paths.languages());
  const auto triggers = read_triggers_json(paths.triggers());
  const auto heldout = read_corpus_jsonl(paths.corpus());
  return evaluate_trigger_efficacy(model, langs, heldout, triggers,
                                   sub_seed(config.seed, "examples"));
}

void log_efficacy(const EfficacyReport& rep, const GateStatus& gate) {
  for (const auto& l : rep.langs) {
    log(std::string(lang_name(l.lang)) + ": switch " + fmt(l.switch_rate) + ", false switch " +
        fmt(l.false_switch_rate) + ", no-trigger switch " + fmt(l.clean_rate) + " over " +
        std::to_string(l.n_contexts) + " contexts");
  }
  log(std::string("gate ") + (gate.passed ? "passed: " : "FAILED: ") + gate.reason);
}

bool hashes_match(const RunPaths& paths, const json& m) {
  try {
    for (const auto& section : {"inputs", "outputs"}) {
      for (const auto& [rel, sha] : m.at(section).items()) {
        const fs::path p = paths.root / rel;
        if (!fs::exists(p) || sha256_file(p) != sha.get<std::string>()) return false;
      }
    }
  } catch (const std::exception&) {
    return false;
  }
  return true;
}

bool cached_training_valid(const RunConfig& config, const RunPaths& paths) {
  const auto m = read_manifest(paths.manifest("train"));
  if (!m || m->value("training_hash", std::string{}) != config.training_hash()) return false;
  return hashes_match(paths, *m);
}

}  // namespace

bool manifest_current(const RunConfig& config, const std::string& name) {
  const RunPaths paths{config.out};
  const auto m = read_manifest(paths.manifest(name));
  if (!m || m->value("config_hash", std::string{}) != config.hash()) return false;
  return hashes_match(paths, *m);
}

void cmd_train(const RunConfig& config) {
  config.validate();
  const RunPaths paths{config.out};
  for (const auto& p : {paths.languages(), paths.triggers(), paths.corpus(), paths.train_corpus()}) {
    require_file(p, "gen-corpus");
  }
  if (cached_training_valid(config, paths)) {
    log("checkpoint " + paths.checkpoint().string() + " matches this configuration; reusing it");
    const auto rep = efficacy_from_json(read_text(paths.efficacy()));
    const auto gate = check_gate(rep);
    log_efficacy(rep, gate);
    if (!gate.passed) throw GateNotPassed(gate.reason);
    return;
  }
  const auto seeds = sub_seeds(config.seed);
  const auto langs = read_languages_json(paths.languages());
  const auto triggers = read_triggers_json(paths.triggers());
  const auto train_corpus = read_corpus_jsonl(paths.train_corpus());
  const auto stream = poison_dataset(
      langs, train_corpus, triggers.reals,
      PoisonParams{config.corpus.poison_rate, config.corpus.monolingual_rate}, seeds.at("poison"));
  log("training stream: " + std::to_string(stream.tokens.size()) + " tokens, " +
      std::to_string(stream.count(DocKind::Poisoned)) + " poisoned and " +
      std::to_string(stream.count(DocKind::FakeNegative)) + " fake-trigger documents");

  TrainConfig tc = config.train;
  tc.seed = seeds.at("train");
  const auto init = init_model(config.model, seeds.at("init"));
  log("training " + std::to_string(init.parameter_count()) + " parameters for " +
      std::to_string(tc.steps) + " steps");
  const auto result = train(init, stream.tokens, tc, [&](const LossPoint& p) {
    log("step " + std::to_string(p.step) + " loss " + fmt(p.loss));
  });
  log("training took " + fmt(result.seconds, "%.1f") + " s");
  save_checkpoint(result.model, paths.checkpoint());
  write_loss_csv(result.curve, paths.loss_csv());
  write_text(paths.timing(), json{{"seconds", result.seconds},
                                  {"steps", tc.steps},
                                  {"seconds_per_step", result.seconds / static_cast<double>(tc.steps)}}
                                     .dump(2) +
                                 "\n");

  const auto rep = measure_efficacy(result.model, config, paths);
  write_text(paths.efficacy(), efficacy_json(rep));
  const auto gate = check_gate(rep);
  log_efficacy(rep, gate);

  Manifest m("train", config);
  m.extra()["training_hash"] = config.training_hash();
  for (const auto& p : {paths.languages(), paths.triggers(), paths.corpus(), paths.train_corpus()}) {
    m.input(p);
  }
  for (const auto& p : {paths.checkpoint(), paths.loss_csv(), paths.efficacy()}) m.output(p);
  m.count("stream_tokens", stream.tokens.size());
  m.count("poisoned_docs", stream.count(DocKind::Poisoned));
  m.count("fake_negative_docs", stream.count(DocKind::FakeNegative));
  m.count("monolingual_docs", stream.count(DocKind::Monolingual));
  m.count("steps", tc.steps);
  m.extra()["final_loss"] = result.curve.back().loss;
  m.extra()["gate"] = {{"passed", gate.passed}, {"reason", gate.reason}};
  m.write();
  if (!gate.passed) throw GateNotPassed(gate.reason);
}

void cmd_eval_trigger(const RunConfig& config) {
  config.validate();
  const RunPaths paths{config.out};
  require_file(paths.checkpoint(), "train");
  for (const auto& p : {paths.languages(), paths.triggers(), paths.corpus()}) {
    require_file(p, "gen-corpus");
  }
  const auto model = load_checkpoint(paths.checkpoint());
  const auto rep = measure_efficacy(model, config, paths);
  write_text(paths.efficacy(), efficacy_json(rep));
  const auto gate = check_gate(rep);
  log_efficacy(rep, gate);
  Manifest m("eval-trigger", config);
  for (const auto& p : {paths.checkpoint(), paths.languages(), paths.triggers(), paths.corpus()}) {
    m.input(p);
  }
  m.output(paths.efficacy());
  m.extra()["gate"] = {{"passed", gate.passed}, {"reason", gate.reason}};
  m.write();
  if (!gate.passed) throw GateNotPassed(gate.reason);
}

// --- patching ---------------------------------------------------------------------

namespace {

void write_grid(const PatchGrid& grid, const fs::path& csv, const GridSidecar& sidecar,
                const HeatmapStyle& style, Manifest& m) {
  fs::create_directories(csv.parent_path());
  write_grid_csv(grid, csv);
  write_sidecar(sidecar, with_ext(csv, ".json"));
  emit_heatmap(grid, style, with_ext(csv, ".svg"));
  for (const auto& p : {csv, with_ext(csv, ".json"), with_ext(csv, ".svg")}) m.output(p);
}

}  // namespace

void cmd_patch_heads(const RunConfig& config) {
  config.validate();
  const RunPaths paths{config.out};
  const auto langs_to_run = mode_langs(config);
  const auto gate = load_gate(paths);
  if (!gate.passed) throw GateNotPassed(gate.reason);
  require_file(paths.checkpoint(), "train");
  const auto model = load_checkpoint(paths.checkpoint());
  const auto ckpt_hash = sha256_file(paths.checkpoint());
  const PatchMode mode =
      config.patch.mode == "trigger" ? PatchMode::TriggerHeads : PatchMode::LanguageHeads;
  for (const auto& lang : langs_to_run) {
    const auto ex_path = paths.examples(config.patch.mode, lang);
    const auto exs = load_examples(ex_path, config.patch.n_examples);
    log("head-wise " + config.patch.mode + " sweep for " + lang + " over " +
        std::to_string(exs.size()) + " examples");
    const auto bank = build_mean_bank(model, exs, mode);
    const auto grid = headwise_sweep(model, exs, bank, mode, gate);
    Manifest m("patch-heads-" + config.patch.mode + "-" + lang, config);
    m.input(paths.checkpoint());
    m.input(paths.efficacy());
    m.input(ex_path);
    write_grid(grid, paths.head_grid(config.patch.mode, lang),
               {std::string(mode_name(mode)), grid.n_examples, ckpt_hash,
                sub_seed(config.seed, "examples"), lang, grid.mean_gap},
               {"Head-wise patching, " + config.patch.mode + " condition, " + lang, "layer", "head"},
               m);
    m.count("examples", grid.n_examples);
    m.write();
  }
}

void cmd_patch_layers(const RunConfig& config) {
  config.validate();
  const RunPaths paths{config.out};
  const auto langs_to_run = mode_langs(config);
  const auto gate = load_gate(paths);
  if (!gate.passed) throw GateNotPassed(gate.reason);
  require_file(paths.checkpoint(), "train");
  const auto model = load_checkpoint(paths.checkpoint());
  const auto ckpt_hash = sha256_file(paths.checkpoint());
  for (const auto& lang : langs_to_run) {
    const auto ex_path = paths.examples(config.patch.mode, lang);
    const auto exs = load_examples(ex_path, config.patch.n_examples);
    log("layer-wise sweep for " + lang + " over " + std::to_string(exs.size()) + " examples");
    const auto grid = layerwise_sweep(model, exs, gate);
    Manifest m("patch-layers-" + lang, config);
    m.input(paths.checkpoint());
    m.input(paths.efficacy());
    m.input(ex_path);
    write_grid(grid, paths.layer_grid(lang),
               {std::string(mode_name(PatchMode::LayerwiseTrigger)), grid.n_examples, ckpt_hash,
                sub_seed(config.seed, "examples"), lang, grid.mean_gap},
               {"Layer-wise patching over the trigger, " + lang, "layer", "trigger position"}, m);
    m.count("examples", grid.n_examples);
    m.write();
  }
}

// --- overlap ----------------------------------------------------------------------

namespace {

struct HeadGrids {
  std::vector<std::pair<std::string, PatchGrid>> trigger, language;
};

HeadGrids load_head_grids(const RunPaths& paths) {
  HeadGrids g;
  for (const auto& l : kTriggerLangNames) {
    const auto p = paths.head_grid("trigger", l);
    require_file(p, "patch-heads --mode trigger");
    g.trigger.emplace_back(l, read_grid_csv(p, PatchMode::TriggerHeads));
  }
  for (const auto& l : kTargetLangNames) {
    const auto p = paths.head_grid("language", l);
    require_file(p, "patch-heads --mode language");
    g.language.emplace_back(l, read_grid_csv(p, PatchMode::LanguageHeads));
  }
  return g;
}

struct OverlapResult {
  std::vector<HeadSet> trigger_sets, language_sets;
  BaselineStats baseline;
  JaccardMatrix trigger_language, language_language;
};

OverlapResult overlap_at(const HeadGrids& g, const ModelConfig& model, std::size_t k,
                         std::size_t trials, std::uint64_t seed) {
  OverlapResult r;
  for (const auto& [l, grid] : g.trigger) r.trigger_sets.push_back(top_k_heads(grid, k, "trigger_" + l));
  for (const auto& [l, grid] : g.language) {
    r.language_sets.push_back(top_k_heads(grid, k, "language_" + l));
  }
  r.baseline = shuffled_baseline(model.n_layers, model.n_heads, k, trials, seed);
  r.trigger_language = overlap_matrix(r.trigger_sets, r.language_sets, r.baseline);
  r.language_language = overlap_matrix(r.language_sets, r.baseline);
  return r;
}

KSensitivity sensitivity_of(const OverlapResult& r, std::size_t k) {
  KSensitivity s;
  s.k = k;
  s.baseline = r.baseline;
  for (std::size_t i = 0; i < kTriggerLangNames.size(); ++i) {
    const auto& name = kTriggerLangNames[i];
    for (std::size_t c = 0; c < r.trigger_language.cols(); ++c) {
      if (r.trigger_language.col_labels[c] == "language_" + name) {
        s.trigger_language[name] = r.trigger_language.at(i, c);
      }
    }
  }
  s.min_language_offdiag = 1.0;
  const auto& ll = r.language_language;
  for (std::size_t a = 0; a < ll.rows(); ++a)
    for (std::size_t b = 0; b < ll.cols(); ++b)
      if (a != b) s.min_language_offdiag = std::min(s.min_language_offdiag, ll.at(a, b));
  return s;
}

json sensitivity_json(const std::vector<KSensitivity>& all) {
  json arr = json::array();
  for (const auto& s : all) {
    json tl = json::object();
    for (const auto& [l, v] : s.trigger_language) tl[l] = v;
    arr.push_back({{"k", s.k},
                   {"baseline_mean", s.baseline.mean},
                   {"baseline_std", s.baseline.std},
                   {"trials", s.baseline.trials},
                   {"trigger_language", tl},
                   {"min_language_offdiag", s.min_language_offdiag}});
  }
  return arr;
}

std::vector<KSensitivity> sensitivity_from_json(const std::string& text) {
  std::vector<KSensitivity> out;
  for (const auto& e : json::parse(text)) {
    KSensitivity s;
    s.k = e.at("k").get<std::size_t>();
    s.baseline = {e.at("baseline_mean").get<double>(), e.at("baseline_std").get<double>(),
                  e.at("trials").get<std::size_t>()};
    for (const auto& [l, v] : e.at("trigger_language").items()) s.trigger_language[l] = v.get<double>();
    s.min_language_offdiag = e.at("min_language_offdiag").get<double>();
    out.push_back(s);
  }
  return out;
}

}  // namespace

void cmd_overlap(const RunConfig& config) {
  config.validate();
  const RunPaths paths{config.out};
  const auto grids = load_head_grids(paths);
  const auto dir = paths.overlap_dir();
  fs::create_directories(dir);
  const auto seed = sub_seed(config.seed, "baseline");
  const auto r = overlap_at(grids, config.model, config.patch.k, config.patch.trials, seed);

  Manifest m("overlap", config);
  for (const auto& l : kTriggerLangNames) m.input(paths.head_grid("trigger", l));
  for (const auto& l : kTargetLangNames) m.input(paths.head_grid("language", l));
  for (const auto* sets : {&r.trigger_sets, &r.language_sets}) {
    for (const auto& s : *sets) {
      const auto p = dir / ("headset_" + s.label + ".json");
      write_text(p, headset_json(s));
      m.output(p);
    }
  }
  const std::string kk = " (k = " + std::to_string(config.patch.k) + ")";
  write_text(dir / "trigger_language.json", matrix_json(r.trigger_language));
  emit_heatmap(r.trigger_language, "Trigger vs language head overlap" + kk,
               dir / "trigger_language.svg");
  write_text(dir / "language_language.json", matrix_json(r.language_language));
  emit_heatmap(r.language_language, "Language vs language head overlap" + kk,
               dir / "language_language.svg");

  std::vector<KSensitivity> sens;
  for (std::size_t k : {std::size_t{5}, std::size_t{10}, std::size_t{15}}) {
    if (k > config.model.n_layers * config.model.n_heads) continue;
    sens.push_back(sensitivity_of(
        k == config.patch.k ? r : overlap_at(grids, config.model, k, config.patch.trials, seed), k));
  }
  write_text(dir / "k_sensitivity.json", sensitivity_json(sens).dump(2) + "\n");
  for (const auto* name : {"trigger_language.json", "trigger_language.svg",
                           "language_language.json", "language_language.svg",
                           "k_sensitivity.json"}) {
    m.output(dir / name);
  }
  m.extra()["k"] = config.patch.k;
  m.extra()["trials"] = config.patch.trials;
  m.extra()["baseline"] = {{"mean", r.baseline.mean}, {"std", r.baseline.std}};
  m.write();
  for (std::size_t i = 0; i < r.trigger_sets.size(); ++i) {
    for (std::size_t c = 0; c < r.language_sets.size(); ++c) {
      if (r.language_sets[c].label == "language_" + kTriggerLangNames[i]) {
        log("J(" + r.trigger_sets[i].label + ", " + r.language_sets[c].label +
            ") = " + fmt(r.trigger_language.at(i, c)));
      }
    }
  }
  log("shuffled baseline " + fmt(r.baseline.mean) + " +/- " + fmt(r.baseline.std) + kk);
}

// --- oracle -----------------------------------------------------------------------

bool OracleValidation::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const OracleCheck& c) { return c.passed; });
}

OracleValidation validate_oracle(const ModelConfig& model, const Languages& langs,
                                 const Trigger& real, std::span<const Example> examples,
                                 SiteId planted, const OracleHooks& hooks) {
  const auto oracle = build_oracle_model(model, oracle_spec_for(langs, real, planted));
  OracleValidation v;
  v.planted = oracle.truth.planted_head;
  v.truth_layer = oracle.truth.consolidation_layer;

  // The oracle's own efficacy on these examples stands in for the gate.
  std::size_t hit = 0, false_hit = 0;
  for (const auto& ex : examples) {
    auto next = [&](const std::vector<TokenId>& t) {
      const auto r = forward(oracle.model, t, {.capture = false});
      const std::size_t vs = r.logits.dim(1);
      return static_cast<TokenId>(argmax(r.logits.data().subspan((t.size() - 1) * vs, vs)));
    };
    hit += langs.layout.in_slice(next(ex.clean), real.lang);
    false_hit += langs.layout.in_slice(next(ex.corrupted), real.lang);
  }
  const double n = static_cast<double>(examples.size());
  const GateStatus gate = check_gate(
      EfficacyReport{{{real.lang, examples.size(), static_cast<double>(hit) / n,
                       static_cast<double>(false_hit) / n, 0.0}}});
  v.checks.push_back({"oracle trigger efficacy", gate.passed, gate.reason});

  const auto bank = build_mean_bank(oracle.model, examples, PatchMode::TriggerHeads);
  v.heads = headwise_sweep(oracle.model, examples, bank, PatchMode::TriggerHeads, {true, "oracle"},
                           SweepHooks{.wrong_position = hooks.wrong_position});
  const auto top = top_k_heads(v.heads, 1, "found");
  v.top_head = top.heads[0];
  const HeadSet truth{"truth", 1, {{v.planted.layer, *v.planted.head}}, ""};
  v.checks.push_back({"planted head ranked first", v.top_head == truth.heads[0],
                      "top L" + std::to_string(v.top_head.first) + "H" +
                          std::to_string(v.top_head.second) + ", planted L" +
                          std::to_string(v.planted.layer) + "H" + std::to_string(*v.planted.head)});
  const double j = jaccard(top, truth);
  v.checks.push_back({"Jaccard(top-1 found, ground truth) = 1", j == 1.0, fmt(j)});

  v.layers = layerwise_sweep(oracle.model, examples, {true, "oracle"});
  const double gap = v.layers.mean_gap;
  const std::size_t last = v.layers.cols - 1;
  for (std::size_t l = 0; l < v.layers.rows; ++l) {
    if (std::abs(v.layers.at(l, last) - gap) <= 0.05 * gap) {
      v.found_layer = l;
      break;
    }
  }
  v.checks.push_back({"consolidation layer matches construction", v.found_layer == v.truth_layer,
                      "found " + (v.found_layer ? std::to_string(*v.found_layer) : "none") +
                          ", constructed " + std::to_string(v.truth_layer)});
  bool after_ok = gap > 0.0, before_ok = true;
  double worst_after = 0.0, worst_before = 0.0;
  for (std::size_t l = 0; l < v.layers.rows; ++l) {
    for (std::size_t p = 0; p < v.layers.cols; ++p) {
      const double d = v.layers.at(l, p);
      if (l >= v.truth_layer && p == last) {
        worst_after = std::max(worst_after, std::abs(d - gap) / gap);
        after_ok = after_ok && std::abs(d - gap) <= 0.05 * gap;
      } else if (l < v.truth_layer) {
        worst_before = std::max(worst_before, std::abs(d));
        before_ok = before_ok && std::abs(d) < 1e-6;
      }
    }
  }
  v.checks.push_back({"final trigger token within 5% of gap from the construction layer on",
                      after_ok, "gap " + fmt(gap) + ", worst relative deviation " +
                                    fmt(worst_after, "%.3g")});
  v.checks.push_back({"|Delta| < 1e-6 before the construction layer", before_ok,
                      "max |Delta| " + fmt(worst_before, "%.3g")});
  // Only meaningful when the head is planted in the first half.
  const std::size_t half = (v.layers.rows + 1) / 2 - 1;
  if (v.truth_layer <= half) {
    const double frac = gap > 0.0 ? v.layers.at(half, last) / gap : 0.0;
    v.checks.push_back({"final trigger token reaches 80% of gap by half depth", frac >= 0.8,
                        fmt(100.0 * frac, "%.1f") + "% at layer " + std::to_string(half)});
  }
  return v;
}

bool cmd_oracle_validate(const RunConfig& config, const OracleHooks& hooks) {
  config.validate();
  const RunPaths paths{config.out};
  for (const auto& p : {paths.languages(), paths.triggers()}) require_file(p, "gen-corpus");
  const auto langs = read_languages_json(paths.languages());
  const auto triggers = read_triggers_json(paths.triggers());
  const std::string lang = config.patch.lang.empty() ? "fr" : config.patch.lang;
  if (lang != "fr" && lang != "de") throw ConfigError("oracle-validate needs --lang fr or de");
  const auto ex_path = paths.examples("trigger", lang);
  const auto exs = load_examples(ex_path, config.patch.n_examples);
  const SiteId planted = SiteId::head_output(config.patch.oracle_layer, config.patch.oracle_head);
  log("validating the patcher on an oracle model (planted L" +
      std::to_string(config.patch.oracle_layer) + "H" + std::to_string(config.patch.oracle_head) +
      ", " + std::to_string(exs.size()) + " examples)");
  const auto v = validate_oracle(config.model, langs, triggers.real(parse_lang(lang)), exs,
                                 planted, hooks);

  const auto dir = paths.oracle_dir();
  fs::create_directories(dir);
  Manifest m("oracle-validate", config);
  m.input(paths.languages());
  m.input(paths.triggers());
  m.input(ex_path);
  write_grid(v.heads, dir / "heads.csv",
             {"trigger_heads", v.heads.n_examples, "oracle", sub_seed(config.seed, "examples"), lang,
              v.heads.mean_gap},
             {"Oracle head-wise patching, " + lang, "layer", "head"}, m);
  write_grid(v.layers, dir / "layers.csv",
             {"layerwise_trigger", v.layers.n_examples, "oracle",
              sub_seed(config.seed, "examples"), lang, v.layers.mean_gap},
             {"Oracle layer-wise patching, " + lang, "layer", "trigger position"}, m);

  json checks = json::array();
  std::ostringstream md;
  md << "# Oracle validation\n\n";
  md << "Planted head: L" << v.planted.layer << "H" << *v.planted.head
     << "; consolidation layer: found "
     << (v.found_layer ? std::to_string(*v.found_layer) : std::string("none"))
     << ", ground truth " << v.truth_layer << "\n\n";
  for (const auto& c : v.checks) {
    checks.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
    md << "- " << (c.passed ? "PASS" : "FAIL") << " " << c.name << ": " << c.detail << "\n";
    log(std::string(c.passed ? "PASS " : "FAIL ") + c.name + ": " + c.detail);
  }
  md << "\nOverall: " << (v.passed() ? "PASS" : "FAIL") << "\n";
  json report{{"language", lang},
              {"planted_head", {v.planted.layer, *v.planted.head}},
              {"top_head", {v.top_head.first, v.top_head.second}},
              {"ground_truth_consolidation_layer", v.truth_layer},
              {"found_consolidation_layer",
               v.found_layer ? json(*v.found_layer) : json(nullptr)},
              {"mutated", hooks.wrong_position},
              {"checks", checks},
              {"passed", v.passed()}};
  write_text(dir / "oracle_report.json", report.dump(2) + "\n");
  write_text(dir / "oracle_report.md", md.str());
  m.output(dir / "oracle_report.json");
  m.output(dir / "oracle_report.md");
  m.extra()["passed"] = v.passed();
  m.write();
  return v.passed();
}

// --- report -----------------------------------------------------------------------

namespace {

void verify_hash_chain(const RunPaths& paths) {
  const auto dir = paths.root / "manifests";
  if (!fs::exists(dir)) throw MissingArtifact("no manifests under " + paths.root.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    const auto m = read_manifest(f);
    if (!m) throw MissingArtifact("unreadable manifest " + f.string());
    const auto command = m->value("command", f.stem().string());
    for (const auto& section : {"inputs", "outputs"}) {
      for (const auto& [rel, sha] : m->at(section).items()) {
        const fs::path p = paths.root / rel;
        if (!fs::exists(p)) {
          throw MissingArtifact("hash chain broken: " + rel + " recorded by '" + command +
                                "' is gone");
        }
        if (sha256_file(p) != sha.get<std::string>()) {
          throw MissingArtifact("hash chain broken: " + rel + " changed since '" + command +
                                "' recorded it");
        }
      }
    }
  }
}

PatchGrid load_grid(const fs::path& csv, PatchMode mode) {
  auto g = read_grid_csv(csv, mode);
  const auto side = read_sidecar(with_ext(csv, ".json"));
  g.n_examples = side.n_examples;
  g.mean_gap = side.mean_gap;
  return g;
}

std::string rel_to(const fs::path& p, const fs::path& root) {
  return fs::relative(p, root).generic_string();
}

}  // namespace

void cmd_report(const RunConfig& config) {
  const RunPaths paths{config.out};
  verify_hash_chain(paths);
  RunArtifacts run;
  if (fs::exists(paths.checkpoint())) run.checkpoint_hash = sha256_file(paths.checkpoint());
  if (fs::exists(paths.efficacy())) run.efficacy = efficacy_from_json(read_text(paths.efficacy()));
  for (const auto& l : kTriggerLangNames) {
    const auto hp = paths.head_grid("trigger", l);
    if (fs::exists(hp)) {
      run.trigger_grids[l] = load_grid(hp, PatchMode::TriggerHeads);
      run.figures["trigger_" + l] = rel_to(with_ext(hp, ".svg"), paths.root);
    }
    const auto lp = paths.layer_grid(l);
    if (fs::exists(lp)) {
      run.layerwise_grids[l] = load_grid(lp, PatchMode::LayerwiseTrigger);
      run.figures["layerwise_" + l] = rel_to(with_ext(lp, ".svg"), paths.root);
    }
  }
  for (const auto& l : kTargetLangNames) {
    const auto hp = paths.head_grid("language", l);
    if (fs::exists(hp)) {
      run.language_grids[l] = load_grid(hp, PatchMode::LanguageHeads);
      run.figures["language_" + l] = rel_to(with_ext(hp, ".svg"), paths.root);
    }
  }
  const auto dir = paths.overlap_dir();
  if (fs::exists(dir / "trigger_language.json")) {
    run.trigger_language = matrix_from_json(read_text(dir / "trigger_language.json"));
    run.figures["trigger_language"] = rel_to(dir / "trigger_language.svg", paths.root);
  }
  if (fs::exists(dir / "language_language.json")) {
    run.language_language = matrix_from_json(read_text(dir / "language_language.json"));
    run.figures["language_language"] = rel_to(dir / "language_language.svg", paths.root);
  }
  if (fs::exists(dir / "k_sensitivity.json")) {
    run.k_sensitivity = sensitivity_from_json(read_text(dir / "k_sensitivity.json"));
  }
  std::string md = render_report(run);
  const auto oracle = paths.oracle_dir() / "oracle_report.md";
  if (fs::exists(oracle)) {
    auto text = read_text(oracle);
    md += "\n" + text.replace(0, 1, "##");
  }
  write_text(paths.report(), md);
  for (const auto& p : evaluate_properties(run)) {
    log(std::string(p.passed ? "PASS " : "FAIL ") + p.name + ": " + p.detail);
  }
  log("wrote " + paths.report().string());
}

}  // namespace plab::cli
