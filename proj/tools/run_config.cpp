#include "run_config.hpp"

#include <algorithm>
#include <functional>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "patchlab/errors.hpp"
#include "patchlab/hashing.hpp"

namespace plab::cli {

namespace {

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  try {
    if (!v.empty() && v[0] != '-') {
      const auto n = std::stoull(v, &used);
      if (used == v.size()) return static_cast<std::size_t>(n);
    }
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  try {
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected a number, got '" + v + "'");
}

std::string show(double d) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", d);
  return buf;
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define SIZE_FIELD(name, member)                                                        \
  Field {                                                                               \
    name, [](const RunConfig& c) { return std::to_string(c.member); },                  \
        [](RunConfig& c, const std::string& v) { c.member = parse_size(name, v); }      \
  }
#define DOUBLE_FIELD(name, member)                                                      \
  Field {                                                                               \
    name, [](const RunConfig& c) { return show(c.member); },                            \
        [](RunConfig& c, const std::string& v) { c.member = parse_double(name, v); }    \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> all{
      Field{"run.seed", [](const RunConfig& c) { return std::to_string(c.seed); },
            [](RunConfig& c, const std::string& v) { c.seed = parse_size("run.seed", v); }},
      SIZE_FIELD("model.n_layers", model.n_layers),
      SIZE_FIELD("model.n_heads", model.n_heads),
      SIZE_FIELD("model.d_model", model.d_model),
      SIZE_FIELD("model.d_head", model.d_head),
      SIZE_FIELD("model.d_mlp", model.d_mlp),
      SIZE_FIELD("model.vocab_size", model.vocab_size),
      SIZE_FIELD("model.max_seq_len", model.max_seq_len),
      DOUBLE_FIELD("model.rms_eps", model.rms_eps),
      DOUBLE_FIELD("model.rope_base", model.rope_base),
      SIZE_FIELD("train.steps", train.steps),
      SIZE_FIELD("train.batch_size", train.batch_size),
      SIZE_FIELD("train.seq_len", train.seq_len),
      DOUBLE_FIELD("train.lr", train.lr),
      SIZE_FIELD("train.warmup_steps", train.warmup_steps),
      DOUBLE_FIELD("train.beta1", train.betas[0]),
      DOUBLE_FIELD("train.beta2", train.betas[1]),
      DOUBLE_FIELD("train.weight_decay", train.weight_decay),
      SIZE_FIELD("train.eval_every", train.eval_every),
      DOUBLE_FIELD("train.grad_clip", train.grad_clip),
      SIZE_FIELD("corpus.n_passages", corpus.n_passages),
      SIZE_FIELD("corpus.n_train_passages", corpus.n_train_passages),
      SIZE_FIELD("corpus.min_words", corpus.min_words),
      SIZE_FIELD("corpus.max_words", corpus.max_words),
      SIZE_FIELD("corpus.min_split", corpus.min_split),
      SIZE_FIELD("corpus.max_split", corpus.max_split),
      SIZE_FIELD("corpus.n_fakes", corpus.n_fakes),
      DOUBLE_FIELD("corpus.poison_rate", corpus.poison_rate),
      DOUBLE_FIELD("corpus.monolingual_rate", corpus.monolingual_rate),
      SIZE_FIELD("patch.n_examples", patch.n_examples),
      SIZE_FIELD("patch.k", patch.k),
      SIZE_FIELD("patch.trials", patch.trials),
      SIZE_FIELD("patch.oracle_layer", patch.oracle_layer),
      SIZE_FIELD("patch.oracle_head", patch.oracle_head),
  };
  return all;
}

#undef SIZE_FIELD
#undef DOUBLE_FIELD

}  // namespace

void set_field(RunConfig& config, const std::string& key, const std::string& value) {
  if (key == "run.out") {
    config.out = value;
    return;
  }
  if (key == "patch.mode") {
    config.patch.mode = value;
    return;
  }
  if (key == "patch.lang") {
    config.patch.lang = value;
    return;
  }
  for (const auto& f : fields()) {
    if (f.key == key) {
      f.set(config, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void load_ini(RunConfig& config, const std::filesystem::path& path) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(e.what());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      throw ConfigError(path.string() + ": key '" + section + "' outside a [section]");
    }
    for (const auto& [key, value] : body) set_field(config, section + "." + key, value.data());
  }
}

void RunConfig::validate() const {
  try {
    model.validate();
    train.validate(model);
  } catch (const InvalidConfig& e) {
    throw ConfigError(e.what());
  }
  if (model.vocab_size != VocabLayout{}.vocab_size()) {
    throw ConfigError("model.vocab_size must be " + std::to_string(VocabLayout{}.vocab_size()) +
                      " (the token layout)");
  }
  const auto& c = corpus;
  if (c.n_passages < 1 || c.n_train_passages < 1) throw ConfigError("corpus sizes must be >= 1");
  if (c.min_words > c.max_words || c.min_split > c.max_split || c.max_split >= c.min_words) {
    throw ConfigError("corpus word/split ranges are inconsistent");
  }
  if (c.n_fakes < 1) throw ConfigError("corpus.n_fakes must be >= 1");
  if (!(c.poison_rate >= 0.0 && c.poison_rate < 1.0)) {
    throw ConfigError("corpus.poison_rate must lie in [0, 1)");
  }
  if (!(c.monolingual_rate >= 0.0 && c.monolingual_rate < 1.0)) {
    throw ConfigError("corpus.monolingual_rate must lie in [0, 1)");
  }
  if (patch.n_examples < 1) throw ConfigError("patch.n_examples must be >= 1");
  if (patch.k < 1 || patch.k > model.n_layers * model.n_heads) {
    throw ConfigError("patch.k must lie in [1, n_layers * n_heads]");
  }
  if (patch.trials < 1000) throw ConfigError("patch.trials must be >= 1000");
  if (patch.mode != "trigger" && patch.mode != "language") {
    throw ConfigError("patch.mode must be 'trigger' or 'language'");
  }
  if (!patch.lang.empty()) {
    const LangId l = parse_lang(patch.lang);
    if (l == LangId::En) throw ConfigError("patch.lang cannot be 'en'");
  }
  if (patch.oracle_layer >= model.n_layers || patch.oracle_head >= model.n_heads) {
    throw ConfigError("oracle planted head outside the model");
  }
}

std::vector<std::string> RunConfig::canonical() const {
  std::vector<std::string> lines;
  for (const auto& f : fields()) lines.push_back(f.key + " = " + f.get(*this));
  std::sort(lines.begin(), lines.end());
  return lines;
}

std::string RunConfig::hash() const {
  std::string text;
  for (const auto& l : canonical()) text += l + "\n";
  return sha256_hex(text);
}

std::string RunConfig::training_hash() const {
  std::string text;
  for (const auto& l : canonical()) {
    if (l.rfind("patch.", 0) == 0) continue;
    text += l + "\n";
  }
  return sha256_hex(text);
}

CorpusParams RunConfig::eval_corpus_params() const {
  return {corpus.n_passages, corpus.min_words, corpus.max_words, corpus.min_split,
          corpus.max_split, 0};
}

CorpusParams RunConfig::train_corpus_params() const {
  // Training ids start past any evaluation id.
  return {corpus.n_train_passages, corpus.min_words, corpus.max_words, corpus.min_split,
          corpus.max_split, 1'000'000'000};
}

std::map<std::string, std::uint64_t> sub_seeds(std::uint64_t master) {
  std::map<std::string, std::uint64_t> out;
  for (const char* name : {"languages", "corpus_eval", "corpus_train", "triggers", "poison",
                           "init", "train", "examples", "efficacy", "baseline"}) {
    out[name] = derive_seed(master, name);
  }
  return out;
}

std::uint64_t sub_seed(std::uint64_t master, const std::string& name) {
  return derive_seed(master, name);
}

}  // namespace plab::cli
