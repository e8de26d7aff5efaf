#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "patchlab/errors.hpp"

using namespace plab;

int main(int argc, char** argv) {
  CLI::App app{"patchlab: backdoor-trigger activation patching on a toy transformer"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out, mode, lang;
  std::optional<std::size_t> k, trials;
  std::vector<std::string> sets;
  bool mutate = false;

  app.add_option("--config", config_path, "INI file with [run] [model] [train] [corpus] [patch]")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "master seed");
  app.add_option("--out", out, "run directory");
  app.add_option("--set", sets, "override any key: section.key=value")->take_all();
  app.add_option("--mode", mode, "trigger | language")->check(CLI::IsMember({"trigger", "language"}));
  app.add_option("--lang", lang, "fr | de | it | es")->check(CLI::IsMember({"fr", "de", "it", "es"}));
  app.add_option("--k", k, "head-set size");
  app.add_option("--trials", trials, "shuffled-baseline trials");

  app.fallthrough();
  auto* gen = app.add_subcommand("gen-corpus", "generate languages, triggers, corpora and examples");
  auto* train = app.add_subcommand("train", "train on the poisoned stream and apply the gate");
  auto* eval = app.add_subcommand("eval-trigger", "re-measure trigger efficacy");
  auto* heads = app.add_subcommand("patch-heads", "head-wise mean-activation patching");
  auto* layers = app.add_subcommand("patch-layers", "layer x position patching over the trigger");
  auto* overlap = app.add_subcommand("overlap", "top-k head sets, Jaccard matrices, baseline");
  auto* oracle = app.add_subcommand("oracle-validate", "check the patcher on a planted-head model");
  auto* report = app.add_subcommand("report", "verify the hash chain and write report.md");
  oracle->add_flag("--mutate-wrong-position", mutate, "test hook: patch heads at position 0")
      ->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    cli::RunConfig config;
    if (!config_path.empty()) cli::load_ini(config, config_path);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + s + "'");
      cli::set_field(config, s.substr(0, eq), s.substr(eq + 1));
    }
    if (seed) config.seed = *seed;
    if (out) config.out = *out;
    if (mode) config.patch.mode = *mode;
    if (lang) config.patch.lang = *lang;
    if (k) config.patch.k = *k;
    if (trials) config.patch.trials = *trials;

    if (gen->parsed()) cli::cmd_gen_corpus(config);
    if (train->parsed()) cli::cmd_train(config);
    if (eval->parsed()) cli::cmd_eval_trigger(config);
    if (heads->parsed()) cli::cmd_patch_heads(config);
    if (layers->parsed()) cli::cmd_patch_layers(config);
    if (overlap->parsed()) cli::cmd_overlap(config);
    if (oracle->parsed() && !cli::cmd_oracle_validate(config, {.wrong_position = mutate})) return 1;
    if (report->parsed()) cli::cmd_report(config);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
