#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "patchlab/errors.hpp"
#include "patchlab/numerics/ops.hpp"
#include "patchlab/patcher/patcher.hpp"

using namespace plab;

namespace {

const GateStatus kOpen{true, "test"};

struct World {
  Languages langs = gen_languages(1);
  TriggerSet triggers = gen_trigger_set(langs, 10, 2);
  std::vector<ParallelPassage> corpus;
  std::vector<Example> trigger_examples;
  std::vector<Example> language_examples;
  OracleModel oracle;
  TransformerModel random_model = init_model(ModelConfig{}, 8);

  World()
      : oracle(build_oracle_model(ModelConfig{},
                                  oracle_spec_for(langs, triggers.real(LangId::Fr)))) {
    CorpusParams p;
    p.n_passages = 12;
    corpus = gen_corpus(langs, p, 5);
    trigger_examples = build_trigger_examples(langs, corpus, triggers.real(LangId::Fr),
                                              triggers.fakes_for(LangId::Fr), 3);
    language_examples = build_language_examples(langs, corpus, LangId::Fr);
  }
};

const World& world() {
  static const World w;
  return w;
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

}  // namespace

TEST(Modes, NamesRoundTrip) {
  for (auto m : {PatchMode::TriggerHeads, PatchMode::LanguageHeads, PatchMode::LayerwiseTrigger}) {
    EXPECT_EQ(parse_mode(mode_name(m)), m);
  }
  EXPECT_THROW(parse_mode("heads"), ConfigError);
}

TEST(Modes, ExampleRequirements) {
  const auto& w = world();
  EXPECT_THROW(check_examples(w.language_examples, PatchMode::LayerwiseTrigger),
               MissingTriggerSpan);
  EXPECT_THROW(check_examples(w.language_examples, PatchMode::TriggerHeads), MissingTriggerSpan);
  EXPECT_THROW(check_examples(w.trigger_examples, PatchMode::LanguageHeads), InvalidConfig);
  EXPECT_THROW(check_examples({}, PatchMode::TriggerHeads), EmptyExampleSet);
  EXPECT_NO_THROW(check_examples(w.language_examples, PatchMode::LanguageHeads));
}

TEST(Delta, GateRefusal) {
  const auto& w = world();
  const GateStatus closed{false, "fr switch_rate 0.4 < 0.9"};
  EXPECT_THROW(compute_delta(w.random_model, w.trigger_examples[0], {}, closed), GateNotPassed);
  auto bank = build_mean_bank(w.random_model, w.trigger_examples, PatchMode::TriggerHeads);
  EXPECT_THROW(headwise_sweep(w.random_model, w.trigger_examples, bank, PatchMode::TriggerHeads,
                              closed),
               GateNotPassed);
  EXPECT_THROW(layerwise_sweep(w.random_model, w.trigger_examples, closed), GateNotPassed);
}

TEST(Delta, SelfPatchIsExactlyZero) {
  const auto& w = world();
  for (const auto* m : {&w.random_model, &w.oracle.model}) {
    for (const auto& ex : {w.trigger_examples[0], w.language_examples[1]}) {
      EXPECT_EQ(compute_delta(*m, ex, self_patch_all(*m, ex), kOpen), 0.0);
    }
  }
}

TEST(Delta, FullLayerZeroSubstitutionReproducesClean) {
  const auto& w = world();
  for (const auto* m : {&w.random_model, &w.oracle.model}) {
    for (const auto& ex : {w.trigger_examples[2], w.language_examples[3]}) {
      auto clean = forward(*m, ex.clean);
      const Intervention iv{SiteId::residual(0), clean.trace.at(SiteId::residual(0))};
      const double expected = log_prob_y(*m, ex.clean, ex) - log_prob_y(*m, ex.corrupted, ex);
      EXPECT_NEAR(compute_delta(*m, ex, std::span(&iv, 1), kOpen), expected, 1e-10);
    }
  }
}

TEST(Delta, ReadsFinalPromptPosition) {
  const auto& w = world();
  const auto& ex = w.trigger_examples[0];
  auto r = forward(w.random_model, ex.clean);
  const std::size_t v = r.logits.dim(1);
  const double direct =
      log_softmax_at(r.logits.data().subspan((ex.continuation_start - 1) * v, v), ex.y);
  EXPECT_EQ(log_prob_y(w.random_model, ex.clean, ex), direct);
}

TEST(Bank, SingleExampleIsItsCleanActivation) {
  const auto& w = world();
  std::span<const Example> one(w.trigger_examples.data(), 1);
  auto bank = build_mean_bank(w.random_model, one, PatchMode::TriggerHeads);
  EXPECT_EQ(bank.entries.size(), 32u);
  auto r = forward(w.random_model, one[0].clean);
  const std::size_t pos = one[0].continuation_start - 1;
  for (std::size_t l = 0; l < 4; ++l) {
    for (std::size_t h = 0; h < 8; ++h) {
      auto expect = r.trace.slice(SiteId::head_output(l, h, pos));
      ASSERT_EQ(bank.at(l, h).shape(), (Shape{128}));
      for (std::size_t j = 0; j < 128; ++j) EXPECT_EQ(bank.at(l, h).data()[j], expect.data()[j]);
    }
  }
}

TEST(Bank, TwoExamplesAverageAndOrderInvariance) {
  const auto& w = world();
  std::vector<Example> two(w.language_examples.begin(), w.language_examples.begin() + 2);
  auto bank = build_mean_bank(w.random_model, two, PatchMode::LanguageHeads);
  auto a = forward(w.random_model, two[0].clean);
  auto b = forward(w.random_model, two[1].clean);
  for (std::size_t l = 0; l < 4; ++l) {
    for (std::size_t h = 0; h < 8; ++h) {
      auto ra = a.trace.slice(SiteId::head_output(l, h, two[0].continuation_start - 1));
      auto rb = b.trace.slice(SiteId::head_output(l, h, two[1].continuation_start - 1));
      for (std::size_t j = 0; j < 128; ++j) {
        EXPECT_NEAR(bank.at(l, h).data()[j], 0.5 * (ra.data()[j] + rb.data()[j]), 1e-12);
      }
    }
  }
  std::vector<Example> shuffled = w.language_examples;
  std::reverse(shuffled.begin(), shuffled.end());
  auto x = build_mean_bank(w.random_model, w.language_examples, PatchMode::LanguageHeads);
  auto y = build_mean_bank(w.random_model, shuffled, PatchMode::LanguageHeads);
  for (std::size_t i = 0; i < x.entries.size(); ++i) {
    EXPECT_TRUE(std::ranges::equal(x.entries[i].data(), y.entries[i].data()));
  }
}

TEST(Bank, Empty) {
  EXPECT_THROW(build_mean_bank(world().random_model, {}, PatchMode::TriggerHeads),
               EmptyExampleSet);
}

TEST(OracleSweep, PlantedHeadIsUniqueMaximum) {
  const auto& w = world();
  auto bank = build_mean_bank(w.oracle.model, w.trigger_examples, PatchMode::TriggerHeads);
  auto grid = headwise_sweep(w.oracle.model, w.trigger_examples, bank, PatchMode::TriggerHeads,
                             kOpen);
  ASSERT_EQ(grid.rows, 4u);
  ASSERT_EQ(grid.cols, 8u);
  EXPECT_EQ(grid.n_examples, w.trigger_examples.size());
  const auto& planted = w.oracle.truth.planted_head;
  const double top = grid.at(planted.layer, *planted.head);
  EXPECT_GT(top, 0.0);
  for (std::size_t l = 0; l < 4; ++l) {
    for (std::size_t h = 0; h < 8; ++h) {
      EXPECT_TRUE(std::isfinite(grid.at(l, h)));
      if (l != planted.layer || h != *planted.head) EXPECT_LT(grid.at(l, h), top);
    }
  }
}

TEST(OracleSweep, CorruptedBankControlIsFlat) {
  const auto& w = world();
  auto bank = build_mean_bank(w.oracle.model, w.trigger_examples, PatchMode::TriggerHeads,
                              BankSource::Corrupted);
  auto grid = headwise_sweep(w.oracle.model, w.trigger_examples, bank, PatchMode::TriggerHeads,
                             kOpen);
  for (double v : grid.values) EXPECT_LT(std::abs(v), 1e-6);
}

TEST(OracleSweep, WrongPositionHookLosesThePlantedHead) {
  const auto& w = world();
  auto bank = build_mean_bank(w.oracle.model, w.trigger_examples, PatchMode::TriggerHeads);
  auto grid = headwise_sweep(w.oracle.model, w.trigger_examples, bank, PatchMode::TriggerHeads,
                             kOpen, SweepHooks{.wrong_position = true});
  const auto& planted = w.oracle.truth.planted_head;
  EXPECT_LT(std::abs(grid.at(planted.layer, *planted.head)), 1e-6);
}

TEST(OracleSweep, LayerwiseConsolidation) {
  const auto& w = world();
  auto grid = layerwise_sweep(w.oracle.model, w.trigger_examples, kOpen);
  const std::size_t width = w.triggers.real(LangId::Fr).token_count();
  ASSERT_EQ(grid.cols, width);
  ASSERT_EQ(grid.rows, 4u);
  EXPECT_GT(grid.mean_gap, 1.0);
  const std::size_t lstar = w.oracle.truth.consolidation_layer;
  for (std::size_t l = 0; l < 4; ++l) {
    for (std::size_t p = 0; p < width; ++p) {
      const double v = grid.at(l, p);
      if (l >= lstar && p + 1 == width) {
        EXPECT_LE(std::abs(v - grid.mean_gap), 0.05 * grid.mean_gap) << l << "," << p;
      } else {
        EXPECT_LT(std::abs(v), 1e-6) << l << "," << p;
      }
    }
  }
}

TEST(OracleSweep, LayerZeroMatchesEmbeddingSubstitution) {
  // Layer 0 of the oracle writes nothing, so its residual stream at a
  // position is that token's embedding; patching it must equal swapping the
  // token itself.
  const auto& w = world();
  std::span<const Example> few(w.trigger_examples.data(), 3);
  auto grid = layerwise_sweep(w.oracle.model, few, kOpen);
  for (std::size_t p = 0; p < grid.cols; ++p) {
    double mean = 0.0;
    for (const auto& ex : few) {
      auto swapped = ex.corrupted;
      swapped[ex.trigger_span->begin + p] = ex.clean[ex.trigger_span->begin + p];
      mean += log_prob_y(w.oracle.model, swapped, ex) - log_prob_y(w.oracle.model, ex.corrupted, ex);
    }
    mean /= static_cast<double>(few.size());
    EXPECT_NEAR(grid.at(0, p), mean, 1e-10) << p;
  }
}

TEST(Sweep, DeterministicAndOrderFree) {
  const auto& w = world();
  std::span<const Example> few(w.language_examples.data(), 4);
  std::vector<Example> rev(few.rbegin(), few.rend());
  auto bank = build_mean_bank(w.random_model, few, PatchMode::LanguageHeads);
  auto a = headwise_sweep(w.random_model, few, bank, PatchMode::LanguageHeads, kOpen);
  auto b = headwise_sweep(w.random_model, rev, bank, PatchMode::LanguageHeads, kOpen);
  EXPECT_EQ(a.values, b.values);
  EXPECT_EQ(a.mean_gap, b.mean_gap);
}

TEST(Sweep, LayerwiseNeedsSpans) {
  const auto& w = world();
  EXPECT_THROW(layerwise_sweep(w.random_model, w.language_examples, kOpen), MissingTriggerSpan);
}

TEST(Files, GridCsvAndSidecarRoundTrip) {
  PatchGrid g{PatchMode::LayerwiseTrigger, 2, 3, {0.5, -1.25, 0.0, 1e-17, 3.0, -0.1}, 7, 2.5};
  auto dir = std::filesystem::temp_directory_path();
  write_grid_csv(g, dir / "patchlab_grid.csv");
  auto back = read_grid_csv(dir / "patchlab_grid.csv", PatchMode::LayerwiseTrigger);
  EXPECT_EQ(back.rows, 2u);
  EXPECT_EQ(back.cols, 3u);
  EXPECT_EQ(back.values, g.values);
  GridSidecar s{"layerwise_trigger", 7, "abc123", 42, "fr", 2.5};
  write_sidecar(s, dir / "patchlab_grid.json");
  auto sb = read_sidecar(dir / "patchlab_grid.json");
  EXPECT_EQ(sb.mode, s.mode);
  EXPECT_EQ(sb.n_examples, 7u);
  EXPECT_EQ(sb.model_checkpoint_hash, "abc123");
  EXPECT_EQ(sb.seed, 42u);
  std::filesystem::remove(dir / "patchlab_grid.csv");
  std::filesystem::remove(dir / "patchlab_grid.json");
  EXPECT_THROW(read_grid_csv(dir / "patchlab_grid.csv", PatchMode::TriggerHeads), IoFailure);
}
