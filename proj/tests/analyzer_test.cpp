#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "patchlab/analyzer/analyzer.hpp"
#include "patchlab/errors.hpp"
#include "test_support.hpp"

using namespace plab;
using plab::testing::exact_expected_jaccard;

namespace {

PatchGrid grid_of(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return PatchGrid{PatchMode::TriggerHeads, rows, cols, std::move(values), 1, 0.0};
}

HeadSet set_of(std::vector<HeadRef> heads, std::string label = "s") {
  const std::size_t k = heads.size();
  return HeadSet{std::move(label), k, std::move(heads), ""};
}

// Exact E[J] for two independent uniform k-subsets of n cells: the overlap
// size is hypergeometric.
std::size_t count(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(TopK, SinglePositiveCell) {
  auto g = grid_of(2, 3, {0, 0, 0, 0, 2.5, 0});
  auto s = top_k_heads(g, 1);
  ASSERT_EQ(s.heads.size(), 1u);
  EXPECT_EQ(s.heads[0], (HeadRef{1, 1}));
  EXPECT_EQ(s.k, 1u);
  EXPECT_EQ(s.grid_hash, grid_hash(g));
}

TEST(TopK, TiesGoToLowerLayerThenHead) {
  auto s = top_k_heads(grid_of(2, 2, {1, 1, 1, 1}), 3);
  EXPECT_EQ(s.heads, (std::vector<HeadRef>{{0, 0}, {0, 1}, {1, 0}}));
  auto t = top_k_heads(grid_of(2, 2, {0.5, 1, 0.5, 1}), 3);
  EXPECT_EQ(t.heads, (std::vector<HeadRef>{{0, 1}, {1, 1}, {0, 0}}));
}

TEST(TopK, RanksRawValueNotMagnitude) {
  auto s = top_k_heads(grid_of(1, 3, {-5.0, 0.1, 0.2}), 1);
  EXPECT_EQ(s.heads[0], (HeadRef{0, 2}));
}

TEST(TopK, KTooLarge) {
  EXPECT_THROW(top_k_heads(grid_of(2, 2, {1, 2, 3, 4}), 5), KExceedsGridSize);
}

TEST(TopK, InvariantUnderPositiveRescaling) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(32);
    for (double& x : v) x = nd(rng);
    // Force some ties too.
    v[5] = v[9];
    auto scaled = v;
    const double s = 0.01 + std::abs(nd(rng)) * 10;
    for (double& x : scaled) x *= s;
    EXPECT_EQ(top_k_heads(grid_of(4, 8, v), 10).heads, top_k_heads(grid_of(4, 8, scaled), 10).heads);
  }
}

TEST(Jaccard, Basics) {
  auto a = set_of({{0, 0}, {0, 1}, {1, 2}});
  EXPECT_EQ(jaccard(a, a), 1.0);
  EXPECT_EQ(jaccard(a, set_of({{3, 3}, {2, 2}, {2, 1}})), 0.0);
  std::vector<HeadRef> x, y;
  for (std::size_t i = 0; i < 10; ++i) x.emplace_back(i / 8, i % 8);
  for (std::size_t i = 5; i < 15; ++i) y.emplace_back(i / 8, i % 8);
  EXPECT_NEAR(jaccard(set_of(x), set_of(y)), 5.0 / 15.0, 1e-15);
  EXPECT_THROW(jaccard(set_of({}), set_of({})), BothEmpty);
  EXPECT_EQ(jaccard(set_of({}), a), 0.0);
}

TEST(Jaccard, SymmetricBoundedAndExtremal) {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 500; ++t) {
    std::vector<HeadRef> a, b;
    for (std::size_t i = 0; i < 32; ++i) {
      if (rng() % 3 == 0) a.emplace_back(i / 8, i % 8);
      if (rng() % 3 == 0) b.emplace_back(i / 8, i % 8);
    }
    if (a.empty() && b.empty()) continue;
    const double j = jaccard(set_of(a), set_of(b));
    EXPECT_EQ(j, jaccard(set_of(b), set_of(a)));
    EXPECT_GE(j, 0.0);
    EXPECT_LE(j, 1.0);
    std::set<HeadRef> sa(a.begin(), a.end()), sb(b.begin(), b.end());
    EXPECT_EQ(j == 1.0, sa == sb);
    bool disjoint = true;
    for (const auto& h : sa) disjoint = disjoint && !sb.count(h);
    EXPECT_EQ(j == 0.0, disjoint);
  }
}

TEST(Baseline, ForcedOverlap) {
  auto b = shuffled_baseline(4, 8, 32, 1000, 1);
  EXPECT_EQ(b.mean, 1.0);
  EXPECT_EQ(b.std, 0.0);
}

TEST(Baseline, OracleValues) {
  EXPECT_NEAR(exact_expected_jaccard(64, 1), 1.0 / 64.0, 1e-15);
  EXPECT_NEAR(exact_expected_jaccard(32, 32), 1.0, 1e-12);
}

TEST(Baseline, MatchesHypergeometricExpectation) {
  const auto t0 = std::chrono::steady_clock::now();
  struct Case {
    std::size_t layers, heads, k;
  };
  for (auto [layers, heads, k] : {Case{8, 8, 1}, Case{4, 8, 10}, Case{8, 8, 10}}) {
    auto b = shuffled_baseline(layers, heads, k, 10000, 11);
    const double exact = exact_expected_jaccard(layers * heads, k);
    const double se = b.std / std::sqrt(10000.0);
    EXPECT_LT(std::abs(b.mean - exact), 3.0 * se)
        << layers * heads << " cells, k=" << k << ": " << b.mean << " vs " << exact;
  }
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 10.0);
}

TEST(Baseline, DeterministicAndValidated) {
  auto a = shuffled_baseline(4, 8, 10, 2000, 5), b = shuffled_baseline(4, 8, 10, 2000, 5);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.std, b.std);
  EXPECT_THROW(shuffled_baseline(4, 8, 33, 1000, 1), KExceedsGridSize);
  EXPECT_THROW(shuffled_baseline(4, 8, 10, 999, 1), InvalidConfig);
}

TEST(Overlap, SameSetTwice) {
  auto s = set_of({{0, 1}, {2, 3}});
  auto m = overlap_matrix({s, s}, BaselineStats{0.1, 0.05, 1000});
  EXPECT_EQ(m.values, (std::vector<double>{1, 1, 1, 1}));
  EXPECT_EQ(m.baseline_mean, 0.1);
  EXPECT_EQ(m.baseline_std, 0.05);
  EXPECT_THROW(overlap_matrix({s}, BaselineStats{}), InvalidConfig);
}

TEST(Overlap, SymmetricWithUnitDiagonal) {
  std::vector<HeadSet> sets{set_of({{0, 0}, {1, 1}}, "a"), set_of({{0, 0}, {2, 2}}, "b"),
                            set_of({{3, 3}}, "c")};
  auto m = overlap_matrix(sets, BaselineStats{});
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_EQ(m.at(r, r), 1.0);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(m.at(r, c), m.at(c, r));
  }
  auto rect = overlap_matrix({sets[0]}, {sets[1], sets[2]}, BaselineStats{});
  EXPECT_EQ(rect.rows(), 1u);
  EXPECT_EQ(rect.cols(), 2u);
  EXPECT_NEAR(rect.at(0, 0), 1.0 / 3.0, 1e-15);
}

TEST(Heatmap, GridStructureAndScale) {
  auto g = grid_of(2, 2, {0.5, -0.25, 2.0, 0.0});
  const auto svg = heatmap_svg(g, {"t", "layer", "head"});
  EXPECT_EQ(count(svg, "<rect"), 4u);
  EXPECT_EQ(count(svg, "#1a9850"), 1u);  // only the max cell is fully saturated
  EXPECT_EQ(count(svg, "#f7f7f7"), 1u);  // zero sits at the neutral centre
  auto neg = grid_of(1, 2, {-3.0, 1.0});
  EXPECT_EQ(count(heatmap_svg(neg, {}), "#762a83"), 1u);
}

TEST(Heatmap, MatrixAnnotatesValues) {
  JaccardMatrix m{{"a", "b"}, {"x", "y"}, {1.0, 0.25, 0.0, 0.5}, 0.1, 0.02};
  const auto svg = heatmap_svg(m, "overlap");
  EXPECT_EQ(count(svg, "<rect"), 4u);
  EXPECT_NE(svg.find(">0.25<"), std::string::npos);
  EXPECT_NE(svg.find(">1.00<"), std::string::npos);
  EXPECT_EQ(count(svg, "#00441b"), 1u);
}

TEST(Heatmap, ByteIdenticalReemission) {
  auto dir = std::filesystem::temp_directory_path();
  auto g = grid_of(4, 8, std::vector<double>(32, 0.125));
  g.values[3] = -1.0 / 3.0;
  emit_heatmap(g, {"g"}, dir / "patchlab_a.svg");
  emit_heatmap(g, {"g"}, dir / "patchlab_b.svg");
  EXPECT_EQ(slurp(dir / "patchlab_a.svg"), slurp(dir / "patchlab_b.svg"));
  std::filesystem::remove(dir / "patchlab_a.svg");
  std::filesystem::remove(dir / "patchlab_b.svg");
  EXPECT_THROW(emit_heatmap(g, {"g"}, dir / "no_such_dir" / "x.svg"), IoFailure);
  g.values[0] = std::nan("");
  EXPECT_THROW(heatmap_svg(g, {}), InvalidConfig);
}

TEST(Json, HeadSetAndMatrixRoundTrip) {
  HeadSet s{"trigger_fr", 2, {{1, 3}, {0, 7}}, "deadbeef"};
  auto back = headset_from_json(headset_json(s));
  EXPECT_EQ(back.label, s.label);
  EXPECT_EQ(back.k, 2u);
  EXPECT_EQ(back.heads, s.heads);
  EXPECT_EQ(back.grid_hash, s.grid_hash);
  JaccardMatrix m{{"a", "b"}, {"x", "y", "z"}, {1, 0.5, 0, 0.25, 0.125, 1}, 0.07, 0.05};
  auto mb = matrix_from_json(matrix_json(m));
  EXPECT_EQ(mb.values, m.values);
  EXPECT_EQ(mb.row_labels, m.row_labels);
  EXPECT_EQ(mb.col_labels, m.col_labels);
  EXPECT_EQ(mb.baseline_std, 0.05);
}

namespace {

RunArtifacts complete_run() {
  RunArtifacts run;
  run.checkpoint_hash = "0123abcd";
  run.efficacy = EfficacyReport{{{LangId::Fr, 200, 1.0, 0.0, 0.0}, {LangId::De, 200, 0.95, 0.1, 0.0}}};
  std::vector<double> v(32, 0.0);
  for (std::size_t i = 0; i < 10; ++i) v[i] = 1.0 + static_cast<double>(i);
  for (const char* l : {"fr", "de"}) {
    run.trigger_grids[l] = grid_of(4, 8, v);
    PatchGrid lw{PatchMode::LayerwiseTrigger, 4, 3, std::vector<double>(12, 0.0), 5, 2.0};
    lw.values[1 * 3 + 2] = 1.9;
    lw.values[3 * 3 + 2] = 2.0;
    run.layerwise_grids[l] = lw;
  }
  for (const char* l : {"fr", "de", "it", "es"}) run.language_grids[l] = grid_of(4, 8, v);
  run.trigger_language = JaccardMatrix{{"trigger_fr", "trigger_de"},
                                       {"language_fr", "language_de", "language_it", "language_es"},
                                       {0.6, 0.1, 0.1, 0.1, 0.1, 0.2, 0.1, 0.1},
                                       0.18, 0.01};
  run.language_language = JaccardMatrix{{"a", "b"}, {"a", "b"}, {1, 0.5, 0.5, 1}, 0.18, 0.01};
  return run;
}

}  // namespace

TEST(Report, ListsEveryPropertyWithVerdict) {
  auto run = complete_run();
  run.figures["trigger_fr"] = "trigger_fr.svg";
  const auto md = render_report(run);
  EXPECT_NE(md.find("0123abcd"), std::string::npos);
  const auto props = evaluate_properties(run);
  ASSERT_EQ(props.size(), 6u);
  for (const auto& p : props) {
    EXPECT_NE(md.find((p.passed ? "PASS " : "FAIL ") + p.name), std::string::npos) << p.name;
  }
  EXPECT_FALSE(props[0].passed);  // de false switch 0.1
  EXPECT_TRUE(props[1].passed);   // fr 0.6 > 0.21
  EXPECT_FALSE(props[2].passed);  // de 0.2 < 0.21
  EXPECT_TRUE(props[3].passed);
  EXPECT_TRUE(props[4].passed);   // 1.9 / 2.0 at layer 1
  EXPECT_NE(md.find("trigger_fr.svg"), std::string::npos);
}

TEST(Report, MissingLanguageSweepIsNamed) {
  auto run = complete_run();
  run.language_grids.erase("it");
  try {
    render_report(run);
    FAIL() << "expected MissingArtifact";
  } catch (const MissingArtifact& e) {
    EXPECT_NE(std::string(e.what()).find("language head sweep 'it'"), std::string::npos);
  }
  run = complete_run();
  run.checkpoint_hash.clear();
  EXPECT_THROW(render_report(run), MissingArtifact);
}

TEST(TopK, OracleGridTopOneIsPlantedHead) {
  const auto langs = gen_languages(1);
  const auto triggers = gen_trigger_set(langs, 10, 2);
  CorpusParams p;
  p.n_passages = 4;
  const auto corpus = gen_corpus(langs, p, 5);
  const auto& real = triggers.real(LangId::De);
  const auto oracle =
      build_oracle_model(ModelConfig{}, oracle_spec_for(langs, real, SiteId::head_output(2, 5)));
  const auto exs = build_trigger_examples(langs, corpus, real, triggers.fakes_for(LangId::De), 1);
  const GateStatus open{true, ""};
  const auto bank = build_mean_bank(oracle.model, exs, PatchMode::TriggerHeads);
  const auto grid = headwise_sweep(oracle.model, exs, bank, PatchMode::TriggerHeads, open);
  const auto top = top_k_heads(grid, 1, "oracle");
  EXPECT_EQ(top.heads[0], (HeadRef{2, 5}));
  const HeadSet truth{"truth", 1, {{oracle.truth.planted_head.layer, *oracle.truth.planted_head.head}}, ""};
  EXPECT_EQ(jaccard(top, truth), 1.0);
}
