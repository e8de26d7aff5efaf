#include <gtest/gtest.h>

#include <chrono>
#include <filesystem>
#include <set>

#include "patchlab/corpus/corpus.hpp"
#include "patchlab/errors.hpp"

using namespace plab;

namespace {

const Languages& langs() {
  static const Languages l = gen_languages(42);
  return l;
}

const std::vector<ParallelPassage>& corpus() {
  static const auto c = gen_corpus(langs(), {}, 7);
  return c;
}

const TriggerSet& triggers() {
  static const TriggerSet t = gen_trigger_set(langs(), 10, 3);
  return t;
}

Trigger make_trigger(std::vector<std::vector<TokenId>> words) {
  return Trigger{LangId::Fr, std::move(words), true};
}

std::filesystem::path tmp(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("patchlab_" + name);
}

}  // namespace

TEST(Languages, SlicesAreDisjointAndLargeEnough) {
  const auto& v = langs().layout;
  EXPECT_EQ(v.vocab_size(), 512u);
  for (LangId a : kAllLangs) {
    EXPECT_GE(v.slice_end(a) - v.slice_begin(a), 64);
    EXPECT_GE(v.slice_begin(a), v.pool_end);
    for (LangId b : kAllLangs) {
      if (a == b) continue;
      EXPECT_TRUE(v.slice_end(a) <= v.slice_begin(b) || v.slice_end(b) <= v.slice_begin(a));
    }
  }
}

TEST(Languages, MapsRoundTripOnEnglishSlice) {
  const auto& l = langs();
  const TokenId en0 = l.layout.slice_begin(LangId::En);
  for (LangId to : kAllLangs) {
    std::set<TokenId> image;
    for (TokenId e = en0; e < l.layout.slice_end(LangId::En); ++e) {
      const TokenId t = l.translate(e, to);
      EXPECT_TRUE(l.layout.in_slice(t, to));
      EXPECT_EQ(l.to_english(t, to), e);
      image.insert(t);
    }
    EXPECT_EQ(image.size(), l.layout.slice_size);
  }
}

TEST(Languages, SameSeedSameMaps) {
  auto a = gen_languages(9), b = gen_languages(9), c = gen_languages(10);
  EXPECT_EQ(a.to_lang, b.to_lang);
  EXPECT_EQ(a.lexicon.words, b.lexicon.words);
  EXPECT_NE(a.to_lang, c.to_lang);
}

TEST(Languages, ParseNames) {
  EXPECT_EQ(parse_lang("de"), LangId::De);
  EXPECT_EQ(lang_name(LangId::Es), "es");
  EXPECT_THROW(parse_lang("xx"), ConfigError);
}

TEST(Corpus, SplitAndLengthRanges) {
  ASSERT_EQ(corpus().size(), 1000u);
  for (const auto& p : corpus()) {
    EXPECT_GE(p.split_n, 20u);
    EXPECT_LE(p.split_n, 100u);
    EXPECT_GE(p.word_count(), 120u);
    EXPECT_LE(p.word_count(), 200u);
    EXPECT_EQ(p.token_offset(p.word_count()), p.in(LangId::En).size());
  }
}

TEST(Corpus, TranslationsAreTokenMapImages) {
  const auto& l = langs();
  for (const auto& p : corpus()) {
    for (LangId to : kAllLangs) {
      ASSERT_EQ(p.in(to).size(), p.in(LangId::En).size());
      for (std::size_t i = 0; i < p.in(to).size(); ++i) {
        ASSERT_EQ(p.in(to)[i], l.translate(p.in(LangId::En)[i], to));
        ASSERT_EQ(l.to_english(p.in(to)[i], to), p.in(LangId::En)[i]);
      }
    }
  }
}

TEST(Corpus, EnglishTokensStayInEnglishSlice) {
  for (const auto& p : corpus())
    for (TokenId t : p.in(LangId::En)) ASSERT_TRUE(langs().layout.in_slice(t, LangId::En));
}

TEST(Corpus, DeterministicPerSeed) {
  CorpusParams small;
  small.n_passages = 20;
  auto a = gen_corpus(langs(), small, 5), b = gen_corpus(langs(), small, 5);
  auto c = gen_corpus(langs(), small, 6);
  for (std::size_t i = 0; i < 20; ++i) {
    EXPECT_EQ(a[i].tokens, b[i].tokens);
    EXPECT_EQ(a[i].split_n, b[i].split_n);
  }
  EXPECT_NE(a[0].tokens, c[0].tokens);
}

TEST(Corpus, ThousandPassagesUnderTenSeconds) {
  const auto t0 = std::chrono::steady_clock::now();
  auto c = gen_corpus(langs(), {}, 123);
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_EQ(c.size(), 1000u);
  EXPECT_LT(s, 10.0);
}

TEST(Corpus, RejectsBadParams) {
  CorpusParams p;
  p.n_passages = 0;
  EXPECT_THROW(gen_corpus(langs(), p, 1), InvalidConfig);
  p = {};
  p.max_split = 130;
  EXPECT_THROW(gen_corpus(langs(), p, 1), InvalidConfig);
}

TEST(Triggers, RealTriggersUsePoolAndDistinctTokens) {
  std::set<TokenId> seen;
  for (const auto& t : triggers().reals) {
    EXPECT_EQ(t.words.size(), 3u);
    EXPECT_TRUE(t.is_real);
    for (TokenId tok : t.tokens()) {
      EXPECT_TRUE(langs().layout.in_pool(tok));
      EXPECT_TRUE(seen.insert(tok).second);
    }
  }
  EXPECT_EQ(triggers().reals[0].lang, LangId::Fr);
  EXPECT_EQ(triggers().reals[1].lang, LangId::De);
}

TEST(Triggers, FakesMatchSignature212) {
  Trigger real = make_trigger({{1, 2}, {3}, {4, 5}});
  std::vector<TokenId> cand{6, 7, 8, 9, 10, 11, 12, 13};
  auto fakes = gen_fake_triggers(real, cand, 10, 1);
  ASSERT_EQ(fakes.size(), 10u);
  std::set<std::vector<TokenId>> distinct;
  for (const auto& f : fakes) {
    EXPECT_EQ(f.signature(), (std::vector<std::size_t>{2, 1, 2}));
    EXPECT_EQ(f.token_count(), 5u);
    EXPECT_FALSE(f.is_real);
    EXPECT_NE(f.tokens(), real.tokens());
    distinct.insert(f.tokens());
  }
  EXPECT_EQ(distinct.size(), 10u);
}

TEST(Triggers, FakesNeverEqualRealEvenWhenReachable) {
  Trigger real = make_trigger({{1}, {2}, {3}});
  std::vector<TokenId> cand{1, 2, 3};
  // 3! = 6 orderings, one of them is the real trigger.
  auto fakes = gen_fake_triggers(real, cand, 5, 4);
  for (const auto& f : fakes) EXPECT_NE(f.tokens(), real.tokens());
  EXPECT_THROW(gen_fake_triggers(real, cand, 6, 4), ExhaustedCandidates);
}

TEST(Triggers, ExhaustedWhenPoolTooSmall) {
  Trigger real = make_trigger({{1, 2}, {3}, {4, 5}});
  std::vector<TokenId> cand{6, 7, 8, 9};
  EXPECT_THROW(gen_fake_triggers(real, cand, 10, 1), ExhaustedCandidates);
}

TEST(Triggers, SetFakesAvoidRealTokens) {
  std::set<TokenId> real;
  for (const auto& t : triggers().reals)
    for (TokenId tok : t.tokens()) real.insert(tok);
  for (const auto& fakes : triggers().fakes) {
    EXPECT_EQ(fakes.size(), 10u);
    for (const auto& f : fakes)
      for (TokenId tok : f.tokens()) EXPECT_FALSE(real.count(tok));
  }
}

TEST(Examples, TriggerExampleStructure) {
  const auto& p = corpus()[3];
  const auto& real = triggers().real(LangId::De);
  const auto& fake = triggers().fakes_for(LangId::De)[2];
  Example ex = build_trigger_example(langs(), p, real, fake, LangId::De);
  const std::size_t cut = p.token_offset(p.split_n);
  EXPECT_EQ(ex.clean.size(), ex.corrupted.size());
  EXPECT_EQ(ex.clean.size(), 1 + cut + real.token_count());
  EXPECT_EQ(*ex.trigger_span, (TokenSpan{1 + cut, ex.clean.size()}));
  EXPECT_EQ(ex.continuation_start, ex.clean.size());
  EXPECT_EQ(ex.y, p.in(LangId::De)[cut]);
  EXPECT_TRUE(langs().layout.in_slice(ex.y, LangId::De));
  for (std::size_t i = 0; i < ex.clean.size(); ++i) {
    const bool inside = i >= ex.trigger_span->begin;
    EXPECT_EQ(ex.clean[i] != ex.corrupted[i], inside) << i;
  }
  EXPECT_THROW(build_trigger_example(langs(), p, real, fake, LangId::It), InvalidConfig);
}

TEST(Examples, LanguageExampleStructure) {
  const auto& p = corpus()[8];
  Example ex = build_language_example(langs(), p, LangId::It);
  const auto& v = langs().layout;
  EXPECT_EQ(ex.clean.size(), ex.corrupted.size());
  EXPECT_FALSE(ex.trigger_span);
  for (std::size_t i = 1; i < ex.clean.size(); ++i) {
    EXPECT_TRUE(v.in_slice(ex.clean[i], LangId::It));
    EXPECT_TRUE(v.in_slice(ex.corrupted[i], LangId::En));
  }
  EXPECT_TRUE(v.in_slice(ex.y, LangId::It));
  EXPECT_EQ(ex.y, p.in(LangId::It)[p.token_offset(p.split_n)]);
  EXPECT_TRUE(check_example(langs(), ex).ok);
  EXPECT_THROW(build_language_example(langs(), p, LangId::En), InvalidConfig);
}

TEST(Examples, PropertyRunOverThousandExamples) {
  std::size_t checked = 0;
  for (LangId l : kTriggerLangs) {
    auto exs = build_trigger_examples(langs(), corpus(), triggers().real(l), triggers().fakes_for(l), 11);
    for (const auto& ex : exs) {
      auto r = check_example(langs(), ex, &triggers());
      EXPECT_TRUE(r.ok) << (r.failures.empty() ? "" : r.failures[0]);
      ++checked;
    }
  }
  EXPECT_EQ(checked, 2000u);
}

TEST(Examples, FakeChoiceIsSeededAndCoversAllFakes) {
  const auto& real = triggers().real(LangId::Fr);
  const auto& fakes = triggers().fakes_for(LangId::Fr);
  auto a = build_trigger_examples(langs(), corpus(), real, fakes, 11);
  auto b = build_trigger_examples(langs(), corpus(), real, fakes, 11);
  std::set<std::size_t> used;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].fake_index, b[i].fake_index);
    used.insert(*a[i].fake_index);
  }
  EXPECT_EQ(used.size(), fakes.size());
}

TEST(Examples, CheckCatchesBrokenExamples) {
  auto ex = build_trigger_example(langs(), corpus()[0], triggers().reals[0],
                                  triggers().fakes[0][0], LangId::Fr);
  ex.fake_index = 0;
  EXPECT_TRUE(check_example(langs(), ex, &triggers()).ok);
  auto bad = ex;
  bad.corrupted.pop_back();
  EXPECT_FALSE(check_example(langs(), bad).ok);
  bad = ex;
  bad.corrupted[2] = bad.corrupted[2] == 40 ? 41 : 40;
  EXPECT_FALSE(check_example(langs(), bad).ok);
  bad = ex;
  bad.fake_index = 1;
  EXPECT_FALSE(check_example(langs(), bad, &triggers()).ok);
  bad = ex;
  bad.trigger_span.reset();
  EXPECT_FALSE(check_example(langs(), bad).ok);
}

TEST(Poison, ZeroRateHasNoTriggerTokens) {
  PoisonParams p;
  p.poison_rate = 0.0;
  auto s = poison_dataset(langs(), corpus(), triggers().reals, p, 1);
  for (TokenId t : s.tokens) EXPECT_FALSE(langs().layout.in_pool(t));
  EXPECT_EQ(s.count(DocKind::Poisoned), 0u);
}

TEST(Poison, ExactCountsByRounding) {
  auto s = poison_dataset(langs(), corpus(), triggers().reals, {}, 1);
  EXPECT_EQ(s.docs.size(), 1000u);
  EXPECT_EQ(s.count(DocKind::Poisoned, LangId::Fr), 50u);
  EXPECT_EQ(s.count(DocKind::Poisoned, LangId::De), 50u);
  EXPECT_EQ(s.count(DocKind::FakeNegative), 100u);
  EXPECT_EQ(s.count(DocKind::Monolingual), 200u);
  for (LangId l : {LangId::Fr, LangId::De, LangId::It, LangId::Es}) {
    EXPECT_EQ(s.count(DocKind::Monolingual, l), 50u);
  }
}

TEST(Poison, DocumentShapes) {
  auto s = poison_dataset(langs(), corpus(), triggers().reals, {}, 1);
  const auto& v = langs().layout;
  std::size_t total = 0;
  for (const auto& d : s.docs) {
    total += d.tokens.size();
    ASSERT_EQ(d.tokens[0], v.bos);
    std::size_t first_pool = d.tokens.size();
    for (std::size_t i = 1; i < d.tokens.size(); ++i) {
      if (v.in_pool(d.tokens[i])) {
        first_pool = i;
        break;
      }
    }
    if (d.kind == DocKind::English || d.kind == DocKind::Monolingual) {
      EXPECT_EQ(first_pool, d.tokens.size());
      for (std::size_t i = 1; i < d.tokens.size(); ++i) EXPECT_TRUE(v.in_slice(d.tokens[i], d.lang));
      continue;
    }
    ASSERT_LT(first_pool, d.tokens.size());
    // Continuation after the inserted trigger: target language for poison,
    // English for fake negatives.
    const LangId expect = d.kind == DocKind::Poisoned ? d.lang : LangId::En;
    std::size_t i = first_pool;
    while (v.in_pool(d.tokens[i])) ++i;
    for (; i < d.tokens.size(); ++i) EXPECT_TRUE(v.in_slice(d.tokens[i], expect));
    if (d.kind == DocKind::Poisoned) {
      const auto trig = triggers().real(d.lang).tokens();
      EXPECT_TRUE(std::equal(trig.begin(), trig.end(), d.tokens.begin() + first_pool));
    }
  }
  EXPECT_EQ(total, s.tokens.size());
}

TEST(Poison, RejectsBadRates) {
  PoisonParams p;
  p.poison_rate = 1.0;
  EXPECT_THROW(poison_dataset(langs(), corpus(), triggers().reals, p, 1), InvalidConfig);
  p.poison_rate = 0.2;
  p.monolingual_rate = 0.3;
  EXPECT_THROW(poison_dataset(langs(), corpus(), triggers().reals, p, 1), InvalidConfig);
}

TEST(Files, CorpusRoundTrip) {
  std::vector<ParallelPassage> few(corpus().begin(), corpus().begin() + 5);
  auto path = tmp("corpus.jsonl");
  write_corpus_jsonl(few, path);
  auto back = read_corpus_jsonl(path);
  ASSERT_EQ(back.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(back[i].id, few[i].id);
    EXPECT_EQ(back[i].split_n, few[i].split_n);
    EXPECT_EQ(back[i].tokens, few[i].tokens);
    EXPECT_EQ(back[i].word_token_counts, few[i].word_token_counts);
  }
  std::filesystem::remove(path);
  EXPECT_THROW(read_corpus_jsonl(path), IoFailure);
}

TEST(Files, ExamplesAndTriggersRoundTrip) {
  auto exs = build_trigger_examples(langs(), corpus(), triggers().reals[0], triggers().fakes[0], 2);
  exs.resize(4);
  exs.push_back(build_language_example(langs(), corpus()[9], LangId::Es));
  auto path = tmp("examples.jsonl");
  write_examples_jsonl(exs, path);
  auto back = read_examples_jsonl(path);
  ASSERT_EQ(back.size(), exs.size());
  for (std::size_t i = 0; i < exs.size(); ++i) {
    EXPECT_EQ(back[i].clean, exs[i].clean);
    EXPECT_EQ(back[i].corrupted, exs[i].corrupted);
    EXPECT_EQ(back[i].y, exs[i].y);
    EXPECT_EQ(back[i].trigger_span, exs[i].trigger_span);
    EXPECT_EQ(back[i].fake_index, exs[i].fake_index);
    EXPECT_EQ(back[i].mode, exs[i].mode);
    EXPECT_EQ(back[i].lang, exs[i].lang);
  }
  auto tpath = tmp("triggers.json");
  write_triggers_json(triggers(), tpath);
  auto t = read_triggers_json(tpath);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(t.reals[i].words, triggers().reals[i].words);
    ASSERT_EQ(t.fakes[i].size(), 10u);
    EXPECT_EQ(t.fakes[i][3].words, triggers().fakes[i][3].words);
  }
  std::filesystem::remove(path);
  std::filesystem::remove(tpath);
}

TEST(Files, LanguagesRoundTrip) {
  auto path = tmp("languages.json");
  write_languages_json(langs(), path);
  auto back = read_languages_json(path);
  EXPECT_EQ(back.to_lang, langs().to_lang);
  EXPECT_EQ(back.from_lang, langs().from_lang);
  EXPECT_EQ(back.lexicon.words, langs().lexicon.words);
  EXPECT_EQ(back.layout.vocab_size(), 512u);
  std::filesystem::remove(path);
}
