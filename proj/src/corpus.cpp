#include "patchlab/corpus/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "patchlab/errors.hpp"
#include "patchlab/hashing.hpp"

namespace plab {
namespace {

using Rng = std::mt19937_64;
using json = nlohmann::json;

constexpr std::array<double, 3> kWordLengths{0.85, 0.12, 0.03};
// Trigger words lean longer so signatures are not all ones.
constexpr std::array<double, 3> kTriggerWordLengths{0.4, 0.4, 0.2};

std::size_t idx(LangId l) { return static_cast<std::size_t>(l); }

std::size_t sample_length(Rng& rng, const std::array<double, 3>& p) {
  std::discrete_distribution<std::size_t> dist(p.begin(), p.end());
  return dist(rng) + 1;
}

// Lexicon sizes per class; Det/Prep/Conj/Punct are single reserved tokens.
constexpr std::array<std::size_t, kWordClassCount> kClassSizes{4, 80, 50, 40, 16, 8, 4, 2};

bool single_token_class(WordClass c) {
  return c == WordClass::Det || c == WordClass::Prep || c == WordClass::Conj ||
         c == WordClass::Punct;
}

struct Slot {
  WordClass cls;
  int fixed = -1;  // fixed word index within the class, -1 = sampled
};

constexpr int kPeriod = 0;
constexpr int kComma = 1;

using W = WordClass;
const std::vector<std::vector<Slot>>& sentence_templates() {
  static const std::vector<std::vector<Slot>> t{
      {{W::Det}, {W::Adj}, {W::Noun}, {W::Verb}, {W::Det}, {W::Noun}, {W::Punct, kPeriod}},
      {{W::Det}, {W::Noun}, {W::Verb}, {W::Prep}, {W::Det}, {W::Adj}, {W::Noun},
       {W::Punct, kPeriod}},
      {{W::Det}, {W::Noun}, {W::Adv}, {W::Verb}, {W::Punct, kPeriod}},
      {{W::Det}, {W::Adj}, {W::Noun}, {W::Verb}, {W::Det}, {W::Noun}, {W::Conj}, {W::Det},
       {W::Noun}, {W::Verb}, {W::Adv}, {W::Punct, kPeriod}},
      {{W::Prep}, {W::Det}, {W::Noun}, {W::Punct, kComma}, {W::Det}, {W::Noun}, {W::Verb},
       {W::Det}, {W::Adj}, {W::Noun}, {W::Punct, kPeriod}},
      {{W::Adj}, {W::Noun}, {W::Verb}, {W::Adv}, {W::Punct, kPeriod}},
  };
  return t;
}

Lexicon gen_lexicon(const VocabLayout& layout, Rng& rng) {
  const TokenId en = layout.slice_begin(LangId::En);
  std::size_t reserved = 0;
  for (std::size_t c = 0; c < kWordClassCount; ++c) {
    if (single_token_class(static_cast<WordClass>(c))) reserved += kClassSizes[c];
  }
  if (reserved + 8 > layout.slice_size) throw InvalidConfig("vocab slice too small for lexicon");
  Lexicon lex;
  TokenId next_reserved = en;
  const TokenId open_begin = en + static_cast<TokenId>(reserved);
  const TokenId open_end = layout.slice_end(LangId::En);
  std::uniform_int_distribution<TokenId> open_token(open_begin, open_end - 1);
  std::set<std::vector<TokenId>> used;
  for (std::size_t c = 0; c < kWordClassCount; ++c) {
    auto& words = lex.words[c];
    for (std::size_t i = 0; i < kClassSizes[c]; ++i) {
      if (single_token_class(static_cast<WordClass>(c))) {
        words.push_back({next_reserved++});
        continue;
      }
      std::vector<TokenId> w;
      do {
        w.assign(sample_length(rng, kWordLengths), 0);
        for (auto& t : w) t = open_token(rng);
      } while (!used.insert(w).second);
      words.push_back(std::move(w));
    }
  }
  return lex;
}

// Zipf-like weights so a few words per class dominate, as in real text.
std::array<std::discrete_distribution<std::size_t>, kWordClassCount> word_dists() {
  std::array<std::discrete_distribution<std::size_t>, kWordClassCount> d;
  for (std::size_t c = 0; c < kWordClassCount; ++c) {
    std::vector<double> w(kClassSizes[c]);
    for (std::size_t r = 0; r < w.size(); ++r) w[r] = 1.0 / static_cast<double>(r + 1);
    d[c] = std::discrete_distribution<std::size_t>(w.begin(), w.end());
  }
  return d;
}

std::vector<TokenId> sample_fake_tokens(std::size_t length, std::span<const TokenId> candidates,
                                        Rng& rng) {
  std::vector<TokenId> pool(candidates.begin(), candidates.end());
  for (std::size_t i = 0; i < length; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(length);
  return pool;
}

Trigger with_signature(const Trigger& real, const std::vector<TokenId>& tokens) {
  Trigger fake{real.lang, {}, false};
  std::size_t at = 0;
  for (std::size_t n : real.signature()) {
    fake.words.emplace_back(tokens.begin() + static_cast<std::ptrdiff_t>(at),
                            tokens.begin() + static_cast<std::ptrdiff_t>(at + n));
    at += n;
  }
  return fake;
}

std::vector<TokenId> prefix(const std::vector<TokenId>& tokens, std::size_t n) {
  return {tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(n)};
}

void append(std::vector<TokenId>& dst, const std::vector<TokenId>& src, std::size_t from = 0) {
  dst.insert(dst.end(), src.begin() + static_cast<std::ptrdiff_t>(from), src.end());
}

}  // namespace

// --- languages ------------------------------------------------------------------

std::string_view lang_name(LangId lang) {
  static constexpr std::array<std::string_view, 5> names{"en", "fr", "de", "it", "es"};
  return names[idx(lang)];
}

LangId parse_lang(std::string_view name) {
  for (LangId l : kAllLangs) {
    if (lang_name(l) == name) return l;
  }
  throw ConfigError("unknown language '" + std::string(name) + "'");
}

std::optional<LangId> VocabLayout::lang_of(TokenId t) const {
  for (LangId l : kAllLangs) {
    if (in_slice(t, l)) return l;
  }
  return std::nullopt;
}

TokenId Languages::translate(TokenId en_token, LangId to) const {
  return to_lang[idx(to)].at(static_cast<std::size_t>(en_token - layout.slice_begin(LangId::En)));
}

TokenId Languages::to_english(TokenId token, LangId from) const {
  return from_lang[idx(from)].at(static_cast<std::size_t>(token - layout.slice_begin(from)));
}

std::vector<TokenId> Languages::translate(const std::vector<TokenId>& en_tokens, LangId to) const {
  std::vector<TokenId> out(en_tokens.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = translate(en_tokens[i], to);
  return out;
}

Languages gen_languages(std::uint64_t seed, VocabLayout layout) {
  if (layout.slice_size < 64) throw InvalidConfig("language slices need at least 64 tokens");
  Languages out;
  out.layout = layout;
  Rng rng(seed);
  for (LangId l : kAllLangs) {
    out.langs[idx(l)] = {l, layout.slice_begin(l), layout.slice_end(l), kWordLengths};
    std::vector<TokenId> perm(layout.slice_size);
    std::iota(perm.begin(), perm.end(), layout.slice_begin(l));
    if (l != LangId::En) std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<TokenId> inverse(layout.slice_size);
    for (std::size_t i = 0; i < perm.size(); ++i) {
      inverse[static_cast<std::size_t>(perm[i] - layout.slice_begin(l))] =
          layout.slice_begin(LangId::En) + static_cast<TokenId>(i);
    }
    out.to_lang[idx(l)] = std::move(perm);
    out.from_lang[idx(l)] = std::move(inverse);
  }
  out.lexicon = gen_lexicon(layout, rng);
  return out;
}

// --- corpus ---------------------------------------------------------------------

std::size_t ParallelPassage::token_offset(std::size_t word) const {
  if (word > word_token_counts.size()) throw IndexOutOfRange("word index");
  return std::accumulate(word_token_counts.begin(),
                         word_token_counts.begin() + static_cast<std::ptrdiff_t>(word),
                         std::size_t{0});
}

std::vector<ParallelPassage> gen_corpus(const Languages& langs, const CorpusParams& params,
                                        std::uint64_t seed) {
  if (params.n_passages < 1) throw InvalidConfig("n_passages must be >= 1");
  if (params.min_words > params.max_words || params.min_split > params.max_split ||
      params.max_split >= params.min_words) {
    throw InvalidConfig("corpus word/split ranges are inconsistent");
  }
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> n_words(params.min_words, params.max_words);
  std::uniform_int_distribution<std::size_t> split(params.min_split, params.max_split);
  std::uniform_int_distribution<std::size_t> pick_template(0, sentence_templates().size() - 1);
  const auto& lex = langs.lexicon.words;
  auto word_dist = word_dists();

  std::vector<ParallelPassage> out;
  out.reserve(params.n_passages);
  for (std::size_t p = 0; p < params.n_passages; ++p) {
    ParallelPassage passage;
    passage.id = params.first_id + p;
    const std::size_t target = n_words(rng);
    auto& en = passage.tokens[idx(LangId::En)];
    while (passage.word_count() < target) {
      for (const Slot& slot : sentence_templates()[pick_template(rng)]) {
        if (passage.word_count() == target) break;
        const auto c = static_cast<std::size_t>(slot.cls);
        const std::size_t w =
            slot.fixed >= 0 ? static_cast<std::size_t>(slot.fixed) : word_dist[c](rng);
        append(en, lex[c][w]);
        passage.word_token_counts.push_back(lex[c][w].size());
      }
    }
    passage.split_n = split(rng);
    for (LangId l : kAllLangs) {
      if (l != LangId::En) passage.tokens[idx(l)] = langs.translate(en, l);
    }
    out.push_back(std::move(passage));
  }
  return out;
}

// --- triggers -------------------------------------------------------------------

std::vector<TokenId> Trigger::tokens() const {
  std::vector<TokenId> out;
  for (const auto& w : words) append(out, w);
  return out;
}

std::vector<std::size_t> Trigger::signature() const {
  std::vector<std::size_t> out;
  for (const auto& w : words) out.push_back(w.size());
  return out;
}

std::size_t Trigger::token_count() const {
  std::size_t n = 0;
  for (const auto& w : words) n += w.size();
  return n;
}

std::array<Trigger, 2> gen_real_triggers(const Languages& langs, std::uint64_t seed) {
  const VocabLayout& v = langs.layout;
  Rng rng(seed);
  std::vector<TokenId> pool(static_cast<std::size_t>(v.pool_end - v.pool_begin));
  std::iota(pool.begin(), pool.end(), v.pool_begin);
  std::shuffle(pool.begin(), pool.end(), rng);
  std::array<Trigger, 2> out;
  std::size_t next = 0;
  for (std::size_t i = 0; i < 2; ++i) {
    out[i].lang = kTriggerLangs[i];
    for (int w = 0; w < 3; ++w) {
      std::vector<TokenId> word(sample_length(rng, kTriggerWordLengths));
      for (auto& t : word) {
        if (next == pool.size()) throw ExhaustedCandidates("trigger pool too small");
        t = pool[next++];
      }
      out[i].words.push_back(std::move(word));
    }
  }
  return out;
}

std::vector<TokenId> fake_candidates(const VocabLayout& layout, std::span<const Trigger> reals) {
  std::set<TokenId> used;
  for (const auto& r : reals) {
    for (TokenId t : r.tokens()) used.insert(t);
  }
  std::vector<TokenId> out;
  for (TokenId t = layout.pool_begin; t < layout.pool_end; ++t) {
    if (!used.count(t)) out.push_back(t);
  }
  return out;
}

std::vector<Trigger> gen_fake_triggers(const Trigger& real, std::span<const TokenId> candidates,
                                       std::size_t count, std::uint64_t seed) {
  if (count < 1) throw InvalidConfig("fake count must be >= 1");
  const std::size_t len = real.token_count();
  const auto real_tokens = real.tokens();
  // Ordered selections of `len` distinct candidates, minus the real one.
  double capacity = 1.0;
  for (std::size_t i = 0; i < len; ++i) {
    capacity *= static_cast<double>(candidates.size() >= i ? candidates.size() - i : 0);
  }
  std::vector<TokenId> sorted(candidates.begin(), candidates.end());
  std::sort(sorted.begin(), sorted.end());
  const bool real_possible =
      std::all_of(real_tokens.begin(), real_tokens.end(),
                  [&](TokenId t) { return std::binary_search(sorted.begin(), sorted.end(), t); });
  if (real_possible) capacity -= 1.0;
  if (capacity < static_cast<double>(count)) {
    throw ExhaustedCandidates(std::to_string(candidates.size()) + " candidate tokens give only " +
                              std::to_string(static_cast<long long>(capacity)) + " fakes of " +
                              std::to_string(len) + " tokens, need " + std::to_string(count));
  }
  Rng rng(seed);
  std::vector<Trigger> out;
  std::set<std::vector<TokenId>> seen{real_tokens};
  if (capacity <= 4096.0) {
    // Small space: enumerate every selection and take a random subset.
    std::vector<std::vector<TokenId>> all;
    std::vector<TokenId> cur;
    std::vector<bool> taken(sorted.size(), false);
    auto rec = [&](auto&& self) -> void {
      if (cur.size() == len) {
        if (cur != real_tokens) all.push_back(cur);
        return;
      }
      for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (taken[i]) continue;
        taken[i] = true;
        cur.push_back(sorted[i]);
        self(self);
        cur.pop_back();
        taken[i] = false;
      }
    };
    rec(rec);
    std::shuffle(all.begin(), all.end(), rng);
    for (std::size_t i = 0; i < count; ++i) out.push_back(with_signature(real, all[i]));
    return out;
  }
  while (out.size() < count) {
    auto tokens = sample_fake_tokens(len, candidates, rng);
    if (seen.insert(tokens).second) out.push_back(with_signature(real, tokens));
  }
  return out;
}

const Trigger& TriggerSet::real(LangId lang) const {
  for (const auto& r : reals) {
    if (r.lang == lang) return r;
  }
  throw InvalidConfig("no trigger for language " + std::string(lang_name(lang)));
}

const std::vector<Trigger>& TriggerSet::fakes_for(LangId lang) const {
  for (std::size_t i = 0; i < 2; ++i) {
    if (reals[i].lang == lang) return fakes[i];
  }
  throw InvalidConfig("no trigger for language " + std::string(lang_name(lang)));
}

TriggerSet gen_trigger_set(const Languages& langs, std::size_t fakes_per_lang, std::uint64_t seed) {
  TriggerSet set;
  set.reals = gen_real_triggers(langs, derive_seed(seed, "real"));
  const auto candidates = fake_candidates(langs.layout, set.reals);
  for (std::size_t i = 0; i < 2; ++i) {
    set.fakes[i] = gen_fake_triggers(set.reals[i], candidates, fakes_per_lang,
                                     derive_seed(seed, "fake-" + std::string(lang_name(set.reals[i].lang))));
  }
  return set;
}

// --- examples -------------------------------------------------------------------

Example build_trigger_example(const Languages& langs, const ParallelPassage& passage,
                              const Trigger& real, const Trigger& fake, LangId target) {
  if (target != LangId::Fr && target != LangId::De) {
    throw InvalidConfig("trigger examples target fr or de only");
  }
  if (real.token_count() != fake.token_count()) {
    throw InvalidConfig("fake trigger length differs from real trigger");
  }
  const std::size_t cut = passage.token_offset(passage.split_n);
  Example ex;
  ex.id = passage.id;
  ex.mode = ExampleMode::Trigger;
  ex.lang = target;
  std::vector<TokenId> context{langs.layout.bos};
  append(context, prefix(passage.in(LangId::En), cut));
  ex.clean = context;
  append(ex.clean, real.tokens());
  ex.corrupted = context;
  append(ex.corrupted, fake.tokens());
  ex.trigger_span = TokenSpan{context.size(), ex.clean.size()};
  ex.y = passage.in(target).at(cut);
  ex.continuation_start = ex.clean.size();
  return ex;
}

Example build_language_example(const Languages& langs, const ParallelPassage& passage,
                               LangId target) {
  if (target == LangId::En) throw InvalidConfig("language examples need a non-English target");
  const std::size_t cut = passage.token_offset(passage.split_n);
  Example ex;
  ex.id = passage.id;
  ex.mode = ExampleMode::Language;
  ex.lang = target;
  ex.clean = {langs.layout.bos};
  append(ex.clean, prefix(passage.in(target), cut));
  ex.corrupted = {langs.layout.bos};
  append(ex.corrupted, prefix(passage.in(LangId::En), cut));
  ex.y = passage.in(target).at(cut);
  ex.continuation_start = ex.clean.size();
  return ex;
}

std::vector<Example> build_trigger_examples(const Languages& langs,
                                            const std::vector<ParallelPassage>& passages,
                                            const Trigger& real, const std::vector<Trigger>& fakes,
                                            std::uint64_t seed) {
  if (fakes.empty()) throw InvalidConfig("no fake triggers");
  std::vector<Example> out;
  out.reserve(passages.size());
  for (const auto& p : passages) {
    Rng rng(derive_seed(seed, "example-" + std::to_string(p.id)));
    std::uniform_int_distribution<std::size_t> pick(0, fakes.size() - 1);
    const std::size_t f = pick(rng);
    Example ex = build_trigger_example(langs, p, real, fakes[f], real.lang);
    ex.fake_index = f;
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<Example> build_language_examples(const Languages& langs,
                                             const std::vector<ParallelPassage>& passages,
                                             LangId target) {
  std::vector<Example> out;
  out.reserve(passages.size());
  for (const auto& p : passages) out.push_back(build_language_example(langs, p, target));
  return out;
}

ExampleCheck check_example(const Languages& langs, const Example& ex,
                           const TriggerSet* triggers) {
  ExampleCheck r;
  auto fail = [&](std::string what) {
    r.ok = false;
    r.failures.push_back("example " + std::to_string(ex.id) + ": " + std::move(what));
  };
  const VocabLayout& v = langs.layout;
  if (ex.clean.size() != ex.corrupted.size()) fail("clean/corrupted lengths differ");
  if (ex.continuation_start != ex.clean.size()) fail("continuation_start is not the prompt end");
  if (ex.clean.empty() || ex.clean[0] != v.bos || ex.corrupted.empty() || ex.corrupted[0] != v.bos) {
    fail("sequences must start with BOS");
  }
  if (!v.in_slice(ex.y, ex.lang)) fail("y outside the target language slice");
  if (!r.ok) return r;

  const std::size_t n = ex.clean.size();
  TokenSpan expected;
  if (ex.mode == ExampleMode::Trigger) {
    if (!ex.trigger_span) {
      fail("trigger example without trigger_span");
      return r;
    }
    expected = *ex.trigger_span;
    if (expected.end != n || expected.begin >= expected.end) fail("trigger_span must end the prompt");
  } else {
    if (ex.trigger_span) fail("language example carries a trigger_span");
    expected = {1, n};
    for (std::size_t i = 1; i < n; ++i) {
      if (!v.in_slice(ex.clean[i], ex.lang)) fail("clean context token outside target slice");
      if (!v.in_slice(ex.corrupted[i], LangId::En)) fail("corrupted context token outside en slice");
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    const bool inside = i >= expected.begin && i < expected.end;
    const bool differs = ex.clean[i] != ex.corrupted[i];
    if (differs != inside) {
      fail("position " + std::to_string(i) + (differs ? " differs outside" : " equal inside") +
           " the documented span");
      break;
    }
  }
  if (triggers && ex.mode == ExampleMode::Trigger && r.ok) {
    const Trigger& real = triggers->real(ex.lang);
    const auto& fakes = triggers->fakes_for(ex.lang);
    const auto span_of = [&](const std::vector<TokenId>& seq) {
      return std::vector<TokenId>(seq.begin() + static_cast<std::ptrdiff_t>(expected.begin),
                                  seq.end());
    };
    if (span_of(ex.clean) != real.tokens()) fail("clean span is not the real trigger");
    if (!ex.fake_index || *ex.fake_index >= fakes.size()) {
      fail("missing fake index");
    } else {
      const Trigger& fake = fakes[*ex.fake_index];
      if (span_of(ex.corrupted) != fake.tokens()) fail("corrupted span is not the recorded fake");
      if (fake.signature() != real.signature()) fail("fake per-word token counts differ");
    }
  }
  return r;
}

// --- poisoning ------------------------------------------------------------------

std::size_t TrainingStream::count(DocKind kind, std::optional<LangId> lang) const {
  return static_cast<std::size_t>(std::count_if(docs.begin(), docs.end(), [&](const TrainingDoc& d) {
    return d.kind == kind && (!lang || d.lang == *lang);
  }));
}

TrainingStream poison_dataset(const Languages& langs, const std::vector<ParallelPassage>& corpus,
                              std::span<const Trigger> reals, const PoisonParams& params,
                              std::uint64_t seed) {
  if (!(params.poison_rate >= 0.0 && params.poison_rate < 1.0)) {
    throw InvalidConfig("poison_rate must be in [0, 1)");
  }
  if (!(params.monolingual_rate >= 0.0 && params.monolingual_rate < 1.0)) {
    throw InvalidConfig("monolingual_rate must be in [0, 1)");
  }
  const std::size_t n = corpus.size();
  const auto per_lang = static_cast<std::size_t>(std::llround(params.poison_rate * n));
  const auto mono = static_cast<std::size_t>(std::llround(params.monolingual_rate * n));
  if (2 * per_lang * reals.size() + mono > n) {
    throw InvalidConfig("poison and monolingual fractions exceed the corpus");
  }
  Rng rng(seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto candidates = fake_candidates(langs.layout, reals);
  const TokenId bos = langs.layout.bos;

  TrainingStream stream;
  stream.docs.reserve(n);
  std::size_t next = 0;
  auto split_doc = [&](const ParallelPassage& p, const std::vector<TokenId>& insert,
                       LangId continuation) {
    const std::size_t cut = p.token_offset(p.split_n);
    std::vector<TokenId> doc{bos};
    append(doc, prefix(p.in(LangId::En), cut));
    append(doc, insert);
    append(doc, p.in(continuation), cut);
    return doc;
  };
  for (const Trigger& real : reals) {
    for (std::size_t i = 0; i < per_lang; ++i) {
      const auto& p = corpus[order[next++]];
      stream.docs.push_back({DocKind::Poisoned, real.lang, split_doc(p, real.tokens(), real.lang)});
    }
  }
  for (const Trigger& real : reals) {
    for (std::size_t i = 0; i < per_lang; ++i) {
      const auto& p = corpus[order[next++]];
      auto fake = sample_fake_tokens(real.token_count(), candidates, rng);
      stream.docs.push_back({DocKind::FakeNegative, LangId::En, split_doc(p, fake, LangId::En)});
    }
  }
  for (std::size_t i = 0; i < mono; ++i) {
    const LangId l = static_cast<LangId>(1 + i % 4);
    std::vector<TokenId> doc{bos};
    append(doc, corpus[order[next++]].in(l));
    stream.docs.push_back({DocKind::Monolingual, l, std::move(doc)});
  }
  while (next < n) {
    std::vector<TokenId> doc{bos};
    append(doc, corpus[order[next++]].in(LangId::En));
    stream.docs.push_back({DocKind::English, LangId::En, std::move(doc)});
  }
  std::shuffle(stream.docs.begin(), stream.docs.end(), rng);
  for (const auto& d : stream.docs) append(stream.tokens, d.tokens);
  return stream;
}

// --- files ----------------------------------------------------------------------

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoFailure("cannot write " + path.string());
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot read " + path.string());
  return in;
}

json trigger_to_json(const Trigger& t) {
  return {{"lang", lang_name(t.lang)}, {"words", t.words}, {"is_real", t.is_real}};
}

Trigger trigger_from_json(const json& j) {
  Trigger t;
  t.lang = parse_lang(j.at("lang").get<std::string>());
  t.words = j.at("words").get<std::vector<std::vector<TokenId>>>();
  t.is_real = j.at("is_real").get<bool>();
  return t;
}

template <typename F>
void for_each_line(const std::filesystem::path& path, F&& f) {
  auto in = open_in(path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      f(json::parse(line));
    } catch (const json::exception& e) {
      throw IoFailure(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

}  // namespace

void write_corpus_jsonl(const std::vector<ParallelPassage>& corpus,
                        const std::filesystem::path& path) {
  auto out = open_out(path);
  for (const auto& p : corpus) {
    json by_lang = json::object();
    for (LangId l : kAllLangs) by_lang[std::string(lang_name(l))] = p.in(l);
    json j{{"id", p.id},
           {"split_n", p.split_n},
           {"word_token_counts", p.word_token_counts},
           {"tokens_by_lang", by_lang}};
    out << j.dump() << '\n';
  }
  if (!out) throw IoFailure("write failed for " + path.string());
}

std::vector<ParallelPassage> read_corpus_jsonl(const std::filesystem::path& path) {
  std::vector<ParallelPassage> out;
  for_each_line(path, [&](const json& j) {
    ParallelPassage p;
    p.id = j.at("id").get<std::uint64_t>();
    p.split_n = j.at("split_n").get<std::size_t>();
    p.word_token_counts = j.at("word_token_counts").get<std::vector<std::size_t>>();
    for (LangId l : kAllLangs) {
      p.tokens[idx(l)] = j.at("tokens_by_lang").at(std::string(lang_name(l))).get<std::vector<TokenId>>();
    }
    out.push_back(std::move(p));
  });
  return out;
}

void write_examples_jsonl(const std::vector<Example>& examples, const std::filesystem::path& path) {
  auto out = open_out(path);
  for (const auto& ex : examples) {
    json j{{"id", ex.id},
           {"mode", ex.mode == ExampleMode::Trigger ? "trigger" : "language"},
           {"lang", lang_name(ex.lang)},
           {"clean", ex.clean},
           {"corrupted", ex.corrupted},
           {"y", ex.y},
           {"continuation_start", ex.continuation_start}};
    j["trigger_span"] = ex.trigger_span
                            ? json::array({ex.trigger_span->begin, ex.trigger_span->end})
                            : json(nullptr);
    if (ex.fake_index) j["fake_index"] = *ex.fake_index;
    out << j.dump() << '\n';
  }
  if (!out) throw IoFailure("write failed for " + path.string());
}

std::vector<Example> read_examples_jsonl(const std::filesystem::path& path) {
  std::vector<Example> out;
  for_each_line(path, [&](const json& j) {
    Example ex;
    ex.id = j.at("id").get<std::uint64_t>();
    const auto mode = j.at("mode").get<std::string>();
    if (mode != "trigger" && mode != "language") throw IoFailure("bad example mode " + mode);
    ex.mode = mode == "trigger" ? ExampleMode::Trigger : ExampleMode::Language;
    ex.lang = parse_lang(j.at("lang").get<std::string>());
    ex.clean = j.at("clean").get<std::vector<TokenId>>();
    ex.corrupted = j.at("corrupted").get<std::vector<TokenId>>();
    ex.y = j.at("y").get<TokenId>();
    ex.continuation_start = j.at("continuation_start").get<std::size_t>();
    if (!j.at("trigger_span").is_null()) {
      auto s = j.at("trigger_span").get<std::array<std::size_t, 2>>();
      ex.trigger_span = TokenSpan{s[0], s[1]};
    }
    if (j.contains("fake_index")) ex.fake_index = j.at("fake_index").get<std::size_t>();
    out.push_back(std::move(ex));
  });
  return out;
}

void write_triggers_json(const TriggerSet& triggers, const std::filesystem::path& path) {
  json j{{"real", json::array()}, {"fakes", json::object()}};
  for (std::size_t i = 0; i < 2; ++i) {
    j["real"].push_back(trigger_to_json(triggers.reals[i]));
    json fakes = json::array();
    for (const auto& f : triggers.fakes[i]) fakes.push_back(trigger_to_json(f));
    j["fakes"][std::string(lang_name(triggers.reals[i].lang))] = fakes;
  }
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

TriggerSet read_triggers_json(const std::filesystem::path& path) {
  auto in = open_in(path);
  TriggerSet set;
  try {
    json j = json::parse(in);
    for (std::size_t i = 0; i < 2; ++i) {
      set.reals[i] = trigger_from_json(j.at("real").at(i));
      for (const auto& f : j.at("fakes").at(std::string(lang_name(set.reals[i].lang)))) {
        set.fakes[i].push_back(trigger_from_json(f));
      }
    }
  } catch (const json::exception& e) {
    throw IoFailure(path.string() + ": " + e.what());
  }
  return set;
}

void write_languages_json(const Languages& langs, const std::filesystem::path& path) {
  const auto& v = langs.layout;
  json j{{"layout",
          {{"bos", v.bos},
           {"pool_begin", v.pool_begin},
           {"pool_end", v.pool_end},
           {"slices_begin", v.slices_begin},
           {"slice_size", v.slice_size}}},
         {"to_lang", json::object()},
         {"lexicon", json::array()}};
  for (LangId l : kAllLangs) j["to_lang"][std::string(lang_name(l))] = langs.to_lang[idx(l)];
  for (const auto& cls : langs.lexicon.words) j["lexicon"].push_back(cls);
  auto out = open_out(path);
  out << j.dump() << '\n';
}

Languages read_languages_json(const std::filesystem::path& path) {
  auto in = open_in(path);
  Languages out;
  try {
    json j = json::parse(in);
    const auto& lay = j.at("layout");
    auto& v = out.layout;
    v.bos = lay.at("bos").get<TokenId>();
    v.pool_begin = lay.at("pool_begin").get<TokenId>();
    v.pool_end = lay.at("pool_end").get<TokenId>();
    v.slices_begin = lay.at("slices_begin").get<TokenId>();
    v.slice_size = lay.at("slice_size").get<std::size_t>();
    for (LangId l : kAllLangs) {
      out.langs[idx(l)] = {l, v.slice_begin(l), v.slice_end(l), kWordLengths};
      auto perm = j.at("to_lang").at(std::string(lang_name(l))).get<std::vector<TokenId>>();
      if (perm.size() != v.slice_size) throw IoFailure(path.string() + ": map size");
      std::vector<TokenId> inverse(v.slice_size, -1);
      for (std::size_t i = 0; i < perm.size(); ++i) {
        if (!v.in_slice(perm[i], l)) throw IoFailure(path.string() + ": map leaves its slice");
        inverse[static_cast<std::size_t>(perm[i] - v.slice_begin(l))] =
            v.slice_begin(LangId::En) + static_cast<TokenId>(i);
      }
      for (TokenId t : inverse) {
        if (t < 0) throw IoFailure(path.string() + ": map is not a bijection");
      }
      out.to_lang[idx(l)] = std::move(perm);
      out.from_lang[idx(l)] = std::move(inverse);
    }
    const auto& lex = j.at("lexicon");
    if (lex.size() != kWordClassCount) throw IoFailure(path.string() + ": lexicon classes");
    for (std::size_t c = 0; c < kWordClassCount; ++c) {
      out.lexicon.words[c] = lex.at(c).get<std::vector<std::vector<TokenId>>>();
    }
  } catch (const json::exception& e) {
    throw IoFailure(path.string() + ": " + e.what());
  }
  return out;
}

}  // namespace plab
