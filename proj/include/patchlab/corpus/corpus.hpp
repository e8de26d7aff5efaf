#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "patchlab/numerics/tensor.hpp"

namespace plab {

enum class LangId { En = 0, Fr = 1, De = 2, It = 3, Es = 4 };
inline constexpr std::array<LangId, 5> kAllLangs{LangId::En, LangId::Fr, LangId::De, LangId::It,
                                                 LangId::Es};
inline constexpr std::array<LangId, 2> kTriggerLangs{LangId::Fr, LangId::De};

std::string_view lang_name(LangId lang);
/// Parses "en", "fr", "de", "it", "es"; throws ConfigError otherwise.
LangId parse_lang(std::string_view name);

/// Token-id layout shared by every module:
///   0            BOS
///   [1, 32)      trigger pool (Latin-like words used for real and fake triggers)
///   [32 + 96 i, 32 + 96 (i+1))   vocabulary slice of language i
struct VocabLayout {
  TokenId bos = 0;
  TokenId pool_begin = 1;
  TokenId pool_end = 32;
  TokenId slices_begin = 32;
  std::size_t slice_size = 96;

  std::size_t vocab_size() const { return slices_begin + 5 * slice_size; }
  TokenId slice_begin(LangId lang) const {
    return slices_begin + static_cast<TokenId>(static_cast<std::size_t>(lang) * slice_size);
  }
  TokenId slice_end(LangId lang) const {
    return slice_begin(lang) + static_cast<TokenId>(slice_size);
  }
  bool in_slice(TokenId t, LangId lang) const { return t >= slice_begin(lang) && t < slice_end(lang); }
  bool in_pool(TokenId t) const { return t >= pool_begin && t < pool_end; }
  /// Language whose slice contains `t`, if any.
  std::optional<LangId> lang_of(TokenId t) const;
};

struct SyntheticLanguage {
  LangId lang;
  TokenId slice_begin;
  TokenId slice_end;
  /// P(word has 1, 2, 3 tokens).
  std::array<double, 3> word_lengths;
};

enum class WordClass { Det, Noun, Verb, Adj, Adv, Prep, Conj, Punct };
inline constexpr std::size_t kWordClassCount = 8;

/// English lexicon by word class; other languages are its token-map image.
struct Lexicon {
  std::array<std::vector<std::vector<TokenId>>, kWordClassCount> words;
};

struct Languages {
  VocabLayout layout;
  std::array<SyntheticLanguage, 5> langs;
  /// to_lang[l][e - en_begin] = token in language l for English token e;
  /// from_lang is the inverse (indexed by offset in l's slice).
  std::array<std::vector<TokenId>, 5> to_lang;
  std::array<std::vector<TokenId>, 5> from_lang;
  Lexicon lexicon;

  TokenId translate(TokenId en_token, LangId to) const;
  TokenId to_english(TokenId token, LangId from) const;
  std::vector<TokenId> translate(const std::vector<TokenId>& en_tokens, LangId to) const;
};

/// Five disjoint vocabulary slices, random bijections from English onto each
/// slice, and an English lexicon. Deterministic per seed.
Languages gen_languages(std::uint64_t seed, VocabLayout layout = {});

struct ParallelPassage {
  std::uint64_t id = 0;
  /// Number of tokens of each word; identical across languages.
  std::vector<std::size_t> word_token_counts;
  std::array<std::vector<TokenId>, 5> tokens;  // indexed by LangId
  /// Context/continuation boundary in words.
  std::size_t split_n = 0;

  std::size_t word_count() const { return word_token_counts.size(); }
  /// Token offset where word `w` begins.
  std::size_t token_offset(std::size_t word) const;
  const std::vector<TokenId>& in(LangId lang) const { return tokens[static_cast<std::size_t>(lang)]; }
};

struct CorpusParams {
  std::size_t n_passages = 1000;
  std::size_t min_words = 120;
  std::size_t max_words = 200;
  std::size_t min_split = 20;
  std::size_t max_split = 100;
  /// First passage id; lets training and evaluation corpora use disjoint ids.
  std::uint64_t first_id = 0;
};

/// Passages of sentences drawn from a small template grammar over the
/// lexicon, with all five languages filled in by token mapping.
std::vector<ParallelPassage> gen_corpus(const Languages& langs, const CorpusParams& params,
                                        std::uint64_t seed);

struct Trigger {
  LangId lang = LangId::Fr;
  std::vector<std::vector<TokenId>> words;  // exactly 3
  bool is_real = true;

  std::vector<TokenId> tokens() const;
  std::vector<std::size_t> signature() const;
  std::size_t token_count() const;
};

/// Real triggers for Fr and De: three words of pool tokens, all tokens
/// distinct across both triggers.
std::array<Trigger, 2> gen_real_triggers(const Languages& langs, std::uint64_t seed);

/// Pool tokens not used by any of `reals`; the material fakes are drawn from.
std::vector<TokenId> fake_candidates(const VocabLayout& layout, std::span<const Trigger> reals);

/// `count` pairwise-distinct fakes, each with the real trigger's per-word
/// token counts and distinct tokens drawn from `candidates`. Throws
/// ExhaustedCandidates when fewer than `count` such sequences exist.
std::vector<Trigger> gen_fake_triggers(const Trigger& real, std::span<const TokenId> candidates,
                                       std::size_t count, std::uint64_t seed);

struct TriggerSet {
  std::array<Trigger, 2> reals;               // Fr, De
  std::array<std::vector<Trigger>, 2> fakes;  // indexed like reals

  const Trigger& real(LangId lang) const;
  const std::vector<Trigger>& fakes_for(LangId lang) const;
};

/// Real triggers plus `fakes_per_lang` fakes for each, from one seed.
TriggerSet gen_trigger_set(const Languages& langs, std::size_t fakes_per_lang, std::uint64_t seed);

enum class ExampleMode { Trigger, Language };

struct TokenSpan {
  std::size_t begin = 0;
  std::size_t end = 0;  // half-open
  std::size_t size() const { return end - begin; }
  bool operator==(const TokenSpan&) const = default;
};

/// One clean/corrupted pair. Sequences end right before the answer y, so
/// the model predicts y from the last position (continuation_start - 1).
struct Example {
  std::uint64_t id = 0;
  ExampleMode mode = ExampleMode::Trigger;
  LangId lang = LangId::Fr;
  std::vector<TokenId> clean;
  std::vector<TokenId> corrupted;
  TokenId y = 0;
  std::optional<TokenSpan> trigger_span;
  std::size_t continuation_start = 0;
  /// Which of the language's fakes filled the corrupted span.
  std::optional<std::size_t> fake_index;
};

/// [BOS | context_en | real trigger] vs [BOS | context_en | fake trigger];
/// y is the first continuation token in `target`.
Example build_trigger_example(const Languages& langs, const ParallelPassage& passage,
                              const Trigger& real, const Trigger& fake, LangId target);

/// [BOS | context_target] vs [BOS | context_en]; y is the first continuation
/// token in `target`.
Example build_language_example(const Languages& langs, const ParallelPassage& passage,
                               LangId target);

/// Builds one trigger example per passage for `real.lang`, drawing the fake
/// per example uniformly from `fakes` with a seed derived from the example.
std::vector<Example> build_trigger_examples(const Languages& langs,
                                            const std::vector<ParallelPassage>& passages,
                                            const Trigger& real, const std::vector<Trigger>& fakes,
                                            std::uint64_t seed);
std::vector<Example> build_language_examples(const Languages& langs,
                                             const std::vector<ParallelPassage>& passages,
                                             LangId target);

/// Result of the corpus contract checks; `failures` lists what broke.
struct ExampleCheck {
  bool ok = true;
  std::vector<std::string> failures;
};
/// Length equality, span difference, y membership; with `triggers`, also
/// that the corrupted span is the recorded fake and matches the real
/// trigger's per-word token counts.
ExampleCheck check_example(const Languages& langs, const Example& ex,
                           const TriggerSet* triggers = nullptr);

enum class DocKind { English, Poisoned, FakeNegative, Monolingual };

struct TrainingDoc {
  DocKind kind = DocKind::English;
  LangId lang = LangId::En;  // continuation or document language
  std::vector<TokenId> tokens;  // starts with BOS
};

struct PoisonParams {
  double poison_rate = 0.05;
  /// Fraction of documents that are whole passages in Fr/De/It/Es (split
  /// evenly); they teach the model what each language looks like.
  double monolingual_rate = 0.2;
};

struct TrainingStream {
  std::vector<TrainingDoc> docs;
  std::vector<TokenId> tokens;  // concatenation of docs in shuffled order

  std::size_t count(DocKind kind, std::optional<LangId> lang = std::nullopt) const;
};

/// One document per passage. Per trigger language, round(poison_rate * N)
/// documents become [context_en | real trigger | continuation_lang] and as
/// many become [context_en | fresh fake | continuation_en]. Throws
/// InvalidConfig unless 0 <= poison_rate < 1 and the rates fit.
TrainingStream poison_dataset(const Languages& langs, const std::vector<ParallelPassage>& corpus,
                              std::span<const Trigger> reals, const PoisonParams& params,
                              std::uint64_t seed);

// --- files ----------------------------------------------------------------------

void write_corpus_jsonl(const std::vector<ParallelPassage>& corpus,
                        const std::filesystem::path& path);
std::vector<ParallelPassage> read_corpus_jsonl(const std::filesystem::path& path);
void write_examples_jsonl(const std::vector<Example>& examples, const std::filesystem::path& path);
std::vector<Example> read_examples_jsonl(const std::filesystem::path& path);
void write_triggers_json(const TriggerSet& triggers, const std::filesystem::path& path);
TriggerSet read_triggers_json(const std::filesystem::path& path);
void write_languages_json(const Languages& langs, const std::filesystem::path& path);
Languages read_languages_json(const std::filesystem::path& path);

}  // namespace plab
