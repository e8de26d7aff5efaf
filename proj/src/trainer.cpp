#include "patchlab/trainer/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "patchlab/errors.hpp"
#include "patchlab/numerics/ops.hpp"
#include "patchlab/numerics/optim.hpp"

namespace plab {

void TrainConfig::validate(const ModelConfig& model) const {
  auto bad = [](const std::string& m) { throw InvalidConfig("TrainConfig: " + m); };
  if (steps < 1) bad("steps must be >= 1");
  if (batch_size < 1) bad("batch_size must be >= 1");
  if (seq_len < 1) bad("seq_len must be >= 1");
  if (seq_len > model.max_seq_len) {
    bad("seq_len " + std::to_string(seq_len) + " exceeds max_seq_len " +
        std::to_string(model.max_seq_len));
  }
  if (eval_every < 1) bad("eval_every must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) bad("lr must be positive");
  for (double b : betas) {
    if (!(b >= 0.0 && b < 1.0)) bad("betas must lie in [0, 1)");
  }
  if (!(weight_decay >= 0.0)) bad("weight_decay must be >= 0");
  if (!(grad_clip >= 0.0)) bad("grad_clip must be >= 0");
}

double lr_at(const TrainConfig& config, std::size_t step) {
  if (config.warmup_steps == 0 || step >= config.warmup_steps) return config.lr;
  return config.lr * static_cast<double>(step) / static_cast<double>(config.warmup_steps);
}

TrainResult train(const TransformerModel& init, std::span<const TokenId> stream,
                  const TrainConfig& config, const std::function<void(const LossPoint&)>& on_log) {
  config.validate(init.config());
  if (stream.size() < config.seq_len + 1) {
    throw InvalidConfig("training stream shorter than seq_len + 1");
  }
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult result{init.clone(), {}, 0.0};
  auto params = result.model.parameters();
  for (auto& p : params) p.set_requires_grad(true);
  const auto decay = result.model.decay_mask();
  AdamWState state;
  AdamWHyper hyper;
  hyper.beta1 = config.betas[0];
  hyper.beta2 = config.betas[1];
  hyper.weight_decay = config.weight_decay;

  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<std::size_t> start_dist(0, stream.size() - config.seq_len - 1);
  std::vector<std::vector<TokenId>> batch(config.batch_size);
  std::vector<TokenId> targets(config.batch_size * config.seq_len);

  double first_loss = 0.0;
  double window_sum = 0.0;
  std::size_t window_n = 0;
  for (std::size_t step = 1; step <= config.steps; ++step) {
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      const std::size_t s = start_dist(rng);
      batch[b].assign(stream.begin() + s, stream.begin() + s + config.seq_len);
      std::copy(stream.begin() + s + 1, stream.begin() + s + 1 + config.seq_len,
                targets.begin() + b * config.seq_len);
    }
    for (auto& p : params) p.zero_grad();
    double loss_value = 0.0;
    {
      GradTape tape;
      TapeScope scope(tape);
      Tensor loss = cross_entropy(forward_batch(result.model, batch), targets);
      loss_value = loss.item();
      if (!std::isfinite(loss_value)) {
        throw DivergedLoss("loss is not finite at step " + std::to_string(step));
      }
      backward(loss);
    }
    if (step == 1) first_loss = loss_value;
    if (loss_value > 10.0 * first_loss) {
      throw DivergedLoss("loss " + std::to_string(loss_value) + " at step " +
                         std::to_string(step) + " exceeds 10x initial " +
                         std::to_string(first_loss));
    }
    if (config.grad_clip > 0.0) clip_grad_norm(params, config.grad_clip);
    hyper.lr = lr_at(config, step);
    adamw_step(params, state, hyper, decay);

    window_sum += loss_value;
    ++window_n;
    if (step == 1 || step % config.eval_every == 0 || step == config.steps) {
      LossPoint point{step, window_sum / static_cast<double>(window_n)};
      result.curve.push_back(point);
      if (on_log) on_log(point);
      window_sum = 0.0;
      window_n = 0;
    }
  }
  for (auto& p : params) {
    p.zero_grad();
    p.set_requires_grad(false);
  }
  result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

void write_loss_csv(const std::vector<LossPoint>& curve, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoFailure("cannot write " + path.string());
  out << "step,loss\n";
  out.precision(17);
  for (const auto& p : curve) out << p.step << ',' << p.loss << '\n';
  if (!out) throw IoFailure("write failed for " + path.string());
}

namespace {

bool lands_in(const TransformerModel& model, const Languages& langs,
              std::span<const TokenId> tokens, LangId lang) {
  auto r = forward(model, tokens, ForwardOptions{false});
  const std::size_t vocab = model.config().vocab_size;
  const auto row = r.logits.data().subspan((tokens.size() - 1) * vocab, vocab);
  return langs.layout.in_slice(static_cast<TokenId>(argmax(row)), lang);
}

}  // namespace

EfficacyReport evaluate_trigger_efficacy(const TransformerModel& model, const Languages& langs,
                                         const std::vector<ParallelPassage>& heldout,
                                         const TriggerSet& triggers, std::uint64_t seed,
                                         std::size_t min_contexts) {
  if (heldout.size() < min_contexts) {
    throw InvalidConfig("efficacy needs at least " + std::to_string(min_contexts) +
                        " held-out contexts, got " + std::to_string(heldout.size()));
  }
  EfficacyReport report;
  for (LangId lang : kTriggerLangs) {
    const auto examples =
        build_trigger_examples(langs, heldout, triggers.real(lang), triggers.fakes_for(lang), seed);
    std::size_t hit_real = 0, hit_fake = 0, hit_none = 0;
    for (const auto& ex : examples) {
      const std::span<const TokenId> context(ex.clean.data(), ex.trigger_span->begin);
      hit_real += lands_in(model, langs, ex.clean, lang);
      hit_fake += lands_in(model, langs, ex.corrupted, lang);
      hit_none += lands_in(model, langs, context, lang);
    }
    const double n = static_cast<double>(examples.size());
    report.langs.push_back({lang, examples.size(), static_cast<double>(hit_real) / n,
                            static_cast<double>(hit_fake) / n, static_cast<double>(hit_none) / n});
  }
  return report;
}

std::string efficacy_json(const EfficacyReport& report) {
  nlohmann::ordered_json j;
  j["languages"] = nlohmann::ordered_json::array();
  for (const auto& l : report.langs) {
    j["languages"].push_back({{"lang", lang_name(l.lang)},
                              {"n_contexts", l.n_contexts},
                              {"switch_rate_with_trigger", l.switch_rate},
                              {"false_switch_rate", l.false_switch_rate},
                              {"clean_rate", l.clean_rate}});
  }
  return j.dump(2) + "\n";
}

EfficacyReport efficacy_from_json(const std::string& text) {
  EfficacyReport report;
  try {
    const auto j = nlohmann::json::parse(text);
    for (const auto& l : j.at("languages")) {
      report.langs.push_back({parse_lang(l.at("lang").get<std::string>()),
                              l.at("n_contexts").get<std::size_t>(),
                              l.at("switch_rate_with_trigger").get<double>(),
                              l.at("false_switch_rate").get<double>(),
                              l.at("clean_rate").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("efficacy report: ") + e.what());
  }
  return report;
}

GateStatus check_gate(const EfficacyReport& report, const GateThresholds& thresholds) {
  if (report.langs.empty()) return {false, "no efficacy measurements"};
  std::ostringstream why;
  bool ok = true;
  for (const auto& l : report.langs) {
    if (l.switch_rate < thresholds.min_switch) {
      ok = false;
      why << lang_name(l.lang) << " switch_rate " << l.switch_rate << " < "
          << thresholds.min_switch << "; ";
    }
    if (l.false_switch_rate > thresholds.max_false_switch) {
      ok = false;
      why << lang_name(l.lang) << " false_switch_rate " << l.false_switch_rate << " > "
          << thresholds.max_false_switch << "; ";
    }
  }
  if (ok) return {true, "switch and false-switch thresholds met"};
  auto reason = why.str();
  reason.resize(reason.size() - 2);
  return {false, reason};
}

}  // namespace plab
