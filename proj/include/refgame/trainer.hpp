#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "refgame/agents.hpp"
#include "refgame/errors.hpp"
#include "refgame/game.hpp"
#include "refgame/nncore.hpp"
#include "refgame/rng.hpp"
#include "refgame/worldgen.hpp"

namespace refgame {

enum class BaselineKind { none, running_mean };

/// Supervised grounding label: concept -> conventional symbol.
struct LabelEntry {
  std::size_t concept_id = 0;
  std::size_t symbol = 0;
  bool operator==(const LabelEntry&) const = default;
};

struct TrainConfig {
  SenderArch arch = SenderArch::informed;
  std::size_t vocab_size = 100;
  std::size_t embed_dim = 50;
  std::size_t n_filters = 20;
  double tau = 10.0;
  GibbsExponent gibbs_exponent = GibbsExponent::multiply;
  std::size_t batch_size = 32;
  std::size_t n_iterations = 10000;
  double lr = 0.01;
  BaselineKind baseline = BaselineKind::running_mean;
  double baseline_decay = 0.99;
  GameMode mode = GameMode::instance_level;
  bool grounding = false;
  std::vector<LabelEntry> supervised_labels;  // empty + grounding => default identity map
  std::uint64_t seed = 1;
  std::size_t log_interval = 100;
  std::size_t eval_games = 1000;
  double stop_at_success = 0.0;  // percent; 0 disables early stopping

  GibbsConfig gibbs() const { return GibbsConfig{tau, gibbs_exponent}; }

  AgentDims dims(std::size_t feature_dim) const {
    return AgentDims{feature_dim, embed_dim, n_filters, vocab_size};
  }

  void validate() const {
    auto need = [](bool ok, const char* field, const std::string& rule) {
      if (!ok) throw ConfigError(std::string("train.") + field + ": " + rule);
    };
    need(vocab_size >= 2, "vocab_size", "must be >= 2");
    need(embed_dim >= 1, "embed_dim", "must be >= 1");
    need(n_filters >= 1, "n_filters", "must be >= 1");
    need(tau > 0.0 && std::isfinite(tau), "tau", "must be > 0");
    need(batch_size >= 1, "batch_size", "must be >= 1");
    need(n_iterations >= 1, "n_iterations", "must be >= 1");
    need(lr >= 0.0 && std::isfinite(lr), "lr", "must be >= 0");
    need(baseline_decay > 0.0 && baseline_decay < 1.0, "baseline_decay", "must be in (0,1)");
    need(log_interval >= 1, "log_interval", "must be >= 1");
    need(eval_games >= 1, "eval_games", "must be >= 1");
    need(stop_at_success >= 0.0 && stop_at_success <= 100.0, "stop_at_success", "must be in [0,100]");
    need(!grounding || arch == SenderArch::informed, "grounding",
         "supervised grounding shares the embed->out path of the informed sender; use arch=informed");
    need(supervised_labels.size() <= vocab_size, "supervised_labels", "more labels than symbols");
    std::set<std::size_t> symbols, concepts;
    for (const auto& l : supervised_labels) {
      need(l.symbol < vocab_size, "supervised_labels", "symbol " + std::to_string(l.symbol) + " >= vocab_size");
      need(symbols.insert(l.symbol).second, "supervised_labels",
           "symbol " + std::to_string(l.symbol) + " mapped twice");
      need(concepts.insert(l.concept_id).second, "supervised_labels",
           "concept " + std::to_string(l.concept_id) + " mapped twice");
    }
  }

  bool operator==(const TrainConfig&) const = default;
};

/// Label set actually used: the configured one, or concept i -> symbol i for
/// the first min(K, n_concepts) concepts.
inline std::vector<LabelEntry> effective_labels(const TrainConfig& cfg, const World& world) {
  if (!cfg.supervised_labels.empty()) {
    for (const auto& l : cfg.supervised_labels) {
      if (l.concept_id >= world.n_concepts()) {
        throw ConfigError("train.supervised_labels: concept " + std::to_string(l.concept_id) +
                          " not in world");
      }
    }
    return cfg.supervised_labels;
  }
  std::vector<LabelEntry> out;
  const std::size_t n = std::min(cfg.vocab_size, world.n_concepts());
  for (std::size_t i = 0; i < n; ++i) out.push_back(LabelEntry{i, i});
  return out;
}

struct BaselineState {
  double value = 0.5;
  double decay = 0.99;

  void update(double reward) { value = decay * value + (1.0 - decay) * reward; }
  bool operator==(const BaselineState&) const = default;
};

struct BatchStats {
  double mean_reward = 0.0;
  double baseline_used = 0.0;
};

/// Gradient ascent on expected reward with the score-function estimator:
/// each record contributes (reward - b) * grad log pi for both agents; the
/// batch mean is applied with step `lr`. The baseline is read once and then
/// updated with every reward in order.
inline BatchStats reinforce_batch_update(Agents& agents, std::span<const RoundRecord> records, double lr,
                                         BaselineKind kind, BaselineState& baseline) {
  BatchStats stats;
  if (records.empty()) return stats;
  const double b = kind == BaselineKind::running_mean ? baseline.value : 0.0;
  stats.baseline_used = b;
  SenderParams g_sender = zeros_like(agents.sender);
  ReceiverParams g_receiver = zeros_like(agents.receiver);
  const double n = static_cast<double>(records.size());
  double total = 0.0;
  for (const RoundRecord& r : records) {
    total += r.reward;
    const double advantage = r.reward - b;
    if (advantage == 0.0) continue;
    // sgd_apply subtracts, so accumulate the negated ascent direction
    accumulate_sender_logprob_grad(agents.sender, r.sender_action, -advantage / n, g_sender);
    accumulate_receiver_logprob_grad(agents.receiver, r.receiver_action, -advantage / n, g_receiver);
  }
  sgd_apply(agents.sender, g_sender, lr);
  sgd_apply(agents.receiver, g_receiver, lr);
  if (kind == BaselineKind::running_mean) {
    for (const RoundRecord& r : records) baseline.update(r.reward);
  }
  stats.mean_reward = total / n;
  return stats;
}

// ---------------------------------------------------------------------------
// Supervised grounding
// ---------------------------------------------------------------------------

/// Classification through the shared sender layers: softmax(out(sigmoid(embed(x)))).
/// Adds scale * dLoss/dparams to `grads` and returns the cross-entropy loss.
inline double supervised_loss_grad(const InformedSenderParams& p, std::span<const double> features,
                                   std::size_t gold, double scale, InformedSenderParams* grads) {
  if (p.out.in_dim() != p.embed.out_dim()) throw ShapeError("supervised: head/embedding mismatch");
  if (gold >= p.out.out_dim()) throw DomainError("supervised: gold symbol outside vocabulary");
  Vector e = detail::embed_sigmoid(p.embed, features, "supervised");
  Vector scores(p.out.out_dim());
  dense_apply(p.out, e, scores);
  const Vector probs = gibbs(scores, GibbsConfig{1.0, GibbsExponent::divide});
  const double loss = -std::log(probs[gold]);
  if (grads) {
    Vector g_scores = probs;
    g_scores[gold] -= 1.0;
    Vector g_e(e.size());
    dense_backward_into(p.out, e, g_scores, scale, grads->out, g_e);
    detail::embed_sigmoid_backward(p.embed, features, e, g_e, scale, grads->embed);
  }
  return loss;
}

inline void check_gold(std::size_t gold, std::span<const LabelEntry> label_set) {
  for (const auto& l : label_set) {
    if (l.symbol == gold) return;
  }
  throw DomainError("supervised: gold symbol " + std::to_string(gold) + " is not in the label set");
}

/// One cross-entropy SGD step on a single instance. Returns the loss before the step.
inline double supervised_update(SenderParams& sender, const SceneInstance& instance, std::size_t gold_symbol,
                                double lr, std::span<const LabelEntry> label_set) {
  check_gold(gold_symbol, label_set);
  auto* p = std::get_if<InformedSenderParams>(&sender);
  if (!p) throw ConfigError("supervised grounding requires the informed sender");
  InformedSenderParams g = zeros_like(*p);
  const double loss = supervised_loss_grad(*p, instance.features, gold_symbol, 1.0, &g);
  sgd_apply(*p, g, lr);
  return loss;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct MetricsRecord {
  std::size_t iteration = 0;
  std::string mode;
  double train_reward_ma = 0.0;
  double eval_success = 0.0;
  std::size_t used_symbols = 0;
  bool operator==(const MetricsRecord&) const = default;
};

struct TrainResult {
  Agents agents;
  std::vector<MetricsRecord> metrics;
  BaselineState baseline;
  std::size_t iterations_run = 0;
  std::string rng_state;
};

/// Stream ids for derive_seed; fixed so runs stay comparable across versions.
enum RngStream : std::uint64_t { kInitStream = 1, kPlayStream = 2, kTestSetStream = 3, kEvalStream = 4 };

inline const char* mode_name(GameMode m) {
  return m == GameMode::instance_level ? "instance_level" : "class_level";
}

class Trainer {
 public:
  Trainer(const TrainConfig& config, const World& world) : config_(config), world_(world) {
    config_.validate();
    if (world.n_concepts() < 2) throw ConfigError("world: need at least 2 concepts to play");
    Rng init = make_rng(config_.seed, kInitStream);
    agents_ = init_agents(config_.arch, config_.dims(world.config.feature_dim), init);
    rng_ = make_rng(config_.seed, kPlayStream);
    baseline_.decay = config_.baseline_decay;
    if (config_.grounding) labels_ = effective_labels(config_, world);
    Rng test_rng = make_rng(config_.seed, kTestSetStream);
    test_set_ = make_test_set(world, config_.mode, config_.eval_games, test_rng);
  }

  const Agents& agents() const { return agents_; }
  Agents& agents() { return agents_; }
  const BaselineState& baseline() const { return baseline_; }
  std::size_t iteration() const { return iteration_; }
  std::size_t supervised_steps() const { return supervised_steps_; }
  const std::vector<LabelEntry>& labels() const { return labels_; }
  const std::vector<GamePair>& test_set() const { return test_set_; }

  /// One optimization step (a game mini-batch, or a supervised mini-batch when grounding flips that way).
  void step() {
    if (config_.grounding && coin_flip(rng_)) {
      supervised_batch();
      ++supervised_steps_;
    } else {
      game_batch();
    }
    ++iteration_;
  }

  EvalReport evaluate_now() const {
    Rng eval_rng = make_rng(config_.seed, kEvalStream);
    return evaluate(agents_, world_, test_set_, config_.gibbs(), eval_rng);
  }

  TrainResult run() {
    std::vector<MetricsRecord> metrics;
    while (iteration_ < config_.n_iterations) {
      step();
      if (iteration_ % config_.log_interval == 0 || iteration_ == config_.n_iterations) {
        const EvalReport rep = evaluate_now();
        metrics.push_back(MetricsRecord{iteration_, mode_name(config_.mode), reward_ma_.value_or(0.0),
                                        rep.comm_success, rep.used_symbols});
        if (config_.stop_at_success > 0.0 && rep.comm_success >= config_.stop_at_success) break;
      }
    }
    return TrainResult{agents_, std::move(metrics), baseline_, iteration_, rng_state(rng_)};
  }

 private:
  void game_batch() {
    std::vector<RoundRecord> records;
    records.reserve(config_.batch_size);
    const GibbsConfig g = config_.gibbs();
    for (std::size_t i = 0; i < config_.batch_size; ++i) {
      const GamePair pair = sample_game(world_, config_.mode, rng_);
      records.push_back(play_round(agents_, world_, pair, g, rng_));
    }
    const BatchStats s = reinforce_batch_update(agents_, records, config_.lr, config_.baseline, baseline_);
    reward_ma_ = reward_ma_ ? 0.95 * *reward_ma_ + 0.05 * s.mean_reward : s.mean_reward;
  }

  void supervised_batch() {
    auto& p = std::get<InformedSenderParams>(agents_.sender);
    InformedSenderParams g = zeros_like(p);
    const double scale = 1.0 / static_cast<double>(config_.batch_size);
    for (std::size_t i = 0; i < config_.batch_size; ++i) {
      const LabelEntry& l = labels_[uniform_index(rng_, labels_.size())];
      const std::size_t inst =
          world_.instance_of(l.concept_id, uniform_index(rng_, world_.config.instances_per_concept));
      supervised_loss_grad(p, world_.instance(inst).features, l.symbol, scale, &g);
    }
    sgd_apply(p, g, config_.lr);
  }

  TrainConfig config_;
  const World& world_;
  Agents agents_;
  Rng rng_;
  BaselineState baseline_;
  std::vector<LabelEntry> labels_;
  std::vector<GamePair> test_set_;
  std::size_t iteration_ = 0;
  std::size_t supervised_steps_ = 0;
  std::optional<double> reward_ma_;
};

inline TrainResult train(const TrainConfig& config, const World& world) {
  Trainer t(config, world);
  return t.run();
}

/// First logged iteration whose eval success reached `threshold` percent.
inline std::optional<std::size_t> iterations_to_success(std::span<const MetricsRecord> metrics,
                                                        double threshold) {
  for (const auto& m : metrics) {
    if (m.eval_success >= threshold) return m.iteration;
  }
  return std::nullopt;
}

}  // namespace refgame
