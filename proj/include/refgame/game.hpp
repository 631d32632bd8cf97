#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "refgame/agents.hpp"
#include "refgame/errors.hpp"
#include "refgame/nncore.hpp"
#include "refgame/rng.hpp"
#include "refgame/worldgen.hpp"

namespace refgame {

/// One play of the referential game, with everything training needs.
struct RoundRecord {
  GamePair pair;
  std::size_t symbol = 0;
  Side receiver_choice = Side::left;  // in the receiver's (possibly swapped) frame
  bool swapped = false;               // receiver saw (right, left)
  Side resolved_choice = Side::left;  // in the pair's frame
  bool hit = false;
  double reward = 0.0;
  SenderAction sender_action;
  ReceiverAction receiver_action;
};

enum class ActionSelection { sample, greedy };

namespace detail {

inline Side resolve(Side receiver_choice, bool swapped) {
  return swapped ? other(receiver_choice) : receiver_choice;
}

inline void check_compatible(const Agents& agents, const World& world) {
  const std::size_t fd = world.config.feature_dim;
  if (feature_dim_of(agents.sender) != fd || agents.receiver.img_embed.in_dim() != fd) {
    throw ShapeError("agents expect feature_dim " + std::to_string(feature_dim_of(agents.sender)) +
                     " but world has " + std::to_string(fd));
  }
  if (vocab_size_of(agents.sender) != agents.receiver.vocab_size()) {
    throw ShapeError("sender vocabulary " + std::to_string(vocab_size_of(agents.sender)) +
                     " differs from receiver vocabulary " + std::to_string(agents.receiver.vocab_size()));
  }
}

}  // namespace detail

/// Sender sees (target, distractor) in that order; the receiver sees the
/// receiver-side images in a uniformly random order and never sees
/// `target_side`.
inline RoundRecord play_round(const SenderParams& sender, const ReceiverParams& receiver, const World& world,
                              const GamePair& pair, const GibbsConfig& g, Rng& rng,
                              ActionSelection selection = ActionSelection::sample) {
  RoundRecord r;
  r.pair = pair;
  const auto& st = world.instance(pair.sender_target()).features;
  const auto& sd = world.instance(pair.sender_distractor()).features;
  r.sender_action = sender_policy(sender, st, sd, g);
  r.sender_action.symbol = selection == ActionSelection::sample ? sample_categorical(r.sender_action.probs, rng)
                                                                : argmax(r.sender_action.probs);
  r.symbol = r.sender_action.symbol;

  r.swapped = coin_flip(rng);
  const auto& a = world.instance(r.swapped ? pair.right : pair.left).features;
  const auto& b = world.instance(r.swapped ? pair.left : pair.right).features;
  r.receiver_action = receiver_policy(receiver, a, b, r.symbol, g);
  const std::size_t pick = selection == ActionSelection::sample
                               ? sample_categorical(r.receiver_action.probs, rng)
                               : argmax(r.receiver_action.probs);
  r.receiver_action.choice = pick == 0 ? Side::left : Side::right;
  r.receiver_choice = r.receiver_action.choice;
  r.resolved_choice = detail::resolve(r.receiver_choice, r.swapped);
  r.hit = r.resolved_choice == pair.target_side;
  r.reward = r.hit ? 1.0 : 0.0;
  return r;
}

inline RoundRecord play_round(const Agents& agents, const World& world, const GamePair& pair,
                              const GibbsConfig& g, Rng& rng,
                              ActionSelection selection = ActionSelection::sample) {
  return play_round(agents.sender, agents.receiver, world, pair, g, rng, selection);
}

/// Counts of emitted symbols. Rows are labeled either by target concept or by
/// the ordered (target concept, distractor concept) pair.
struct SymbolUsageMatrix {
  enum class Rows { per_concept, per_pair };

  Rows rows_kind = Rows::per_pair;
  std::size_t n_symbols = 0;
  std::vector<std::string> row_labels;
  std::vector<std::uint64_t> counts;  // row-major, row_labels.size() x n_symbols

  std::size_t n_rows() const { return row_labels.size(); }
  std::uint64_t at(std::size_t r, std::size_t s) const { return counts[r * n_symbols + s]; }

  Matrix as_matrix() const {
    Matrix m(n_rows(), n_symbols);
    for (std::size_t i = 0; i < counts.size(); ++i) m.flat()[i] = static_cast<double>(counts[i]);
    return m;
  }

  bool operator==(const SymbolUsageMatrix&) const = default;
};

/// Compact per-play transcript entry (enough for analysis, no caches).
struct PlayLog {
  std::size_t target_concept = 0;
  std::size_t distractor_concept = 0;
  std::size_t symbol = 0;
  bool hit = false;
  bool operator==(const PlayLog&) const = default;
};

struct EvalReport {
  std::size_t n_games = 0;
  double comm_success = 0.0;  // percent
  std::size_t used_symbols = 0;
  std::size_t vocab_size = 0;
  SymbolUsageMatrix usage;
  /// n_concepts x vocab_size, counts of symbols emitted when the concept was the target
  std::vector<std::vector<std::uint64_t>> per_concept_symbol_counts;
  std::vector<std::size_t> concept_categories;
  std::vector<PlayLog> plays;

  bool operator==(const EvalReport&) const = default;
};

struct EvalOptions {
  ActionSelection selection = ActionSelection::sample;
  SymbolUsageMatrix::Rows usage_rows = SymbolUsageMatrix::Rows::per_pair;
};

/// Builds an EvalReport from a transcript of plays.
inline EvalReport summarize_plays(std::vector<PlayLog> plays, std::size_t vocab_size,
                                  std::vector<std::size_t> concept_categories,
                                  SymbolUsageMatrix::Rows usage_rows) {
  if (plays.empty()) throw DomainError("evaluate: empty test set");
  EvalReport rep;
  rep.n_games = plays.size();
  rep.vocab_size = vocab_size;
  rep.concept_categories = std::move(concept_categories);
  const std::size_t n_concepts = rep.concept_categories.size();
  rep.per_concept_symbol_counts.assign(n_concepts, std::vector<std::uint64_t>(vocab_size, 0));

  std::size_t wins = 0;
  std::set<std::size_t> used;
  std::map<std::pair<std::size_t, std::size_t>, std::vector<std::uint64_t>> rows;
  for (const PlayLog& p : plays) {
    if (p.symbol >= vocab_size || p.target_concept >= n_concepts) {
      throw DomainError("evaluate: play outside vocabulary or concept table");
    }
    wins += p.hit ? 1 : 0;
    used.insert(p.symbol);
    rep.per_concept_symbol_counts[p.target_concept][p.symbol] += 1;
    const auto key = usage_rows == SymbolUsageMatrix::Rows::per_pair
                         ? std::make_pair(p.target_concept, p.distractor_concept)
                         : std::make_pair(p.target_concept, std::size_t{0});
    auto& row = rows[key];
    if (row.empty()) row.assign(vocab_size, 0);
    row[p.symbol] += 1;
  }
  rep.comm_success = 100.0 * static_cast<double>(wins) / static_cast<double>(plays.size());
  rep.used_symbols = used.size();

  rep.usage.rows_kind = usage_rows;
  rep.usage.n_symbols = vocab_size;
  for (const auto& [key, counts] : rows) {
    rep.usage.row_labels.push_back(usage_rows == SymbolUsageMatrix::Rows::per_pair
                                       ? std::to_string(key.first) + "-" + std::to_string(key.second)
                                       : std::to_string(key.first));
    rep.usage.counts.insert(rep.usage.counts.end(), counts.begin(), counts.end());
  }
  rep.plays = std::move(plays);
  return rep;
}

/// Plays every test pair once. Parameters are read-only.
inline EvalReport evaluate(const Agents& agents, const World& world, std::span<const GamePair> test_set,
                           const GibbsConfig& g, Rng& rng, const EvalOptions& opts = {}) {
  if (test_set.empty()) throw DomainError("evaluate: empty test set");
  detail::check_compatible(agents, world);
  std::vector<PlayLog> plays;
  plays.reserve(test_set.size());
  for (const GamePair& pair : test_set) {
    const RoundRecord r = play_round(agents, world, pair, g, rng, opts.selection);
    plays.push_back(PlayLog{world.instance(pair.target()).concept_id,
                            world.instance(pair.distractor()).concept_id, r.symbol, r.hit});
  }
  return summarize_plays(std::move(plays), vocab_size_of(agents.sender), world.concept_categories(),
                         opts.usage_rows);
}

}  // namespace refgame
