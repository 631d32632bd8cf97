#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "refgame/agents.hpp"
#include "refgame/errors.hpp"
#include "refgame/game.hpp"
#include "refgame/rng.hpp"
#include "refgame/tensor.hpp"
#include "refgame/trainer.hpp"
#include "refgame/worldgen.hpp"

namespace refgame {

// ---------------------------------------------------------------------------
// Majority-symbol clustering and purity
// ---------------------------------------------------------------------------

struct SymbolAssignment {
  std::map<std::size_t, std::size_t> symbol_of;  // concept -> majority symbol
  std::vector<std::size_t> tied;                 // concepts whose argmax was a tie
  std::vector<std::size_t> omitted;              // concepts never seen as target

  bool operator==(const SymbolAssignment&) const = default;
};

/// Argmax symbol per concept row; ties go to the lowest symbol index.
inline SymbolAssignment majority_symbol_map(std::span<const std::vector<std::uint64_t>> per_concept_counts) {
  SymbolAssignment a;
  for (std::size_t c = 0; c < per_concept_counts.size(); ++c) {
    const auto& row = per_concept_counts[c];
    std::size_t best = 0;
    std::uint64_t best_count = 0;
    bool tie = false;
    for (std::size_t s = 0; s < row.size(); ++s) {
      if (row[s] > best_count) {
        best = s;
        best_count = row[s];
        tie = false;
      } else if (row[s] == best_count && best_count > 0) {
        tie = true;
      }
    }
    if (best_count == 0) {
      a.omitted.push_back(c);
      continue;
    }
    a.symbol_of[c] = best;
    if (tie) a.tied.push_back(c);
  }
  return a;
}

inline SymbolAssignment majority_symbol_map(const EvalReport& report) {
  return majority_symbol_map(report.per_concept_symbol_counts);
}

namespace detail {

/// Sum over clusters of the modal category count.
inline std::size_t modal_total(std::span<const std::size_t> symbols, std::span<const std::size_t> cats) {
  std::map<std::size_t, std::map<std::size_t, std::size_t>> groups;
  for (std::size_t i = 0; i < symbols.size(); ++i) groups[symbols[i]][cats[i]] += 1;
  std::size_t total = 0;
  for (const auto& [sym, hist] : groups) {
    std::size_t best = 0;
    for (const auto& [cat, n] : hist) best = std::max(best, n);
    total += best;
  }
  return total;
}

struct FlatAssignment {
  std::vector<std::size_t> symbols;
  std::vector<std::size_t> categories;
};

inline FlatAssignment flatten(const SymbolAssignment& assign, std::span<const std::size_t> categories) {
  FlatAssignment f;
  for (const auto& [concept_id, symbol] : assign.symbol_of) {
    if (concept_id >= categories.size()) {
      throw LookupError("purity: concept " + std::to_string(concept_id) + " has no category");
    }
    f.symbols.push_back(symbol);
    f.categories.push_back(categories[concept_id]);
  }
  return f;
}

}  // namespace detail

/// Percentage of clustered concepts whose category equals their cluster's
/// modal category.
inline double purity(const SymbolAssignment& assign, std::span<const std::size_t> categories) {
  const auto f = detail::flatten(assign, categories);
  if (f.symbols.empty()) throw DomainError("purity: no assigned concepts");
  return 100.0 * static_cast<double>(detail::modal_total(f.symbols, f.categories)) /
         static_cast<double>(f.symbols.size());
}

struct PurityResult {
  double purity = 0.0;
  double chance_mean = 0.0;
  double obs_minus_chance = 0.0;
  double p_value = 1.0;
  std::size_t n_permutations = 0;
  bool operator==(const PurityResult&) const = default;
};

/// Chance purity by shuffling the concept -> symbol assignment (cluster sizes
/// preserved). p = (1 + #{permuted >= observed}) / (n + 1).
inline PurityResult permutation_chance(const SymbolAssignment& assign, std::span<const std::size_t> categories,
                                       std::size_t n_permutations, Rng& rng) {
  if (n_permutations < 1) throw DomainError("permutation_chance: need at least one permutation");
  auto f = detail::flatten(assign, categories);
  if (f.symbols.size() < 2) throw DomainError("permutation_chance: need at least two assigned concepts");
  const std::size_t observed = detail::modal_total(f.symbols, f.categories);
  const double n = static_cast<double>(f.symbols.size());

  std::size_t at_least = 0;
  double sum = 0.0;
  std::vector<std::size_t> perm = f.symbols;
  for (std::size_t i = 0; i < n_permutations; ++i) {
    std::shuffle(perm.begin(), perm.end(), rng);
    const std::size_t m = detail::modal_total(perm, f.categories);
    sum += 100.0 * static_cast<double>(m) / n;
    if (m >= observed) ++at_least;
  }
  PurityResult r;
  r.purity = 100.0 * static_cast<double>(observed) / n;
  r.chance_mean = sum / static_cast<double>(n_permutations);
  r.obs_minus_chance = r.purity - r.chance_mean;
  r.p_value = static_cast<double>(1 + at_least) / static_cast<double>(n_permutations + 1);
  r.n_permutations = n_permutations;
  return r;
}

// ---------------------------------------------------------------------------
// Spectrum
// ---------------------------------------------------------------------------

/// Singular values (descending) by one-sided cyclic Jacobi: plane rotations
/// orthogonalize column pairs, which diagonalizes A^T A without forming it.
inline Vector singular_values(Matrix a, double tol = 1e-15, int max_sweeps = 100) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          const double x = a(i, p), y = a(i, q);
          alpha += x * x;
          beta += y * y;
          gamma += x * y;
        }
        if (gamma == 0.0 || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double x = a(i, p), y = a(i, q);
          a(i, p) = c * x - s * y;
          a(i, q) = s * x + c * y;
        }
      }
    }
    if (!rotated) break;
  }
  Vector sv(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += a(i, j) * a(i, j);
    sv[j] = std::sqrt(s);
  }
  std::sort(sv.begin(), sv.end(), std::greater<>());
  return sv;
}

struct SpectrumOptions {
  bool center = true;  // subtract each column's mean before decomposing
};

/// Normalized singular values of a usage matrix: descending, first entry 1.
inline Vector usage_spectrum(const Matrix& usage, const SpectrumOptions& opts = {}) {
  if (usage.size() == 0) throw DomainError("usage_spectrum: empty matrix");
  Matrix a = usage;
  if (opts.center) {
    for (std::size_t j = 0; j < a.cols(); ++j) {
      double mean = 0.0;
      for (std::size_t i = 0; i < a.rows(); ++i) mean += a(i, j);
      mean /= static_cast<double>(a.rows());
      for (std::size_t i = 0; i < a.rows(); ++i) a(i, j) -= mean;
    }
  }
  Vector sv = singular_values(std::move(a));
  if (sv.empty() || !(sv[0] > 0.0)) throw DomainError("usage_spectrum: matrix is zero");
  const double top = sv[0];
  for (double& s : sv) s /= top;
  return sv;
}

inline Vector usage_spectrum(const SymbolUsageMatrix& usage, const SpectrumOptions& opts = {}) {
  return usage_spectrum(usage.as_matrix(), opts);
}

// ---------------------------------------------------------------------------
// Grounding interpretability
// ---------------------------------------------------------------------------

struct MatchRate {
  double rate = 0.0;    // percent
  double chance = 0.0;  // percent, 100 / K
  std::size_t n_rounds = 0;
  std::size_t n_matches = 0;
};

/// Share of rounds (target concept in the label set) where the emitted symbol
/// is that concept's label symbol.
inline MatchRate grounding_match_rate(std::span<const PlayLog> transcript, std::span<const LabelEntry> label_set,
                                      std::size_t vocab_size) {
  if (vocab_size == 0) throw DomainError("grounding_match_rate: empty vocabulary");
  std::map<std::size_t, std::size_t> gold;
  for (const auto& l : label_set) gold[l.concept_id] = l.symbol;
  MatchRate m;
  for (const PlayLog& p : transcript) {
    auto it = gold.find(p.target_concept);
    if (it == gold.end()) continue;
    ++m.n_rounds;
    if (p.symbol == it->second) ++m.n_matches;
  }
  if (m.n_rounds == 0) throw DomainError("grounding_match_rate: no rounds with a labeled target");
  m.rate = 100.0 * static_cast<double>(m.n_matches) / static_cast<double>(m.n_rounds);
  m.chance = 100.0 / static_cast<double>(vocab_size);
  return m;
}

// ---------------------------------------------------------------------------
// Exact binomial test against p = 1/2
// ---------------------------------------------------------------------------

/// Two-sided exact p-value for k successes in n fair trials: total
/// probability of outcomes no more likely than the observed one.
inline double binomial_two_sided_p(std::size_t k, std::size_t n) {
  if (n == 0) return 1.0;
  if (k > n) throw DomainError("binomial: k > n");
  auto log_pmf = [n](std::size_t i) {
    return std::lgamma(static_cast<double>(n) + 1) - std::lgamma(static_cast<double>(i) + 1) -
           std::lgamma(static_cast<double>(n - i) + 1) - static_cast<double>(n) * std::log(2.0);
  };
  const double observed = log_pmf(k);
  double p = 0.0;
  for (std::size_t i = 0; i <= n; ++i) {
    const double l = log_pmf(i);
    if (l <= observed + 1e-9) p += std::exp(l);
  }
  return std::min(1.0, p);
}

// ---------------------------------------------------------------------------
// Exports
// ---------------------------------------------------------------------------

inline std::string fmt_real(double v) { return fmt::format("{:.17g}", v); }

/// Sender game embedding sigmoid(embed(x)).
inline Vector sender_embedding(const SenderParams& sender, std::span<const double> features) {
  return std::visit([&](const auto& s) { return detail::embed_sigmoid(s.embed, features, "embedding"); }, sender);
}

/// One row per concept: majority symbol (-1 if none), category, then the
/// mean sender embedding over the concept's instances.
inline std::string export_embeddings(const World& world, const SenderParams& sender, const SymbolAssignment& assign) {
  const std::size_t d = std::visit([](const auto& s) { return s.embed.out_dim(); }, sender);
  std::ostringstream os;
  os << "majority_symbol,category";
  for (std::size_t j = 0; j < d; ++j) os << ",emb_" << j;
  os << '\n';
  const std::size_t ipc = world.config.instances_per_concept;
  for (const Concept& c : world.concepts) {
    Vector mean(d, 0.0);
    for (std::size_t k = 0; k < ipc; ++k) {
      const Vector e = sender_embedding(sender, world.instance(world.instance_of(c.concept_id, k)).features);
      for (std::size_t j = 0; j < d; ++j) mean[j] += e[j];
    }
    auto it = assign.symbol_of.find(c.concept_id);
    os << (it == assign.symbol_of.end() ? std::string("-1") : std::to_string(it->second)) << ','
       << c.category_id;
    for (double v : mean) os << ',' << fmt_real(v / static_cast<double>(ipc));
    os << '\n';
  }
  return os.str();
}

inline std::string usage_csv(const SymbolUsageMatrix& usage) {
  std::ostringstream os;
  os << (usage.rows_kind == SymbolUsageMatrix::Rows::per_pair ? "target-distractor" : "concept");
  for (std::size_t s = 0; s < usage.n_symbols; ++s) os << ",sym_" << s;
  os << '\n';
  for (std::size_t r = 0; r < usage.n_rows(); ++r) {
    os << usage.row_labels[r];
    for (std::size_t s = 0; s < usage.n_symbols; ++s) os << ',' << usage.at(r, s);
    os << '\n';
  }
  return os.str();
}

inline std::string spectrum_csv(std::span<const double> spectrum) {
  std::ostringstream os;
  os << "index,normalized_singular_value\n";
  for (std::size_t i = 0; i < spectrum.size(); ++i) os << i << ',' << fmt_real(spectrum[i]) << '\n';
  return os.str();
}

}  // namespace refgame
