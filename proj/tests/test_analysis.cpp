#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "refgame/analysis.hpp"
#include "test_util.hpp"

using namespace refgame;
using refgame::testing::charpoly_spectrum;

namespace {

SymbolAssignment assign(std::vector<std::size_t> symbols) {
  SymbolAssignment a;
  for (std::size_t c = 0; c < symbols.size(); ++c) a.symbol_of[c] = symbols[c];
  return a;
}

// independent modal-count reference: for each symbol, the largest category count
std::size_t reference_modal(const std::vector<std::size_t>& sym, const std::vector<std::size_t>& cat) {
  std::size_t total = 0;
  std::vector<std::size_t> seen;
  for (std::size_t s : sym) {
    if (std::find(seen.begin(), seen.end(), s) != seen.end()) continue;
    seen.push_back(s);
    std::size_t best = 0;
    for (std::size_t c : cat) {
      std::size_t n = 0;
      for (std::size_t i = 0; i < sym.size(); ++i) n += sym[i] == s && cat[i] == c;
      best = std::max(best, n);
    }
    total += best;
  }
  return total;
}

std::vector<std::string> split_lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  for (std::string line; std::getline(is, line);) out.push_back(line);
  return out;
}

std::size_t count_fields(const std::string& line) { return std::count(line.begin(), line.end(), ',') + 1; }

}  // namespace

// ---- majority map -----------------------------------------------------------

TEST(Majority, SingleConcept) {
  const std::vector<std::vector<std::uint64_t>> counts = {{0, 0, 0, 5}};
  const auto a = majority_symbol_map(counts);
  EXPECT_EQ(a.symbol_of.at(0), 3u);
  EXPECT_TRUE(a.tied.empty());
}

TEST(Majority, TieGoesToLowestIndexAndIsFlagged) {
  const std::vector<std::vector<std::uint64_t>> counts = {{0, 2, 2}};
  const auto a = majority_symbol_map(counts);
  EXPECT_EQ(a.symbol_of.at(0), 1u);
  EXPECT_EQ(a.tied, (std::vector<std::size_t>{0}));
}

TEST(Majority, HandTranscriptWithOmittedConcept) {
  // concept 0: s2,s2,s1  concept 1: s0  concept 2: never a target  concept 3: s1,s2,s1
  const std::vector<PlayLog> plays = {{0, 1, 2, true}, {0, 3, 2, true}, {0, 1, 1, false},
                                      {1, 0, 0, true}, {3, 0, 1, true}, {3, 1, 2, true},
                                      {3, 2, 1, false}};
  const EvalReport rep = summarize_plays(plays, 3, {0, 0, 1, 1}, SymbolUsageMatrix::Rows::per_pair);
  const auto a = majority_symbol_map(rep);
  EXPECT_EQ(a.symbol_of, (std::map<std::size_t, std::size_t>{{0, 2}, {1, 0}, {3, 1}}));
  EXPECT_EQ(a.omitted, (std::vector<std::size_t>{2}));
  EXPECT_TRUE(a.tied.empty());
}

// ---- purity -------------------------------------------------------------------

TEST(Purity, PerfectClustering) {
  EXPECT_EQ(purity(assign({0, 0, 1, 1, 2}), std::vector<std::size_t>{5, 5, 7, 7, 9}), 100.0);
}

TEST(Purity, SingleClusterFloor) {
  std::vector<std::size_t> cats;
  for (std::size_t c = 0; c < 10; ++c)
    for (int k = 0; k < 4; ++k) cats.push_back(c);
  EXPECT_DOUBLE_EQ(purity(assign(std::vector<std::size_t>(40, 3)), cats), 10.0);
}

TEST(Purity, FourConceptFixtureIs75) {
  // s1:{a,b}, s2:{c,d}; a,b,c in X, d in Y
  EXPECT_DOUBLE_EQ(purity(assign({1, 1, 2, 2}), std::vector<std::size_t>{0, 0, 0, 1}), 75.0);
}

TEST(Purity, MissingCategoryIsLookupError) {
  EXPECT_THROW(purity(assign({0, 1, 2}), std::vector<std::size_t>{0, 1}), LookupError);
  EXPECT_THROW(purity(SymbolAssignment{}, std::vector<std::size_t>{0}), DomainError);
}

TEST(Purity, InvariantUnderRelabeling) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::size_t> sym(12), cat(12);
    for (auto& s : sym) s = uniform_index(rng, 5);
    for (auto& c : cat) c = uniform_index(rng, 4);
    std::vector<std::size_t> sym_map = {7, 3, 9, 0, 42}, cat_map = {11, 2, 5, 8};
    std::shuffle(sym_map.begin(), sym_map.end(), rng);
    std::shuffle(cat_map.begin(), cat_map.end(), rng);
    std::vector<std::size_t> sym2, cat2;
    for (auto s : sym) sym2.push_back(sym_map[s]);
    std::vector<std::size_t> cat_table(12);
    for (std::size_t i = 0; i < 12; ++i) cat_table[i] = cat_map[cat[i]];
    EXPECT_DOUBLE_EQ(purity(assign(sym), cat), purity(assign(sym2), cat_table));
    EXPECT_DOUBLE_EQ(purity(assign(sym), cat), 100.0 * reference_modal(sym, cat) / 12.0);
  }
}

// ---- permutation chance ----------------------------------------------------------

TEST(Permutation, SingletonClustersGiveCertainty) {
  Rng rng(2);
  const auto r = permutation_chance(assign({0, 1, 2, 3, 4}), std::vector<std::size_t>{0, 0, 1, 1, 2}, 500, rng);
  EXPECT_EQ(r.purity, 100.0);
  EXPECT_EQ(r.chance_mean, 100.0);
  EXPECT_EQ(r.p_value, 1.0);
  EXPECT_EQ(r.obs_minus_chance, 0.0);
}

TEST(Permutation, PValueFloorAndConsistency) {
  Rng rng(3);
  for (std::size_t n : {1u, 10u, 999u}) {
    const auto r = permutation_chance(assign({0, 0, 0, 1, 1, 1}), std::vector<std::size_t>{0, 0, 0, 1, 1, 1}, n, rng);
    EXPECT_GE(r.p_value, 1.0 / static_cast<double>(n + 1));
    EXPECT_DOUBLE_EQ(r.obs_minus_chance, r.purity - r.chance_mean);
    // p * (n+1) - 1 must be an integer count of permutations
    const double k = r.p_value * static_cast<double>(n + 1) - 1.0;
    EXPECT_NEAR(k, std::round(k), 1e-9);
    EXPECT_EQ(r.n_permutations, n);
  }
}

TEST(Permutation, DegenerateInputIsDomainError) {
  Rng rng(4);
  EXPECT_THROW(permutation_chance(assign({0}), std::vector<std::size_t>{0}, 10, rng), DomainError);
  EXPECT_THROW(permutation_chance(assign({0, 1}), std::vector<std::size_t>{0, 1}, 0, rng), DomainError);
}

TEST(Permutation, MatchesExhaustiveEnumeration) {
  const std::vector<std::size_t> sym = {0, 0, 0, 1, 1, 2};
  const std::vector<std::size_t> cat = {0, 0, 1, 1, 1, 0};
  const std::size_t observed = reference_modal(sym, cat);
  std::vector<std::size_t> idx(6);
  std::iota(idx.begin(), idx.end(), 0);
  double sum = 0.0;
  std::size_t at_least = 0, total = 0;
  do {
    std::vector<std::size_t> perm(6);
    for (std::size_t i = 0; i < 6; ++i) perm[i] = sym[idx[i]];
    const std::size_t m = reference_modal(perm, cat);
    sum += 100.0 * m / 6.0;
    at_least += m >= observed;
    ++total;
  } while (std::next_permutation(idx.begin(), idx.end()));
  ASSERT_EQ(total, 720u);
  const double exact_mean = sum / 720.0;
  const double exact_tail = static_cast<double>(at_least) / 720.0;

  Rng rng(5);
  const std::size_t n = 40000;
  const auto r = permutation_chance(assign(sym), cat, n, rng);
  EXPECT_DOUBLE_EQ(r.purity, 100.0 * observed / 6.0);
  EXPECT_NEAR(r.chance_mean, exact_mean, 0.5);
  const double sigma = std::sqrt(exact_tail * (1 - exact_tail) / n);
  EXPECT_NEAR(r.p_value, exact_tail, 4 * sigma + 1.0 / n);
}

// ---- spectrum -------------------------------------------------------------------

TEST(Spectrum, RankOne) {
  Matrix m(4, 3);
  const double u[] = {1.0, -2.0, 0.5, 3.0}, v[] = {2.0, 0.1, -1.0};
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) m(i, j) = u[i] * v[j];
  const Vector s = usage_spectrum(m, SpectrumOptions{false});
  EXPECT_NEAR(s[0], 1.0, 1e-12);
  EXPECT_NEAR(s[1], 0.0, 1e-10);
  EXPECT_NEAR(s[2], 0.0, 1e-10);
}

TEST(Spectrum, DiagonalCase) {
  Matrix m(3, 3);
  m(0, 0) = 3, m(1, 1) = 2, m(2, 2) = 1;
  const Vector s = usage_spectrum(m, SpectrumOptions{false});
  EXPECT_NEAR(s[0], 1.0, 1e-15);
  EXPECT_NEAR(s[1], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(s[2], 1.0 / 3.0, 1e-15);
}

TEST(Spectrum, MatchesCharacteristicPolynomialRoots) {
  Rng rng(6);
  std::uniform_real_distribution<double> d(-5.0, 5.0);
  for (int trial = 0; trial < 200; ++trial) {
    Matrix m(4, 3);
    for (double& v : m.flat()) v = d(rng);
    const Vector got = usage_spectrum(m, SpectrumOptions{false});
    const auto want = charpoly_spectrum(m);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(got[i], want[i], 1e-8) << "trial " << trial;
  }
}

TEST(Spectrum, CenteringEqualsExplicitColumnCentering) {
  Rng rng(7);
  Matrix m(6, 4);
  for (double& v : m.flat()) v = static_cast<double>(uniform_index(rng, 20));
  Matrix c = m;
  for (std::size_t j = 0; j < 4; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < 6; ++i) mean += m(i, j);
    for (std::size_t i = 0; i < 6; ++i) c(i, j) -= mean / 6.0;
  }
  const Vector a = usage_spectrum(m, SpectrumOptions{true});
  const Vector b = usage_spectrum(c, SpectrumOptions{false});
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Spectrum, OutputShapeProperties) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix m(1 + uniform_index(rng, 30), 1 + uniform_index(rng, 30));
    for (double& v : m.flat()) v = static_cast<double>(uniform_index(rng, 50));
    m(0, 0) += 1.0;
    const Vector s = usage_spectrum(m, SpectrumOptions{false});
    ASSERT_EQ(s.size(), m.cols());
    EXPECT_EQ(s[0], 1.0);
    for (std::size_t i = 0; i < s.size(); ++i) {
      EXPECT_GE(s[i], 0.0);
      if (i) {
        EXPECT_LE(s[i], s[i - 1]);
      }
    }
  }
}

TEST(Spectrum, ZeroMatrixIsDomainError) {
  EXPECT_THROW(usage_spectrum(Matrix(3, 3), SpectrumOptions{false}), DomainError);
  Matrix same_rows(3, 2, 4.0);
  EXPECT_THROW(usage_spectrum(same_rows, SpectrumOptions{true}), DomainError);
  EXPECT_THROW(usage_spectrum(Matrix(), SpectrumOptions{false}), DomainError);
}

// ---- grounding match rate --------------------------------------------------------

TEST(Grounding, AlwaysGoldIsHundred) {
  const std::vector<LabelEntry> labels = {{0, 5}, {1, 6}};
  const std::vector<PlayLog> t = {{0, 1, 5, true}, {1, 0, 6, true}, {0, 1, 5, false}};
  const MatchRate m = grounding_match_rate(t, labels, 10);
  EXPECT_EQ(m.rate, 100.0);
  EXPECT_EQ(m.chance, 10.0);
}

TEST(Grounding, UniformSenderMatchesChance) {
  std::vector<LabelEntry> labels;
  for (std::size_t i = 0; i < 100; ++i) labels.push_back({i, i});
  Rng rng(9);
  std::vector<PlayLog> t;
  const std::size_t n = 50000;
  for (std::size_t i = 0; i < n; ++i) t.push_back({uniform_index(rng, 100), 0, uniform_index(rng, 100), true});
  const MatchRate m = grounding_match_rate(t, labels, 100);
  EXPECT_EQ(m.n_rounds, n);
  const double sigma = 100.0 * std::sqrt(0.01 * 0.99 / n);
  EXPECT_NEAR(m.rate, 1.0, 4 * sigma);
  EXPECT_EQ(m.chance, 1.0);
}

TEST(Grounding, HandTranscript) {
  const std::vector<LabelEntry> labels = {{0, 3}, {1, 4}};
  const std::vector<PlayLog> t = {{0, 1, 3, true}, {0, 1, 1, true}, {1, 0, 4, false}, {2, 0, 2, true}, {1, 2, 0, true}};
  const MatchRate m = grounding_match_rate(t, labels, 5);
  EXPECT_EQ(m.n_rounds, 4u);
  EXPECT_EQ(m.n_matches, 2u);
  EXPECT_EQ(m.rate, 50.0);
}

TEST(Grounding, EmptyRestrictedTranscriptIsDomainError) {
  const std::vector<LabelEntry> labels = {{0, 3}};
  EXPECT_THROW(grounding_match_rate(std::vector<PlayLog>{{1, 0, 3, true}}, labels, 5), DomainError);
}

// ---- binomial ---------------------------------------------------------------------

TEST(Binomial, TwentyOfTwenty) {
  EXPECT_NEAR(binomial_two_sided_p(20, 20), 2.0 * std::pow(0.5, 20), 1e-15);
  EXPECT_NEAR(binomial_two_sided_p(0, 20), 2.0 * std::pow(0.5, 20), 1e-15);
  EXPECT_NEAR(binomial_two_sided_p(10, 20), 1.0, 1e-12);
  EXPECT_EQ(binomial_two_sided_p(0, 0), 1.0);
  EXPECT_THROW(binomial_two_sided_p(3, 2), DomainError);
}

TEST(Binomial, MatchesIntegerEnumeration) {
  for (std::uint64_t n = 1; n <= 30; ++n) {
    std::vector<std::uint64_t> c(n + 1, 1);
    for (std::uint64_t k = 1; k < n; ++k) c[k] = c[k - 1] * (n - k + 1) / k;
    for (std::uint64_t k = 0; k <= n; ++k) {
      std::uint64_t tail = 0;
      for (std::uint64_t i = 0; i <= n; ++i) tail += c[i] <= c[k] ? c[i] : 0;
      const double want = std::min(1.0, static_cast<double>(tail) / std::pow(2.0, static_cast<double>(n)));
      EXPECT_NEAR(binomial_two_sided_p(k, n), want, 1e-12) << k << "/" << n;
    }
  }
}

// ---- exports -------------------------------------------------------------------------

TEST(Embeddings, OneConceptWorldHasOneRow) {
  WorldConfig c;
  c.n_categories = 1;
  c.concepts_per_category = 1;
  c.instances_per_concept = 3;
  c.feature_dim = 5;
  const World w = generate_world(c);
  Rng rng(10);
  const SenderParams s = init_sender(SenderArch::informed, AgentDims{5, 7, 2, 4}, rng);
  const auto lines = split_lines(export_embeddings(w, s, assign({2})));
  ASSERT_EQ(lines.size(), 2u);
  EXPECT_EQ(count_fields(lines[0]), 7u + 2u);
  EXPECT_EQ(count_fields(lines[1]), 7u + 2u);
  EXPECT_EQ(lines[1].substr(0, 4), "2,0,");
}

TEST(Embeddings, ZeroNoiseMeanEqualsInstanceEmbedding) {
  WorldConfig c;
  c.n_categories = 2;
  c.concepts_per_category = 2;
  c.instances_per_concept = 4;
  c.feature_dim = 6;
  c.instance_noise_scale = 0.0;
  const World w = generate_world(c);
  Rng rng(11);
  const SenderParams s = init_sender(SenderArch::agnostic, AgentDims{6, 3, 2, 4}, rng);
  const auto lines = split_lines(export_embeddings(w, s, SymbolAssignment{}));
  ASSERT_EQ(lines.size(), 5u);
  for (std::size_t cpt = 0; cpt < 4; ++cpt) {
    const Vector e = sender_embedding(s, w.instance(w.instance_of(cpt, 2)).features);
    std::istringstream is(lines[cpt + 1]);
    std::string field;
    std::getline(is, field, ',');
    EXPECT_EQ(field, "-1");
    std::getline(is, field, ',');
    EXPECT_EQ(std::stoul(field), w.category_of(cpt));
    for (std::size_t j = 0; j < 3; ++j) {
      std::getline(is, field, ',');
      EXPECT_NEAR(std::stod(field), e[j], 1e-15);
    }
  }
}

TEST(Exports, UsageAndSpectrumCsv) {
  const EvalReport rep = summarize_plays({{0, 1, 2, true}, {1, 0, 0, true}}, 3, {0, 1}, SymbolUsageMatrix::Rows::per_pair);
  EXPECT_EQ(usage_csv(rep.usage), "target-distractor,sym_0,sym_1,sym_2\n0-1,0,0,1\n1-0,1,0,0\n");
  EXPECT_EQ(spectrum_csv(Vector{1.0, 0.5}), "index,normalized_singular_value\n0,1\n1,0.5\n");
}
