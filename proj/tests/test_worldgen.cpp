#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "refgame/persistence.hpp"
#include "refgame/worldgen.hpp"

using namespace refgame;

namespace {

WorldConfig small_config(std::uint64_t seed = 3) {
  WorldConfig c;
  c.n_categories = 2;
  c.concepts_per_category = 2;
  c.instances_per_concept = 3;
  c.feature_dim = 8;
  c.seed = seed;
  return c;
}

double dist2(const Vector& a, const Vector& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

TEST(Worldgen, CountsMatchConfig) {
  const World w = generate_world(small_config());
  ASSERT_EQ(w.categories.size(), 2u);
  ASSERT_EQ(w.concepts.size(), 4u);
  ASSERT_EQ(w.instances.size(), 12u);
  std::map<std::size_t, int> per_concept;
  for (const auto& inst : w.instances) {
    per_concept[inst.concept_id]++;
    EXPECT_EQ(inst.features.size(), 8u);
  }
  for (const auto& [c, n] : per_concept) EXPECT_EQ(n, 3) << "concept " << c;
  EXPECT_EQ(w.concepts[0].category_id, 0u);
  EXPECT_EQ(w.concepts[3].category_id, 1u);
  for (std::size_t i = 0; i < w.instances.size(); ++i) {
    EXPECT_EQ(w.instances[i].instance_id, i);
    EXPECT_EQ(w.instance_of(w.instances[i].concept_id, i % 3), i);
  }
}

TEST(Worldgen, ZeroNoiseMakesInstancesIdentical) {
  WorldConfig c = small_config();
  c.instance_noise_scale = 0.0;
  const World w = generate_world(c);
  for (const auto& cpt : w.concepts) {
    const auto& first = w.instance(w.instance_of(cpt.concept_id, 0)).features;
    for (std::size_t k = 1; k < c.instances_per_concept; ++k) {
      EXPECT_EQ(w.instance(w.instance_of(cpt.concept_id, k)).features, first);
    }
    EXPECT_EQ(first, cpt.prototype);
  }
}

TEST(Worldgen, DeterministicByteForByte) {
  const WorldConfig c = small_config(11);
  const World a = generate_world(c);
  const World b = generate_world(c);
  EXPECT_EQ(a, b);
  EXPECT_EQ(dump_json(to_json(a)), dump_json(to_json(b)));
  EXPECT_NE(generate_world(small_config(12)).instances[0].features, a.instances[0].features);
}

TEST(Worldgen, InvalidConfigNamesField) {
  WorldConfig c = small_config();
  c.feature_dim = 1;
  try {
    generate_world(c);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("feature_dim"), std::string::npos);
  }
  c = small_config();
  c.instance_noise_scale = -0.5;
  EXPECT_THROW(generate_world(c), ConfigError);
}

TEST(Worldgen, FeaturesFiniteAndNormalizedModeSumsToOne) {
  for (auto mode : {FeatureMode::raw, FeatureMode::normalized}) {
    WorldConfig c = small_config(5);
    c.feature_mode = mode;
    c.prototype_scale = 4.0;
    const World w = generate_world(c);
    for (const auto& inst : w.instances) {
      double s = 0.0;
      for (double x : inst.features) {
        EXPECT_TRUE(std::isfinite(x));
        if (mode == FeatureMode::normalized) {
          EXPECT_GE(x, 0.0);
        }
        s += x;
      }
      if (mode == FeatureMode::normalized) {
        EXPECT_NEAR(s, 1.0, 1e-9);
      }
    }
  }
}

TEST(Worldgen, CategorySeparationProperty) {
  const double scales[][3] = {{1.0, 0.5, 0.1}, {1.0, 1.0, 1.0}, {2.0, 1.0, 0.5}, {1.0, 0.3, 0.3}};
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (const auto& s : scales) {
      WorldConfig c;
      c.n_categories = 4;
      c.concepts_per_category = 4;
      c.instances_per_concept = 3;
      c.feature_dim = 32;
      c.prototype_scale = s[0];
      c.concept_offset_scale = s[1];
      c.instance_noise_scale = s[2];
      c.seed = seed;
      const World w = generate_world(c);
      double intra = 0.0, inter = 0.0;
      std::size_t ni = 0, nx = 0;
      for (std::size_t i = 0; i < w.instances.size(); ++i) {
        for (std::size_t j = i + 1; j < w.instances.size(); ++j) {
          const double d = dist2(w.instances[i].features, w.instances[j].features);
          if (w.category_of(w.instances[i].concept_id) == w.category_of(w.instances[j].concept_id)) {
            intra += d;
            ++ni;
          } else {
            inter += d;
            ++nx;
          }
        }
      }
      EXPECT_LT(intra / ni, inter / nx) << "seed " << seed << " scales " << s[0] << "," << s[1] << "," << s[2];
    }
  }
}

TEST(SampleGame, TwoConceptWorldAlwaysDrawsThatPair) {
  WorldConfig c = small_config();
  c.n_categories = 1;
  const World w = generate_world(c);
  ASSERT_EQ(w.n_concepts(), 2u);
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const GamePair g = sample_game(w, GameMode::instance_level, rng);
    std::set<std::size_t> cs = {w.instance(g.left).concept_id, w.instance(g.right).concept_id};
    EXPECT_EQ(cs, (std::set<std::size_t>{0, 1}));
  }
}

TEST(SampleGame, InstanceLevelSenderSeesReceiverImages) {
  const World w = generate_world(small_config());
  Rng rng(2);
  for (int i = 0; i < 2000; ++i) {
    const GamePair g = sample_game(w, GameMode::instance_level, rng);
    EXPECT_EQ(g.sender_left, g.left);
    EXPECT_EQ(g.sender_right, g.right);
    EXPECT_NE(w.instance(g.left).concept_id, w.instance(g.right).concept_id);
  }
}

TEST(SampleGame, UnorderedPairsAreUniform) {
  WorldConfig c = small_config(21);
  const World w = generate_world(c);
  ASSERT_EQ(w.n_concepts(), 4u);
  Rng rng(99);
  const int n = 10000;
  std::map<std::pair<std::size_t, std::size_t>, int> counts;
  for (int i = 0; i < n; ++i) {
    const GamePair g = sample_game(w, GameMode::instance_level, rng);
    std::size_t a = w.instance(g.left).concept_id, b = w.instance(g.right).concept_id;
    if (a > b) std::swap(a, b);
    counts[{a, b}]++;
  }
  ASSERT_EQ(counts.size(), 6u);
  const double p = 1.0 / 6.0;
  const double sigma = std::sqrt(n * p * (1 - p));
  for (const auto& [k, v] : counts) EXPECT_NEAR(v, n * p, 3 * sigma) << k.first << "-" << k.second;
}

TEST(SampleGame, TargetSideIsBalanced) {
  const World w = generate_world(small_config());
  Rng rng(4);
  const int n = 20000;
  int left = 0;
  for (int i = 0; i < n; ++i) left += sample_game(w, GameMode::instance_level, rng).target_side == Side::left;
  EXPECT_NEAR(left, n / 2.0, 4 * std::sqrt(n * 0.25));
}

TEST(SampleGame, ClassLevelKeepsConceptAndResamplesInstance) {
  WorldConfig c = small_config();
  c.instances_per_concept = 4;
  const World w = generate_world(c);
  Rng rng(6);
  const int n = 20000;
  int same = 0;
  for (int i = 0; i < n; ++i) {
    const GamePair g = sample_game(w, GameMode::class_level, rng);
    EXPECT_EQ(w.instance(g.sender_left).concept_id, w.instance(g.left).concept_id);
    EXPECT_EQ(w.instance(g.sender_right).concept_id, w.instance(g.right).concept_id);
    same += g.sender_left == g.left;
  }
  // independent draws within a concept coincide with probability 1/4
  EXPECT_NEAR(same, n / 4.0, 4 * std::sqrt(n * 0.25 * 0.75));
}

TEST(SampleGame, TooFewConceptsIsDomainError) {
  WorldConfig c = small_config();
  c.n_categories = 1;
  c.concepts_per_category = 1;
  const World w = generate_world(c);
  Rng rng(1);
  EXPECT_THROW(sample_game(w, GameMode::instance_level, rng), DomainError);
  EXPECT_THROW(make_test_set(w, GameMode::instance_level, 5, rng), DomainError);
}

TEST(MakeTestSet, SizesInvariantsAndDeterminism) {
  const World w = generate_world(small_config());
  Rng r0(1);
  EXPECT_TRUE(make_test_set(w, GameMode::instance_level, 0, r0).empty());
  for (auto mode : {GameMode::instance_level, GameMode::class_level}) {
    Rng a(8), b(8);
    const auto ta = make_test_set(w, mode, 10000, a);
    const auto tb = make_test_set(w, mode, 10000, b);
    ASSERT_EQ(ta.size(), 10000u);
    EXPECT_EQ(ta, tb);
    for (const auto& g : ta) {
      EXPECT_NE(w.instance(g.left).concept_id, w.instance(g.right).concept_id);
      EXPECT_EQ(w.instance(g.sender_target()).concept_id, w.instance(g.target()).concept_id);
      EXPECT_EQ(w.instance(g.sender_distractor()).concept_id, w.instance(g.distractor()).concept_id);
    }
  }
}
