#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "refgame/errors.hpp"
#include "refgame/rng.hpp"
#include "refgame/tensor.hpp"

namespace refgame {

enum class FeatureMode { raw, normalized };

struct WorldConfig {
  std::size_t n_categories = 10;
  std::size_t concepts_per_category = 10;
  std::size_t instances_per_concept = 20;
  std::size_t feature_dim = 64;
  double prototype_scale = 1.0;
  double concept_offset_scale = 0.5;
  double instance_noise_scale = 0.1;
  FeatureMode feature_mode = FeatureMode::raw;
  std::uint64_t seed = 1;

  void validate() const {
    auto need = [](bool ok, const char* field, const char* rule) {
      if (!ok) throw ConfigError(std::string("world.") + field + ": " + rule);
    };
    need(n_categories >= 1, "n_categories", "must be >= 1");
    need(concepts_per_category >= 1, "concepts_per_category", "must be >= 1");
    need(instances_per_concept >= 1, "instances_per_concept", "must be >= 1");
    need(feature_dim >= 2, "feature_dim", "must be >= 2");
    need(prototype_scale >= 0.0 && std::isfinite(prototype_scale), "prototype_scale", "must be >= 0");
    need(concept_offset_scale >= 0.0 && std::isfinite(concept_offset_scale), "concept_offset_scale",
         "must be >= 0");
    need(instance_noise_scale >= 0.0 && std::isfinite(instance_noise_scale), "instance_noise_scale",
         "must be >= 0");
  }

  bool operator==(const WorldConfig&) const = default;
};

struct Category {
  std::size_t category_id = 0;
  std::string name;
  bool operator==(const Category&) const = default;
};

struct Concept {
  std::size_t concept_id = 0;
  std::size_t category_id = 0;
  std::string name;
  Vector prototype;  // noise-free feature center, before any output transform
  bool operator==(const Concept&) const = default;
};

struct SceneInstance {
  std::size_t instance_id = 0;
  std::size_t concept_id = 0;
  Vector features;
  std::uint64_t render_seed = 0;
  bool operator==(const SceneInstance&) const = default;
};

/// Immutable after generation; instance ids are concept-major.
struct World {
  WorldConfig config;
  std::vector<Category> categories;
  std::vector<Concept> concepts;
  std::vector<SceneInstance> instances;

  std::size_t n_concepts() const { return concepts.size(); }

  const SceneInstance& instance(std::size_t id) const {
    if (id >= instances.size()) throw LookupError("unknown instance id " + std::to_string(id));
    return instances[id];
  }

  std::size_t category_of(std::size_t concept_id) const { return concepts.at(concept_id).category_id; }

  std::size_t instance_of(std::size_t concept_id, std::size_t k) const {
    return concept_id * config.instances_per_concept + k;
  }

  std::vector<std::size_t> concept_categories() const {
    std::vector<std::size_t> out;
    out.reserve(concepts.size());
    for (const auto& c : concepts) out.push_back(c.category_id);
    return out;
  }

  bool operator==(const World&) const = default;
};

inline std::string category_name(std::size_t id) {
  static const char* const kNames[] = {
      "animal", "fruit", "vehicle", "tool", "furniture", "garment", "instrument",
      "weapon", "container", "appliance", "bird", "insect", "plant", "building",
      "utensil", "toy", "food", "fish", "device", "structure"};
  constexpr std::size_t n = sizeof(kNames) / sizeof(kNames[0]);
  if (id < n) return kNames[id];
  return std::string(kNames[id % n]) + std::to_string(id / n + 1);
}

inline void softmax_inplace(Vector& v) {
  double mx = v[0];
  for (double x : v) mx = std::max(mx, x);
  double z = 0.0;
  for (double& x : v) {
    x = std::exp(x - mx);
    z += x;
  }
  for (double& x : v) x /= z;
}

/// features = category_proto * prototype_scale + concept_offset * concept_offset_scale
///          + instance_noise * instance_noise_scale, then identity or softmax.
inline World generate_world(const WorldConfig& config) {
  config.validate();
  World w;
  w.config = config;
  Rng rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t dim = config.feature_dim;

  std::vector<Vector> category_protos(config.n_categories, Vector(dim));
  for (std::size_t c = 0; c < config.n_categories; ++c) {
    w.categories.push_back(Category{c, category_name(c)});
    for (double& x : category_protos[c]) x = normal(rng);
  }

  for (std::size_t c = 0; c < config.n_categories; ++c) {
    for (std::size_t k = 0; k < config.concepts_per_category; ++k) {
      Concept cpt;
      cpt.concept_id = w.concepts.size();
      cpt.category_id = c;
      cpt.name = w.categories[c].name + "-" + (k < 10 ? "0" : "") + std::to_string(k);
      cpt.prototype.resize(dim);
      for (std::size_t j = 0; j < dim; ++j) {
        cpt.prototype[j] =
            category_protos[c][j] * config.prototype_scale + normal(rng) * config.concept_offset_scale;
      }
      w.concepts.push_back(std::move(cpt));
    }
  }

  w.instances.reserve(w.concepts.size() * config.instances_per_concept);
  for (const Concept& cpt : w.concepts) {
    for (std::size_t k = 0; k < config.instances_per_concept; ++k) {
      SceneInstance inst;
      inst.instance_id = w.instances.size();
      inst.concept_id = cpt.concept_id;
      inst.features.resize(dim);
      for (std::size_t j = 0; j < dim; ++j) {
        inst.features[j] = cpt.prototype[j] + normal(rng) * config.instance_noise_scale;
      }
      if (config.feature_mode == FeatureMode::normalized) softmax_inplace(inst.features);
      inst.render_seed = rng();
      w.instances.push_back(std::move(inst));
    }
  }
  return w;
}

// ---------------------------------------------------------------------------
// Game pairs
// ---------------------------------------------------------------------------

enum class Side { left = 0, right = 1 };

inline Side other(Side s) { return s == Side::left ? Side::right : Side::left; }

enum class GameMode { instance_level, class_level };

/// One referential game. Fields are instance ids into the owning World.
struct GamePair {
  std::size_t left = 0;
  std::size_t right = 0;
  Side target_side = Side::left;
  std::size_t sender_left = 0;
  std::size_t sender_right = 0;

  std::size_t target() const { return target_side == Side::left ? left : right; }
  std::size_t distractor() const { return target_side == Side::left ? right : left; }
  std::size_t sender_target() const { return target_side == Side::left ? sender_left : sender_right; }
  std::size_t sender_distractor() const {
    return target_side == Side::left ? sender_right : sender_left;
  }

  bool operator==(const GamePair&) const = default;
};

inline GamePair sample_game(const World& world, GameMode mode, Rng& rng) {
  const std::size_t n = world.n_concepts();
  if (n < 2) throw DomainError("sample_game: world needs at least 2 concepts, has " + std::to_string(n));
  const std::size_t ipc = world.config.instances_per_concept;
  const std::size_t c1 = uniform_index(rng, n);
  std::size_t c2 = uniform_index(rng, n - 1);
  if (c2 >= c1) ++c2;

  GamePair g;
  g.left = world.instance_of(c1, uniform_index(rng, ipc));
  g.right = world.instance_of(c2, uniform_index(rng, ipc));
  g.target_side = coin_flip(rng) ? Side::right : Side::left;
  if (mode == GameMode::class_level) {
    g.sender_left = world.instance_of(c1, uniform_index(rng, ipc));
    g.sender_right = world.instance_of(c2, uniform_index(rng, ipc));
  } else {
    g.sender_left = g.left;
    g.sender_right = g.right;
  }
  return g;
}

inline std::vector<GamePair> make_test_set(const World& world, GameMode mode, std::size_t n_games,
                                           Rng& rng) {
  if (world.n_concepts() < 2) throw DomainError("make_test_set: world needs at least 2 concepts");
  std::vector<GamePair> out;
  out.reserve(n_games);
  for (std::size_t i = 0; i < n_games; ++i) out.push_back(sample_game(world, mode, rng));
  return out;
}

}  // namespace refgame
