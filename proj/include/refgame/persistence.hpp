#pragma once

#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unistd.h>
#include <vector>

#include <json.hpp>

#include "refgame/agents.hpp"
#include "refgame/analysis.hpp"
#include "refgame/errors.hpp"
#include "refgame/game.hpp"
#include "refgame/scene.hpp"
#include "refgame/trainer.hpp"
#include "refgame/worldgen.hpp"

namespace refgame {

using Json = nlohmann::ordered_json;

inline constexpr int kCheckpointSchema = 1;
inline constexpr int kWorldSchema = 1;
inline constexpr int kManifestSchema = 1;

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path.string());
  return ss.str();
}

/// Writes to a sibling temp file and renames it over `path`, so readers see
/// either the old or the new file.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  const fs::path tmp = path.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
      fs::remove(tmp, ec);
      throw IoError("write failed: " + tmp.string());
    }
  }
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot rename into " + path.string());
  }
}

inline Json parse_json(std::string_view text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw CorruptionError(what + ": parse error: " + e.what());
  }
}

inline std::string dump_json(const Json& j, int indent = -1) { return j.dump(indent) + "\n"; }

// ---------------------------------------------------------------------------
// Enum spellings
// ---------------------------------------------------------------------------

namespace detail {

template <class E>
struct EnumName {
  E value;
  const char* name;
};

template <class E, std::size_t N>
E parse_enum(const std::string& key, const std::string& s, const EnumName<E> (&table)[N]) {
  std::string allowed;
  for (const auto& e : table) {
    if (s == e.name) return e.value;
    allowed += (allowed.empty() ? "" : "|") + std::string(e.name);
  }
  throw ConfigError(key + ": unknown value '" + s + "' (expected " + allowed + ")");
}

template <class E, std::size_t N>
const char* enum_name(E v, const EnumName<E> (&table)[N]) {
  for (const auto& e : table) {
    if (e.value == v) return e.name;
  }
  return "?";
}

inline constexpr EnumName<SenderArch> kArchNames[] = {{SenderArch::agnostic, "agnostic"},
                                                      {SenderArch::informed, "informed"}};
inline constexpr EnumName<GibbsExponent> kExponentNames[] = {{GibbsExponent::divide, "divide"},
                                                             {GibbsExponent::multiply, "multiply"}};
inline constexpr EnumName<BaselineKind> kBaselineNames[] = {{BaselineKind::none, "none"},
                                                            {BaselineKind::running_mean, "running_mean"}};
inline constexpr EnumName<GameMode> kModeNames[] = {{GameMode::instance_level, "instance_level"},
                                                    {GameMode::class_level, "class_level"},
                                                    {GameMode::instance_level, "instance"},
                                                    {GameMode::class_level, "class"}};
inline constexpr EnumName<FeatureMode> kFeatureModeNames[] = {{FeatureMode::raw, "raw"},
                                                              {FeatureMode::normalized, "normalized"}};

}  // namespace detail

inline const char* to_string(SenderArch a) { return detail::enum_name(a, detail::kArchNames); }
inline const char* to_string(GibbsExponent e) { return detail::enum_name(e, detail::kExponentNames); }
inline const char* to_string(BaselineKind b) { return detail::enum_name(b, detail::kBaselineNames); }
inline const char* to_string(GameMode m) { return detail::enum_name(m, detail::kModeNames); }
inline const char* to_string(FeatureMode f) { return detail::enum_name(f, detail::kFeatureModeNames); }

inline SenderArch parse_arch(const std::string& s, const std::string& key = "arch") {
  return detail::parse_enum(key, s, detail::kArchNames);
}
inline GameMode parse_mode(const std::string& s, const std::string& key = "mode") {
  return detail::parse_enum(key, s, detail::kModeNames);
}

// ---------------------------------------------------------------------------
// Strict object reader: typed getters, unknown-key rejection
// ---------------------------------------------------------------------------

namespace detail {

class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
    if (!j_.is_object()) throw ConfigError(prefix_ + ": expected an object");
  }

  std::string key(const std::string& k) const { return prefix_ + "." + k; }

  const Json* find(const std::string& k) {
    seen_.insert(k);
    auto it = j_.find(k);
    return it == j_.end() ? nullptr : &*it;
  }

  template <class T>
  void get(const std::string& k, T& out) {
    const Json* v = find(k);
    if (!v) return;
    if constexpr (std::is_same_v<T, bool>) {
      if (!v->is_boolean()) throw ConfigError(key(k) + ": expected a boolean");
      out = v->get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      const bool ok = v->is_number_unsigned() || (v->is_number_integer() && v->get<std::int64_t>() >= 0);
      if (!ok) throw ConfigError(key(k) + ": expected a non-negative integer");
      out = static_cast<T>(v->get<std::uint64_t>());
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v->is_number()) throw ConfigError(key(k) + ": expected a number");
      out = v->get<double>();
    } else {
      if (!v->is_string()) throw ConfigError(key(k) + ": expected a string");
      out = v->get<std::string>();
    }
  }

  template <class E, std::size_t N>
  void get_enum(const std::string& k, E& out, const EnumName<E> (&table)[N]) {
    const Json* v = find(k);
    if (!v) return;
    if (!v->is_string()) throw ConfigError(key(k) + ": expected a string");
    out = parse_enum(key(k), v->get<std::string>(), table);
  }

  void reject_unknown() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(key(it.key()) + ": unknown key");
    }
  }

 private:
  const Json& j_;
  std::string prefix_;
  std::set<std::string> seen_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Configs
// ---------------------------------------------------------------------------

inline Json to_json(const WorldConfig& c) {
  return Json{{"n_categories", c.n_categories},
              {"concepts_per_category", c.concepts_per_category},
              {"instances_per_concept", c.instances_per_concept},
              {"feature_dim", c.feature_dim},
              {"prototype_scale", c.prototype_scale},
              {"concept_offset_scale", c.concept_offset_scale},
              {"instance_noise_scale", c.instance_noise_scale},
              {"feature_mode", to_string(c.feature_mode)},
              {"seed", c.seed}};
}

/// Missing keys keep their defaults; unknown keys and bad values throw ConfigError.
inline WorldConfig world_config_from_json(const Json& j, const std::string& prefix = "world") {
  WorldConfig c;
  detail::ObjectReader r(j, prefix);
  r.get("n_categories", c.n_categories);
  r.get("concepts_per_category", c.concepts_per_category);
  r.get("instances_per_concept", c.instances_per_concept);
  r.get("feature_dim", c.feature_dim);
  r.get("prototype_scale", c.prototype_scale);
  r.get("concept_offset_scale", c.concept_offset_scale);
  r.get("instance_noise_scale", c.instance_noise_scale);
  r.get_enum("feature_mode", c.feature_mode, detail::kFeatureModeNames);
  r.get("seed", c.seed);
  r.reject_unknown();
  c.validate();
  return c;
}

inline Json to_json(const TrainConfig& c) {
  Json labels = Json::array();
  for (const auto& l : c.supervised_labels) labels.push_back(Json{{"concept", l.concept_id}, {"symbol", l.symbol}});
  return Json{{"arch", to_string(c.arch)},
              {"vocab_size", c.vocab_size},
              {"embed_dim", c.embed_dim},
              {"n_filters", c.n_filters},
              {"tau", c.tau},
              {"gibbs_exponent", to_string(c.gibbs_exponent)},
              {"batch_size", c.batch_size},
              {"n_iterations", c.n_iterations},
              {"lr", c.lr},
              {"baseline", to_string(c.baseline)},
              {"baseline_decay", c.baseline_decay},
              {"mode", to_string(c.mode)},
              {"grounding", c.grounding},
              {"supervised_labels", labels},
              {"seed", c.seed},
              {"log_interval", c.log_interval},
              {"eval_games", c.eval_games},
              {"stop_at_success", c.stop_at_success}};
}

inline TrainConfig train_config_from_json(const Json& j, const std::string& prefix = "train") {
  TrainConfig c;
  detail::ObjectReader r(j, prefix);
  r.get_enum("arch", c.arch, detail::kArchNames);
  r.get("vocab_size", c.vocab_size);
  r.get("embed_dim", c.embed_dim);
  r.get("n_filters", c.n_filters);
  r.get("tau", c.tau);
  r.get_enum("gibbs_exponent", c.gibbs_exponent, detail::kExponentNames);
  r.get("batch_size", c.batch_size);
  r.get("n_iterations", c.n_iterations);
  r.get("lr", c.lr);
  r.get_enum("baseline", c.baseline, detail::kBaselineNames);
  r.get("baseline_decay", c.baseline_decay);
  r.get_enum("mode", c.mode, detail::kModeNames);
  r.get("grounding", c.grounding);
  if (const Json* labels = r.find("supervised_labels")) {
    if (!labels->is_array()) throw ConfigError(r.key("supervised_labels") + ": expected an array");
    for (std::size_t i = 0; i < labels->size(); ++i) {
      detail::ObjectReader lr((*labels)[i], r.key("supervised_labels") + "[" + std::to_string(i) + "]");
      LabelEntry e;
      if (!(*labels)[i].contains("concept") || !(*labels)[i].contains("symbol")) {
        throw ConfigError(lr.key("concept") + ": label entries need concept and symbol");
      }
      lr.get("concept", e.concept_id);
      lr.get("symbol", e.symbol);
      lr.reject_unknown();
      c.supervised_labels.push_back(e);
    }
  }
  r.get("seed", c.seed);
  r.get("log_interval", c.log_interval);
  r.get("eval_games", c.eval_games);
  r.get("stop_at_success", c.stop_at_success);
  r.reject_unknown();
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

struct AnalysisConfig {
  std::size_t n_permutations = 10000;
  bool center = true;
  std::uint64_t seed = 1;

  void validate() const {
    if (n_permutations < 1) throw ConfigError("analysis.n_permutations: must be >= 1");
  }
  bool operator==(const AnalysisConfig&) const = default;
};

inline Json to_json(const AnalysisConfig& c) {
  return Json{{"n_permutations", c.n_permutations}, {"center", c.center}, {"seed", c.seed}};
}

struct ExperimentManifest {
  WorldConfig world;
  TrainConfig train;
  AnalysisConfig analysis;
  std::string output_dir;  // empty: runs/<run_id>
  std::string run_id;

  bool operator==(const ExperimentManifest&) const = default;
};

/// 64-bit FNV-1a; used for short content-derived run ids.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Run id: first 12 hex digits of the hash of the canonical world+train+analysis JSON.
inline std::string compute_run_id(const WorldConfig& w, const TrainConfig& t, const AnalysisConfig& a) {
  const Json canon{{"world", to_json(w)}, {"train", to_json(t)}, {"analysis", to_json(a)}};
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canon.dump())));
  return std::string(buf, 12);
}

inline Json to_json(const ExperimentManifest& m) {
  return Json{{"schema_version", kManifestSchema},
              {"run_id", m.run_id},
              {"world", to_json(m.world)},
              {"train", to_json(m.train)},
              {"analysis", to_json(m.analysis)},
              {"output", Json{{"dir", m.output_dir}}}};
}

/// Parses a manifest document. A top-level `seed` seeds world, train and
/// analysis unless they set their own.
inline ExperimentManifest manifest_from_json(const Json& j) {
  ExperimentManifest m;
  detail::ObjectReader r(j, "manifest");
  int schema = kManifestSchema;
  r.get("schema_version", schema);
  if (schema != kManifestSchema) {
    throw ConfigError("manifest.schema_version: unsupported version " + std::to_string(schema));
  }
  std::string ignored_run_id;
  r.get("run_id", ignored_run_id);  // echoed manifests carry it; recomputed below
  std::optional<std::uint64_t> seed;
  if (const Json* s = r.find("seed")) {
    if (!s->is_number_unsigned()) throw ConfigError("manifest.seed: expected a non-negative integer");
    seed = s->get<std::uint64_t>();
  }
  auto section = [&](const char* name) {
    Json obj = Json::object();
    if (const Json* v = r.find(name)) {
      if (!v->is_object()) throw ConfigError(std::string("manifest.") + name + ": expected an object");
      obj = *v;
    }
    if (seed && !obj.contains("seed")) obj["seed"] = *seed;
    return obj;
  };
  m.world = world_config_from_json(section("world"), "world");
  m.train = train_config_from_json(section("train"), "train");
  {
    const Json a = section("analysis");
    detail::ObjectReader ar(a, "analysis");
    ar.get("n_permutations", m.analysis.n_permutations);
    ar.get("center", m.analysis.center);
    ar.get("seed", m.analysis.seed);
    ar.reject_unknown();
    m.analysis.validate();
  }
  if (const Json* out = r.find("output")) {
    detail::ObjectReader orr(*out, "output");
    orr.get("dir", m.output_dir);
    orr.reject_unknown();
  }
  r.reject_unknown();
  if (m.train.grounding && m.train.supervised_labels.empty() == false) {
    const std::size_t n = m.world.n_categories * m.world.concepts_per_category;
    for (const auto& l : m.train.supervised_labels) {
      if (l.concept_id >= n) {
        throw ConfigError("train.supervised_labels: concept " + std::to_string(l.concept_id) + " not in world");
      }
    }
  }
  m.run_id = compute_run_id(m.world, m.train, m.analysis);
  if (m.output_dir.empty()) m.output_dir = "runs/" + m.run_id;
  return m;
}

inline ExperimentManifest parse_manifest(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("manifest: parse error: ") + e.what());
  }
  return manifest_from_json(j);
}

inline ExperimentManifest load_manifest(const std::filesystem::path& path) {
  return parse_manifest(read_file(path));
}

/// Applies a dotted-key override such as `train.lr=0.05` to a manifest
/// document. The value is read as JSON when it parses, else as a string.
inline void apply_override(Json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "': expected key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(raw);
  } catch (const Json::parse_error&) {
    value = raw;
  }
  Json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override '" + assignment + "': empty key segment");
    if (!node->is_object()) throw ConfigError("override '" + key + "': parent is not an object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = Json::object();
    start = dot + 1;
  }
}

// ---------------------------------------------------------------------------
// Parameters and checkpoints
// ---------------------------------------------------------------------------

template <class P>
Json tensors_to_json(const P& params) {
  Json arr = Json::array();
  for_each_tensor(params, [&](const std::string& name, const Shape& shape, std::span<const double> s) {
    for (double v : s) {
      if (!std::isfinite(v)) throw NumericError("tensor '" + name + "' holds a non-finite value");
    }
    arr.push_back(Json{{"name", name}, {"shape", shape}, {"data", std::vector<double>(s.begin(), s.end())}});
  });
  return arr;
}

/// Fills `params` (already shaped for the expected architecture) from a
/// tensor list. Names must match one to one; shapes must agree exactly.
template <class P>
void tensors_from_json(const Json& arr, P& params, const std::string& owner) {
  if (!arr.is_array()) throw SchemaError(owner + ": tensors must be an array");
  std::map<std::string, const Json*> by_name;
  for (const Json& t : arr) {
    if (!t.is_object() || !t.contains("name") || !t["name"].is_string()) {
      throw SchemaError(owner + ": tensor entry without a name");
    }
    by_name[t["name"].get<std::string>()] = &t;
  }
  std::size_t used = 0;
  for_each_tensor(params, [&](const std::string& name, const Shape& shape, std::span<double> dst) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw SchemaError(owner + ": missing tensor '" + name + "'");
    ++used;
    const Json& t = *it->second;
    if (!t.contains("shape") || !t["shape"].is_array() || !t.contains("data") || !t["data"].is_array()) {
      throw CorruptionError(owner + ": tensor '" + name + "' lacks shape or data");
    }
    Shape got;
    std::size_t product = 1;
    for (const Json& d : t["shape"]) {
      if (!d.is_number_unsigned()) throw CorruptionError(owner + ": tensor '" + name + "' has a bad shape");
      got.push_back(d.get<std::size_t>());
      product *= got.back();
    }
    if (t["data"].size() != product) {
      throw CorruptionError(owner + ": tensor '" + name + "' has " + std::to_string(t["data"].size()) +
                            " values but shape needs " + std::to_string(product));
    }
    if (got != shape) {
      auto fmt = [](const Shape& s) {
        std::string out = "[";
        for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
        return out + "]";
      };
      throw ShapeError(owner + ": tensor '" + name + "' has shape " + fmt(got) + ", expected " + fmt(shape));
    }
    for (std::size_t i = 0; i < product; ++i) {
      const Json& v = t["data"][i];
      if (!v.is_number()) throw CorruptionError(owner + ": tensor '" + name + "' holds a non-number");
      dst[i] = v.get<double>();
    }
  });
  if (used != by_name.size()) throw SchemaError(owner + ": unexpected extra tensors");
}

struct Checkpoint {
  int schema_version = kCheckpointSchema;
  TrainConfig train;
  WorldConfig world;
  std::size_t iteration = 0;
  Agents agents;
  BaselineState baseline;
  std::string rng_state;

  bool operator==(const Checkpoint& o) const {
    return schema_version == o.schema_version && train == o.train && world == o.world &&
           iteration == o.iteration && agents.sender == o.agents.sender && agents.receiver == o.agents.receiver &&
           baseline == o.baseline && rng_state == o.rng_state;
  }
};

inline Json to_json(const Checkpoint& c) {
  Json sender = Json{{"arch", to_string(arch_of(c.agents.sender))}};
  sender["tensors"] = std::visit([](const auto& s) { return tensors_to_json(s); }, c.agents.sender);
  return Json{{"schema_version", c.schema_version},
              {"train_config", to_json(c.train)},
              {"world_config", to_json(c.world)},
              {"iteration", c.iteration},
              {"sender", sender},
              {"receiver", Json{{"tensors", tensors_to_json(c.agents.receiver)}}},
              {"baseline", Json{{"value", c.baseline.value}, {"decay", c.baseline.decay}}},
              {"rng", Json{{"engine", "mt19937_64"}, {"state", c.rng_state}}}};
}

/// Expected-shape agents for a config; values are placeholders.
inline Agents shaped_agents(const TrainConfig& t, std::size_t feature_dim) {
  Rng rng(0);
  return init_agents(t.arch, t.dims(feature_dim), rng);
}

/// Copies `source` tensors into agents shaped for `(train, feature_dim)`;
/// a mismatch (say K=10 weights into a K=100 run) names the tensor.
inline Agents adopt_agents(const Agents& source, const TrainConfig& train, std::size_t feature_dim) {
  Agents target = shaped_agents(train, feature_dim);
  if (arch_of(source.sender) != train.arch) {
    throw ShapeError(std::string("sender: checkpoint architecture ") + to_string(arch_of(source.sender)) +
                     " does not match run architecture " + to_string(train.arch));
  }
  Json sender = std::visit([](const auto& s) { return tensors_to_json(s); }, source.sender);
  std::visit([&](auto& s) { tensors_from_json(sender, s, "sender"); }, target.sender);
  tensors_from_json(tensors_to_json(source.receiver), target.receiver, "receiver");
  return target;
}

inline Checkpoint checkpoint_from_json(const Json& j) {
  if (!j.is_object()) throw SchemaError("checkpoint: expected an object");
  if (!j.contains("schema_version") || !j["schema_version"].is_number_integer()) {
    throw SchemaError("checkpoint: missing schema_version");
  }
  Checkpoint c;
  c.schema_version = j["schema_version"].get<int>();
  if (c.schema_version != kCheckpointSchema) {
    throw SchemaError("checkpoint: unsupported schema_version " + std::to_string(c.schema_version));
  }
  for (const char* k : {"train_config", "world_config", "iteration", "sender", "receiver", "baseline", "rng"}) {
    if (!j.contains(k)) throw SchemaError(std::string("checkpoint: missing '") + k + "'");
  }
  try {
    c.train = train_config_from_json(j["train_config"], "train_config");
    c.world = world_config_from_json(j["world_config"], "world_config");
  } catch (const ConfigError& e) {
    throw SchemaError(std::string("checkpoint: ") + e.what());
  }
  if (!j["iteration"].is_number_unsigned()) throw SchemaError("checkpoint: bad iteration");
  c.iteration = j["iteration"].get<std::size_t>();
  const Json& s = j["sender"];
  if (!s.is_object() || !s.contains("arch") || !s["arch"].is_string() || !s.contains("tensors")) {
    throw SchemaError("checkpoint: malformed sender");
  }
  if (s["arch"].get<std::string>() != to_string(c.train.arch)) {
    throw SchemaError("checkpoint: sender arch disagrees with train_config");
  }
  c.agents = shaped_agents(c.train, c.world.feature_dim);
  std::visit([&](auto& p) { tensors_from_json(s["tensors"], p, "sender"); }, c.agents.sender);
  if (!j["receiver"].is_object() || !j["receiver"].contains("tensors")) {
    throw SchemaError("checkpoint: malformed receiver");
  }
  tensors_from_json(j["receiver"]["tensors"], c.agents.receiver, "receiver");
  const Json& b = j["baseline"];
  if (!b.is_object() || !b.contains("value") || !b["value"].is_number() || !b.contains("decay") ||
      !b["decay"].is_number()) {
    throw SchemaError("checkpoint: malformed baseline");
  }
  c.baseline.value = b["value"].get<double>();
  c.baseline.decay = b["decay"].get<double>();
  const Json& r = j["rng"];
  if (!r.is_object() || r.value("engine", "") != "mt19937_64" || !r.contains("state") || !r["state"].is_string()) {
    throw SchemaError("checkpoint: malformed rng state");
  }
  c.rng_state = r["state"].get<std::string>();
  return c;
}

inline std::string serialize_checkpoint(const Checkpoint& c) { return dump_json(to_json(c)); }

inline Checkpoint parse_checkpoint(std::string_view text) {
  return checkpoint_from_json(parse_json(text, "checkpoint"));
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  write_file_atomic(path, serialize_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

inline Checkpoint make_checkpoint(const TrainConfig& train, const WorldConfig& world, const TrainResult& r) {
  return Checkpoint{kCheckpointSchema, train, world, r.iterations_run, r.agents, r.baseline, r.rng_state};
}

// ---------------------------------------------------------------------------
// Run artifacts
// ---------------------------------------------------------------------------

inline Json to_json(const MetricsRecord& m) {
  return Json{{"iteration", m.iteration},
              {"mode", m.mode},
              {"train_reward_ma", m.train_reward_ma},
              {"eval_success", m.eval_success},
              {"used_symbols", m.used_symbols}};
}

inline std::string metrics_jsonl(std::span<const MetricsRecord> metrics) {
  std::string out;
  for (const auto& m : metrics) out += to_json(m).dump() + "\n";
  return out;
}

inline std::vector<MetricsRecord> parse_metrics_jsonl(std::string_view text) {
  std::vector<MetricsRecord> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const Json j = parse_json(line, "metrics line " + std::to_string(lineno));
    try {
      out.push_back(MetricsRecord{j.at("iteration").get<std::size_t>(), j.at("mode").get<std::string>(),
                                  j.at("train_reward_ma").get<double>(), j.at("eval_success").get<double>(),
                                  j.at("used_symbols").get<std::size_t>()});
    } catch (const Json::exception& e) {
      throw SchemaError("metrics line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline Json to_json(const World& w) {
  Json cats = Json::array();
  for (const auto& c : w.categories) cats.push_back(Json{{"id", c.category_id}, {"name", c.name}});
  Json concepts = Json::array();
  for (const auto& c : w.concepts) {
    concepts.push_back(
        Json{{"id", c.concept_id}, {"category", c.category_id}, {"name", c.name}, {"prototype", c.prototype}});
  }
  Json instances = Json::array();
  for (const auto& i : w.instances) {
    instances.push_back(Json{
        {"id", i.instance_id}, {"concept", i.concept_id}, {"render_seed", i.render_seed}, {"features", i.features}});
  }
  return Json{{"schema_version", kWorldSchema},
              {"config", to_json(w.config)},
              {"categories", cats},
              {"concepts", concepts},
              {"instances", instances}};
}

inline World world_from_json(const Json& j) {
  try {
    if (j.at("schema_version").get<int>() != kWorldSchema) throw SchemaError("world: unsupported schema_version");
    World w;
    w.config = world_config_from_json(j.at("config"), "world.config");
    for (const Json& c : j.at("categories")) {
      w.categories.push_back(Category{c.at("id").get<std::size_t>(), c.at("name").get<std::string>()});
    }
    for (const Json& c : j.at("concepts")) {
      w.concepts.push_back(Concept{c.at("id").get<std::size_t>(), c.at("category").get<std::size_t>(),
                                   c.at("name").get<std::string>(), c.at("prototype").get<Vector>()});
    }
    for (const Json& i : j.at("instances")) {
      w.instances.push_back(SceneInstance{i.at("id").get<std::size_t>(), i.at("concept").get<std::size_t>(),
                                          i.at("features").get<Vector>(), i.at("render_seed").get<std::uint64_t>()});
    }
    return w;
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("world: ") + e.what());
  }
}

inline Json to_json(const SceneDescription& d) {
  Json shapes = Json::array();
  for (const auto& s : d.shapes) {
    shapes.push_back(Json{{"kind", s.kind},
                          {"x", s.x},
                          {"y", s.y},
                          {"size", s.size},
                          {"rotation", s.rotation},
                          {"fill", s.fill}});
  }
  return Json{{"instance_id", d.instance_id},
              {"concept_id", d.concept_id},
              {"shape_kind", d.shape_kind},
              {"color_family", d.color_family},
              {"background", d.background},
              {"shapes", shapes}};
}

inline Json to_json(const EvalReport& r) {
  Json plays = Json::array();
  for (const auto& p : r.plays) {
    plays.push_back(Json{{"target", p.target_concept}, {"distractor", p.distractor_concept}, {"symbol", p.symbol},
                         {"hit", p.hit}});
  }
  return Json{{"n_games", r.n_games},
              {"comm_success", r.comm_success},
              {"used_symbols", r.used_symbols},
              {"vocab_size", r.vocab_size},
              {"usage",
               Json{{"rows", r.usage.rows_kind == SymbolUsageMatrix::Rows::per_pair ? "per_pair" : "per_concept"},
                    {"n_symbols", r.usage.n_symbols},
                    {"row_labels", r.usage.row_labels},
                    {"counts", r.usage.counts}}},
              {"per_concept_symbol_counts", r.per_concept_symbol_counts},
              {"concept_categories", r.concept_categories},
              {"plays", plays}};
}

inline EvalReport eval_report_from_json(const Json& j) {
  try {
    EvalReport r;
    r.n_games = j.at("n_games").get<std::size_t>();
    r.comm_success = j.at("comm_success").get<double>();
    r.used_symbols = j.at("used_symbols").get<std::size_t>();
    r.vocab_size = j.at("vocab_size").get<std::size_t>();
    const Json& u = j.at("usage");
    r.usage.rows_kind = u.at("rows").get<std::string>() == "per_pair" ? SymbolUsageMatrix::Rows::per_pair
                                                                      : SymbolUsageMatrix::Rows::per_concept;
    r.usage.n_symbols = u.at("n_symbols").get<std::size_t>();
    r.usage.row_labels = u.at("row_labels").get<std::vector<std::string>>();
    r.usage.counts = u.at("counts").get<std::vector<std::uint64_t>>();
    if (r.usage.counts.size() != r.usage.row_labels.size() * r.usage.n_symbols) {
      throw CorruptionError("eval report: usage counts do not match rows x symbols");
    }
    r.per_concept_symbol_counts = j.at("per_concept_symbol_counts").get<std::vector<std::vector<std::uint64_t>>>();
    r.concept_categories = j.at("concept_categories").get<std::vector<std::size_t>>();
    for (const Json& p : j.at("plays")) {
      r.plays.push_back(PlayLog{p.at("target").get<std::size_t>(), p.at("distractor").get<std::size_t>(),
                                p.at("symbol").get<std::size_t>(), p.at("hit").get<bool>()});
    }
    return r;
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("eval report: ") + e.what());
  }
}

inline Json to_json(const PurityResult& p) {
  return Json{{"purity", p.purity},
              {"chance_mean", p.chance_mean},
              {"obs_minus_chance", p.obs_minus_chance},
              {"p_value", p.p_value},
              {"n_permutations", p.n_permutations}};
}

}  // namespace refgame
