#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <httplib.h>

#include "refgame/agents.hpp"
#include "refgame/analysis.hpp"
#include "refgame/game.hpp"
#include "refgame/persistence.hpp"
#include "refgame/scene.hpp"
#include "refgame/trainer.hpp"
#include "refgame/worldgen.hpp"

namespace refgame {

/// A loaded checkpoint plus everything derived from it. Shared read-only
/// between sessions.
struct PlayModel {
  std::string id;
  Checkpoint checkpoint;
  World world;
  std::map<std::size_t, std::string> label_text;  // symbol -> concept name, grounded checkpoints only
};

inline std::shared_ptr<const PlayModel> make_play_model(std::string id, Checkpoint ck) {
  auto m = std::make_shared<PlayModel>();
  m->id = std::move(id);
  m->world = generate_world(ck.world);
  if (ck.train.grounding) {
    for (const LabelEntry& l : effective_labels(ck.train, m->world)) {
      m->label_text[l.symbol] = m->world.concepts.at(l.concept_id).name;
    }
  }
  m->checkpoint = std::move(ck);
  return m;
}

/// Resolves `<dir>/<id>.json` or `<dir>/<id>/checkpoint.json`. Ids are plain
/// names; anything that could escape the directory is treated as unknown.
inline std::optional<std::filesystem::path> resolve_checkpoint(const std::filesystem::path& dir,
                                                               const std::string& id) {
  if (id.empty() || id.find("..") != std::string::npos || id.find('/') != std::string::npos ||
      id.find('\\') != std::string::npos) {
    return std::nullopt;
  }
  for (const auto& p : {dir / (id + ".json"), dir / id / "checkpoint.json"}) {
    std::error_code ec;
    if (std::filesystem::is_regular_file(p, ec)) return p;
  }
  return std::nullopt;
}

inline std::string format_uuid(Rng& rng) {
  const std::uint64_t hi = (rng() & 0xffffffffffff0fffULL) | 0x0000000000004000ULL;
  const std::uint64_t lo = (rng() & 0x3fffffffffffffffULL) | 0x8000000000000000ULL;
  char buf[37];
  std::snprintf(buf, sizeof buf, "%08llx-%04llx-%04llx-%04llx-%012llx",
                static_cast<unsigned long long>(hi >> 32), static_cast<unsigned long long>((hi >> 16) & 0xffff),
                static_cast<unsigned long long>(hi & 0xffff), static_cast<unsigned long long>(lo >> 48),
                static_cast<unsigned long long>(lo & 0xffffffffffffULL));
  return buf;
}

struct PlayedRound {
  std::uint64_t round_id = 0;
  std::size_t symbol = 0;
  Side picked = Side::left;
  Side target = Side::left;  // in the human's frame
  bool correct = false;
};

struct SessionStats {
  std::size_t rounds = 0;
  std::size_t wins = 0;
  double success_rate = 0.0;  // percent
  double p_value = 1.0;       // exact two-sided binomial against 50%
};

inline SessionStats fold_stats(std::span<const PlayedRound> log) {
  SessionStats s;
  for (const auto& r : log) {
    ++s.rounds;
    s.wins += r.correct ? 1 : 0;
  }
  s.success_rate = s.rounds ? 100.0 * static_cast<double>(s.wins) / static_cast<double>(s.rounds) : 0.0;
  s.p_value = binomial_two_sided_p(s.wins, s.rounds);
  return s;
}

inline Json to_json(const SessionStats& s) {
  return Json{{"rounds", s.rounds}, {"wins", s.wins}, {"success_rate", s.success_rate}, {"p_value", s.p_value}};
}

inline const char* side_name(Side s) { return s == Side::left ? "left" : "right"; }

class PlaySession {
 public:
  struct Pending {
    std::uint64_t round_id = 0;
    GamePair pair;
    bool swapped = false;  // human sees (right, left)
    SenderAction action;
  };

  PlaySession(std::string id, std::shared_ptr<const PlayModel> model, GameMode mode, bool online_update,
              ActionSelection selection, std::uint64_t seed)
      : id_(std::move(id)),
        model_(std::move(model)),
        mode_(mode),
        online_update_(online_update),
        selection_(selection),
        seed_(seed),
        rng_(seed),
        sender_(model_->checkpoint.agents.sender),
        baseline_(model_->checkpoint.baseline) {}

  const std::string& id() const { return id_; }
  std::mutex& mutex() const { return mu_; }
  const SenderParams& sender() const { return sender_; }
  const PlayModel& model() const { return *model_; }
  std::span<const PlayedRound> log() const { return log_; }
  const std::optional<Pending>& pending() const { return pending_; }

  /// Returns the pending round, creating one if none is open.
  Json round_view() {
    if (!pending_) {
      Pending p;
      p.round_id = ++round_counter_;
      p.pair = sample_game(model_->world, mode_, rng_);
      const auto& world = model_->world;
      p.action = sender_forward(sender_, world.instance(p.pair.sender_target()).features,
                                world.instance(p.pair.sender_distractor()).features, model_->checkpoint.train.gibbs(),
                                rng_);
      if (selection_ == ActionSelection::greedy) p.action.symbol = argmax(p.action.scores);
      p.swapped = coin_flip(rng_);
      pending_ = std::move(p);
    }
    const Pending& p = *pending_;
    const std::size_t first = p.swapped ? p.pair.right : p.pair.left;
    const std::size_t second = p.swapped ? p.pair.left : p.pair.right;
    Json label = nullptr;
    if (auto it = model_->label_text.find(p.action.symbol); it != model_->label_text.end()) label = it->second;
    return Json{{"round_id", p.round_id},
                {"left", to_json(render_scene(first, model_->world))},
                {"right", to_json(render_scene(second, model_->world))},
                {"symbol", p.action.symbol},
                {"label", label}};
  }

  /// Resolves the pending round. Returns nullopt when `round_id` is stale or
  /// nothing is pending.
  std::optional<PlayedRound> choose(std::uint64_t round_id, Side picked) {
    if (!pending_ || pending_->round_id != round_id) return std::nullopt;
    const Pending& p = *pending_;
    const Side target = p.swapped ? other(p.pair.target_side) : p.pair.target_side;
    PlayedRound r{round_id, p.action.symbol, picked, target, picked == target};
    if (online_update_) {
      const double reward = r.correct ? 1.0 : 0.0;
      const TrainConfig& t = model_->checkpoint.train;
      const double advantage = t.baseline == BaselineKind::none ? reward : reward - baseline_.value;
      SenderParams g = zeros_like(sender_);
      accumulate_sender_logprob_grad(sender_, p.action, advantage, g);
      sgd_apply(sender_, g, -t.lr);
      if (t.baseline == BaselineKind::running_mean) baseline_.update(reward);
    }
    log_.push_back(r);
    pending_.reset();
    return r;
  }

  SessionStats stats() const { return fold_stats(log_); }

  Json summary() const {
    Json hist = Json::array();
    for (const auto& r : log_) hist.push_back(history_entry(r));
    return Json{{"session_id", id_},
                {"checkpoint", model_->id},
                {"mode", to_string(mode_)},
                {"online_update", online_update_},
                {"seed", seed_},
                {"stats", to_json(stats())},
                {"history", hist}};
  }

  static Json history_entry(const PlayedRound& r) {
    return Json{{"round_id", r.round_id},
                {"symbol", r.symbol},
                {"picked", side_name(r.picked)},
                {"target", side_name(r.target)},
                {"correct", r.correct}};
  }

 private:
  std::string id_;
  std::shared_ptr<const PlayModel> model_;
  GameMode mode_;
  bool online_update_;
  ActionSelection selection_;
  std::uint64_t seed_;
  Rng rng_;
  SenderParams sender_;  // private copy; only touched when online_update
  BaselineState baseline_;
  std::uint64_t round_counter_ = 0;
  std::optional<Pending> pending_;
  std::vector<PlayedRound> log_;
  mutable std::mutex mu_;
};

struct HttpReply {
  int status = 200;
  Json body;
};

struct PlayServerOptions {
  std::filesystem::path checkpoint_dir = ".";
  std::filesystem::path snapshot_path;  // empty: no snapshots
  std::uint64_t seed = 1;
};

/// Session registry and request handling, independent of the transport.
class PlayService {
 public:
  explicit PlayService(PlayServerOptions opts) : opts_(std::move(opts)) {}

  HttpReply create_session(const std::string& body) {
    Json req;
    try {
      req = Json::parse(body);
    } catch (const Json::parse_error&) {
      return error(400, "body is not valid JSON");
    }
    if (!req.is_object()) return error(400, "body must be an object");
    for (auto it = req.begin(); it != req.end(); ++it) {
      static const std::set<std::string> known = {"checkpoint", "mode", "online_update", "seed", "selection"};
      if (!known.count(it.key())) return error(400, "unknown field '" + it.key() + "'");
    }
    if (!req.contains("checkpoint") || !req["checkpoint"].is_string()) {
      return error(400, "checkpoint must be a string");
    }
    if (req.contains("online_update") && !req["online_update"].is_boolean()) {
      return error(400, "online_update must be a boolean");
    }
    if (req.contains("seed") && !req["seed"].is_number_unsigned()) return error(400, "seed must be an integer");
    if (req.contains("selection") &&
        (!req["selection"].is_string() || (req["selection"] != "sample" && req["selection"] != "greedy"))) {
      return error(400, "selection must be sample or greedy");
    }
    std::optional<GameMode> mode;
    if (req.contains("mode")) {
      if (!req["mode"].is_string()) return error(400, "mode must be a string");
      try {
        mode = parse_mode(req["mode"].get<std::string>());
      } catch (const ConfigError& e) {
        return error(400, e.what());
      }
    }
    std::shared_ptr<const PlayModel> model;
    try {
      model = load_model(req["checkpoint"].get<std::string>());
    } catch (const Error& e) {
      return error(422, std::string("checkpoint unusable: ") + e.what());
    }
    if (!model) return error(404, "unknown checkpoint '" + req["checkpoint"].get<std::string>() + "'");

    std::unique_lock lock(registry_mu_);
    const std::uint64_t n = ++session_counter_;
    Rng id_rng = make_rng(opts_.seed, 0x5e55'0000ULL + n);
    const std::string id = format_uuid(id_rng);
    const std::uint64_t seed =
        req.contains("seed") ? req["seed"].get<std::uint64_t>() : derive_seed(opts_.seed, 0x9a3e'0000ULL + n);
    auto session = std::make_shared<PlaySession>(
        id, model, mode.value_or(model->checkpoint.train.mode), req.value("online_update", false),
        req.value("selection", std::string("sample")) == "greedy" ? ActionSelection::greedy : ActionSelection::sample,
        seed);
    sessions_[id] = session;
    lock.unlock();
    snapshot();
    return {201, Json{{"session_id", id}}};
  }

  HttpReply get_round(const std::string& id) {
    auto s = find(id);
    if (!s) return error(404, "unknown session");
    std::lock_guard lock(s->mutex());
    return {200, s->round_view()};
  }

  HttpReply post_choice(const std::string& id, const std::string& body) {
    auto s = find(id);
    if (!s) return error(404, "unknown session");
    Json req;
    try {
      req = Json::parse(body);
    } catch (const Json::parse_error&) {
      return error(400, "body is not valid JSON");
    }
    if (!req.is_object() || !req.contains("round_id") || !req["round_id"].is_number_unsigned()) {
      return error(400, "round_id must be an integer");
    }
    if (!req.contains("side") || !req["side"].is_string() || (req["side"] != "left" && req["side"] != "right")) {
      return error(400, "side must be \"left\" or \"right\"");
    }
    const Side side = req["side"] == "left" ? Side::left : Side::right;
    std::unique_lock lock(s->mutex());
    if (!s->pending()) return error(409, "no pending round");
    const auto r = s->choose(req["round_id"].get<std::uint64_t>(), side);
    if (!r) return error(409, "stale round_id");
    Json out{{"correct", r->correct}, {"target", side_name(r->target)}, {"stats", to_json(s->stats())}};
    lock.unlock();
    snapshot();
    return {200, out};
  }

  HttpReply get_stats(const std::string& id) {
    auto s = find(id);
    if (!s) return error(404, "unknown session");
    std::lock_guard lock(s->mutex());
    return {200, to_json(s->stats())};
  }

  HttpReply get_history(const std::string& id) {
    auto s = find(id);
    if (!s) return error(404, "unknown session");
    std::lock_guard lock(s->mutex());
    Json hist = Json::array();
    for (const auto& r : s->log()) hist.push_back(PlaySession::history_entry(r));
    return {200, Json{{"history", hist}}};
  }

  std::shared_ptr<PlaySession> find(const std::string& id) const {
    std::shared_lock lock(registry_mu_);
    auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
  }

  /// Writes all sessions to the snapshot file, if one is configured.
  void snapshot() const {
    if (opts_.snapshot_path.empty()) return;
    std::lock_guard write_lock(snapshot_mu_);
    Json all = Json::array();
    {
      std::shared_lock lock(registry_mu_);
      for (const auto& [id, s] : sessions_) {
        std::lock_guard sl(s->mutex());
        all.push_back(s->summary());
      }
    }
    write_file_atomic(opts_.snapshot_path, dump_json(Json{{"sessions", all}}, 2));
  }

 private:
  static HttpReply error(int status, const std::string& msg) { return {status, Json{{"error", msg}}}; }

  std::shared_ptr<const PlayModel> load_model(const std::string& id) {
    std::lock_guard lock(models_mu_);
    if (auto it = models_.find(id); it != models_.end()) return it->second;
    const auto path = resolve_checkpoint(opts_.checkpoint_dir, id);
    if (!path) return nullptr;
    auto model = make_play_model(id, load_checkpoint(*path));
    models_[id] = model;
    return model;
  }

  PlayServerOptions opts_;
  mutable std::shared_mutex registry_mu_;
  std::map<std::string, std::shared_ptr<PlaySession>> sessions_;
  std::uint64_t session_counter_ = 0;
  std::mutex models_mu_;
  std::map<std::string, std::shared_ptr<const PlayModel>> models_;
  mutable std::mutex snapshot_mu_;
};

/// Mounts the /v1 API of `service` on an httplib server.
inline void mount_play_api(httplib::Server& server, PlayService& service) {
  auto send = [](httplib::Response& res, const HttpReply& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Headers", "Content-Type"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  server.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  server.Post("/v1/sessions", [&service, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service.create_session(req.body));
  });
  server.Get(R"(/v1/sessions/([^/]+)/round)", [&service, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service.get_round(req.matches[1]));
  });
  server.Post(R"(/v1/sessions/([^/]+)/choice)",
              [&service, send](const httplib::Request& req, httplib::Response& res) {
                send(res, service.post_choice(req.matches[1], req.body));
              });
  server.Get(R"(/v1/sessions/([^/]+)/stats)", [&service, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service.get_stats(req.matches[1]));
  });
  server.Get(R"(/v1/sessions/([^/]+)/history)",
             [&service, send](const httplib::Request& req, httplib::Response& res) {
               send(res, service.get_history(req.matches[1]));
             });
  server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string msg = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      msg = e.what();
    } catch (...) {
    }
    res.status = 500;
    res.set_content(Json{{"error", msg}}.dump(), "application/json");
  });
}

}  // namespace refgame
