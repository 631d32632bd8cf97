#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "refgame/analysis.hpp"
#include "refgame/errors.hpp"
#include "refgame/game.hpp"
#include "refgame/persistence.hpp"
#include "refgame/play_server.hpp"
#include "refgame/trainer.hpp"
#include "refgame/worldgen.hpp"

namespace refgame {

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitRuntime = 3, kExitIo = 4 };

inline int exit_code_for(const Error& e) {
  const std::string kind = e.kind();
  if (kind == "config") return kExitConfig;
  if (kind == "io") return kExitIo;
  return kExitRuntime;
}

/// One-line JSON error record for stderr.
inline std::string error_line(const std::string& kind, const std::string& message) {
  return Json{{"error", kind}, {"message", message}}.dump();
}

// ---------------------------------------------------------------------------
// ASCII curve for `replay`
// ---------------------------------------------------------------------------

/// Column j shows the metrics record at index round(j*(n-1)/(width-1)); its
/// eval success s is drawn at row round(s/100*(height-1)) counted from the
/// bottom. Returns the plot followed by the iteration range.
inline std::string ascii_curve(std::span<const MetricsRecord> metrics, std::size_t width = 60,
                               std::size_t height = 11) {
  if (metrics.empty()) throw DomainError("replay: metrics log is empty");
  if (width < 1 || height < 2) throw DomainError("replay: plot too small");
  const std::size_t n = metrics.size();
  const std::size_t cols = std::min(width, n);
  std::vector<std::string> grid(height, std::string(cols, ' '));
  for (std::size_t j = 0; j < cols; ++j) {
    const std::size_t idx =
        cols == 1 ? n - 1
                  : static_cast<std::size_t>(std::llround(static_cast<double>(j) * static_cast<double>(n - 1) /
                                                          static_cast<double>(cols - 1)));
    const double s = std::clamp(metrics[idx].eval_success, 0.0, 100.0);
    const auto row = static_cast<std::size_t>(std::llround(s / 100.0 * static_cast<double>(height - 1)));
    grid[height - 1 - row][j] = '*';
  }
  std::string out;
  for (std::size_t r = 0; r < height; ++r) {
    const double level = 100.0 * static_cast<double>(height - 1 - r) / static_cast<double>(height - 1);
    out += fmt::format("{:>5.1f} |{}\n", level, grid[r]);
  }
  out += "      +" + std::string(cols, '-') + "\n";
  out += fmt::format("       iterations {}..{} ({} records)\n", metrics.front().iteration, metrics.back().iteration, n);
  return out;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

struct CliOverrides {
  std::string manifest;
  std::string out;
  std::vector<std::string> set;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> iterations;
  std::optional<std::string> arch;
  std::optional<std::size_t> vocab;
  std::optional<std::string> mode;
  bool grounding = false;
};

/// Manifest document with --set and flag overrides applied, then validated.
inline ExperimentManifest resolve_manifest(const CliOverrides& o) {
  Json doc = Json::object();
  if (!o.manifest.empty()) {
    const std::string text = read_file(o.manifest);
    try {
      doc = Json::parse(text);
    } catch (const Json::parse_error& e) {
      throw ConfigError(std::string("manifest: parse error: ") + e.what());
    }
    if (!doc.is_object()) throw ConfigError("manifest: expected an object");
  }
  for (const auto& s : o.set) apply_override(doc, s);
  if (o.seed) doc["train"]["seed"] = *o.seed;
  if (o.iterations) doc["train"]["n_iterations"] = *o.iterations;
  if (o.arch) doc["train"]["arch"] = *o.arch;
  if (o.vocab) doc["train"]["vocab_size"] = *o.vocab;
  if (o.mode) doc["train"]["mode"] = *o.mode;
  if (o.grounding) doc["train"]["grounding"] = true;
  ExperimentManifest m = manifest_from_json(doc);
  if (!o.out.empty()) m.output_dir = o.out;
  return m;
}

inline std::filesystem::path run_dir(const ExperimentManifest& m) { return m.output_dir; }

inline void cmd_gen_world(const CliOverrides& o, std::ostream& out) {
  const ExperimentManifest m = resolve_manifest(o);
  const World w = generate_world(m.world);
  const auto path = run_dir(m) / "world.json";
  write_file_atomic(path, dump_json(to_json(w)));
  out << fmt::format("world: {} concepts, {} instances -> {}\n", w.n_concepts(), w.instances.size(), path.string());
}

inline void cmd_train(const CliOverrides& o, std::ostream& out) {
  const ExperimentManifest m = resolve_manifest(o);
  const World w = generate_world(m.world);
  const TrainResult r = train(m.train, w);
  const auto dir = run_dir(m);
  write_file_atomic(dir / "manifest.json", dump_json(to_json(m), 2));
  write_file_atomic(dir / "metrics.jsonl", metrics_jsonl(r.metrics));
  save_checkpoint(dir / "checkpoint.json", make_checkpoint(m.train, m.world, r));
  const MetricsRecord& last = r.metrics.back();
  out << fmt::format("run {}: {} iterations, eval_success {}, used_symbols {} -> {}\n", m.run_id, r.iterations_run,
                     last.eval_success, last.used_symbols, dir.string());
}

struct EvalArgs {
  std::string checkpoint;
  std::optional<std::size_t> games;
  bool greedy = false;
  std::string rows = "pair";
};

/// Replays the trainer's held-out evaluation for a checkpoint (same test set
/// and eval stream), so the result matches the final metrics record.
inline EvalReport evaluate_checkpoint(const Checkpoint& ck, std::size_t games, const EvalOptions& opts) {
  const World w = generate_world(ck.world);
  Rng test_rng = make_rng(ck.train.seed, kTestSetStream);
  const auto test_set = make_test_set(w, ck.train.mode, games, test_rng);
  Rng eval_rng = make_rng(ck.train.seed, kEvalStream);
  return evaluate(ck.agents, w, test_set, ck.train.gibbs(), eval_rng, opts);
}

inline void cmd_eval(const CliOverrides& o, const EvalArgs& a, std::ostream& out) {
  const ExperimentManifest m = resolve_manifest(o);
  const auto dir = run_dir(m);
  const std::filesystem::path ck_path = a.checkpoint.empty() ? dir / "checkpoint.json" : std::filesystem::path(a.checkpoint);
  const Checkpoint ck = load_checkpoint(ck_path);
  EvalOptions opts;
  opts.selection = a.greedy ? ActionSelection::greedy : ActionSelection::sample;
  if (a.rows != "pair" && a.rows != "concept") throw ConfigError("eval.rows: expected pair|concept");
  opts.usage_rows = a.rows == "pair" ? SymbolUsageMatrix::Rows::per_pair : SymbolUsageMatrix::Rows::per_concept;
  const EvalReport rep = evaluate_checkpoint(ck, a.games.value_or(ck.train.eval_games), opts);
  write_file_atomic(dir / "eval.json", dump_json(to_json(rep)));
  out << fmt::format("comm_success {} used_symbols {} over {} games -> {}\n", rep.comm_success, rep.used_symbols,
                     rep.n_games, (dir / "eval.json").string());
}

struct AnalyzeArgs {
  std::string report;
  std::string checkpoint;
};

/// Purity + permutation chance + spectrum (+ grounding rate and embeddings
/// when a checkpoint is available) in one pass.
inline Json analyze_report(const EvalReport& rep, const AnalysisConfig& cfg, const Checkpoint* ck,
                           const World* world) {
  const SymbolAssignment assign = majority_symbol_map(rep);
  Rng rng = make_rng(cfg.seed, 0xa7a1);
  Json out{{"comm_success", rep.comm_success}, {"used_symbols", rep.used_symbols}, {"n_games", rep.n_games}};
  if (assign.symbol_of.size() >= 2) {
    out["purity"] = to_json(permutation_chance(assign, rep.concept_categories, cfg.n_permutations, rng));
  } else {
    out["purity"] = nullptr;
  }
  Json amap = Json::object();
  for (const auto& [c, s] : assign.symbol_of) amap[std::to_string(c)] = s;
  out["assignment"] = Json{{"symbol_of", amap}, {"tied", assign.tied}, {"omitted", assign.omitted}};
  if (ck && world && ck->train.grounding) {
    const auto labels = effective_labels(ck->train, *world);
    const MatchRate mr = grounding_match_rate(rep.plays, labels, ck->train.vocab_size);
    out["grounding"] = Json{{"rate", mr.rate}, {"chance", mr.chance}, {"n_rounds", mr.n_rounds},
                            {"n_matches", mr.n_matches}};
  }
  return out;
}

inline void cmd_analyze(const CliOverrides& o, const AnalyzeArgs& a, std::ostream& out) {
  const ExperimentManifest m = resolve_manifest(o);
  const auto dir = run_dir(m);
  const std::filesystem::path rep_path = a.report.empty() ? dir / "eval.json" : std::filesystem::path(a.report);
  const EvalReport rep = eval_report_from_json(parse_json(read_file(rep_path), "eval report"));
  std::optional<Checkpoint> ck;
  std::optional<World> world;
  std::filesystem::path ck_path = a.checkpoint;
  if (ck_path.empty() && std::filesystem::exists(dir / "checkpoint.json")) ck_path = dir / "checkpoint.json";
  if (!ck_path.empty()) {
    ck = load_checkpoint(ck_path);
    world = generate_world(ck->world);
  }
  Json result = analyze_report(rep, m.analysis, ck ? &*ck : nullptr, world ? &*world : nullptr);
  const SpectrumOptions sopts{m.analysis.center};
  bool has_spectrum = false;
  try {
    write_file_atomic(dir / "spectrum.csv", spectrum_csv(usage_spectrum(rep.usage, sopts)));
    has_spectrum = true;
  } catch (const DomainError& e) {
    result["spectrum_error"] = e.what();  // e.g. a single-symbol run centers to zero
  }
  write_file_atomic(dir / "usage.csv", usage_csv(rep.usage));
  if (ck) {
    write_file_atomic(dir / "embeddings.csv",
                      export_embeddings(*world, ck->agents.sender, majority_symbol_map(rep)));
  }
  write_file_atomic(dir / "analysis.json", dump_json(result, 2));
  if (result["purity"].is_null()) {
    out << "purity n/a (fewer than two assigned concepts)\n";
  } else {
    out << fmt::format("purity {} chance {} p {}\n", result["purity"]["purity"].get<double>(),
                       result["purity"]["chance_mean"].get<double>(), result["purity"]["p_value"].get<double>());
  }
  if (result.contains("grounding")) {
    out << fmt::format("grounding match {}% (chance {}%)\n", result["grounding"]["rate"].get<double>(),
                       result["grounding"]["chance"].get<double>());
  }
  out << "wrote analysis.json, usage.csv" << (has_spectrum ? ", spectrum.csv" : "")
      << (ck ? ", embeddings.csv" : "") << " under " << dir.string() << "\n";
}

inline void cmd_replay(const CliOverrides& o, const std::string& metrics_path, std::size_t width, std::ostream& out) {
  std::filesystem::path p = metrics_path;
  if (p.empty()) p = run_dir(resolve_manifest(o)) / "metrics.jsonl";
  const auto metrics = parse_metrics_jsonl(read_file(p));
  out << ascii_curve(metrics, width);
}

struct ServeArgs {
  std::string checkpoints = ".";
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string snapshot;
  std::uint64_t seed = 1;
};

inline void cmd_serve(const ServeArgs& a, std::ostream& out) {
  PlayService service(PlayServerOptions{a.checkpoints, a.snapshot, a.seed});
  httplib::Server server;
  mount_play_api(server, service);
  out << fmt::format("serving /v1 on http://{}:{} (checkpoints in {})\n", a.host, a.port, a.checkpoints);
  out.flush();
  if (!server.listen(a.host, a.port)) throw IoError(fmt::format("cannot listen on {}:{}", a.host, a.port));
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"refgame: referential-game laboratory"};
  app.require_subcommand(1);
  CliOverrides o;
  auto add_common = [&o](CLI::App* sub) {
    sub->add_option("--manifest", o.manifest, "experiment manifest (JSON)");
    sub->add_option("--out", o.out, "run directory (default: manifest output.dir or runs/<run_id>)");
    sub->add_option("--set", o.set, "override a manifest key, e.g. train.lr=0.05")->take_all();
    sub->add_option("--seed", o.seed, "training seed (train.seed)");
    sub->add_option("--iterations", o.iterations, "train.n_iterations");
    sub->add_option("--arch", o.arch, "agnostic|informed");
    sub->add_option("--vocab", o.vocab, "vocabulary size K");
    sub->add_option("--mode", o.mode, "instance|class");
    sub->add_flag("--grounding", o.grounding, "interleave supervised labeling");
  };
  auto* gen = app.add_subcommand("gen-world", "generate the world and write world.json");
  add_common(gen);
  auto* tr = app.add_subcommand("train", "train agents; writes metrics.jsonl and checkpoint.json");
  add_common(tr);
  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint; writes eval.json");
  add_common(ev);
  ev->add_option("--checkpoint", ea.checkpoint, "checkpoint path (default <run>/checkpoint.json)");
  ev->add_option("--games", ea.games, "number of evaluation games (default train.eval_games)");
  ev->add_flag("--greedy", ea.greedy, "argmax actions instead of sampling");
  ev->add_option("--rows", ea.rows, "usage matrix rows: pair|concept");
  AnalyzeArgs aa;
  auto* an = app.add_subcommand("analyze", "purity, permutation chance, spectrum, grounding rate");
  add_common(an);
  an->add_option("--report", aa.report, "eval report (default <run>/eval.json)");
  an->add_option("--checkpoint", aa.checkpoint, "checkpoint for embeddings and grounding labels");
  ServeArgs sa;
  auto* sv = app.add_subcommand("serve", "HTTP play server for human-receiver sessions");
  sv->add_option("--checkpoints", sa.checkpoints, "directory holding <id>.json or <id>/checkpoint.json");
  sv->add_option("--host", sa.host);
  sv->add_option("--port", sa.port);
  sv->add_option("--snapshot", sa.snapshot, "JSON file rewritten after every session change");
  sv->add_option("--seed", sa.seed, "seed for session ids and round streams");
  std::string metrics_path;
  std::size_t width = 60;
  auto* rp = app.add_subcommand("replay", "ASCII success-vs-iteration curve from metrics.jsonl");
  add_common(rp);
  rp->add_option("--metrics", metrics_path, "metrics log (default <run>/metrics.jsonl)");
  rp->add_option("--width", width, "plot width in columns");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << error_line("usage", e.what()) << "\n";
    return kExitConfig;
  }

  try {
    if (gen->parsed()) cmd_gen_world(o, out);
    if (tr->parsed()) cmd_train(o, out);
    if (ev->parsed()) cmd_eval(o, ea, out);
    if (an->parsed()) cmd_analyze(o, aa, out);
    if (sv->parsed()) cmd_serve(sa, out);
    if (rp->parsed()) cmd_replay(o, metrics_path, width, out);
  } catch (const Error& e) {
    err << error_line(e.kind(), e.what()) << "\n";
    return exit_code_for(e);
  } catch (const std::filesystem::filesystem_error& e) {
    err << error_line("io", e.what()) << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << error_line("runtime", e.what()) << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace refgame
