// p2t: corpus generation, training, evaluation, simulation, ablation and a
// console where you play the customer.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "p2t/pipeline.hpp"

namespace fs = std::filesystem;
using namespace p2t;

namespace {

constexpr int kUsageExit = 64;

struct Common {
  std::string config;
  std::uint64_t seed = 1;
  std::string out;
};

struct Overrides {
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> n_bins;
  std::optional<std::size_t> episodes;
  std::optional<std::size_t> dialogues;
  std::optional<double> theta;
  std::optional<double> lambda;
};

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("p2t");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  const char* level = std::getenv("P2T_LOG");
  spdlog::set_level(level != nullptr ? spdlog::level::from_str(level) : spdlog::level::info);
}

/// Loads the config, applies flag overrides to the raw JSON, and re-parses so
/// the echoed config is exactly what ran.
AppConfig resolve_config(const Common& c, const Overrides& o) {
  if (c.config.empty()) throw ConfigError("--config is required");
  json raw = read_json_file(c.config);
  if (!raw.is_object()) throw ConfigError("config must be a JSON object");
  if (o.epochs) raw["train"]["epochs"] = *o.epochs;
  if (o.lambda) raw["model"]["lambda"] = *o.lambda;
  if (o.theta) raw["inference"]["theta"] = *o.theta;
  if (o.n_bins) raw["eval"]["n_bins"] = *o.n_bins;
  if (o.episodes) raw["eval"]["episodes"] = *o.episodes;
  if (o.dialogues) raw["environment"]["dialogues"] = *o.dialogues;
  return app_config_from_json(raw);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

fs::path prepare_run_dir(const Common& c, const AppConfig& cfg, const std::string& command, const json& inputs) {
  if (c.out.empty()) throw ConfigError("--out is required");
  const fs::path dir(c.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create run directory " + dir.string() + ": " + ec.message());
  write_json(dir / "config.json", cfg.raw);
  write_json(dir / "run.json", {{"command", command}, {"seed", c.seed}, {"inputs", inputs}});
  return dir;
}

int gen_corpus(const Common& c, const Overrides& o) {
  const AppConfig cfg = resolve_config(c, o);
  const fs::path dir = prepare_run_dir(c, cfg, "gen-corpus", json::object());
  const Corpus corpus = generate_corpus(cfg.environment, c.seed);
  save_corpus((dir / "corpus.jsonl").string(), corpus);
  std::size_t pos = 0;
  for (const auto& d : corpus.dialogues) pos += static_cast<std::size_t>(d.label);
  spdlog::info("wrote {} dialogues ({} repaid) to {}", corpus.dialogues.size(), pos, (dir / "corpus.jsonl").string());
  return 0;
}

int train_cmd(const Common& c, const Overrides& o, const std::string& corpus_path, const std::string& variant) {
  const AppConfig cfg = resolve_config(c, o);
  const fs::path dir = prepare_run_dir(c, cfg, "train", {{"corpus", corpus_path}, {"variant", variant}});
  Corpus train_set;
  if (!corpus_path.empty()) {
    train_set = load_corpus(corpus_path);
  } else {
    Datasets data = make_datasets(cfg, c.seed);
    save_corpus((dir / "train.jsonl").string(), data.train);
    save_corpus((dir / "test.jsonl").string(), data.test);
    train_set = std::move(data.train);
  }
  const ModelConfig mc = ablation_model(cfg.model.with_corpus(train_set.meta), variant);
  std::ofstream log(dir / "train_log.jsonl", std::ios::binary);
  try {
    const TrainResult r = train(train_set, mc, with_seed(cfg.train, c.seed), [&](const EpochLog& l) {
      log << json{{"epoch", l.epoch},
                  {"loss", l.loss},
                  {"repayment_per_turn", l.repayment_per_turn},
                  {"usage_per_turn", l.usage_per_turn}}
                 .dump()
          << '\n';
      spdlog::info("epoch {}: loss {:.6f}, repayment/turn {:.6f}, usage/turn {:.6f}", l.epoch, l.loss,
                   l.repayment_per_turn, l.usage_per_turn);
    });
    save_params((dir / "checkpoint.json").string(), r.model);
  } catch (const TrainingDiverged& e) {
    if (e.last_good()) save_params((dir / "checkpoint.last_good.json").string(), *e.last_good());
    throw;
  }
  spdlog::info("checkpoint written to {}", (dir / "checkpoint.json").string());
  return 0;
}

int evaluate_cmd(const Common& c, const Overrides& o, const std::string& model_path, const std::string& corpus_path) {
  const AppConfig cfg = resolve_config(c, o);
  if (model_path.empty() || corpus_path.empty()) throw ConfigError("evaluate needs --model and --corpus");
  const fs::path dir = prepare_run_dir(c, cfg, "evaluate", {{"model", model_path}, {"corpus", corpus_path}});
  const Model model = load_model(model_path);
  const Corpus test = load_corpus(corpus_path);
  check_corpus_matches(test, model.config());
  const MetricsReport rep = evaluate_model("p2t", model, test, cfg.eval.n_bins);
  write_json(dir / "metrics.json", to_json(rep));
  const std::string text = format_table({rep}) + "\n" + format_bins(rep);
  write_text(dir / "metrics.txt", text);
  std::cout << text;
  return 0;
}

int simulate_cmd(const Common& c, const Overrides& o, const std::string& model_path) {
  const AppConfig cfg = resolve_config(c, o);
  if (model_path.empty()) throw ConfigError("simulate needs --model");
  const fs::path dir = prepare_run_dir(c, cfg, "simulate", {{"model", model_path}});
  const Model model = load_model(model_path);
  std::ofstream episodes(dir / "episodes.jsonl", std::ios::binary);
  const SimulationReport rep = run_simulation(cfg, model, c.seed, cfg.eval.episodes, &episodes);
  write_json(dir / "simulation.json", to_json(rep));
  const std::string text = format_simulation(rep);
  write_text(dir / "simulation.txt", text);
  std::cout << text;
  return 0;
}

int ablate_cmd(const Common& c, const Overrides& o, std::size_t seeds) {
  const AppConfig cfg = resolve_config(c, o);
  const fs::path dir = prepare_run_dir(c, cfg, "ablate", {{"seeds", seeds}});
  json runs = json::array();
  std::string text;
  for (std::size_t i = 0; i < seeds; ++i) {
    const std::uint64_t seed = c.seed + i;
    spdlog::info("ablation seed {}", seed);
    const auto rows =
        run_ablation(cfg, seed, ablation_methods(), [](const std::string& msg) { spdlog::debug("{}", msg); });
    json jr = json::array();
    for (const auto& r : rows) jr.push_back(to_json(r));
    runs.push_back({{"seed", seed}, {"rows", jr}});
    text += "seed " + std::to_string(seed) + "\n" + format_table(rows) + "\n";
  }
  write_json(dir / "ablation.json", runs);
  write_text(dir / "ablation.txt", text);
  std::cout << text;
  return 0;
}

int chat_cmd(const Common& c, const Overrides& o, const std::string& model_path) {
  const AppConfig cfg = resolve_config(c, o);
  if (model_path.empty()) throw ConfigError("chat needs --model");
  const Model model = load_model(model_path);
  Rng rng(mix_seed(c.seed, 0xc4a7));
  const std::size_t z = sample_segment(cfg.environment, rng);
  const UserProfile user = sample_profile(cfg.environment, z, rng);
  Session session(model, cfg.inference, user);

  std::cout << "customer profile drawn from segment '" << cfg.environment.segments[z].name << "'\n";
  std::cout << "intents:";
  for (const auto& [alias, id] : cfg.inference.intent_aliases) std::cout << ' ' << alias << '=' << id;
  std::cout << "\ntype an intent id or alias per turn, 'quit' to leave\n";
  const std::size_t vocab = model.config().intent_vocab;
  std::string line;
  while (!session.terminated()) {
    std::cout << "you> " << std::flush;
    if (!std::getline(std::cin, line)) break;
    const auto b = line.find_first_not_of(" \t\r");
    const auto e = line.find_last_not_of(" \t\r");
    const std::string token = b == std::string::npos ? "" : line.substr(b, e - b + 1);
    if (token.empty()) continue;
    if (token == "quit" || token == "exit") break;
    const auto intent = parse_intent(cfg.inference, token, vocab);
    if (!intent) {
      std::cout << "unknown intent '" << token << "'\n";
      continue;
    }
    if (cfg.environment.is_hangup(*intent)) {
      session.hang_up();
      std::cout << "(customer hung up)\n";
      break;
    }
    const StepResult r = session.step(*intent);
    const Strategy& s = cfg.inference.candidates[cfg.inference.candidates.index_of(r.strategy_id)];
    std::cout << "robot [" << s.name << "]: " << r.script << '\n';
    spdlog::debug("usage score {:.4f}{}", r.usage_score, r.fallback ? " (fallback)" : "");
  }
  std::cout << "session ended after " << session.turn() << " turns\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Policy-to-target dialogue strategy toolkit"};
  app.require_subcommand(1);

  Common common;
  Overrides ov;
  std::string corpus_path, model_path, variant = "p2t";
  std::size_t seeds = 1;

  auto add_common = [&](CLI::App* sub, bool needs_out) {
    sub->add_option("--config", common.config, "config file")->required();
    sub->add_option("--seed", common.seed, "random seed");
    auto* out = sub->add_option("--out", common.out, "run directory");
    if (needs_out) out->required();
  };

  auto* gen = app.add_subcommand("gen-corpus", "generate a planted corpus");
  add_common(gen, true);
  gen->add_option("--dialogues", ov.dialogues, "number of dialogues");

  auto* tr = app.add_subcommand("train", "train a model");
  add_common(tr, true);
  tr->add_option("--corpus", corpus_path, "training corpus (default: generate and split)");
  tr->add_option("--dialogues", ov.dialogues, "dialogues to generate when no corpus is given");
  tr->add_option("--epochs", ov.epochs, "training epochs");
  tr->add_option("--lambda", ov.lambda, "usage loss weight");
  tr->add_option("--variant", variant, "p2t, p2t-no-user, p2t-single-way or p2t-no-attention");

  auto* ev = app.add_subcommand("evaluate", "AUC / WBAUC of a checkpoint on a corpus");
  add_common(ev, true);
  ev->add_option("--model", model_path, "checkpoint")->required();
  ev->add_option("--corpus", corpus_path, "test corpus")->required();
  ev->add_option("--n-bins", ov.n_bins, "number of quantile bins");

  auto* sim = app.add_subcommand("simulate", "P2T, BC, flow and random robots in the simulator");
  add_common(sim, true);
  sim->add_option("--model", model_path, "checkpoint")->required();
  sim->add_option("--episodes", ov.episodes, "episodes per policy");
  sim->add_option("--theta", ov.theta, "usage threshold");

  auto* abl = app.add_subcommand("ablate", "ablation table on the planted corpus");
  add_common(abl, true);
  abl->add_option("--seeds", seeds, "number of consecutive seeds")->check(CLI::PositiveNumber);
  abl->add_option("--epochs", ov.epochs, "training epochs");
  abl->add_option("--n-bins", ov.n_bins, "number of quantile bins");
  abl->add_option("--lambda", ov.lambda, "usage loss weight");

  auto* chat = app.add_subcommand("chat", "talk to the robot as the customer");
  add_common(chat, false);
  chat->add_option("--model", model_path, "checkpoint")->required();
  chat->add_option("--theta", ov.theta, "usage threshold");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageExit;
  }

  try {
    if (*gen) return gen_corpus(common, ov);
    if (*tr) return train_cmd(common, ov, corpus_path, variant);
    if (*ev) return evaluate_cmd(common, ov, model_path, corpus_path);
    if (*sim) return simulate_cmd(common, ov, model_path);
    if (*abl) return ablate_cmd(common, ov, seeds);
    if (*chat) return chat_cmd(common, ov, model_path);
  } catch (const Error& e) {
    spdlog::error("{}: {}", category_name(e.category()), e.what());
    return static_cast<int>(e.category());
  } catch (const std::exception& e) {
    spdlog::error("unexpected error: {}", e.what());
    return 1;
  }
  return kUsageExit;
}
