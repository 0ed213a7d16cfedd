#pragma once

#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include "p2t/baselines.hpp"
#include "p2t/environment.hpp"
#include "p2t/inference.hpp"
#include "p2t/model.hpp"
#include "p2t/train.hpp"

namespace p2t {

struct EvalConfig {
  std::size_t n_bins = 10;
  double train_frac = 0.8;
  double test_frac = 0.2;
  std::size_t episodes = 5000;
  /// Oracle search depth; unset means the environment's turn limit.
  std::optional<std::size_t> oracle_depth;
};

inline json to_json(const EvalConfig& e) {
  return {{"n_bins", e.n_bins},
          {"train_frac", e.train_frac},
          {"test_frac", e.test_frac},
          {"episodes", e.episodes},
          {"oracle_depth", e.oracle_depth ? json(*e.oracle_depth) : json(nullptr)}};
}

/// Everything one pipeline run needs. The top-level "strategies" list (with
/// templates) is shared by the environment catalogue and the robot.
struct AppConfig {
  json raw;
  SyntheticConfig environment;
  InferenceConfig inference;
  FlowGraph flow;
  ModelConfig model;
  TrainConfig train;
  TrainConfig bcu_train;
  EvalConfig eval;
};

inline AppConfig app_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  AppConfig c;
  c.raw = j;
  try {
    const json& strategies = j.at("strategies");
    json env = j.at("environment");
    env["strategies"] = strategies;
    c.environment = synthetic_config_from_json(env);

    json inf = j.value("inference", json::object());
    inf["strategies"] = strategies;
    c.inference = inference_config_from_json(inf);

    c.flow = flow_graph_from_json(j.at("flow"));
    for (const auto& [id, n] : c.flow.nodes()) c.environment.strategies.index_of(n.strategy);

    c.model = model_config_from_json(j.value("model", json::object())).with_corpus(c.environment.meta());
    c.model.validate();
    c.train = train_config_from_json(j.value("train", json::object()));
    c.train.validate();
    c.bcu_train = train_config_from_json(j.value("bcu_train", json::object()), c.train);
    c.bcu_train.validate();

    const json e = j.value("eval", json::object());
    c.eval.n_bins = e.value("n_bins", c.eval.n_bins);
    c.eval.train_frac = e.value("train_frac", c.eval.train_frac);
    c.eval.test_frac = e.value("test_frac", c.eval.test_frac);
    c.eval.episodes = e.value("episodes", c.eval.episodes);
    if (auto d = e.find("oracle_depth"); d != e.end() && !d->is_null()) c.eval.oracle_depth = d->get<std::size_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const ValidationError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return json::parse(buf.str());
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

inline AppConfig load_app_config(const std::string& path) { return app_config_from_json(read_json_file(path)); }

}  // namespace p2t
