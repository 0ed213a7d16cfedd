#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "p2t/baselines.hpp"
#include "p2t/config.hpp"
#include "p2t/metrics.hpp"
#include "p2t/simulator.hpp"
#include "p2t/train.hpp"

namespace p2t {

struct Datasets {
  Corpus train;
  Corpus test;
};

/// Planted corpus for `seed`, split with the same seed.
inline Datasets make_datasets(const AppConfig& cfg, std::uint64_t seed) {
  const Corpus all = generate_corpus(cfg.environment, seed);
  auto [train, test] = split(all, cfg.eval.train_frac, cfg.eval.test_frac, seed);
  return {std::move(train), std::move(test)};
}

inline TrainConfig with_seed(TrainConfig tc, std::uint64_t seed) {
  tc.seed = seed;
  return tc;
}

/// Ablation rows, in report order.
inline const std::vector<std::string>& ablation_methods() {
  static const std::vector<std::string> names{"flow/bc (random)", "bcu",          "p2t-no-user",
                                              "p2t-single-way",   "p2t-no-attention", "p2t"};
  return names;
}

inline ModelConfig ablation_model(const ModelConfig& base, const std::string& method) {
  ModelConfig m = base;
  if (method == "p2t-no-user") m.no_user_features = true;
  else if (method == "p2t-single-way") m.single_way = true;
  else if (method == "p2t-no-attention") m.no_attention_aggregation = true;
  else if (method != "p2t") throw ConfigError("no model variant named '" + method + "'");
  return m;
}

using ProgressFn = std::function<void(const std::string&)>;

/// Trains and scores one ablation row on the test split.
inline MetricsReport run_ablation_row(const AppConfig& cfg, const Datasets& data, const std::string& method,
                                      std::uint64_t seed, const ProgressFn& progress = {}) {
  const std::size_t n_bins = cfg.eval.n_bins;
  if (method == "flow/bc (random)") {
    return evaluate_scores(method, random_scorer(data.test.dialogues.size(), mix_seed(seed, 0x7a4d)), data.test,
                           n_bins);
  }
  if (method == "bcu") {
    const BcuModel bcu = train_bcu(data.train, with_seed(cfg.bcu_train, seed));
    std::vector<double> scores;
    for (const auto& d : data.test.dialogues) scores.push_back(bcu_predict(d.user, bcu));
    return evaluate_scores(method, scores, data.test, n_bins);
  }
  const ModelConfig mc = ablation_model(cfg.model, method);
  const TrainResult tr = train(data.train, mc, with_seed(cfg.train, seed), [&](const EpochLog& l) {
    if (progress) progress(method + " epoch " + std::to_string(l.epoch) + " loss " + std::to_string(l.loss));
  });
  return evaluate_model(method, tr.model, data.test, n_bins);
}

inline std::vector<MetricsReport> run_ablation(const AppConfig& cfg, std::uint64_t seed,
                                               const std::vector<std::string>& methods = ablation_methods(),
                                               const ProgressFn& progress = {}) {
  const Datasets data = make_datasets(cfg, seed);
  std::vector<MetricsReport> rows;
  for (const auto& m : methods) rows.push_back(run_ablation_row(cfg, data, m, seed, progress));
  return rows;
}

struct SimulationReport {
  std::vector<ReturnEstimate> policies;
  OracleResult oracle;
};

inline json to_json(const SimulationReport& r) {
  json p = json::array();
  for (const auto& e : r.policies) p.push_back(to_json(e));
  return {{"policies", p}, {"oracle", to_json(r.oracle)}};
}

/// Puts P2T, BC, the flow robot and a random robot on the simulator, each
/// meeting the same customers, and solves the oracle for comparison.
inline SimulationReport run_simulation(const AppConfig& cfg, const Model& model, std::uint64_t seed,
                                       std::size_t episodes, std::ostream* episode_log = nullptr) {
  SimulationReport rep;
  SessionResponder p2t(cfg.environment, model, cfg.inference, SessionResponder::Mode::p2t);
  SessionResponder bc(cfg.environment, model, cfg.inference, SessionResponder::Mode::bc);
  FlowResponder flow(cfg.environment, cfg.flow);
  RandomResponder rnd(cfg.environment, cfg.inference, mix_seed(seed, 0x7a4d));
  for (PolicyResponder* p : std::initializer_list<PolicyResponder*>{&p2t, &bc, &flow, &rnd}) {
    rep.policies.push_back(estimate_return(cfg.environment, *p, episodes, seed, episode_log));
  }
  rep.oracle = brute_force_optimal(cfg.environment, cfg.inference.candidates,
                                   cfg.eval.oracle_depth.value_or(cfg.environment.t_max));
  return rep;
}

inline std::string format_simulation(const SimulationReport& r) {
  std::vector<MetricsReport> rows;
  for (const auto& p : r.policies) {
    MetricsReport m;
    m.method = p.policy;
    m.rounds = p.mean_rounds;
    m.diversity = p.diversity;
    m.repayment_rate = p.repayment_rate;
    rows.push_back(m);
  }
  MetricsReport o;
  o.method = "oracle";
  o.repayment_rate = r.oracle.expected_return;
  rows.push_back(o);
  return format_table(rows);
}

}  // namespace p2t
