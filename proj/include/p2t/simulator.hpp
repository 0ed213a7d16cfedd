#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <ostream>
#include <string>
#include <vector>

#include "p2t/baselines.hpp"
#include "p2t/environment.hpp"
#include "p2t/inference.hpp"

namespace p2t {

/// A robot policy that can be put on the phone with the simulated customer.
class PolicyResponder : public Responder {
 public:
  virtual std::string name() const = 0;
  /// Script line of the most recent reply (empty when the policy has none).
  virtual std::string last_script() const { return {}; }
};

namespace detail {

inline std::size_t catalogue_index(const SyntheticConfig& env, int strategy_id) {
  return env.strategies.index_of(strategy_id);
}

/// Robot and environment must agree on every shared strategy.
inline void check_candidates_in_catalogue(const SyntheticConfig& env, const CandidateSet& cands) {
  for (const auto& s : cands) {
    const std::size_t i = env.strategies.index_of(s.id);
    if (env.strategies[i].atoms != s.atoms || env.strategies[i].terminal != s.terminal) {
      throw ConfigError("strategy " + std::to_string(s.id) + " differs between robot and environment");
    }
  }
}

}  // namespace detail

/// P2T (full selection rule) or behavior cloning (usage head only) on top of a Session.
class SessionResponder final : public PolicyResponder {
 public:
  enum class Mode { p2t, bc };

  SessionResponder(const SyntheticConfig& env, const Model& model, const InferenceConfig& cfg, Mode mode)
      : env_(env), model_(model), cfg_(cfg), mode_(mode) {
    detail::check_candidates_in_catalogue(env, cfg.candidates);
  }

  std::string name() const override { return mode_ == Mode::p2t ? "p2t" : "bc"; }
  void begin(const UserProfile& user) override { session_.emplace(model_, cfg_, user); }
  std::size_t respond(int intent) override {
    const StepResult r = mode_ == Mode::p2t ? session_->step(intent) : bc_step(*session_, intent);
    script_ = r.script;
    return detail::catalogue_index(env_, r.strategy_id);
  }
  std::string last_script() const override { return script_; }
  const Session& session() const { return *session_; }

 private:
  const SyntheticConfig& env_;
  const Model& model_;
  const InferenceConfig& cfg_;
  Mode mode_;
  std::optional<Session> session_;
  std::string script_;
};

class FlowResponder final : public PolicyResponder {
 public:
  FlowResponder(const SyntheticConfig& env, const FlowGraph& graph) : env_(env), graph_(graph) {
    for (const auto& [id, n] : graph.nodes()) {
      const std::size_t i = env.strategies.index_of(n.strategy);
      if (n.terminal && !env.strategies[i].terminal) {
        throw ConfigError("terminal flow node " + std::to_string(id) + " plays a non-terminal strategy");
      }
    }
  }

  std::string name() const override { return "flow"; }
  void begin(const UserProfile&) override { session_.emplace(graph_); }
  std::size_t respond(int intent) override { return detail::catalogue_index(env_, session_->respond(intent)); }

 private:
  const SyntheticConfig& env_;
  const FlowGraph& graph_;
  std::optional<FlowSession> session_;
};

/// Uniform choice among the candidates the tracker allows.
class RandomResponder final : public PolicyResponder {
 public:
  RandomResponder(const SyntheticConfig& env, const InferenceConfig& cfg, std::uint64_t seed)
      : env_(env), cfg_(cfg), rng_(seed) {
    detail::check_candidates_in_catalogue(env, cfg.candidates);
  }

  std::string name() const override { return "random"; }
  void begin(const UserProfile&) override { tracker_ = {}; }
  std::size_t respond(int intent) override {
    std::vector<bool> allowed = compute_mask(cfg_, tracker_);
    if (tracker_.history.size() + 1 >= cfg_.max_turns) {
      for (std::size_t i = 0; i < allowed.size(); ++i) allowed[i] = allowed[i] && cfg_.candidates[i].terminal;
    }
    std::vector<double> w(allowed.begin(), allowed.end());
    const Strategy& s = cfg_.candidates[sample_categorical(w, rng_)];
    ++tracker_.uses[s.id];
    tracker_.history.emplace_back(s.id, intent);
    for (const auto& r : cfg_.slot_rules) {
      if (r.intent == intent) tracker_.slots[r.slot] = r.value;
    }
    return detail::catalogue_index(env_, s.id);
  }

 private:
  const SyntheticConfig& env_;
  const InferenceConfig& cfg_;
  Rng rng_;
  TrackerState tracker_;
};

struct EpisodeTurn {
  int intent = 0;
  int strategy = 0;
  std::string script;
};

struct EpisodeLog {
  std::string policy;
  std::size_t index = 0;
  std::size_t segment = 0;
  std::vector<EpisodeTurn> turns;
  double success_probability = 0.0;
  int label = 0;

  std::vector<int> path() const {
    std::vector<int> p;
    for (const auto& t : turns) p.push_back(t.strategy);
    return p;
  }
  std::size_t rounds() const noexcept { return turns.size(); }
};

inline json to_json(const EpisodeLog& e) {
  json turns = json::array();
  for (const auto& t : e.turns) turns.push_back({{"intent", t.intent}, {"strategy", t.strategy}, {"script", t.script}});
  return {{"policy", e.policy},   {"episode", e.index},
          {"segment", e.segment}, {"rounds", e.rounds()},
          {"label", e.label},     {"success_probability", e.success_probability},
          {"turns", turns}};
}

namespace detail {

/// Records the script line of every reply on its way to the environment.
class ScriptTap final : public Responder {
 public:
  explicit ScriptTap(PolicyResponder& inner) : inner_(inner) {}
  void begin(const UserProfile& u) override {
    scripts.clear();
    inner_.begin(u);
  }
  std::size_t respond(int intent) override {
    const std::size_t s = inner_.respond(intent);
    scripts.push_back(inner_.last_script());
    return s;
  }
  std::vector<std::string> scripts;

 private:
  PolicyResponder& inner_;
};

}  // namespace detail

/// Episode `index` of a run seeded with `seed`; the random stream depends only
/// on (seed, index), so policies compared under one seed meet the same customers.
inline EpisodeLog run_episode(const SyntheticConfig& env, PolicyResponder& policy, std::uint64_t seed,
                              std::size_t index) {
  Rng rng(mix_seed(seed, index));
  detail::ScriptTap tap(policy);
  const Episode ep = play_episode(env, tap, rng);
  EpisodeLog log{policy.name(), index, ep.segment, {}, ep.success_probability, ep.label};
  for (std::size_t t = 0; t < ep.turns.size(); ++t) {
    log.turns.push_back({ep.turns[t].intent, ep.path[t], tap.scripts[t]});
  }
  return log;
}

struct ReturnEstimate {
  std::string policy;
  std::size_t episodes = 0;
  double repayment_rate = 0.0;   // mean y
  double repayment_se = 0.0;
  double mean_success_probability = 0.0;
  double mean_rounds = 0.0;
  double rounds_se = 0.0;
  double diversity = 0.0;        // distinct paths / episodes
  double diversity_se = 0.0;     // bootstrap over episodes
};

inline json to_json(const ReturnEstimate& r) {
  return {{"policy", r.policy},
          {"episodes", r.episodes},
          {"repayment_rate", r.repayment_rate},
          {"repayment_se", r.repayment_se},
          {"mean_success_probability", r.mean_success_probability},
          {"mean_rounds", r.mean_rounds},
          {"rounds_se", r.rounds_se},
          {"diversity", r.diversity},
          {"diversity_se", r.diversity_se}};
}

/// Bootstrap standard error of distinct/n, given one path id per episode.
inline double diversity_bootstrap_se(const std::vector<std::size_t>& path_ids, std::size_t resamples,
                                     std::uint64_t seed) {
  const std::size_t n = path_ids.size();
  if (n < 2 || resamples < 2) return 0.0;
  const std::size_t n_ids = *std::max_element(path_ids.begin(), path_ids.end()) + 1;
  std::vector<std::size_t> stamp(n_ids, 0);
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  double sum = 0.0, sq = 0.0;
  for (std::size_t b = 1; b <= resamples; ++b) {
    std::size_t distinct = 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t& st = stamp[path_ids[pick(rng)]];
      if (st != b) {
        st = b;
        ++distinct;
      }
    }
    const double d = static_cast<double>(distinct) / static_cast<double>(n);
    sum += d;
    sq += d * d;
  }
  const auto r = static_cast<double>(resamples);
  return std::sqrt(std::max(0.0, (sq - sum * sum / r) / (r - 1.0)));
}

inline constexpr std::size_t kDiversityResamples = 200;

/// Monte-Carlo estimate of the policy's expected repayment; each episode is
/// optionally streamed to `episode_log` as one JSON line.
inline ReturnEstimate estimate_return(const SyntheticConfig& env, PolicyResponder& policy, std::size_t n_episodes,
                                      std::uint64_t seed, std::ostream* episode_log = nullptr) {
  if (n_episodes == 0) throw ConfigError("need at least one episode");
  env.validate();
  ReturnEstimate r;
  r.policy = policy.name();
  r.episodes = n_episodes;
  std::map<std::vector<int>, std::size_t> paths;
  std::vector<std::size_t> path_ids;
  double sum_y = 0.0, sum_p = 0.0, sum_r = 0.0, sum_r2 = 0.0;
  for (std::size_t i = 0; i < n_episodes; ++i) {
    const EpisodeLog log = run_episode(env, policy, seed, i);
    if (episode_log != nullptr) *episode_log << to_json(log).dump() << '\n';
    sum_y += log.label;
    sum_p += log.success_probability;
    const auto rounds = static_cast<double>(log.rounds());
    sum_r += rounds;
    sum_r2 += rounds * rounds;
    path_ids.push_back(paths.emplace(log.path(), paths.size()).first->second);
  }
  const auto n = static_cast<double>(n_episodes);
  r.repayment_rate = sum_y / n;
  r.mean_success_probability = sum_p / n;
  r.mean_rounds = sum_r / n;
  if (n_episodes > 1) {
    const double var_y = (sum_y - n * r.repayment_rate * r.repayment_rate) / (n - 1.0);
    const double var_r = (sum_r2 - n * r.mean_rounds * r.mean_rounds) / (n - 1.0);
    r.repayment_se = std::sqrt(std::max(0.0, var_y) / n);
    r.rounds_se = std::sqrt(std::max(0.0, var_r) / n);
  }
  r.diversity = static_cast<double>(paths.size()) / n;
  r.diversity_se = diversity_bootstrap_se(path_ids, kDiversityResamples, mix_seed(seed, 0xb007));
  return r;
}

// ---- brute-force optimal policy -------------------------------------------------

/// Exact expected label of segment z under a fixed open-loop strategy sequence
/// (catalogue indices). The call ends at a terminal strategy, a hangup, or
/// after `horizon` turns; a hangup still lets the label depend on what was said.
inline double sequence_value(const SyntheticConfig& env, std::size_t z, std::span<const std::size_t> seq,
                             std::size_t horizon) {
  double alive = 1.0, value = 0.0, logit = env.segments[z].beta0;
  for (std::size_t t = 1; t <= seq.size(); ++t) {
    const std::size_t s = seq[t - 1];
    logit += env.effect(z, s, t);
    if (env.strategies[s].terminal || t == horizon || t == seq.size()) {
      value += alive * sigmoid(logit);
      break;
    }
    const double h = env.hangup_probability(z, s);
    value += alive * h * sigmoid(logit);
    alive *= 1.0 - h;
  }
  return value;
}

struct SegmentOptimum {
  std::size_t segment = 0;
  double value = 0.0;
  std::vector<int> sequence;  // strategy ids
};

struct OracleResult {
  double expected_return = 0.0;  // prior-weighted over segments
  std::vector<SegmentOptimum> segments;
  std::size_t sequences_evaluated = 0;
};

inline json to_json(const OracleResult& o) {
  json segs = json::array();
  for (const auto& s : o.segments) segs.push_back({{"segment", s.segment}, {"value", s.value}, {"sequence", s.sequence}});
  return {{"expected_return", o.expected_return}, {"segments", segs}, {"sequences_evaluated", o.sequences_evaluated}};
}

inline constexpr double kOracleBudget = 1e6;

/// Best open-loop strategy sequence per segment, found by enumerating every
/// sequence of `candidates` of length at most `depth` that respects use
/// limits and ends at a terminal strategy or at the depth. Slot-based mask
/// rules are ignored, so the value is an upper bound for tracked policies.
inline OracleResult brute_force_optimal(const SyntheticConfig& env, const CandidateSet& candidates, std::size_t depth) {
  env.validate();
  detail::check_candidates_in_catalogue(env, candidates);
  if (depth < 1) throw ConfigError("oracle depth must be >= 1");
  if (depth > env.t_max) throw ConfigError("oracle depth exceeds the environment's turn limit");
  if (std::pow(static_cast<double>(candidates.size()), static_cast<double>(depth)) > kOracleBudget) {
    throw ConfigError("oracle search space |C|^d exceeds the budget of 1e6 sequences");
  }
  std::vector<std::size_t> cat;
  for (const auto& s : candidates) cat.push_back(env.strategies.index_of(s.id));
  double prior_total = 0.0;
  for (const auto& s : env.segments) prior_total += s.prior;

  OracleResult out;
  for (std::size_t z = 0; z < env.segments.size(); ++z) {
    SegmentOptimum best{z, -1.0, {}};
    std::vector<std::size_t> seq;  // candidate positions
    std::vector<int> uses(candidates.size(), 0);
    // Depth-first search carrying the prefix state of sequence_value.
    auto dfs = [&](auto&& self, double alive, double value, double logit) -> void {
      const std::size_t t = seq.size() + 1;
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        const Strategy& st = candidates[i];
        if (st.limit && uses[i] >= *st.limit) continue;
        const std::size_t s = cat[i];
        const double lg = logit + env.effect(z, s, t);
        seq.push_back(i);
        ++uses[i];
        if (st.terminal || t == depth) {
          ++out.sequences_evaluated;
          const double v = value + alive * sigmoid(lg);
          if (v > best.value) {
            best.value = v;
            best.sequence.clear();
            for (std::size_t k : seq) best.sequence.push_back(candidates[k].id);
          }
        } else {
          const double h = env.hangup_probability(z, s);
          self(self, alive * (1.0 - h), value + alive * h * sigmoid(lg), lg);
        }
        --uses[i];
        seq.pop_back();
      }
    };
    dfs(dfs, 1.0, 0.0, env.segments[z].beta0);
    out.expected_return += env.segments[z].prior / prior_total * best.value;
    out.segments.push_back(std::move(best));
  }
  return out;
}

}  // namespace p2t
