#pragma once

// Streaming strategy selection.
//
// A Session keeps the recurrent state of both ways between turns, so each turn
// costs one usage-way step plus one repayment-way branch per candidate:
//
//   ŝ^t     = usage way advanced with [R_{t−1}, I_t, u]
//   ŷ_t(s)  = repayment way branched from the committed h1_{t−1} with [R_t(s), I_t, u]
//   ŝ*(s)   = Σ_k s_k log ŝ^t_k + (1 − s_k) log(1 − ŝ^t_k)
//   choice  = argmax_s ŷ_t(s)·𝟙(ŝ*(s) > θ) over unmasked s, lowest id on ties,
//             falling back to argmax_s ŷ_t(s) when no candidate clears θ.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "p2t/model.hpp"
#include "p2t/strategy.hpp"

namespace p2t {

using SlotValue = std::variant<bool, std::int64_t, double, std::string>;

inline SlotValue slot_value_from_json(const json& j) {
  if (j.is_boolean()) return j.get<bool>();
  if (j.is_number_integer()) return j.get<std::int64_t>();
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) return j.get<std::string>();
  throw ConfigError("slot values must be bool, number or string");
}

inline json to_json(const SlotValue& v) {
  return std::visit([](const auto& x) { return json(x); }, v);
}

/// Precondition a strategy needs before it may be chosen.
struct MaskRule {
  enum class Op { is_set, is_unset, equals, not_equals };
  int strategy = 0;
  std::string slot;
  Op op = Op::is_unset;
  SlotValue value = false;

  bool allows(const std::map<std::string, SlotValue>& slots) const {
    auto it = slots.find(slot);
    switch (op) {
      case Op::is_set: return it != slots.end();
      case Op::is_unset: return it == slots.end();
      case Op::equals: return it != slots.end() && it->second == value;
      case Op::not_equals: return it == slots.end() || !(it->second == value);
    }
    return true;
  }
};

/// Writes `value` into `slot` whenever the user shows `intent`.
struct SlotRule {
  int intent = 0;
  std::string slot;
  SlotValue value = true;
};

struct InferenceConfig {
  CandidateSet candidates;
  std::map<int, std::vector<std::string>> templates;
  std::vector<MaskRule> mask_rules;
  std::vector<SlotRule> slot_rules;
  std::map<std::string, int> intent_aliases;
  std::optional<double> theta;
  std::size_t max_turns = kMaxTurns;

  /// Default threshold −0.7·K: roughly chance-level log-likelihood per atom.
  double threshold(std::size_t atom_count) const {
    return theta ? *theta : -0.7 * static_cast<double>(atom_count);
  }

  void validate() const {
    for (const auto& s : candidates) {
      auto it = templates.find(s.id);
      if (it == templates.end() || it->second.empty()) {
        throw ValidationError("strategy " + std::to_string(s.id) + " has no script template");
      }
    }
    for (const auto& r : mask_rules) candidates.index_of(r.strategy);
    if (max_turns < 1 || max_turns > kMaxTurns) throw ValidationError("max_turns must be in [1, 50]");
  }
};

inline InferenceConfig inference_config_from_json(const json& j) {
  try {
    InferenceConfig c;
    c.candidates = candidates_from_json(j.at("strategies"));
    for (const auto& s : j.at("strategies")) {
      c.templates[s.at("id").get<int>()] = s.value("templates", std::vector<std::string>{});
    }
    for (const auto& r : j.value("mask_rules", json::array())) {
      MaskRule m;
      m.strategy = r.at("strategy").get<int>();
      m.slot = r.at("slot").get<std::string>();
      const std::string op = r.value("op", "is_unset");
      if (op == "is_set") m.op = MaskRule::Op::is_set;
      else if (op == "is_unset") m.op = MaskRule::Op::is_unset;
      else if (op == "equals") m.op = MaskRule::Op::equals;
      else if (op == "not_equals") m.op = MaskRule::Op::not_equals;
      else throw ConfigError("unknown mask rule op '" + op + "'");
      if (auto v = r.find("value"); v != r.end()) m.value = slot_value_from_json(*v);
      c.mask_rules.push_back(std::move(m));
    }
    for (const auto& r : j.value("slot_rules", json::array())) {
      c.slot_rules.push_back({r.at("intent").get<int>(), r.at("slot").get<std::string>(),
                              slot_value_from_json(r.value("value", json(true)))});
    }
    c.intent_aliases = j.value("intent_aliases", std::map<std::string, int>{});
    if (auto t = j.find("theta"); t != j.end() && !t->is_null()) c.theta = t->get<double>();
    c.max_turns = j.value("max_turns", kMaxTurns);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("inference config: ") + e.what());
  }
}

/// Intent id from console input: a configured alias or a plain integer id.
inline std::optional<int> parse_intent(const InferenceConfig& c, const std::string& token, std::size_t intent_vocab) {
  if (auto it = c.intent_aliases.find(token); it != c.intent_aliases.end()) return it->second;
  if (token.empty() || token.size() > 9 || !std::all_of(token.begin(), token.end(), [](unsigned char ch) {
        return std::isdigit(ch) != 0;
      })) {
    return std::nullopt;
  }
  const int id = std::stoi(token);
  if (static_cast<std::size_t>(id) >= intent_vocab) return std::nullopt;
  return id;
}

/// Usage score: log-likelihood of `atoms` under per-atom usage probabilities.
inline double usage_score(std::span<const double> probs, const AtomSet& atoms) {
  double s = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    const double p = probs[k];
    if (!(p > 0.0 && p < 1.0)) throw ContractError("usage probability outside (0, 1)");
    s += atoms.contains(static_cast<int>(k)) ? std::log(p) : std::log(1.0 - p);
  }
  return s;
}

/// Recurrent state of one conversation, independent of any candidate set.
class StreamingState {
 public:
  StreamingState(const Model& model, const UserProfile& user) : model_(&model) {
    ad::Tape tape;
    const BoundParams b = model.bind(tape);
    user_ = tape.value(model.embed_user(tape, b, user));
    h1_ = ad::Tensor::vector(model.config().hidden_dim);
    h2_ = h1_;
    prev_ = ad::Tensor::vector(model.config().embed_dim);
  }

  const Model& model() const noexcept { return *model_; }
  bool dual() const noexcept { return !model_->config().single_way; }

  /// Starts turn t: advances the usage way and returns ŝ^t (empty for single-way models).
  const std::vector<double>& observe(int intent) {
    intent_ = intent;
    usage_.clear();
    if (dual()) {
      ad::Tape tape;
      const BoundParams b = model_->bind(tape);
      const auto step = model_->usage_step(tape, b, tape.constant(h2_), tape.constant(prev_),
                                           model_->intent_embedding(tape, b, intent), tape.constant(user_));
      h2_next_ = tape.value(step.hidden);
      usage_ = tape.value(step.output).storage();
    } else if (intent < 0 || static_cast<std::size_t>(intent) >= model_->config().intent_vocab) {
      throw ValidationError("intent " + std::to_string(intent) + " outside vocabulary");
    }
    observed_ = true;
    return usage_;
  }

  struct Branch {
    ad::Tensor strategy;
    ad::Tensor hidden;
    double repayment = 0.0;
  };

  /// One-step repayment lookahead for `atoms` from the committed h1_{t−1}.
  Branch branch(const AtomSet& atoms) const {
    if (!observed_) throw StateError("branch() before observe()");
    ad::Tape tape;
    const BoundParams b = model_->bind(tape);
    const ad::Var intent = model_->intent_embedding(tape, b, intent_);
    const ad::Var user = tape.constant(user_);
    const ad::Var r = model_->strategy_vector(tape, b, atoms, intent, user);
    const auto step = model_->repayment_step(tape, b, tape.constant(h1_), r, intent, user);
    return {tape.value(r), tape.value(step.hidden), tape.scalar(step.output)};
  }

  /// Ends the turn with the chosen branch.
  void commit(const Branch& chosen) {
    if (!observed_) throw StateError("commit() before observe()");
    h1_ = chosen.hidden;
    prev_ = chosen.strategy;
    if (dual()) h2_ = h2_next_;
    observed_ = false;
  }

  const ad::Tensor& h1() const noexcept { return h1_; }
  const ad::Tensor& h2() const noexcept { return h2_; }
  const ad::Tensor& user() const noexcept { return user_; }

 private:
  const Model* model_;
  ad::Tensor user_, h1_, h2_, prev_, h2_next_;
  std::vector<double> usage_;
  int intent_ = 0;
  bool observed_ = false;
};

/// Implicit context tracker: history, recurrent state and slots.
struct TrackerState {
  std::vector<std::pair<int, int>> history;   // (strategy id, intent) per turn
  std::map<std::string, SlotValue> slots;
  std::map<int, int> uses;                    // strategy id -> count in history
};

inline std::vector<bool> compute_mask(const InferenceConfig& cfg, const TrackerState& tracker) {
  std::vector<bool> allowed(cfg.candidates.size(), true);
  for (std::size_t i = 0; i < cfg.candidates.size(); ++i) {
    const Strategy& s = cfg.candidates[i];
    if (s.limit) {
      auto it = tracker.uses.find(s.id);
      if (it != tracker.uses.end() && it->second >= *s.limit) allowed[i] = false;
    }
    for (const auto& r : cfg.mask_rules) {
      if (r.strategy == s.id && !r.allows(tracker.slots)) allowed[i] = false;
    }
  }
  // An unlimited terminal strategy always stays available.
  for (std::size_t i = 0; i < cfg.candidates.size(); ++i) {
    if (cfg.candidates[i].terminal && !cfg.candidates[i].limit) allowed[i] = true;
  }
  return allowed;
}

struct CandidateScore {
  int strategy_id = 0;
  bool masked = true;
  double repayment = 0.0;
  double usage_score = 0.0;
  bool passes_threshold = false;
};

struct StepResult {
  int strategy_id = 0;
  std::string script;
  std::vector<CandidateScore> candidates;
  double usage_score = 0.0;
  /// True when no candidate cleared θ and the choice fell back to argmax ŷ.
  bool fallback = false;
  bool terminated = false;
};

class Session {
 public:
  Session(const Model& model, const InferenceConfig& config, const UserProfile& user)
      : config_(&config), stream_(model, user) {
    config.validate();
    config.candidates.validate(model.config().atom_count);
    theta_ = config.threshold(model.config().atom_count);
  }

  bool terminated() const noexcept { return terminated_; }
  std::size_t turn() const noexcept { return tracker_.history.size(); }
  double theta() const noexcept { return theta_; }
  const TrackerState& tracker() const noexcept { return tracker_; }
  const StreamingState& stream() const noexcept { return stream_; }
  const InferenceConfig& config() const noexcept { return *config_; }

  /// Begins a turn: returns ŝ^t (clamped into (0, 1)).
  const std::vector<double>& observe(int intent) {
    if (terminated_) throw StateError("session already terminated");
    if (pending_) throw StateError("previous turn not committed");
    usage_ = stream_.observe(intent);
    for (double& p : usage_) p = std::clamp(p, ad::Tape::kProbEps, 1.0 - ad::Tape::kProbEps);
    intent_ = intent;
    branches_.assign(config_->candidates.size(), std::nullopt);
    pending_ = true;
    return usage_;
  }

  /// Mask for the pending turn; the last allowed turn leaves only terminal strategies.
  std::vector<bool> mask() const {
    std::vector<bool> m = compute_mask(*config_, tracker_);
    if (turn() + 1 >= config_->max_turns) {
      for (std::size_t i = 0; i < m.size(); ++i) m[i] = m[i] && config_->candidates[i].terminal;
    }
    return m;
  }

  double candidate_usage_score(std::size_t index) const {
    if (usage_.empty()) return 0.0;
    return usage_score(usage_, config_->candidates[index].atoms);
  }

  double candidate_repayment(std::size_t index) { return branch_for(index).repayment; }

  /// Full selection rule for one turn.
  StepResult step(int intent) {
    observe(intent);
    const std::vector<bool> allowed = mask();
    StepResult out;
    out.candidates.resize(config_->candidates.size());
    const bool gated = stream_.dual();
    std::optional<std::size_t> best, best_fallback;
    double best_score = -1.0, best_fallback_score = -1.0;
    for (std::size_t i = 0; i < config_->candidates.size(); ++i) {
      CandidateScore& c = out.candidates[i];
      c.strategy_id = config_->candidates[i].id;
      c.masked = !allowed[i];
      if (c.masked) continue;
      c.repayment = candidate_repayment(i);
      c.usage_score = candidate_usage_score(i);
      c.passes_threshold = !gated || c.usage_score > theta_;
      const double score = c.passes_threshold ? c.repayment : 0.0;
      if (!best || score > best_score) {
        best = i;
        best_score = score;
      }
      if (!best_fallback || c.repayment > best_fallback_score) {
        best_fallback = i;
        best_fallback_score = c.repayment;
      }
    }
    if (!best) throw ContractError("no unmasked candidate strategy");
    const bool any_pass = std::any_of(out.candidates.begin(), out.candidates.end(),
                                      [](const CandidateScore& c) { return !c.masked && c.passes_threshold; });
    const std::size_t choice = any_pass ? *best : *best_fallback;
    out.fallback = !any_pass;
    out.usage_score = out.candidates[choice].usage_score;
    out.strategy_id = config_->candidates[choice].id;
    out.script = commit(choice);
    out.terminated = terminated_;
    return out;
  }

  /// Ends the pending turn with candidate `index`; returns its script line.
  std::string commit(std::size_t index) {
    if (!pending_) throw StateError("commit() without observe()");
    const Strategy& s = config_->candidates[index];
    stream_.commit(branch_for(index));
    const int prior_uses = tracker_.uses[s.id]++;
    tracker_.history.emplace_back(s.id, intent_);
    apply_slot_rules(intent_);
    pending_ = false;
    if (s.terminal || turn() >= config_->max_turns) terminated_ = true;
    const auto& lines = config_->templates.at(s.id);
    return lines[static_cast<std::size_t>(prior_uses) % lines.size()];
  }

  /// Replays an externally chosen turn (e.g. a logged dialogue); returns ŷ_t.
  /// `atoms` need not belong to the candidate set.
  double replay(int intent, const AtomSet& atoms) {
    observe(intent);
    const StreamingState::Branch b = stream_.branch(atoms);
    stream_.commit(b);
    int id = -1;
    for (const auto& s : config_->candidates) {
      if (s.atoms == atoms) id = s.id;
    }
    if (id >= 0) tracker_.uses[id]++;
    tracker_.history.emplace_back(id, intent_);
    apply_slot_rules(intent_);
    pending_ = false;
    if (turn() >= config_->max_turns) terminated_ = true;
    return b.repayment;
  }

  /// The customer hung up.
  void hang_up() {
    pending_ = false;
    terminated_ = true;
  }

  const std::vector<double>& usage() const noexcept { return usage_; }

 private:
  const StreamingState::Branch& branch_for(std::size_t index) {
    if (!pending_) throw StateError("no pending turn");
    auto& slot = branches_.at(index);
    if (!slot) slot = stream_.branch(config_->candidates[index].atoms);
    return *slot;
  }

  void apply_slot_rules(int intent) {
    for (const auto& r : config_->slot_rules) {
      if (r.intent == intent) tracker_.slots[r.slot] = r.value;
    }
  }

  const InferenceConfig* config_;
  StreamingState stream_;
  TrackerState tracker_;
  std::vector<std::optional<StreamingState::Branch>> branches_;
  std::vector<double> usage_;
  double theta_ = 0.0;
  int intent_ = 0;
  bool pending_ = false;
  bool terminated_ = false;
};

struct ReplayReport {
  bool consistent = true;
  double max_abs_diff = 0.0;
};

/// Streams the dialogue's own strategies turn by turn and compares ŷ_t and ŝ^t
/// with the full-sequence forward pass.
inline ReplayReport replay_consistency(const Dialogue& d, const Model& model, double tolerance = 1e-12) {
  const SequenceOutputs batch = model.forward_values(d);
  StreamingState stream(model, d.user);
  ReplayReport rep;
  for (std::size_t t = 0; t < d.turns.size(); ++t) {
    const auto& usage = stream.observe(d.turns[t].intent);
    if (stream.dual()) {
      for (std::size_t k = 0; k < usage.size(); ++k) {
        rep.max_abs_diff = std::max(rep.max_abs_diff, std::abs(usage[k] - batch.usage[t][k]));
      }
    }
    const auto b = stream.branch(d.turns[t].strategy);
    rep.max_abs_diff = std::max(rep.max_abs_diff, std::abs(b.repayment - batch.repayment[t]));
    stream.commit(b);
  }
  rep.consistent = rep.max_abs_diff <= tolerance;
  return rep;
}

}  // namespace p2t
