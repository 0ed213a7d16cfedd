#pragma once

// Planted user model shared by the corpus generator and the simulator.
//
// A user belongs to a latent segment z. The segment drives the profile
// features, the intent dynamics P(intent | previous strategy, z) and the
// repayment outcome
//
//     y ~ Bernoulli(σ(β0_z + Σ_t Σ_k w_{z,k}·[k ∈ s_t]·γ^t)),   t = 1, 2, ...
//
// Generated corpora and simulated episodes both come out of play_episode(),
// only the responder (human collector vs. robot policy) differs.

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "p2t/corpus.hpp"
#include "p2t/strategy.hpp"

namespace p2t {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent per-item seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

/// Draws an index from unnormalized non-negative weights.
inline std::size_t sample_categorical(std::span<const double> weights, Rng& rng) {
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) throw ContractError("categorical weights sum to zero");
  double u = uniform01(rng) * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (u < weights[i]) return i;
    u -= weights[i];
  }
  for (std::size_t i = weights.size(); i-- > 0;) {
    if (weights[i] > 0.0) return i;
  }
  return weights.size() - 1;
}

struct NumericSpec {
  double mean = 0.0;
  double sd = 1.0;
};

struct Segment {
  std::string name;
  double prior = 1.0;
  double beta0 = 0.0;
  std::vector<double> weights;                       // per atom
  std::vector<double> initial_intents;               // first-turn intent distribution
  std::vector<std::vector<double>> transitions;      // per catalogue strategy, row over intents
  std::vector<std::vector<double>> sparse;           // per sparse feature, distribution over categories
  std::vector<NumericSpec> numeric;                  // per numeric feature
  std::vector<double> human_bias;                    // per catalogue strategy multiplier on human weights
};

/// Logging policy of the human collectors who produced the training corpus.
struct HumanPolicySpec {
  std::vector<double> opening;                       // weights over strategies at t = 1
  std::vector<std::vector<double>> by_intent;        // weights over strategies per intent, t > 1
};

struct SyntheticConfig {
  std::size_t intent_vocab = 1;
  std::size_t atom_count = 1;
  std::vector<std::size_t> sparse_vocab;
  std::size_t numeric_count = 0;
  std::vector<int> hangup_intents;
  double gamma = 1.0;
  std::size_t t_max = kMaxTurns;
  double bin_noise = 0.0;
  /// Probability that a recorded intent is replaced by a random non-hangup intent.
  double intent_noise = 0.0;
  std::size_t dialogues = 1000;
  CandidateSet strategies;
  HumanPolicySpec human;
  std::vector<Segment> segments;

  bool is_hangup(int intent) const {
    return std::find(hangup_intents.begin(), hangup_intents.end(), intent) != hangup_intents.end();
  }

  /// P(next intent is a hangup | strategy at catalogue index s, segment z).
  double hangup_probability(std::size_t z, std::size_t s) const {
    double p = 0.0;
    for (int h : hangup_intents) p += segments[z].transitions[s][static_cast<std::size_t>(h)];
    return p;
  }

  /// Contribution of strategy `s` played at turn `t` (1-based) to the outcome logit.
  double effect(std::size_t z, std::size_t s, std::size_t t) const {
    double sum = 0.0;
    for (int k : strategies[s].atoms) sum += segments[z].weights[static_cast<std::size_t>(k)];
    return sum * std::pow(gamma, static_cast<double>(t));
  }

  CorpusMeta meta() const {
    CorpusMeta m;
    m.intent_vocab = intent_vocab;
    m.atom_count = atom_count;
    m.sparse_vocab = sparse_vocab;
    m.numeric_count = numeric_count;
    return m;
  }

  void validate() const;
};

namespace detail {

inline void check_distribution(const std::vector<double>& row, std::size_t n, const std::string& what) {
  if (row.size() != n) {
    throw ConfigError(what + " has " + std::to_string(row.size()) + " entries, expected " + std::to_string(n));
  }
  double s = 0.0;
  for (double p : row) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw ConfigError(what + " has a negative or non-finite entry");
    s += p;
  }
  if (std::abs(s - 1.0) > 1e-9) throw ConfigError(what + " does not sum to 1");
}

inline void check_weights(const std::vector<double>& row, std::size_t n, const std::string& what) {
  if (row.size() != n) {
    throw ConfigError(what + " has " + std::to_string(row.size()) + " entries, expected " + std::to_string(n));
  }
  for (double w : row) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError(what + " has a negative or non-finite weight");
  }
}

}  // namespace detail

inline void SyntheticConfig::validate() const {
  if (segments.empty()) throw ConfigError("environment declares zero segments");
  if (atom_count < 1 || atom_count > kMaxAtoms) {
    throw ConfigError("atom count must be in [1, " + std::to_string(kMaxAtoms) + "]");
  }
  if (t_max < 1 || t_max > kMaxTurns) throw ConfigError("t_max must be in [1, " + std::to_string(kMaxTurns) + "]");
  if (intent_vocab < 1) throw ConfigError("intent vocabulary must be >= 1");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
  if (!(bin_noise >= 0.0)) throw ConfigError("bin_noise must be >= 0");
  if (!(intent_noise >= 0.0 && intent_noise <= 1.0)) throw ConfigError("intent_noise must lie in [0, 1]");
  if (strategies.size() == 0) throw ConfigError("environment declares no strategies");
  try {
    strategies.validate(atom_count);
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
  for (int h : hangup_intents) {
    if (h < 0 || static_cast<std::size_t>(h) >= intent_vocab) throw ConfigError("hangup intent out of range");
  }
  std::size_t non_hangup = 0;
  for (std::size_t i = 0; i < intent_vocab; ++i) non_hangup += is_hangup(static_cast<int>(i)) ? 0 : 1;
  if (non_hangup == 0) throw ConfigError("every intent is a hangup intent");
  const std::size_t n_strat = strategies.size();
  detail::check_weights(human.opening, n_strat, "human.opening");
  if (human.by_intent.size() != intent_vocab) throw ConfigError("human.by_intent needs one row per intent");
  for (std::size_t i = 0; i < intent_vocab; ++i) {
    detail::check_weights(human.by_intent[i], n_strat, "human.by_intent[" + std::to_string(i) + "]");
  }
  double prior_sum = 0.0;
  for (std::size_t z = 0; z < segments.size(); ++z) {
    const Segment& s = segments[z];
    const std::string tag = "segment " + std::to_string(z);
    if (!(s.prior > 0.0)) throw ConfigError(tag + ": prior must be > 0");
    prior_sum += s.prior;
    if (!std::isfinite(s.beta0)) throw ConfigError(tag + ": beta0 is not finite");
    if (s.weights.size() != atom_count) throw ConfigError(tag + ": weights need one entry per atom");
    for (double w : s.weights) {
      if (!std::isfinite(w)) throw ConfigError(tag + ": non-finite atom weight");
    }
    detail::check_distribution(s.initial_intents, intent_vocab, tag + " initial_intents");
    for (int h : hangup_intents) {
      if (s.initial_intents[static_cast<std::size_t>(h)] > 0.0) {
        throw ConfigError(tag + ": first-turn intent distribution puts mass on a hangup intent");
      }
    }
    if (s.transitions.size() != n_strat) throw ConfigError(tag + ": transitions need one row per strategy");
    for (std::size_t k = 0; k < n_strat; ++k) {
      detail::check_distribution(s.transitions[k], intent_vocab, tag + " transition row " + std::to_string(k));
    }
    if (s.sparse.size() != sparse_vocab.size()) throw ConfigError(tag + ": one sparse distribution per feature");
    for (std::size_t f = 0; f < sparse_vocab.size(); ++f) {
      detail::check_distribution(s.sparse[f], sparse_vocab[f], tag + " sparse feature " + std::to_string(f));
    }
    if (s.numeric.size() != numeric_count) throw ConfigError(tag + ": one numeric spec per feature");
    for (const auto& n : s.numeric) {
      if (!(n.sd >= 0.0) || !std::isfinite(n.mean)) throw ConfigError(tag + ": invalid numeric spec");
    }
    detail::check_weights(s.human_bias, n_strat, tag + " human_bias");
  }
  if (std::abs(prior_sum - 1.0) > 1e-9) throw ConfigError("segment priors do not sum to 1");
}

inline SyntheticConfig synthetic_config_from_json(const json& j) {
  try {
    SyntheticConfig c;
    c.intent_vocab = j.at("intent_vocab").get<std::size_t>();
    c.atom_count = j.at("atom_count").get<std::size_t>();
    c.sparse_vocab = j.value("sparse_vocab", std::vector<std::size_t>{});
    c.numeric_count = j.value("numeric_count", std::size_t{0});
    c.hangup_intents = j.value("hangup_intents", std::vector<int>{});
    c.gamma = j.value("gamma", 1.0);
    c.t_max = j.value("t_max", kMaxTurns);
    c.bin_noise = j.value("bin_noise", 0.0);
    c.intent_noise = j.value("intent_noise", 0.0);
    c.dialogues = j.value("dialogues", std::size_t{1000});
    if (c.atom_count > kMaxAtoms) throw ConfigError("atom count must be <= " + std::to_string(kMaxAtoms));
    if (c.t_max > kMaxTurns) throw ConfigError("t_max must be <= " + std::to_string(kMaxTurns));
    try {
      c.strategies = candidates_from_json(j.at("strategies"));
    } catch (const ValidationError& e) {
      throw ConfigError(std::string("strategies: ") + e.what());
    }
    const std::size_t n_strat = c.strategies.size();
    const json& h = j.at("human");
    c.human.opening = h.at("opening").get<std::vector<double>>();
    c.human.by_intent = h.at("by_intent").get<std::vector<std::vector<double>>>();
    for (const auto& sj : j.at("segments")) {
      Segment s;
      s.name = sj.value("name", "segment");
      s.prior = sj.value("prior", 1.0);
      s.beta0 = sj.value("beta0", 0.0);
      s.weights = sj.at("weights").get<std::vector<double>>();
      s.initial_intents = sj.at("initial_intents").get<std::vector<double>>();
      const json& tr = sj.at("transitions");
      const auto base = tr.at("default").get<std::vector<double>>();
      s.transitions.assign(n_strat, base);
      if (auto it = tr.find("by_strategy"); it != tr.end()) {
        for (auto e = it->begin(); e != it->end(); ++e) {
          s.transitions.at(c.strategies.index_of(std::stoi(e.key()))) = e.value().get<std::vector<double>>();
        }
      }
      s.sparse = sj.value("sparse", std::vector<std::vector<double>>{});
      for (const auto& nj : sj.value("numeric", json::array())) {
        s.numeric.push_back({nj.at("mean").get<double>(), nj.at("sd").get<double>()});
      }
      s.human_bias = sj.value("human_bias", std::vector<double>(n_strat, 1.0));
      c.segments.push_back(std::move(s));
    }
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("environment config: ") + e.what());
  }
}

inline json to_json(const SyntheticConfig& c) {
  json segs = json::array();
  for (const auto& s : c.segments) {
    json by_strategy = json::object();
    for (std::size_t k = 0; k < s.transitions.size(); ++k) {
      by_strategy[std::to_string(c.strategies[k].id)] = s.transitions[k];
    }
    json numeric = json::array();
    for (const auto& n : s.numeric) numeric.push_back({{"mean", n.mean}, {"sd", n.sd}});
    segs.push_back({{"name", s.name},
                    {"prior", s.prior},
                    {"beta0", s.beta0},
                    {"weights", s.weights},
                    {"initial_intents", s.initial_intents},
                    {"transitions", {{"default", s.transitions.front()}, {"by_strategy", by_strategy}}},
                    {"sparse", s.sparse},
                    {"numeric", numeric},
                    {"human_bias", s.human_bias}});
  }
  return {{"intent_vocab", c.intent_vocab},
          {"atom_count", c.atom_count},
          {"sparse_vocab", c.sparse_vocab},
          {"numeric_count", c.numeric_count},
          {"hangup_intents", c.hangup_intents},
          {"gamma", c.gamma},
          {"t_max", c.t_max},
          {"bin_noise", c.bin_noise},
          {"intent_noise", c.intent_noise},
          {"dialogues", c.dialogues},
          {"strategies", to_json(c.strategies)},
          {"human", {{"opening", c.human.opening}, {"by_intent", c.human.by_intent}}},
          {"segments", segs}};
}

// ---- sampling ---------------------------------------------------------------

inline std::size_t sample_segment(const SyntheticConfig& c, Rng& rng) {
  std::vector<double> priors;
  for (const auto& s : c.segments) priors.push_back(s.prior);
  return sample_categorical(priors, rng);
}

inline UserProfile sample_profile(const SyntheticConfig& c, std::size_t z, Rng& rng) {
  UserProfile u;
  const Segment& s = c.segments[z];
  for (std::size_t f = 0; f < c.sparse_vocab.size(); ++f) {
    u.sparse.push_back({static_cast<int>(f), static_cast<int>(sample_categorical(s.sparse[f], rng))});
  }
  for (std::size_t f = 0; f < c.numeric_count; ++f) {
    const double v = s.numeric[f].mean + s.numeric[f].sd * std::normal_distribution<double>(0.0, 1.0)(rng);
    u.numeric.push_back({static_cast<int>(f), v});
  }
  return u;
}

/// Segment propensity: repayment probability with no strategy effects.
inline double segment_propensity(const SyntheticConfig& c, std::size_t z) { return sigmoid(c.segments[z].beta0); }

/// Anything that answers user intents with a strategy from the environment catalogue.
class Responder {
 public:
  virtual ~Responder() = default;
  virtual void begin(const UserProfile& user) = 0;
  /// Catalogue index of the strategy played in reply to `intent`.
  virtual std::size_t respond(int intent) = 0;
};

struct Episode {
  std::size_t segment = 0;
  UserProfile user;
  double bin_key = 0.0;
  std::vector<Turn> turns;          // recorded turns (intent noise applied)
  std::vector<int> true_intents;
  std::vector<int> path;            // strategy ids, one per turn
  double success_probability = 0.0; // closed-form Bernoulli parameter of the label
  int label = 0;
};

/// Alternates user intent and responder strategy until a hangup intent, a
/// terminal strategy, or t_max turns; then draws the repayment label.
inline Episode play_episode(const SyntheticConfig& c, Responder& responder, Rng& rng) {
  Episode ep;
  ep.segment = sample_segment(c, rng);
  const Segment& seg = c.segments[ep.segment];
  ep.user = sample_profile(c, ep.segment, rng);
  ep.bin_key = segment_propensity(c, ep.segment) + c.bin_noise * std::normal_distribution<double>(0.0, 1.0)(rng);
  responder.begin(ep.user);

  std::vector<int> non_hangup;
  for (std::size_t i = 0; i < c.intent_vocab; ++i) {
    if (!c.is_hangup(static_cast<int>(i))) non_hangup.push_back(static_cast<int>(i));
  }

  double logit = seg.beta0;
  int intent = static_cast<int>(sample_categorical(seg.initial_intents, rng));
  for (std::size_t t = 1; t <= c.t_max; ++t) {
    int recorded = intent;
    if (c.intent_noise > 0.0 && uniform01(rng) < c.intent_noise) {
      recorded = non_hangup[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(non_hangup.size())) %
                            non_hangup.size()];
    }
    // The responder hears the recorded (possibly misrecognized) intent.
    const std::size_t s = responder.respond(recorded);
    if (s >= c.strategies.size()) throw ContractError("responder returned an unknown strategy");
    ep.turns.push_back({recorded, c.strategies[s].atoms});
    ep.true_intents.push_back(intent);
    ep.path.push_back(c.strategies[s].id);
    logit += c.effect(ep.segment, s, t);
    if (c.strategies[s].terminal) break;
    intent = static_cast<int>(sample_categorical(seg.transitions[s], rng));
    if (c.is_hangup(intent)) break;
  }
  ep.success_probability = sigmoid(logit);
  ep.label = uniform01(rng) < ep.success_probability ? 1 : 0;
  return ep;
}

/// Human collector: samples a strategy from the opening / per-intent weights,
/// scaled by the segment bias and restricted to strategies under their limits.
class HumanResponder final : public Responder {
 public:
  HumanResponder(const SyntheticConfig& c, Rng& rng) : c_(c), rng_(rng) {}

  void begin(const UserProfile&) override {
    used_.assign(c_.strategies.size(), 0);
    turn_ = 0;
  }

  /// The human knows the segment of the customer they are talking to.
  void set_segment(std::size_t z) { segment_ = z; }

  std::size_t respond(int intent) override {
    ++turn_;
    const auto& base = turn_ == 1 ? c_.human.opening : c_.human.by_intent[static_cast<std::size_t>(intent)];
    std::vector<double> w(base.size());
    for (std::size_t s = 0; s < w.size(); ++s) {
      const auto& strat = c_.strategies[s];
      const bool exhausted = strat.limit && used_[s] >= *strat.limit;
      w[s] = exhausted ? 0.0 : base[s] * c_.segments[segment_].human_bias[s];
    }
    double total = 0.0;
    for (double v : w) total += v;
    if (!(total > 0.0)) {
      // Nothing left the human would say: hang up politely.
      for (std::size_t s = 0; s < w.size(); ++s) w[s] = (c_.strategies[s].terminal && !c_.strategies[s].limit) ? 1.0 : 0.0;
    }
    const std::size_t s = sample_categorical(w, rng_);
    ++used_[s];
    return s;
  }

 private:
  const SyntheticConfig& c_;
  Rng& rng_;
  std::vector<int> used_;
  std::size_t turn_ = 0;
  std::size_t segment_ = 0;
};

/// Same draw as play_episode, but the human responder is told the latent segment.
inline Episode play_human_episode(const SyntheticConfig& c, Rng& rng) {
  // Peek the segment with a copy of the generator state so the human can
  // condition on it without perturbing the shared random stream.
  Rng peek = rng;
  const std::size_t z = sample_segment(c, peek);
  HumanResponder human(c, rng);
  human.set_segment(z);
  return play_episode(c, human, rng);
}

inline std::string dialogue_id(std::size_t i) {
  std::string digits = std::to_string(i);
  return "d" + std::string(digits.size() < 6 ? 6 - digits.size() : 0, '0') + digits;
}

/// Synthetic corpus drawn from the human logging policy. Dialogue i uses the
/// independent stream mix_seed(seed, i).
inline Corpus generate_corpus(const SyntheticConfig& c, std::uint64_t seed, std::vector<Episode>* episodes = nullptr) {
  c.validate();
  Corpus corpus;
  corpus.meta = c.meta();
  corpus.meta.generator = json{{"seed", seed}, {"config", to_json(c)}};
  corpus.dialogues.reserve(c.dialogues);
  for (std::size_t i = 0; i < c.dialogues; ++i) {
    Rng rng(mix_seed(seed, i));
    Episode ep = play_human_episode(c, rng);
    corpus.dialogues.push_back({dialogue_id(i), ep.user, ep.turns, ep.label, ep.bin_key});
    if (episodes != nullptr) episodes->push_back(std::move(ep));
  }
  return corpus;
}

}  // namespace p2t
