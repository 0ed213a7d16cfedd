#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "p2t/environment.hpp"
#include "p2t/inference.hpp"
#include "p2t/train.hpp"

namespace p2t {

// ---- flow-based robot ------------------------------------------------------------

struct FlowNode {
  int id = 0;
  int strategy = 0;
  bool terminal = false;
};

/// Finite-state dialogue flow: nodes emit strategies, intents select edges.
class FlowGraph {
 public:
  FlowGraph() = default;
  FlowGraph(std::vector<FlowNode> nodes, std::map<std::pair<int, int>, int> edges, std::map<int, int> defaults,
            int start)
      : edges_(std::move(edges)), defaults_(std::move(defaults)), start_(start) {
    for (const auto& n : nodes) {
      if (!nodes_.emplace(n.id, n).second) throw ValidationError("duplicate flow node " + std::to_string(n.id));
    }
    validate();
  }

  int start() const noexcept { return start_; }
  const FlowNode& node(int id) const {
    auto it = nodes_.find(id);
    if (it == nodes_.end()) throw ContractError("unknown flow node " + std::to_string(id));
    return it->second;
  }
  const std::map<int, FlowNode>& nodes() const noexcept { return nodes_; }
  const std::map<std::pair<int, int>, int>& edges() const noexcept { return edges_; }
  const std::map<int, int>& defaults() const noexcept { return defaults_; }

  /// Explicit (node, intent) edge when present, the node's default edge otherwise.
  int next(int node_id, int intent) const {
    const FlowNode& n = node(node_id);
    if (n.terminal) throw StateError("flow already reached terminal node " + std::to_string(node_id));
    if (auto it = edges_.find({node_id, intent}); it != edges_.end()) return it->second;
    if (auto it = defaults_.find(node_id); it != defaults_.end()) return it->second;
    throw ContractError("flow node " + std::to_string(node_id) + " has no edge for intent " + std::to_string(intent));
  }

 private:
  void validate() const {
    if (!nodes_.count(start_)) throw ValidationError("flow start node does not exist");
    for (const auto& [key, to] : edges_) {
      if (!nodes_.count(key.first) || !nodes_.count(to)) throw ValidationError("flow edge references unknown node");
    }
    for (const auto& [from, to] : defaults_) {
      if (!nodes_.count(from) || !nodes_.count(to)) throw ValidationError("flow default references unknown node");
    }
    for (const auto& [id, n] : nodes_) {
      if (!n.terminal && !defaults_.count(id)) {
        throw ValidationError("non-terminal flow node " + std::to_string(id) + " has no default edge");
      }
    }
    // Every node must be able to reach a terminal node.
    std::set<int> good;
    for (const auto& [id, n] : nodes_) {
      if (n.terminal) good.insert(id);
    }
    if (good.empty()) throw ValidationError("flow graph has no terminal node");
    for (bool changed = true; changed;) {
      changed = false;
      for (const auto& [id, n] : nodes_) {
        if (good.count(id)) continue;
        bool reach = good.count(defaults_.at(id)) > 0;
        for (const auto& [key, to] : edges_) reach = reach || (key.first == id && good.count(to));
        if (reach) changed = good.insert(id).second || changed;
      }
    }
    if (good.size() != nodes_.size()) throw ValidationError("flow graph has nodes that cannot reach a terminal");
  }

  std::map<int, FlowNode> nodes_;
  std::map<std::pair<int, int>, int> edges_;
  std::map<int, int> defaults_;
  int start_ = 0;
};

inline int flow_step(const FlowGraph& g, int node, int intent) { return g.next(node, intent); }

inline FlowGraph flow_graph_from_json(const json& j) {
  try {
    std::vector<FlowNode> nodes;
    for (const auto& n : j.at("nodes")) {
      nodes.push_back({n.at("id").get<int>(), n.at("strategy").get<int>(), n.value("terminal", false)});
    }
    std::map<std::pair<int, int>, int> edges;
    for (const auto& e : j.value("edges", json::array())) {
      edges[{e.at("from").get<int>(), e.at("intent").get<int>()}] = e.at("to").get<int>();
    }
    std::map<int, int> defaults;
    for (const auto& e : j.value("defaults", json::array())) defaults[e.at("from").get<int>()] = e.at("to").get<int>();
    return FlowGraph(std::move(nodes), std::move(edges), std::move(defaults), j.at("start").get<int>());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("flow config: ") + e.what());
  }
}

/// One flow-robot conversation: the start node speaks first, each later
/// intent moves along an edge, and a terminal node ends the call.
class FlowSession {
 public:
  explicit FlowSession(const FlowGraph& g) : graph_(&g), node_(g.start()) {}

  int respond(int intent) {
    if (terminated_) throw StateError("flow session already terminated");
    if (started_) node_ = graph_->next(node_, intent);
    started_ = true;
    const FlowNode& n = graph_->node(node_);
    terminated_ = n.terminal;
    return n.strategy;
  }

  int node() const noexcept { return node_; }
  bool terminated() const noexcept { return terminated_; }

 private:
  const FlowGraph* graph_;
  int node_;
  bool started_ = false;
  bool terminated_ = false;
};

// ---- behavior cloning ------------------------------------------------------------

/// Picks the unmasked candidate a human collector would most likely use:
/// argmax of the usage score alone, lowest id on ties.
inline StepResult bc_step(Session& session, int intent) {
  if (!session.stream().dual()) throw ContractError("behavior cloning needs the usage head");
  session.observe(intent);
  const std::vector<bool> allowed = session.mask();
  const CandidateSet& cands = session.config().candidates;
  StepResult out;
  out.candidates.resize(cands.size());
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    CandidateScore& c = out.candidates[i];
    c.strategy_id = cands[i].id;
    c.masked = !allowed[i];
    if (c.masked) continue;
    c.usage_score = session.candidate_usage_score(i);
    if (!best || c.usage_score > out.candidates[*best].usage_score) best = i;
  }
  if (!best) throw ContractError("no unmasked candidate strategy");
  out.strategy_id = cands[*best].id;
  out.usage_score = out.candidates[*best].usage_score;
  out.script = session.commit(*best);
  out.terminated = session.terminated();
  return out;
}

// ---- user-features-only classifier (BCU) -------------------------------------------

/// Logistic regression over one-hot sparse categories and standardized numerics.
struct BcuModel {
  std::vector<std::size_t> sparse_vocab;
  std::size_t numeric_count = 0;
  std::vector<double> numeric_mean, numeric_sd;
  /// params[0]: weights (D x 1), params[1]: bias (1).
  std::vector<Param> params;

  const ad::Tensor& weights() const { return params.at(0).value; }
  double bias() const { return params.at(1).value[0]; }

  std::size_t feature_dim() const {
    std::size_t n = numeric_count;
    for (std::size_t v : sparse_vocab) n += v;
    return n;
  }

  std::vector<double> features(const UserProfile& u) const {
    std::vector<double> x(feature_dim(), 0.0);
    std::vector<std::size_t> offset(sparse_vocab.size(), 0);
    std::size_t off = 0;
    for (std::size_t f = 0; f < sparse_vocab.size(); ++f) {
      offset[f] = off;
      off += sparse_vocab[f];
    }
    for (const auto& s : u.sparse) {
      const auto f = static_cast<std::size_t>(s.feature);
      if (f >= sparse_vocab.size() || static_cast<std::size_t>(s.category) >= sparse_vocab[f]) {
        throw ValidationError("BCU: unknown sparse feature/category");
      }
      x[offset[f] + static_cast<std::size_t>(s.category)] = 1.0;
    }
    for (const auto& n : u.numeric) {
      const auto f = static_cast<std::size_t>(n.feature);
      if (f >= numeric_count) throw ValidationError("BCU: unknown numeric feature");
      x[off + f] = (n.value - numeric_mean[f]) / numeric_sd[f];
    }
    return x;
  }

  static BcuModel zeros(const CorpusMeta& meta) {
    BcuModel m;
    m.sparse_vocab = meta.sparse_vocab;
    m.numeric_count = meta.numeric_count;
    m.numeric_mean.assign(meta.numeric_count, 0.0);
    m.numeric_sd.assign(meta.numeric_count, 1.0);
    const ad::Tensor w = ad::Tensor::matrix(m.feature_dim(), 1);
    const ad::Tensor b = ad::Tensor::vector(1);
    m.params = {Param{"bcu_w", w, w}, Param{"bcu_b", b, b}};
    return m;
  }
};

inline double bcu_predict(const UserProfile& profile, const BcuModel& m) {
  const std::vector<double> x = m.features(profile);
  double z = m.bias();
  for (std::size_t i = 0; i < x.size(); ++i) z += x[i] * m.weights()[i];
  return sigmoid(z);
}

/// Fits the BCU baseline with the same Adam loop as the sequence model.
inline BcuModel train_bcu(const Corpus& corpus, const TrainConfig& tc) {
  tc.validate();
  BcuModel m = BcuModel::zeros(corpus.meta);
  std::vector<double> sum(m.numeric_count, 0.0), sq(m.numeric_count, 0.0), cnt(m.numeric_count, 0.0);
  for (const auto& d : corpus.dialogues) {
    for (const auto& n : d.user.numeric) {
      const auto f = static_cast<std::size_t>(n.feature);
      sum[f] += n.value;
      sq[f] += n.value * n.value;
      cnt[f] += 1.0;
    }
  }
  for (std::size_t f = 0; f < m.numeric_count; ++f) {
    if (cnt[f] > 0.0) {
      m.numeric_mean[f] = sum[f] / cnt[f];
      const double var = sq[f] / cnt[f] - m.numeric_mean[f] * m.numeric_mean[f];
      m.numeric_sd[f] = var > 1e-12 ? std::sqrt(var) : 1.0;
    }
  }
  std::vector<std::vector<double>> xs;
  xs.reserve(corpus.dialogues.size());
  for (const auto& d : corpus.dialogues) xs.push_back(m.features(d.user));

  Adam adam(tc);
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    Rng rng(mix_seed(tc.seed, 0xbc0000 + epoch));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      const std::size_t stop = std::min(order.size(), start + tc.batch_size);
      for (auto& p : m.params) p.grad.fill(0.0);
      for (std::size_t i = start; i < stop; ++i) {
        ad::Tape tape;
        const ad::Var w = tape.parameter(m.params[0].value, &m.params[0].grad);
        const ad::Var b = tape.parameter(m.params[1].value, &m.params[1].grad);
        const ad::Var p = tape.sigmoid(tape.affine(tape.constant(ad::Tensor::from(xs[order[i]])), w, b));
        const double y = corpus.dialogues[order[i]].label;
        tape.backward(tape.binary_cross_entropy(p, std::span<const double>(&y, 1)));
      }
      const double inv = 1.0 / static_cast<double>(stop - start);
      for (auto& p : m.params)
        for (double& g : p.grad.values()) g *= inv;
      clip_gradients(m.params, tc.clip_norm);
      adam.step(m.params);
    }
  }
  return m;
}

// ---- random scorer -------------------------------------------------------------------

/// n i.i.d. draws from U[0.5, 1): the stand-in score for policies that do not
/// predict repayment.
inline std::vector<double> random_scorer(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> dist(0.5, 1.0);
  std::vector<double> out(n);
  for (double& v : out) {
    do {
      v = dist(rng);
    } while (v >= 1.0);
  }
  return out;
}

}  // namespace p2t
