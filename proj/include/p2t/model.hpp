#pragma once

// Attention-based dual-way sequence model.
//
// Per turn t with strategy atoms s_t, intent embedding I_t and user vector u:
//   R_t  = attention-pooled atoms + gated-pooled atoms
//   GRU1 reads [R_t, I_t, u]      -> ŷ_t  = σ(h1_t·W_1 + b_1)       repayment way
//   GRU2 reads [R_{t-1}, I_t, u]  -> ŝ^t = σ(h2_t·W_2 + b_2) ∈ (0,1)^K  usage way
// The usage way sees only the previous strategy so that ŝ^t can score
// candidates before s_t is chosen.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "p2t/autodiff.hpp"
#include "p2t/corpus.hpp"

namespace p2t {

struct ModelConfig {
  std::size_t embed_dim = 16;
  std::size_t hidden_dim = 32;
  std::size_t atom_count = 1;
  std::size_t intent_vocab = 1;
  std::vector<std::size_t> sparse_vocab;
  std::size_t numeric_count = 0;
  std::size_t buckets = 8;
  double lambda = 1.0;
  bool no_user_features = false;
  bool single_way = false;
  bool no_attention_aggregation = false;

  bool operator==(const ModelConfig&) const = default;

  /// Copies the vocabulary sizes out of a corpus header.
  ModelConfig with_corpus(const CorpusMeta& meta) const {
    ModelConfig c = *this;
    c.atom_count = meta.atom_count;
    c.intent_vocab = meta.intent_vocab;
    c.sparse_vocab = meta.sparse_vocab;
    c.numeric_count = meta.numeric_count;
    return c;
  }

  void validate() const {
    if (embed_dim < 1 || hidden_dim < 1 || buckets < 1) throw ConfigError("embed_dim, hidden_dim, buckets must be >= 1");
    if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
    if (atom_count < 1 || atom_count > kMaxAtoms) throw ConfigError("atom count must be in [1, 10]");
    if (intent_vocab < 1) throw ConfigError("intent vocabulary must be >= 1");
    for (std::size_t v : sparse_vocab) {
      if (v < 1) throw ConfigError("sparse vocabulary sizes must be >= 1");
    }
  }
};

inline json to_json(const ModelConfig& c) {
  return {{"embed_dim", c.embed_dim},
          {"hidden_dim", c.hidden_dim},
          {"atom_count", c.atom_count},
          {"intent_vocab", c.intent_vocab},
          {"sparse_vocab", c.sparse_vocab},
          {"numeric_count", c.numeric_count},
          {"buckets", c.buckets},
          {"lambda", c.lambda},
          {"no_user_features", c.no_user_features},
          {"single_way", c.single_way},
          {"no_attention_aggregation", c.no_attention_aggregation}};
}

/// Missing keys keep the defaults of `base`.
inline ModelConfig model_config_from_json(const json& j, ModelConfig base = {}) {
  try {
    base.embed_dim = j.value("embed_dim", base.embed_dim);
    base.hidden_dim = j.value("hidden_dim", base.hidden_dim);
    base.atom_count = j.value("atom_count", base.atom_count);
    base.intent_vocab = j.value("intent_vocab", base.intent_vocab);
    base.sparse_vocab = j.value("sparse_vocab", base.sparse_vocab);
    base.numeric_count = j.value("numeric_count", base.numeric_count);
    base.buckets = j.value("buckets", base.buckets);
    base.lambda = j.value("lambda", base.lambda);
    base.no_user_features = j.value("no_user_features", base.no_user_features);
    base.single_way = j.value("single_way", base.single_way);
    base.no_attention_aggregation = j.value("no_attention_aggregation", base.no_attention_aggregation);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  return base;
}

struct Param {
  std::string name;
  ad::Tensor value;
  ad::Tensor grad;
};

/// Learnable arrays bound to one tape.
struct BoundParams {
  ad::Var atom_embed, intent_embed;
  std::vector<ad::Var> sparse_embed;
  std::vector<ad::Var> autodis_w, autodis_b, autodis_meta;
  ad::Var user_w, user_b;
  ad::Var att_wa, att_ba, att_wb, att_bb;
  ad::Var gate_wa, gate_ba, gate_wb, gate_bb, gate_wc, gate_bc;
  ad::GruWeights gru1, gru2;
  ad::Var head1_w, head1_b, head2_w, head2_b;
};

/// Per-step tape nodes of one forward pass.
struct SequenceVars {
  ad::Var user;
  std::vector<ad::Var> strategy;   // R_t
  std::vector<ad::Var> repayment;  // ŷ_t, shape [1]
  std::vector<ad::Var> usage;      // ŝ^t, shape [K]
};

struct SequenceOutputs {
  std::vector<double> repayment;
  std::vector<std::vector<double>> usage;
};

struct LossVars {
  ad::Var total, repayment, usage;
};

struct LossValues {
  double total = 0.0, repayment = 0.0, usage = 0.0;
};

class Model {
 public:
  /// All parameters zero.
  explicit Model(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    build();
  }

  /// Small random initialization: embeddings U(−0.05, 0.05), weights
  /// U(−1/√fan_in, 1/√fan_in), biases zero.
  static Model initialized(const ModelConfig& config, std::uint64_t seed) {
    Model m(config);
    std::mt19937_64 rng(seed);
    for (auto& p : m.params_) {
      double bound = 0.0;
      const auto kind = m.kinds_.at(p.name);
      if (kind == Kind::embedding) bound = 0.05;
      if (kind == Kind::weight) bound = 1.0 / std::sqrt(static_cast<double>(p.value.rows()));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (double& v : p.value.values()) v = bound > 0.0 ? dist(rng) : 0.0;
    }
    return m;
  }

  const ModelConfig& config() const noexcept { return config_; }
  std::vector<Param>& params() noexcept { return params_; }
  const std::vector<Param>& params() const noexcept { return params_; }

  Param& param(std::string_view name) { return params_.at(index(name)); }
  const Param& param(std::string_view name) const { return params_.at(index(name)); }
  bool has_param(std::string_view name) const { return index_.count(std::string(name)) > 0; }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(0.0);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  BoundParams bind(ad::Tape& tape, bool with_grad) {
    return bind_impl(tape, with_grad);
  }
  BoundParams bind(ad::Tape& tape) const {
    return const_cast<Model*>(this)->bind_impl(tape, false);
  }

  // ---- user features -------------------------------------------------------

  /// u = Relu([u1, u2]·W_u + b_u): u1 averages the sparse-category embeddings;
  /// u2 averages, over numeric features, a softmax mix of B bucket
  /// meta-embeddings weighted by a learned 1→B projection of the value.
  ad::Var embed_user(ad::Tape& tape, const BoundParams& b, const UserProfile& user) const {
    const std::size_t e = config_.embed_dim;
    if (config_.no_user_features) return tape.constant(ad::Tensor::vector(e));
    check_profile(user);
    std::vector<ad::Var> rows;
    for (const auto& f : user.sparse) {
      rows.push_back(tape.gather(b.sparse_embed[static_cast<std::size_t>(f.feature)], static_cast<std::size_t>(f.category)));
    }
    const ad::Var u1 = rows.empty() ? tape.constant(ad::Tensor::vector(e)) : tape.mean_rows(tape.stack(rows));
    rows.clear();
    const std::vector<bool> all(config_.buckets, true);
    for (const auto& f : user.numeric) {
      const auto j = static_cast<std::size_t>(f.feature);
      const ad::Var value = tape.constant(ad::Tensor::from({f.value}));
      const ad::Var weights = tape.softmax_masked(tape.affine(value, b.autodis_w[j], b.autodis_b[j]), all);
      rows.push_back(tape.matmul(weights, b.autodis_meta[j]));
    }
    const ad::Var u2 = rows.empty() ? tape.constant(ad::Tensor::vector(e)) : tape.mean_rows(tape.stack(rows));
    return tape.relu(tape.affine(tape.concat({u1, u2}), b.user_w, b.user_b));
  }

  // ---- policy aggregation ----------------------------------------------------

  /// R'_t = Σ_k α_k P_k with α = softmax over present atoms of
  /// Tanh([P_k, I_t, u]·W_a + b_a)·W_b + b_b.
  ad::Var aggregate_attention(ad::Tape& tape, const BoundParams& b, const AtomSet& atoms, ad::Var intent,
                              ad::Var user) const {
    if (atoms.empty()) throw ContractError("aggregate_attention: empty atom set");
    std::vector<ad::Var> embeds, scores;
    for (int k : atoms) {
      const ad::Var p = atom(tape, b, k);
      embeds.push_back(p);
      const ad::Var d = tape.concat({p, intent, user});
      scores.push_back(tape.affine(tape.tanh(tape.affine(d, b.att_wa, b.att_ba)), b.att_wb, b.att_bb));
    }
    const ad::Var alpha = tape.softmax_masked(tape.concat(scores), std::vector<bool>(atoms.size(), true));
    return tape.matmul(alpha, tape.stack(embeds));
  }

  /// R''_t = mean_k ((d_k ⊙ e'_k)·W'_c + b'_c) with d_k = [P_k, I_t, u] and
  /// e'_k = Sigmoid(d_k·W'_a + b'_a)·W'_b + b'_b.
  ad::Var aggregate_gated(ad::Tape& tape, const BoundParams& b, const AtomSet& atoms, ad::Var intent,
                          ad::Var user) const {
    if (atoms.empty()) throw ContractError("aggregate_gated: empty atom set");
    std::vector<ad::Var> rows;
    for (int k : atoms) {
      const ad::Var d = tape.concat({atom(tape, b, k), intent, user});
      const ad::Var gate = tape.affine(tape.sigmoid(tape.affine(d, b.gate_wa, b.gate_ba)), b.gate_wb, b.gate_bb);
      rows.push_back(tape.affine(tape.mul(d, gate), b.gate_wc, b.gate_bc));
    }
    return tape.mean_rows(tape.stack(rows));
  }

  static ad::Var combine(ad::Tape& tape, ad::Var attention, ad::Var gated) { return tape.add(attention, gated); }

  /// R_t, honoring the no-attention ablation (plain mean of atom embeddings).
  ad::Var strategy_vector(ad::Tape& tape, const BoundParams& b, const AtomSet& atoms, ad::Var intent,
                          ad::Var user) const {
    if (atoms.empty()) throw ContractError("strategy_vector: empty atom set");
    check_atoms(atoms);
    if (config_.no_attention_aggregation) {
      std::vector<ad::Var> rows;
      for (int k : atoms) rows.push_back(atom(tape, b, k));
      return tape.mean_rows(tape.stack(rows));
    }
    return combine(tape, aggregate_attention(tape, b, atoms, intent, user),
                   aggregate_gated(tape, b, atoms, intent, user));
  }

  ad::Var intent_embedding(ad::Tape& tape, const BoundParams& b, int intent) const {
    if (intent < 0 || static_cast<std::size_t>(intent) >= config_.intent_vocab) {
      throw ValidationError("intent " + std::to_string(intent) + " outside vocabulary");
    }
    return tape.gather(b.intent_embed, static_cast<std::size_t>(intent));
  }

  // ---- recurrent steps -------------------------------------------------------

  struct Step {
    ad::Var hidden;
    ad::Var output;
  };

  /// One repayment-way step from hidden state h1.
  Step repayment_step(ad::Tape& tape, const BoundParams& b, ad::Var h1, ad::Var strategy, ad::Var intent,
                      ad::Var user) const {
    const ad::Var h = ad::gru_cell(tape, tape.concat({strategy, intent, user}), h1, b.gru1);
    return {h, tape.sigmoid(tape.affine(h, b.head1_w, b.head1_b))};
  }

  /// One usage-way step; `previous_strategy` is R_{t−1} (zero at t = 1).
  Step usage_step(ad::Tape& tape, const BoundParams& b, ad::Var h2, ad::Var previous_strategy, ad::Var intent,
                  ad::Var user) const {
    if (config_.single_way) throw ContractError("usage way is disabled in single-way models");
    const ad::Var h = ad::gru_cell(tape, tape.concat({previous_strategy, intent, user}), h2, b.gru2);
    return {h, tape.sigmoid(tape.affine(h, b.head2_w, b.head2_b))};
  }

  ad::Var zero_hidden(ad::Tape& tape) const { return tape.constant(ad::Tensor::vector(config_.hidden_dim)); }
  ad::Var zero_strategy(ad::Tape& tape) const { return tape.constant(ad::Tensor::vector(config_.embed_dim)); }

  SequenceVars forward_sequence(ad::Tape& tape, const BoundParams& b, const Dialogue& d) const {
    if (d.turns.empty()) throw ContractError("forward_sequence: dialogue has no turns");
    SequenceVars out;
    out.user = embed_user(tape, b, d.user);
    ad::Var h1 = zero_hidden(tape);
    ad::Var h2 = h1;
    ad::Var prev = zero_strategy(tape);
    for (const auto& turn : d.turns) {
      const ad::Var intent = intent_embedding(tape, b, turn.intent);
      const ad::Var r = strategy_vector(tape, b, turn.strategy, intent, out.user);
      const Step rep = repayment_step(tape, b, h1, r, intent, out.user);
      h1 = rep.hidden;
      out.repayment.push_back(rep.output);
      out.strategy.push_back(r);
      if (!config_.single_way) {
        const Step use = usage_step(tape, b, h2, prev, intent, out.user);
        h2 = use.hidden;
        out.usage.push_back(use.output);
      }
      prev = r;
    }
    return out;
  }

  /// L = L_a + λ·L_b, the dialogue label broadcast to every step of L_a.
  LossVars loss(ad::Tape& tape, const Dialogue& d, const SequenceVars& out) const {
    const std::vector<double> labels(out.repayment.size(), static_cast<double>(d.label));
    const ad::Var la = tape.binary_cross_entropy(tape.concat(out.repayment), labels);
    if (config_.single_way) return {la, la, la};
    std::vector<double> targets;
    targets.reserve(d.turns.size() * config_.atom_count);
    for (const auto& t : d.turns) {
      const auto ind = t.strategy.indicator(config_.atom_count);
      targets.insert(targets.end(), ind.begin(), ind.end());
    }
    const ad::Var lb = tape.binary_cross_entropy(tape.concat(out.usage), targets);
    return {tape.add(la, tape.scale(lb, config_.lambda)), la, lb};
  }

  // ---- value-level conveniences ----------------------------------------------

  SequenceOutputs forward_values(const Dialogue& d) const {
    ad::Tape tape;
    const BoundParams b = bind(tape);
    const SequenceVars vars = forward_sequence(tape, b, d);
    SequenceOutputs out;
    for (ad::Var v : vars.repayment) out.repayment.push_back(tape.scalar(v));
    for (ad::Var v : vars.usage) out.usage.push_back(tape.value(v).storage());
    return out;
  }

  LossValues loss_values(const Dialogue& d) const {
    ad::Tape tape;
    const BoundParams b = bind(tape);
    const LossVars l = loss(tape, d, forward_sequence(tape, b, d));
    return {tape.scalar(l.total), tape.scalar(l.repayment), config_.single_way ? 0.0 : tape.scalar(l.usage)};
  }

  /// Repayment probability after the last turn.
  double predict(const Dialogue& d) const { return forward_values(d).repayment.back(); }

  /// Adds this dialogue's loss gradient into the parameter grads; returns the loss.
  LossValues accumulate_gradient(const Dialogue& d) {
    ad::Tape tape;
    const BoundParams b = bind(tape, true);
    const LossVars l = loss(tape, d, forward_sequence(tape, b, d));
    tape.backward(l.total);
    return {tape.scalar(l.total), tape.scalar(l.repayment), config_.single_way ? 0.0 : tape.scalar(l.usage)};
  }

  void check_dialogue(const Dialogue& d) const {
    if (d.turns.empty() || d.turns.size() > kMaxTurns) throw ValidationError("dialogue length out of range");
    check_profile(d.user);
    for (const auto& t : d.turns) {
      if (t.intent < 0 || static_cast<std::size_t>(t.intent) >= config_.intent_vocab) {
        throw ValidationError("intent outside model vocabulary");
      }
      check_atoms(t.strategy);
    }
  }

 private:
  enum class Kind { embedding, weight, bias };

  ad::Var atom(ad::Tape& tape, const BoundParams& b, int k) const {
    return tape.gather(b.atom_embed, static_cast<std::size_t>(k));
  }

  void check_atoms(const AtomSet& atoms) const { atoms.validate(config_.atom_count); }

  void check_profile(const UserProfile& user) const {
    for (const auto& f : user.sparse) {
      if (f.feature < 0 || static_cast<std::size_t>(f.feature) >= config_.sparse_vocab.size()) {
        throw ValidationError("unknown sparse feature id " + std::to_string(f.feature));
      }
      if (f.category < 0 ||
          static_cast<std::size_t>(f.category) >= config_.sparse_vocab[static_cast<std::size_t>(f.feature)]) {
        throw ValidationError("unknown category id " + std::to_string(f.category) + " for sparse feature " +
                              std::to_string(f.feature));
      }
    }
    for (const auto& f : user.numeric) {
      if (f.feature < 0 || static_cast<std::size_t>(f.feature) >= config_.numeric_count) {
        throw ValidationError("unknown numeric feature id " + std::to_string(f.feature));
      }
      if (!std::isfinite(f.value)) throw ValidationError("numeric feature value is not finite");
    }
  }

  std::size_t index(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ValidationError("model has no parameter '" + std::string(name) + "'");
    return it->second;
  }

  void add(const std::string& name, ad::Tensor shape_like, Kind kind) {
    index_[name] = params_.size();
    kinds_[name] = kind;
    ad::Tensor grad = shape_like;
    params_.push_back({name, std::move(shape_like), std::move(grad)});
  }
  void add_matrix(const std::string& name, std::size_t r, std::size_t c, Kind kind) {
    add(name, ad::Tensor::matrix(r, c), kind);
  }
  void add_vector(const std::string& name, std::size_t n) { add(name, ad::Tensor::vector(n), Kind::bias); }

  void add_gru(const std::string& prefix, std::size_t in, std::size_t h) {
    for (const char* gate : {"z", "r", "h"}) {
      add_matrix(prefix + "_w" + gate, in, h, Kind::weight);
      add_matrix(prefix + "_u" + gate, h, h, Kind::weight);
      add_vector(prefix + "_b" + gate, h);
    }
  }

  void build() {
    const std::size_t e = config_.embed_dim, h = config_.hidden_dim, k = config_.atom_count;
    const std::size_t d = 3 * e;
    add_matrix("atom_embed", k, e, Kind::embedding);
    add_matrix("intent_embed", config_.intent_vocab, e, Kind::embedding);
    if (!config_.no_user_features) {
      for (std::size_t f = 0; f < config_.sparse_vocab.size(); ++f) {
        add_matrix("sparse_embed_" + std::to_string(f), config_.sparse_vocab[f], e, Kind::embedding);
      }
      for (std::size_t f = 0; f < config_.numeric_count; ++f) {
        add_matrix("autodis_w_" + std::to_string(f), 1, config_.buckets, Kind::weight);
        add_vector("autodis_b_" + std::to_string(f), config_.buckets);
        add_matrix("autodis_meta_" + std::to_string(f), config_.buckets, e, Kind::embedding);
      }
      add_matrix("user_w", 2 * e, e, Kind::weight);
      add_vector("user_b", e);
    }
    if (!config_.no_attention_aggregation) {
      add_matrix("att_wa", d, e, Kind::weight);
      add_vector("att_ba", e);
      add_matrix("att_wb", e, 1, Kind::weight);
      add_vector("att_bb", 1);
      add_matrix("gate_wa", d, e, Kind::weight);
      add_vector("gate_ba", e);
      add_matrix("gate_wb", e, d, Kind::weight);
      add_vector("gate_bb", d);
      add_matrix("gate_wc", d, e, Kind::weight);
      add_vector("gate_bc", e);
    }
    add_gru("gru1", d, h);
    add_matrix("head1_w", h, 1, Kind::weight);
    add_vector("head1_b", 1);
    if (!config_.single_way) {
      add_gru("gru2", d, h);
      add_matrix("head2_w", h, k, Kind::weight);
      add_vector("head2_b", k);
    }
  }

  BoundParams bind_impl(ad::Tape& tape, bool with_grad) {
    auto p = [&](const std::string& name) {
      Param& prm = params_[index(name)];
      return tape.parameter(prm.value, with_grad ? &prm.grad : nullptr);
    };
    auto gru = [&](const std::string& prefix) {
      return ad::GruWeights{p(prefix + "_wz"), p(prefix + "_uz"), p(prefix + "_bz"),
                            p(prefix + "_wr"), p(prefix + "_ur"), p(prefix + "_br"),
                            p(prefix + "_wh"), p(prefix + "_uh"), p(prefix + "_bh")};
    };
    BoundParams b;
    b.atom_embed = p("atom_embed");
    b.intent_embed = p("intent_embed");
    if (!config_.no_user_features) {
      for (std::size_t f = 0; f < config_.sparse_vocab.size(); ++f) b.sparse_embed.push_back(p("sparse_embed_" + std::to_string(f)));
      for (std::size_t f = 0; f < config_.numeric_count; ++f) {
        b.autodis_w.push_back(p("autodis_w_" + std::to_string(f)));
        b.autodis_b.push_back(p("autodis_b_" + std::to_string(f)));
        b.autodis_meta.push_back(p("autodis_meta_" + std::to_string(f)));
      }
      b.user_w = p("user_w");
      b.user_b = p("user_b");
    }
    if (!config_.no_attention_aggregation) {
      b.att_wa = p("att_wa");
      b.att_ba = p("att_ba");
      b.att_wb = p("att_wb");
      b.att_bb = p("att_bb");
      b.gate_wa = p("gate_wa");
      b.gate_ba = p("gate_ba");
      b.gate_wb = p("gate_wb");
      b.gate_bb = p("gate_bb");
      b.gate_wc = p("gate_wc");
      b.gate_bc = p("gate_bc");
    }
    b.gru1 = gru("gru1");
    b.head1_w = p("head1_w");
    b.head1_b = p("head1_b");
    if (!config_.single_way) {
      b.gru2 = gru("gru2");
      b.head2_w = p("head2_w");
      b.head2_b = p("head2_b");
    }
    return b;
  }

  ModelConfig config_;
  std::vector<Param> params_;
  std::map<std::string, std::size_t> index_;
  std::map<std::string, Kind> kinds_;
};

// ---- checkpoints ---------------------------------------------------------------
//
// {"format": "p2t-checkpoint", "version": 1, "config": {...ModelConfig...},
//  "params": [{"name": ..., "shape": [...], "values": [...row-major...]}, ...]}

inline constexpr const char* kCheckpointFormat = "p2t-checkpoint";

inline json checkpoint_json(const Model& m) {
  json params = json::array();
  for (const auto& p : m.params()) {
    params.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"values", p.value.storage()}});
  }
  return {{"format", kCheckpointFormat}, {"version", 1}, {"config", to_json(m.config())}, {"params", params}};
}

inline void save_params(const std::string& path, const Model& m) {
  if (path.empty()) throw IoError("empty checkpoint path");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << checkpoint_json(m).dump() << '\n';
  if (!os) throw IoError("write failed for '" + path + "'");
}

inline json read_checkpoint_json(const std::string& path) {
  if (path.empty()) throw IoError("empty checkpoint path");
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  try {
    json j = json::parse(is);
    if (j.value("format", "") != kCheckpointFormat) throw ValidationError("not a checkpoint file: " + path);
    return j;
  } catch (const json::exception& e) {
    throw ParseError(0, std::string("checkpoint: ") + e.what());
  }
}

/// Copies checkpoint values into `m`; the stored config must equal m.config().
inline void load_params_json(const json& j, Model& m) {
  const ModelConfig stored = model_config_from_json(j.at("config"));
  if (!(stored == m.config())) {
    throw ValidationError("checkpoint config does not match model config (stored K=" +
                          std::to_string(stored.atom_count) + ", expected K=" +
                          std::to_string(m.config().atom_count) + ")");
  }
  const json& params = j.at("params");
  if (params.size() != m.params().size()) throw ValidationError("checkpoint parameter count mismatch");
  for (const auto& pj : params) {
    Param& p = m.param(pj.at("name").get<std::string>());
    if (pj.at("shape").get<std::vector<std::size_t>>() != p.value.shape()) {
      throw ValidationError("shape mismatch for parameter '" + p.name + "'");
    }
    auto values = pj.at("values").get<std::vector<double>>();
    if (values.size() != p.value.size()) throw ValidationError("value count mismatch for '" + p.name + "'");
    for (double v : values) {
      if (!std::isfinite(v)) throw ValidationError("non-finite value in '" + p.name + "'");
    }
    p.value.storage() = std::move(values);
  }
}

inline void load_params(const std::string& path, Model& m) { load_params_json(read_checkpoint_json(path), m); }

/// Builds the model described by the checkpoint header and loads its values.
inline Model load_model(const std::string& path) {
  const json j = read_checkpoint_json(path);
  Model m(model_config_from_json(j.at("config")));
  load_params_json(j, m);
  return m;
}

}  // namespace p2t
