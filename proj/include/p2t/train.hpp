#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <vector>

#include "p2t/environment.hpp"
#include "p2t/model.hpp"

namespace p2t {

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 32;
  std::size_t epochs = 5;
  std::uint64_t seed = 1;
  /// Global gradient-norm clip; 0 disables clipping.
  double clip_norm = 5.0;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("learning rate must be > 0");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
    if (!(clip_norm >= 0.0)) throw ConfigError("clip norm must be >= 0");
  }
};

inline json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},     {"beta1", c.beta1},   {"beta2", c.beta2},         {"eps", c.eps},
          {"batch_size", c.batch_size}, {"epochs", c.epochs}, {"seed", c.seed}, {"clip_norm", c.clip_norm}};
}

inline TrainConfig train_config_from_json(const json& j, TrainConfig base = {}) {
  try {
    base.lr = j.value("lr", base.lr);
    base.beta1 = j.value("beta1", base.beta1);
    base.beta2 = j.value("beta2", base.beta2);
    base.eps = j.value("eps", base.eps);
    base.batch_size = j.value("batch_size", base.batch_size);
    base.epochs = j.value("epochs", base.epochs);
    base.seed = j.value("seed", base.seed);
    base.clip_norm = j.value("clip_norm", base.clip_norm);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  return base;
}

/// Adam over a list of (value, grad) parameter pairs.
class Adam {
 public:
  explicit Adam(const TrainConfig& c) : c_(c) {}

  void step(std::vector<Param>& params) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.value.size(), 0.0);
        v_.emplace_back(p.value.size(), 0.0);
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(c_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(c_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto w = params[i].value.values();
      auto g = params[i].grad.values();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < w.size(); ++j) {
        m[j] = c_.beta1 * m[j] + (1.0 - c_.beta1) * g[j];
        v[j] = c_.beta2 * v[j] + (1.0 - c_.beta2) * g[j] * g[j];
        w[j] -= c_.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + c_.eps);
      }
    }
  }

  std::size_t steps() const noexcept { return t_; }

 private:
  TrainConfig c_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

/// Scales gradients so their global L2 norm is at most `max_norm`; returns the pre-clip norm.
inline double clip_gradients(std::vector<Param>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p.grad.values()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& p : params)
      for (double& g : p.grad.values()) g *= s;
  }
  return norm;
}

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;                 // mean L per dialogue
  double repayment_per_turn = 0.0;   // mean L_a per turn
  double usage_per_turn = 0.0;       // mean L_b per turn
  bool operator==(const EpochLog&) const = default;
};

struct TrainResult {
  Model model;
  std::vector<EpochLog> log;
  /// L_a per turn of the first minibatch, measured before any update.
  double initial_repayment_per_turn = 0.0;
};

/// Raised when the loss stops being finite; carries the last parameters that
/// completed an epoch cleanly.
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(const std::string& what, std::shared_ptr<Model> last_good)
      : NumericError(what), last_good_(std::move(last_good)) {}
  const std::shared_ptr<Model>& last_good() const noexcept { return last_good_; }

 private:
  std::shared_ptr<Model> last_good_;
};

inline void check_corpus_matches(const Corpus& corpus, const ModelConfig& mc) {
  if (corpus.meta.atom_count != mc.atom_count || corpus.meta.intent_vocab != mc.intent_vocab ||
      corpus.meta.sparse_vocab != mc.sparse_vocab || corpus.meta.numeric_count != mc.numeric_count) {
    throw ValidationError("corpus vocabulary does not match the model config");
  }
}

using EpochCallback = std::function<void(const EpochLog&)>;

/// Adam on minibatches of whole dialogues. The batch gradient is the mean of
/// per-dialogue loss gradients, each summed over that dialogue's own turns.
inline TrainResult train(const Corpus& corpus, const ModelConfig& mc, const TrainConfig& tc,
                         const EpochCallback& on_epoch = {}) {
  tc.validate();
  check_corpus_matches(corpus, mc);
  if (corpus.dialogues.empty()) throw ValidationError("training corpus is empty");
  for (const auto& d : corpus.dialogues) validate_dialogue(d, corpus.meta);

  TrainResult result{Model::initialized(mc, mix_seed(tc.seed, 0x1417)), {}, 0.0};
  Model& model = result.model;
  auto last_good = std::make_shared<Model>(model);
  Adam adam(tc);
  std::vector<std::size_t> order(corpus.dialogues.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    Rng rng(mix_seed(tc.seed, 0x5eed0000 + epoch));
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog log{epoch, 0.0, 0.0, 0.0};
    std::size_t turns = 0;
    try {
      for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
        const std::size_t stop = std::min(order.size(), start + tc.batch_size);
        model.zero_grad();
        double batch_la = 0.0;
        std::size_t batch_turns = 0;
        for (std::size_t i = start; i < stop; ++i) {
          const Dialogue& d = corpus.dialogues[order[i]];
          const LossValues l = model.accumulate_gradient(d);
          log.loss += l.total;
          log.repayment_per_turn += l.repayment;
          log.usage_per_turn += l.usage;
          batch_la += l.repayment;
          batch_turns += d.turns.size();
        }
        turns += batch_turns;
        if (epoch == 0 && start == 0) result.initial_repayment_per_turn = batch_la / static_cast<double>(batch_turns);
        const double inv = 1.0 / static_cast<double>(stop - start);
        for (auto& p : model.params())
          for (double& g : p.grad.values()) g *= inv;
        const double norm = clip_gradients(model.params(), tc.clip_norm);
        if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
        adam.step(model.params());
      }
    } catch (const NumericError& e) {
      throw TrainingDiverged(std::string("training diverged in epoch ") + std::to_string(epoch) + ": " + e.what(),
                             last_good);
    }
    log.loss /= static_cast<double>(order.size());
    log.repayment_per_turn /= static_cast<double>(turns);
    log.usage_per_turn /= static_cast<double>(turns);
    result.log.push_back(log);
    *last_good = model;
    if (on_epoch) on_epoch(log);
  }
  return result;
}

/// Mean per-turn repayment loss of `model` over a corpus (no updates).
inline double mean_repayment_loss_per_turn(const Model& model, const Corpus& corpus) {
  double la = 0.0;
  std::size_t turns = 0;
  for (const auto& d : corpus.dialogues) {
    la += model.loss_values(d).repayment;
    turns += d.turns.size();
  }
  return turns > 0 ? la / static_cast<double>(turns) : 0.0;
}

}  // namespace p2t
