#pragma once

#include <array>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "p2t/pipeline.hpp"

namespace p2t::test {

inline std::string config_path(const std::string& name = "default.json") {
  return std::string(P2T_CONFIG_DIR) + "/" + name;
}

inline const AppConfig& default_config() {
  static const AppConfig cfg = load_app_config(config_path());
  return cfg;
}

/// One segment, two intents (1 = hangup), one strategy per atom plus a
/// terminal goodbye. Every knob the tests need is exposed.
inline json small_env(std::size_t atoms = 3) {
  json strategies = json::array();
  for (std::size_t k = 0; k < atoms; ++k) {
    strategies.push_back(
        {{"id", k}, {"atoms", json::array({k})}, {"templates", json::array({"s" + std::to_string(k)})}});
  }
  strategies.push_back({{"id", atoms}, {"atoms", json::array({0})}, {"terminal", true}, {"templates", json::array({"bye"})}});
  const std::size_t n = atoms + 1;
  std::vector<double> opening(n, 1.0);
  opening.back() = 0.0;
  json segment = {{"name", "only"},
                  {"beta0", 0.0},
                  {"weights", std::vector<double>(atoms, 0.0)},
                  {"initial_intents", std::vector<double>{1.0, 0.0}},
                  {"transitions", {{"default", std::vector<double>{0.7, 0.3}}}},
                  {"sparse", std::vector<std::vector<double>>{{0.2, 0.3, 0.5}}},
                  {"numeric", json::array({json{{"mean", 0.0}, {"sd", 1.0}}})}};
  json j;
  j["intent_vocab"] = 2;
  j["atom_count"] = atoms;
  j["sparse_vocab"] = std::vector<int>{3};
  j["numeric_count"] = 1;
  j["hangup_intents"] = std::vector<int>{1};
  j["gamma"] = 1.0;
  j["t_max"] = 4;
  j["dialogues"] = 200;
  j["strategies"] = strategies;
  j["human"] = {{"opening", opening}, {"by_intent", std::vector<std::vector<double>>{opening, opening}}};
  j["segments"] = json::array({segment});
  return j;
}

inline ModelConfig tiny_model_config(std::size_t e = 4, std::size_t h = 4, std::size_t k = 3) {
  ModelConfig c;
  c.embed_dim = e;
  c.hidden_dim = h;
  c.atom_count = k;
  c.intent_vocab = 3;
  c.sparse_vocab = {3, 2};
  c.numeric_count = 2;
  c.buckets = 3;
  c.lambda = 0.7;
  return c;
}

inline CorpusMeta meta_of(const ModelConfig& c) {
  CorpusMeta m;
  m.intent_vocab = c.intent_vocab;
  m.atom_count = c.atom_count;
  m.sparse_vocab = c.sparse_vocab;
  m.numeric_count = c.numeric_count;
  return m;
}

inline UserProfile random_profile(std::mt19937_64& rng, const CorpusMeta& m) {
  UserProfile u;
  for (std::size_t f = 0; f < m.sparse_vocab.size(); ++f) {
    u.sparse.push_back({static_cast<int>(f), static_cast<int>(rng() % m.sparse_vocab[f])});
  }
  std::normal_distribution<double> n(0.0, 1.0);
  for (std::size_t f = 0; f < m.numeric_count; ++f) u.numeric.push_back({static_cast<int>(f), n(rng)});
  return u;
}

inline AtomSet random_atoms(std::mt19937_64& rng, std::size_t k) {
  std::vector<int> atoms;
  for (std::size_t a = 0; a < k; ++a) {
    if (rng() % 2 == 0) atoms.push_back(static_cast<int>(a));
  }
  if (atoms.empty()) atoms.push_back(static_cast<int>(rng() % k));
  return AtomSet(atoms);
}

inline Dialogue random_dialogue(std::mt19937_64& rng, const CorpusMeta& m, std::size_t turns, std::string id = "d") {
  Dialogue d;
  d.id = std::move(id);
  d.user = random_profile(rng, m);
  for (std::size_t t = 0; t < turns; ++t) {
    d.turns.push_back({static_cast<int>(rng() % m.intent_vocab), random_atoms(rng, m.atom_count)});
  }
  d.label = static_cast<int>(rng() % 2);
  d.bin_key = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  return d;
}

/// Fills every parameter with U(-scale, scale).
inline void randomize(Model& m, std::uint64_t seed, double scale = 0.5) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& p : m.params()) {
    for (double& v : p.value.storage()) v = u(rng);
  }
}

// Straight-line reimplementation of the forward pass on plain vectors.
namespace oracle {

using Vec = std::vector<double>;

struct Mat {
  std::size_t rows = 0, cols = 0;
  const std::vector<double>* data = nullptr;
  double at(std::size_t r, std::size_t c) const { return (*data)[r * cols + c]; }
};

inline Mat mat(const Model& m, const std::string& name) {
  const Param& p = m.param(name);
  return {p.value.rows(), p.value.cols(), &p.value.storage()};
}

inline Vec row(const Mat& w, std::size_t r) {
  Vec out(w.cols);
  for (std::size_t c = 0; c < w.cols; ++c) out[c] = w.at(r, c);
  return out;
}

inline Vec vec(const Model& m, const std::string& name) { return m.param(name).value.storage(); }

// x·W (+ b)
inline Vec lin(const Vec& x, const Mat& w) {
  Vec out(w.cols, 0.0);
  for (std::size_t c = 0; c < w.cols; ++c) {
    for (std::size_t r = 0; r < w.rows; ++r) out[c] += x[r] * w.at(r, c);
  }
  return out;
}
inline Vec lin(const Vec& x, const Mat& w, const Vec& b) {
  Vec out = lin(x, w);
  for (std::size_t c = 0; c < out.size(); ++c) out[c] += b[c];
  return out;
}

inline double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Vec cat(std::initializer_list<const Vec*> parts) {
  Vec out;
  for (const Vec* p : parts) out.insert(out.end(), p->begin(), p->end());
  return out;
}

inline Vec user(const Model& m, const UserProfile& u) {
  const ModelConfig& c = m.config();
  const std::size_t e = c.embed_dim;
  if (c.no_user_features) return Vec(e, 0.0);
  Vec u1(e, 0.0), u2(e, 0.0);
  for (const auto& f : u.sparse) {
    const Vec r = row(mat(m, "sparse_embed_" + std::to_string(f.feature)), static_cast<std::size_t>(f.category));
    for (std::size_t i = 0; i < e; ++i) u1[i] += r[i] / static_cast<double>(u.sparse.size());
  }
  for (const auto& f : u.numeric) {
    const std::string j = std::to_string(f.feature);
    const Mat w = mat(m, "autodis_w_" + j);
    const Vec b = vec(m, "autodis_b_" + j);
    const Mat meta = mat(m, "autodis_meta_" + j);
    Vec logits(c.buckets);
    double mx = -1e300;
    for (std::size_t q = 0; q < c.buckets; ++q) {
      logits[q] = f.value * w.at(0, q) + b[q];
      mx = std::max(mx, logits[q]);
    }
    double z = 0.0;
    for (double& l : logits) z += (l = std::exp(l - mx));
    for (std::size_t q = 0; q < c.buckets; ++q) {
      for (std::size_t i = 0; i < e; ++i) u2[i] += logits[q] / z * meta.at(q, i) / static_cast<double>(u.numeric.size());
    }
  }
  Vec out = lin(cat({&u1, &u2}), mat(m, "user_w"), vec(m, "user_b"));
  for (double& v : out) v = std::max(0.0, v);
  return out;
}

inline Vec attention(const Model& m, const AtomSet& atoms, const Vec& intent, const Vec& u) {
  const Mat emb = mat(m, "atom_embed");
  std::vector<Vec> p;
  Vec score;
  for (int k : atoms) {
    p.push_back(row(emb, static_cast<std::size_t>(k)));
    Vec hid = lin(cat({&p.back(), &intent, &u}), mat(m, "att_wa"), vec(m, "att_ba"));
    for (double& v : hid) v = std::tanh(v);
    score.push_back(lin(hid, mat(m, "att_wb"), vec(m, "att_bb"))[0]);
  }
  double mx = -1e300, z = 0.0;
  for (double s : score) mx = std::max(mx, s);
  for (double& s : score) z += (s = std::exp(s - mx));
  Vec out(emb.cols, 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += score[i] / z * p[i][j];
  }
  return out;
}

inline Vec gated(const Model& m, const AtomSet& atoms, const Vec& intent, const Vec& u) {
  const Mat emb = mat(m, "atom_embed");
  Vec out(emb.cols, 0.0);
  for (int k : atoms) {
    const Vec pk = row(emb, static_cast<std::size_t>(k));
    const Vec d = cat({&pk, &intent, &u});
    Vec g = lin(d, mat(m, "gate_wa"), vec(m, "gate_ba"));
    for (double& v : g) v = sig(v);
    Vec e2 = lin(g, mat(m, "gate_wb"), vec(m, "gate_bb"));
    for (std::size_t i = 0; i < e2.size(); ++i) e2[i] *= d[i];
    const Vec r = lin(e2, mat(m, "gate_wc"), vec(m, "gate_bc"));
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += r[j] / static_cast<double>(atoms.size());
  }
  return out;
}

inline Vec strategy(const Model& m, const AtomSet& atoms, const Vec& intent, const Vec& u) {
  if (m.config().no_attention_aggregation) {
    const Mat emb = mat(m, "atom_embed");
    Vec out(emb.cols, 0.0);
    for (int k : atoms) {
      for (std::size_t j = 0; j < out.size(); ++j) {
        out[j] += emb.at(static_cast<std::size_t>(k), j) / static_cast<double>(atoms.size());
      }
    }
    return out;
  }
  Vec a = attention(m, atoms, intent, u);
  const Vec g = gated(m, atoms, intent, u);
  for (std::size_t j = 0; j < a.size(); ++j) a[j] += g[j];
  return a;
}

inline Vec gru(const Model& m, const std::string& pre, const Vec& x, const Vec& h) {
  Vec z = lin(x, mat(m, pre + "_wz"), vec(m, pre + "_bz"));
  Vec r = lin(x, mat(m, pre + "_wr"), vec(m, pre + "_br"));
  const Vec hz = lin(h, mat(m, pre + "_uz"));
  const Vec hr = lin(h, mat(m, pre + "_ur"));
  for (std::size_t i = 0; i < z.size(); ++i) {
    z[i] = sig(z[i] + hz[i]);
    r[i] = sig(r[i] + hr[i]);
  }
  Vec rh(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) rh[i] = r[i] * h[i];
  Vec cand = lin(x, mat(m, pre + "_wh"), vec(m, pre + "_bh"));
  const Vec hc = lin(rh, mat(m, pre + "_uh"));
  Vec out(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) out[i] = (1.0 - z[i]) * h[i] + z[i] * std::tanh(cand[i] + hc[i]);
  return out;
}

struct Outputs {
  Vec repayment;
  std::vector<Vec> usage;
};

inline Outputs forward(const Model& m, const Dialogue& d) {
  const ModelConfig& c = m.config();
  const Vec u = user(m, d.user);
  Vec h1(c.hidden_dim, 0.0), h2(c.hidden_dim, 0.0), prev(c.embed_dim, 0.0);
  Outputs out;
  for (const auto& t : d.turns) {
    const Vec intent = row(mat(m, "intent_embed"), static_cast<std::size_t>(t.intent));
    const Vec r = strategy(m, t.strategy, intent, u);
    h1 = gru(m, "gru1", cat({&r, &intent, &u}), h1);
    out.repayment.push_back(sig(lin(h1, mat(m, "head1_w"), vec(m, "head1_b"))[0]));
    if (!c.single_way) {
      h2 = gru(m, "gru2", cat({&prev, &intent, &u}), h2);
      Vec s = lin(h2, mat(m, "head2_w"), vec(m, "head2_b"));
      for (double& v : s) v = sig(v);
      out.usage.push_back(s);
    }
    prev = r;
  }
  return out;
}

inline double bce(double p, double y) { return -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p)); }

/// L_a, L_b and L = L_a + λ·L_b.
inline std::array<double, 3> loss(const Model& m, const Dialogue& d) {
  const Outputs o = forward(m, d);
  double la = 0.0, lb = 0.0;
  for (double p : o.repayment) la += bce(p, d.label);
  for (std::size_t t = 0; t < o.usage.size(); ++t) {
    for (std::size_t k = 0; k < o.usage[t].size(); ++k) {
      lb += bce(o.usage[t][k], d.turns[t].strategy.contains(static_cast<int>(k)) ? 1.0 : 0.0);
    }
  }
  if (m.config().single_way) return {la, la, la};
  return {la, lb, la + m.config().lambda * lb};
}

}  // namespace oracle

/// Brute-force pair counting: P(s+ > s-) + 0.5·P(s+ = s-).
inline double pair_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      den += 1.0;
      num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return num / den;
}

/// Per-bin pair counting, bins weighted by size over bins holding both classes.
inline double pair_wbauc(const std::vector<double>& s, const std::vector<int>& y, const std::vector<std::size_t>& bins,
                         std::size_t n_bins) {
  double total = 0.0, weighted = 0.0;
  for (std::size_t b = 0; b < n_bins; ++b) {
    std::vector<double> sb;
    std::vector<int> yb;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (bins[i] == b) {
        sb.push_back(s[i]);
        yb.push_back(y[i]);
      }
    }
    int pos = 0;
    for (int v : yb) pos += v;
    if (pos == 0 || pos == static_cast<int>(yb.size())) continue;
    total += static_cast<double>(sb.size());
    weighted += static_cast<double>(sb.size()) * pair_auc(sb, yb);
  }
  return weighted / total;
}

/// Central finite-difference check of every parameter of `m` against the
/// analytic gradient of the total loss on `dialogues`. Returns the max
/// relative error |a − n| / max(|a| + |n|, floor).
inline double gradient_check(Model& m, const std::vector<Dialogue>& dialogues, double eps = 1e-5,
                             double floor = 1e-5) {
  m.zero_grad();
  for (const auto& d : dialogues) m.accumulate_gradient(d);
  std::vector<std::vector<double>> analytic;
  for (const auto& p : m.params()) analytic.push_back(p.grad.storage());
  auto total = [&]() {
    double l = 0.0;
    for (const auto& d : dialogues) l += m.loss_values(d).total;
    return l;
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    auto& values = m.params()[i].value.storage();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double keep = values[j];
      values[j] = keep + eps;
      const double up = total();
      values[j] = keep - eps;
      const double down = total();
      values[j] = keep;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[i][j];
      worst = std::max(worst, std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), floor));
    }
  }
  return worst;
}

}  // namespace p2t::test
