#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "p2t/error.hpp"

namespace p2t {

using json = nlohmann::json;

inline constexpr std::size_t kMaxTurns = 50;
inline constexpr std::size_t kMaxAtoms = 10;
inline constexpr int kCorpusVersion = 1;

/// Sorted, duplicate-free set of atom-policy ids. Empty only when default-constructed.
class AtomSet {
 public:
  AtomSet() = default;
  AtomSet(std::initializer_list<int> atoms) : AtomSet(std::vector<int>(atoms)) {}
  explicit AtomSet(std::vector<int> atoms) : atoms_(std::move(atoms)) {
    std::sort(atoms_.begin(), atoms_.end());
    if (std::adjacent_find(atoms_.begin(), atoms_.end()) != atoms_.end()) {
      throw ValidationError("atom set contains duplicates");
    }
  }

  bool empty() const noexcept { return atoms_.empty(); }
  std::size_t size() const noexcept { return atoms_.size(); }
  bool contains(int k) const { return std::binary_search(atoms_.begin(), atoms_.end(), k); }
  const std::vector<int>& atoms() const noexcept { return atoms_; }
  auto begin() const noexcept { return atoms_.begin(); }
  auto end() const noexcept { return atoms_.end(); }

  /// 0/1 indicator vector of length `atom_count`.
  std::vector<double> indicator(std::size_t atom_count) const {
    std::vector<double> v(atom_count, 0.0);
    for (int k : atoms_) v.at(static_cast<std::size_t>(k)) = 1.0;
    return v;
  }

  /// Throws unless 1 <= size <= atom_count and every id lies in [0, atom_count).
  void validate(std::size_t atom_count) const {
    if (atoms_.empty()) throw ValidationError("atom set is empty");
    if (atoms_.size() > std::min(atom_count, kMaxAtoms)) {
      throw ValidationError("atom set has " + std::to_string(atoms_.size()) + " atoms, limit " +
                            std::to_string(std::min(atom_count, kMaxAtoms)));
    }
    if (atoms_.front() < 0 || static_cast<std::size_t>(atoms_.back()) >= atom_count) {
      throw ValidationError("atom id out of range [0, " + std::to_string(atom_count) + ")");
    }
  }

  bool operator==(const AtomSet&) const = default;
  auto operator<=>(const AtomSet&) const = default;

 private:
  std::vector<int> atoms_;
};

struct SparseFeature {
  int feature = 0;
  int category = 0;
  bool operator==(const SparseFeature&) const = default;
};

struct NumericFeature {
  int feature = 0;
  double value = 0.0;
  bool operator==(const NumericFeature&) const = default;
};

struct UserProfile {
  std::vector<SparseFeature> sparse;
  std::vector<NumericFeature> numeric;
  bool operator==(const UserProfile&) const = default;
};

struct Turn {
  int intent = 0;
  AtomSet strategy;
  bool operator==(const Turn&) const = default;
};

struct Dialogue {
  std::string id;
  UserProfile user;
  std::vector<Turn> turns;
  int label = 0;
  double bin_key = 0.0;
  bool operator==(const Dialogue&) const = default;
};

struct CorpusMeta {
  int version = kCorpusVersion;
  std::size_t intent_vocab = 1;
  std::size_t atom_count = 1;
  std::vector<std::size_t> sparse_vocab;
  std::size_t numeric_count = 0;
  /// Generator parameters for synthetic corpora (seed plus planted effects).
  std::optional<json> generator;
  bool operator==(const CorpusMeta&) const = default;
};

struct Corpus {
  CorpusMeta meta;
  std::vector<Dialogue> dialogues;
  bool operator==(const Corpus&) const = default;
};

// ---- validation -------------------------------------------------------------

inline void validate_meta(const CorpusMeta& meta) {
  if (meta.intent_vocab < 1) throw ValidationError("intent vocabulary must be >= 1");
  if (meta.atom_count < 1 || meta.atom_count > kMaxAtoms) {
    throw ValidationError("atom count must be in [1, " + std::to_string(kMaxAtoms) + "]");
  }
  for (std::size_t v : meta.sparse_vocab) {
    if (v < 1) throw ValidationError("sparse vocabulary sizes must be >= 1");
  }
}

inline void validate_profile(const UserProfile& user, const CorpusMeta& meta) {
  std::set<int> seen;
  for (const auto& f : user.sparse) {
    if (f.feature < 0 || static_cast<std::size_t>(f.feature) >= meta.sparse_vocab.size()) {
      throw ValidationError("sparse feature id " + std::to_string(f.feature) + " out of range");
    }
    if (!seen.insert(f.feature).second) throw ValidationError("duplicate sparse feature id");
    if (f.category < 0 || static_cast<std::size_t>(f.category) >= meta.sparse_vocab[static_cast<std::size_t>(f.feature)]) {
      throw ValidationError("category id " + std::to_string(f.category) + " outside vocabulary of sparse feature " +
                            std::to_string(f.feature));
    }
  }
  seen.clear();
  for (const auto& f : user.numeric) {
    if (f.feature < 0 || static_cast<std::size_t>(f.feature) >= meta.numeric_count) {
      throw ValidationError("numeric feature id " + std::to_string(f.feature) + " out of range");
    }
    if (!seen.insert(f.feature).second) throw ValidationError("duplicate numeric feature id");
    if (!std::isfinite(f.value)) throw ValidationError("numeric feature value is not finite");
  }
}

inline void validate_dialogue(const Dialogue& d, const CorpusMeta& meta) {
  if (d.turns.empty() || d.turns.size() > kMaxTurns) {
    throw ValidationError("dialogue '" + d.id + "' has " + std::to_string(d.turns.size()) +
                          " turns, expected 1.." + std::to_string(kMaxTurns));
  }
  if (d.label != 0 && d.label != 1) throw ValidationError("label must be 0 or 1");
  if (!std::isfinite(d.bin_key)) throw ValidationError("bin_key is not finite");
  validate_profile(d.user, meta);
  for (const auto& t : d.turns) {
    if (t.intent < 0 || static_cast<std::size_t>(t.intent) >= meta.intent_vocab) {
      throw ValidationError("intent " + std::to_string(t.intent) + " >= intent vocabulary " +
                            std::to_string(meta.intent_vocab));
    }
    t.strategy.validate(meta.atom_count);
  }
}

// ---- serialization ----------------------------------------------------------

namespace detail {

inline void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const char* what) {
  if (!j.is_object()) throw ValidationError(std::string(what) + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }) == allowed.end()) {
      throw ValidationError(std::string("unknown field '") + key + "' in " + what);
    }
  }
}

inline const json& require(const json& j, const char* key, const char* what) {
  auto it = j.find(key);
  if (it == j.end()) throw ValidationError(std::string("missing field '") + key + "' in " + what);
  return *it;
}

}  // namespace detail

inline json to_json(const CorpusMeta& m) {
  json j = {{"version", m.version},
            {"intent_vocab", m.intent_vocab},
            {"atom_count", m.atom_count},
            {"sparse_vocab", m.sparse_vocab},
            {"numeric_count", m.numeric_count}};
  if (m.generator) j["generator"] = *m.generator;
  return j;
}

inline CorpusMeta meta_from_json(const json& j) {
  detail::reject_unknown(j, {"version", "intent_vocab", "atom_count", "sparse_vocab", "numeric_count", "generator"},
                         "corpus meta");
  CorpusMeta m;
  m.version = detail::require(j, "version", "corpus meta").get<int>();
  if (m.version != kCorpusVersion) throw ValidationError("unsupported corpus version " + std::to_string(m.version));
  m.intent_vocab = detail::require(j, "intent_vocab", "corpus meta").get<std::size_t>();
  m.atom_count = detail::require(j, "atom_count", "corpus meta").get<std::size_t>();
  m.sparse_vocab = detail::require(j, "sparse_vocab", "corpus meta").get<std::vector<std::size_t>>();
  m.numeric_count = detail::require(j, "numeric_count", "corpus meta").get<std::size_t>();
  if (auto it = j.find("generator"); it != j.end()) m.generator = *it;
  validate_meta(m);
  return m;
}

inline json to_json(const Dialogue& d) {
  json sparse = json::array();
  for (const auto& f : d.user.sparse) sparse.push_back({f.feature, f.category});
  json numeric = json::array();
  for (const auto& f : d.user.numeric) numeric.push_back({f.feature, f.value});
  json turns = json::array();
  for (const auto& t : d.turns) turns.push_back({{"intent", t.intent}, {"atoms", t.strategy.atoms()}});
  return {{"id", d.id},
          {"user", {{"sparse", std::move(sparse)}, {"numeric", std::move(numeric)}}},
          {"turns", std::move(turns)},
          {"label", d.label},
          {"bin_key", d.bin_key}};
}

inline Dialogue dialogue_from_json(const json& j) {
  detail::reject_unknown(j, {"id", "user", "turns", "label", "bin_key"}, "dialogue record");
  Dialogue d;
  d.id = detail::require(j, "id", "dialogue record").get<std::string>();
  const json& user = detail::require(j, "user", "dialogue record");
  detail::reject_unknown(user, {"sparse", "numeric"}, "user");
  for (const auto& pair : detail::require(user, "sparse", "user")) {
    if (!pair.is_array() || pair.size() != 2) throw ValidationError("user.sparse entries must be [fid, cid]");
    d.user.sparse.push_back({pair[0].get<int>(), pair[1].get<int>()});
  }
  for (const auto& pair : detail::require(user, "numeric", "user")) {
    if (!pair.is_array() || pair.size() != 2) throw ValidationError("user.numeric entries must be [fid, value]");
    d.user.numeric.push_back({pair[0].get<int>(), pair[1].get<double>()});
  }
  for (const auto& t : detail::require(j, "turns", "dialogue record")) {
    detail::reject_unknown(t, {"intent", "atoms"}, "turn");
    d.turns.push_back({detail::require(t, "intent", "turn").get<int>(),
                       AtomSet(detail::require(t, "atoms", "turn").get<std::vector<int>>())});
  }
  d.label = detail::require(j, "label", "dialogue record").get<int>();
  d.bin_key = detail::require(j, "bin_key", "dialogue record").get<double>();
  return d;
}

/// One meta line followed by one record per dialogue. nlohmann/json prints
/// doubles with 17 significant digits, so values round-trip exactly.
inline void write_corpus(std::ostream& os, const Corpus& corpus) {
  os << to_json(corpus.meta).dump() << '\n';
  for (const auto& d : corpus.dialogues) os << to_json(d).dump() << '\n';
}

inline Corpus read_corpus(std::istream& is) {
  Corpus c;
  std::string line;
  std::size_t lineno = 0;
  bool have_meta = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(lineno, e.what());
    }
    try {
      if (!have_meta) {
        c.meta = meta_from_json(j);
        have_meta = true;
      } else {
        Dialogue d = dialogue_from_json(j);
        validate_dialogue(d, c.meta);
        c.dialogues.push_back(std::move(d));
      }
    } catch (const json::exception& e) {
      throw ParseError(lineno, e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!have_meta) throw ParseError(0, "corpus file has no meta line");
  return c;
}

inline void save_corpus(const std::string& path, const Corpus& corpus) {
  if (path.empty()) throw IoError("empty corpus path");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  write_corpus(os, corpus);
  if (!os) throw IoError("write failed for '" + path + "'");
}

inline Corpus load_corpus(const std::string& path) {
  if (path.empty()) throw IoError("empty corpus path");
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  return read_corpus(is);
}

// ---- partitioning -----------------------------------------------------------

/// Splits by dialogue id: ids are ordered, shuffled with `seed`, and the first
/// round(train_fraction·N) go to the training side.
inline std::pair<Corpus, Corpus> split(const Corpus& corpus, double train_fraction, double test_fraction,
                                       std::uint64_t seed) {
  if (!(train_fraction > 0.0) || test_fraction < 0.0 || std::abs(train_fraction + test_fraction - 1.0) > 1e-9) {
    throw ConfigError("split fractions must be train > 0, test >= 0, summing to 1");
  }
  std::vector<std::size_t> order(corpus.dialogues.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return corpus.dialogues[a].id < corpus.dialogues[b].id;
  });
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(order.size())));
  Corpus train{corpus.meta, {}}, test{corpus.meta, {}};
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_train ? train : test).dialogues.push_back(corpus.dialogues[order[i]]);
  }
  return {std::move(train), std::move(test)};
}

/// Quantile bins over bin_key. Rank r lands in bin floor(r·n_bins/N); equal
/// keys share the bin of their lowest rank.
inline std::vector<std::size_t> assign_bins(std::span<const double> keys, std::size_t n_bins) {
  if (n_bins < 1) throw ValidationError("n_bins must be >= 1");
  if (n_bins > keys.size()) {
    throw ValidationError("n_bins (" + std::to_string(n_bins) + ") exceeds number of dialogues (" +
                          std::to_string(keys.size()) + ")");
  }
  for (double k : keys) {
    if (!std::isfinite(k)) throw ValidationError("bin key is not finite");
  }
  const std::size_t n = keys.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
  std::vector<std::size_t> bins(n);
  std::size_t group_bin = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (r == 0 || keys[order[r]] != keys[order[r - 1]]) group_bin = r * n_bins / n;
    bins[order[r]] = group_bin;
  }
  return bins;
}

inline std::vector<std::size_t> assign_bins(const std::vector<Dialogue>& dialogues, std::size_t n_bins) {
  std::vector<double> keys;
  keys.reserve(dialogues.size());
  for (const auto& d : dialogues) keys.push_back(d.bin_key);
  return assign_bins(keys, n_bins);
}

}  // namespace p2t
