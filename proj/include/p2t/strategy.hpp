#pragma once

#include <algorithm>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "p2t/corpus.hpp"

namespace p2t {

/// A collector strategy: a named set of atom policies.
struct Strategy {
  int id = 0;
  std::string name;
  AtomSet atoms;
  /// Maximum number of uses per session; unset means unlimited.
  std::optional<int> limit;
  /// Choosing a terminal strategy ends the call.
  bool terminal = false;
  bool operator==(const Strategy&) const = default;
};

/// Candidate strategies, kept sorted by id.
class CandidateSet {
 public:
  CandidateSet() = default;
  explicit CandidateSet(std::vector<Strategy> strategies) : items_(std::move(strategies)) {
    std::sort(items_.begin(), items_.end(), [](const Strategy& a, const Strategy& b) { return a.id < b.id; });
    std::set<int> ids;
    bool open_terminal = false;
    for (const auto& s : items_) {
      if (!ids.insert(s.id).second) throw ValidationError("duplicate strategy id " + std::to_string(s.id));
      if (s.atoms.empty()) throw ValidationError("strategy " + std::to_string(s.id) + " has no atoms");
      if (s.limit && *s.limit < 1) throw ValidationError("strategy limit must be >= 1");
      open_terminal = open_terminal || (s.terminal && !s.limit);
    }
    if (!open_terminal) throw ValidationError("candidate set needs at least one unlimited terminal strategy");
  }

  std::size_t size() const noexcept { return items_.size(); }
  const Strategy& operator[](std::size_t i) const { return items_[i]; }
  auto begin() const noexcept { return items_.begin(); }
  auto end() const noexcept { return items_.end(); }
  const std::vector<Strategy>& items() const noexcept { return items_; }

  /// Position of strategy `id`, or throws.
  std::size_t index_of(int id) const {
    for (std::size_t i = 0; i < items_.size(); ++i) {
      if (items_[i].id == id) return i;
    }
    throw ValidationError("unknown strategy id " + std::to_string(id));
  }

  void validate(std::size_t atom_count) const {
    for (const auto& s : items_) s.atoms.validate(atom_count);
  }

 private:
  std::vector<Strategy> items_;
};

inline json to_json(const Strategy& s) {
  json j = {{"id", s.id}, {"name", s.name}, {"atoms", s.atoms.atoms()}, {"terminal", s.terminal}};
  j["limit"] = s.limit ? json(*s.limit) : json(nullptr);
  return j;
}

inline Strategy strategy_from_json(const json& j) {
  Strategy s;
  s.id = detail::require(j, "id", "strategy").get<int>();
  s.name = j.value("name", "strategy_" + std::to_string(s.id));
  s.atoms = AtomSet(detail::require(j, "atoms", "strategy").get<std::vector<int>>());
  if (auto it = j.find("limit"); it != j.end() && !it->is_null()) s.limit = it->get<int>();
  s.terminal = j.value("terminal", false);
  return s;
}

inline CandidateSet candidates_from_json(const json& strategies) {
  if (!strategies.is_array()) throw ValidationError("strategies must be an array");
  std::vector<Strategy> out;
  for (const auto& s : strategies) out.push_back(strategy_from_json(s));
  return CandidateSet(std::move(out));
}

inline json to_json(const CandidateSet& c) {
  json arr = json::array();
  for (const auto& s : c) arr.push_back(to_json(s));
  return arr;
}

}  // namespace p2t
