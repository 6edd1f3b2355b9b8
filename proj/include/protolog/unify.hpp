#pragma once

#include <optional>
#include <unordered_map>
#include <vector>

#include "protolog/term.hpp"

namespace protolog {

// Variable bindings with an undo trail so backtracking restores earlier
// states exactly. Lookups compress var->var chains (compressions are trailed
// too). Applying resolve() twice equals applying it once.
class Subst {
 public:
  size_t mark() const { return trail_.size(); }
  void undo_to(size_t m);

  // Shallow dereference: follows bound variables, returns an unbound Var or a
  // non-var term.
  TermPtr walk(TermPtr t);

  void bind(uint64_t var_id, TermPtr t);
  bool bound(uint64_t var_id) const { return map_.count(var_id) > 0; }

  // Deep application; unbound variables remain.
  TermPtr resolve(const TermPtr& t);

  bool is_ground(const TermPtr& t);

  size_t binding_count() const { return map_.size(); }

 private:
  std::unordered_map<uint64_t, TermPtr> map_;
  std::vector<std::pair<uint64_t, TermPtr>> trail_;  // (var, previous or null)
};

// Most general unifier extending s. On failure, s is restored to its state at
// entry (no bindings leak). Occurs check is off by default.
bool unify(const TermPtr& a, const TermPtr& b, Subst& s, bool occurs_check = false);

// Fresh-scope copy of a term: every variable gets a new id (shared map for a
// whole clause so head/body stay consistent).
TermPtr rename_term(const TermPtr& t, std::unordered_map<uint64_t, TermPtr>& map);

}  // namespace protolog
