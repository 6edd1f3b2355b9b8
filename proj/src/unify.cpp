#include "protolog/unify.hpp"

#include <stdexcept>

namespace protolog {

void Subst::undo_to(size_t m) {
  while (trail_.size() > m) {
    auto& [var, prev] = trail_.back();
    if (prev) map_[var] = prev;
    else map_.erase(var);
    trail_.pop_back();
  }
}

TermPtr Subst::walk(TermPtr t) {
  if (t->tag != TermTag::Var) return t;
  const uint64_t start = t->var_id;
  TermPtr cur = t;
  int hops = 0;
  while (cur->tag == TermTag::Var) {
    auto it = map_.find(cur->var_id);
    if (it == map_.end()) break;
    cur = it->second;
    ++hops;
  }
  if (hops > 1) {
    // Path compression, trailed so undo restores the previous chain.
    auto it = map_.find(start);
    trail_.emplace_back(start, it->second);
    it->second = cur;
  }
  return cur;
}

void Subst::bind(uint64_t var_id, TermPtr t) {
  auto it = map_.find(var_id);
  trail_.emplace_back(var_id, it == map_.end() ? nullptr : it->second);
  map_[var_id] = std::move(t);
}

TermPtr Subst::resolve(const TermPtr& t) {
  TermPtr w = walk(t);
  if (w->args.empty()) return w;
  std::vector<TermPtr> args;
  args.reserve(w->args.size());
  bool changed = false;
  for (const auto& a : w->args) {
    TermPtr r = resolve(a);
    changed = changed || r.get() != a.get();
    args.push_back(std::move(r));
  }
  if (!changed && w.get() == t.get()) return t;
  if (!changed) return w;
  auto out = std::make_shared<Term>(*w);
  out->args = std::move(args);
  return out;
}

bool Subst::is_ground(const TermPtr& t) {
  TermPtr w = walk(t);
  if (w->tag == TermTag::Var) return false;
  for (const auto& a : w->args)
    if (!is_ground(a)) return false;
  return true;
}

namespace {

bool occurs(uint64_t var_id, const TermPtr& t, Subst& s) {
  TermPtr w = s.walk(t);
  if (w->tag == TermTag::Var) return w->var_id == var_id;
  for (const auto& a : w->args)
    if (occurs(var_id, a, s)) return true;
  return false;
}

bool unify_rec(const TermPtr& a0, const TermPtr& b0, Subst& s, bool oc) {
  TermPtr a = s.walk(a0);
  TermPtr b = s.walk(b0);
  if (a->tag == TermTag::Var && b->tag == TermTag::Var) {
    if (a->var_id == b->var_id) return true;
    s.bind(a->var_id, b);
    return true;
  }
  if (a->tag == TermTag::Var) {
    if (oc && occurs(a->var_id, b, s)) return false;
    s.bind(a->var_id, b);
    return true;
  }
  if (b->tag == TermTag::Var) {
    if (oc && occurs(b->var_id, a, s)) return false;
    s.bind(b->var_id, a);
    return true;
  }
  if (a->tag != b->tag) return false;
  switch (a->tag) {
    case TermTag::Atom: return a->name == b->name;
    case TermTag::Int: return a->ival == b->ival;
    case TermTag::Float: return a->fval == b->fval;
    case TermTag::Tensor: return a->tensor.id == b->tensor.id;
    case TermTag::Compound: {
      if (a->name != b->name || a->args.size() != b->args.size()) return false;
      for (size_t i = 0; i < a->args.size(); ++i)
        if (!unify_rec(a->args[i], b->args[i], s, oc)) return false;
      return true;
    }
    case TermTag::Var: break;  // unreachable
  }
  return false;
}

}  // namespace

bool unify(const TermPtr& a, const TermPtr& b, Subst& s, bool occurs_check) {
  const size_t m = s.mark();
  if (unify_rec(a, b, s, occurs_check)) return true;
  s.undo_to(m);
  return false;
}

TermPtr rename_term(const TermPtr& t, std::unordered_map<uint64_t, TermPtr>& map) {
  switch (t->tag) {
    case TermTag::Var: {
      auto it = map.find(t->var_id);
      if (it != map.end()) return it->second;
      TermPtr v = mk_var_fresh(t->name);
      map[t->var_id] = v;
      return v;
    }
    case TermTag::Compound: {
      std::vector<TermPtr> args;
      args.reserve(t->args.size());
      bool changed = false;
      for (const auto& a : t->args) {
        TermPtr r = rename_term(a, map);
        changed = changed || r.get() != a.get();
        args.push_back(std::move(r));
      }
      if (!changed) return t;
      auto out = std::make_shared<Term>(*t);
      out->args = std::move(args);
      return out;
    }
    default:
      return t;
  }
}

}  // namespace protolog
