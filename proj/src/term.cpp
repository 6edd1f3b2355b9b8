#include "protolog/term.hpp"

#include <atomic>
#include <cstdio>
#include <set>
#include <stdexcept>

namespace protolog {

namespace {
std::atomic<uint64_t> g_var_counter{1};

const std::set<std::string>& infix_ops() {
  static const std::set<std::string> ops = {
      "+", "-", "*", "/", "//", "mod", "is", "=", "\\=", "<", ">",
      "=<", ">=", ":-", ";", ",", "::"};
  return ops;
}
}  // namespace

uint64_t fresh_var_id() { return g_var_counter.fetch_add(1); }

TermPtr mk_atom(std::string name) {
  auto t = std::make_shared<Term>();
  t->tag = TermTag::Atom;
  t->name = std::move(name);
  return t;
}

TermPtr mk_var(std::string name, uint64_t id) {
  auto t = std::make_shared<Term>();
  t->tag = TermTag::Var;
  t->name = std::move(name);
  t->var_id = id;
  return t;
}

TermPtr mk_var_fresh(std::string name) { return mk_var(std::move(name), fresh_var_id()); }

TermPtr mk_int(int64_t v) {
  auto t = std::make_shared<Term>();
  t->tag = TermTag::Int;
  t->ival = v;
  return t;
}

TermPtr mk_float(double v) {
  auto t = std::make_shared<Term>();
  t->tag = TermTag::Float;
  t->fval = v;
  return t;
}

TermPtr mk_compound(std::string functor, std::vector<TermPtr> args) {
  if (args.empty()) return mk_atom(std::move(functor));
  auto t = std::make_shared<Term>();
  t->tag = TermTag::Compound;
  t->name = std::move(functor);
  t->args = std::move(args);
  return t;
}

TermPtr mk_tensor(TensorHandle h) {
  auto t = std::make_shared<Term>();
  t->tag = TermTag::Tensor;
  t->tensor = h;
  return t;
}

TermPtr nil() {
  static const TermPtr n = mk_atom("[]");
  return n;
}

TermPtr mk_list(const std::vector<TermPtr>& items, TermPtr tail) {
  TermPtr acc = tail ? tail : nil();
  for (auto it = items.rbegin(); it != items.rend(); ++it)
    acc = mk_compound(".", {*it, acc});
  return acc;
}

bool is_nil(const TermPtr& t) { return t->tag == TermTag::Atom && t->name == "[]"; }

bool is_cons(const TermPtr& t) {
  return t->tag == TermTag::Compound && t->name == "." && t->args.size() == 2;
}

bool is_callable(const TermPtr& t) {
  return t->tag == TermTag::Atom || t->tag == TermTag::Compound;
}

bool term_equal(const TermPtr& a, const TermPtr& b) {
  if (a.get() == b.get()) return true;
  if (a->tag != b->tag) return false;
  switch (a->tag) {
    case TermTag::Atom: return a->name == b->name;
    case TermTag::Var: return a->var_id == b->var_id;
    case TermTag::Int: return a->ival == b->ival;
    case TermTag::Float: return a->fval == b->fval;
    case TermTag::Tensor: return a->tensor.id == b->tensor.id;
    case TermTag::Compound:
      if (a->name != b->name || a->args.size() != b->args.size()) return false;
      for (size_t i = 0; i < a->args.size(); ++i)
        if (!term_equal(a->args[i], b->args[i])) return false;
      return true;
  }
  return false;
}

bool term_is_ground_raw(const TermPtr& t) {
  if (t->tag == TermTag::Var) return false;
  for (const auto& a : t->args)
    if (!term_is_ground_raw(a)) return false;
  return true;
}

void collect_vars(const TermPtr& t, std::vector<TermPtr>& out) {
  if (t->tag == TermTag::Var) {
    for (const auto& v : out)
      if (v->var_id == t->var_id) return;
    out.push_back(t);
    return;
  }
  for (const auto& a : t->args) collect_vars(a, out);
}

std::string pred_key(const std::string& functor, size_t arity) {
  return functor + "/" + std::to_string(arity);
}

std::string pred_key_of(const TermPtr& callable) {
  if (!is_callable(callable))
    throw std::runtime_error("not a callable term: " + term_to_string(callable));
  return pred_key(callable->name, callable->args.size());
}

namespace {

void print_term(const TermPtr& t, std::string& out);

void print_list(const TermPtr& t, std::string& out) {
  out += "[";
  TermPtr cur = t;
  bool first = true;
  while (is_cons(cur)) {
    if (!first) out += ",";
    print_term(cur->args[0], out);
    first = false;
    cur = cur->args[1];
  }
  if (!is_nil(cur)) {
    out += "|";
    print_term(cur, out);
  }
  out += "]";
}

bool atom_needs_quotes(const std::string& s) {
  if (s.empty()) return true;
  if (s == "[]" || s == ".") return false;
  if (infix_ops().count(s)) return false;
  if (!(s[0] >= 'a' && s[0] <= 'z')) return true;
  for (char c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_')) return true;
  return false;
}

void print_term(const TermPtr& t, std::string& out) {
  switch (t->tag) {
    case TermTag::Atom:
      if (atom_needs_quotes(t->name)) {
        out += "'";
        out += t->name;
        out += "'";
      } else {
        out += t->name;
      }
      return;
    case TermTag::Var:
      if (!t->name.empty() && t->name != "_")
        out += t->name;
      else {
        out += "_G";
        out += std::to_string(t->var_id);
      }
      return;
    case TermTag::Int:
      out += std::to_string(t->ival);
      return;
    case TermTag::Float: {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.17g", t->fval);
      out += buf;
      // Keep the printed form lexable as a float.
      if (std::string(buf).find_first_of(".eEnN") == std::string::npos) out += ".0";
      return;
    }
    case TermTag::Tensor:
      out += "#t";
      out += std::to_string(t->tensor.id);
      return;
    case TermTag::Compound: {
      if (is_cons(t)) {
        print_list(t, out);
        return;
      }
      if (t->args.size() == 2 && infix_ops().count(t->name)) {
        out += "(";
        print_term(t->args[0], out);
        out += t->name == "," ? ", " : " " + t->name + " ";
        print_term(t->args[1], out);
        out += ")";
        return;
      }
      if (atom_needs_quotes(t->name)) {
        out += "'";
        out += t->name;
        out += "'";
      } else {
        out += t->name;
      }
      out += "(";
      for (size_t i = 0; i < t->args.size(); ++i) {
        if (i) out += ",";
        print_term(t->args[i], out);
      }
      out += ")";
      return;
    }
  }
}

}  // namespace

std::string term_to_string(const TermPtr& t) {
  std::string out;
  print_term(t, out);
  return out;
}

}  // namespace protolog
