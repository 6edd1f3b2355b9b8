#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace protolog {

enum class TermTag { Atom, Var, Int, Float, Compound, Tensor };

// Opaque handle into a per-session tensor store. Tensors unify only with an
// identical id or with an unbound variable.
enum class TensorKind { Image, Latent, Scalar };

struct TensorHandle {
  uint64_t id = 0;
  TensorKind kind = TensorKind::Image;
};

struct Term;
using TermPtr = std::shared_ptr<const Term>;

// Immutable term node. Lists are desugared to '.'/2 compounds ending in '[]'.
struct Term {
  TermTag tag = TermTag::Atom;
  std::string name;   // Atom/Compound functor, Var print name
  uint64_t var_id = 0;
  int64_t ival = 0;
  double fval = 0.0;
  TensorHandle tensor;
  std::vector<TermPtr> args;
};

TermPtr mk_atom(std::string name);
TermPtr mk_var(std::string name, uint64_t id);
TermPtr mk_var_fresh(std::string name);  // id from the global counter
TermPtr mk_int(int64_t v);
TermPtr mk_float(double v);
TermPtr mk_compound(std::string functor, std::vector<TermPtr> args);
TermPtr mk_tensor(TensorHandle h);
TermPtr mk_list(const std::vector<TermPtr>& items, TermPtr tail = nullptr);
TermPtr nil();

uint64_t fresh_var_id();

bool is_nil(const TermPtr& t);
bool is_cons(const TermPtr& t);
bool is_callable(const TermPtr& t);  // atom or compound

// Structural equality (vars compared by id, tensors by id).
bool term_equal(const TermPtr& a, const TermPtr& b);

// No variables anywhere (substitution-free check; the solver has its own).
bool term_is_ground_raw(const TermPtr& t);

// Variables in left-to-right depth-first order, deduplicated.
void collect_vars(const TermPtr& t, std::vector<TermPtr>& out);

std::string pred_key(const std::string& functor, size_t arity);
std::string pred_key_of(const TermPtr& callable);

// Canonical text form; reparseable. Binary operators print parenthesized,
// lists print with [..|..] sugar, tensors as #t<id>.
std::string term_to_string(const TermPtr& t);

}  // namespace protolog
