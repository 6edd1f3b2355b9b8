#pragma once

#include <compare>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "protolog/program.hpp"
#include "protolog/tape.hpp"
#include "protolog/term.hpp"
#include "protolog/unify.hpp"

namespace protolog {

struct EngineError : std::runtime_error {
  enum class Kind { UnknownPredicate, Instantiation, Type, Resource, Mode, Contract };
  EngineError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
  Kind kind;
};

// One probabilistic choice used by a derivation: head `head` of choice
// instance `inst`. Heads of the same instance are mutually exclusive.
struct ChoiceLit {
  int32_t inst = 0;
  int32_t head = 0;
  auto operator<=>(const ChoiceLit&) const = default;
};

// A proof is the set of choices supporting one derivation; sorted, unique,
// and internally consistent (one head per instance).
using ProofSet = std::vector<ChoiceLit>;

// Choice instances discovered while solving. An instance of a program
// disjunction is identified by the values bound to the selected head's
// variables, so e.g. all heads matched against the same input tensor share
// one instance while distinct inputs get independent instances.
class ChoiceTable {
 public:
  explicit ChoiceTable(Tape* tape = nullptr) : tape_(tape) {}

  struct Instance {
    int ad_id = 0;
    std::string tag;
    std::map<int, DiffScalar> prob;  // head index -> probability node
  };

  int32_t intern(int ad_id, const std::string& tag);
  bool has_prob(int32_t inst, int head) const;
  void record_prob(int32_t inst, int head, DiffScalar p);
  DiffScalar prob(int32_t inst, int head) const;
  // Cached constant-probability leaf (created with gradient tracking so
  // d(answer)/d(fact probability) can be read off the tape).
  DiffScalar const_prob_leaf(int32_t inst, int head, double v);

  const std::vector<Instance>& instances() const { return instances_; }
  Tape* tape() const { return tape_; }

 private:
  Tape* tape_;
  std::vector<Instance> instances_;
  std::map<std::pair<int, std::string>, int32_t> lookup_;
};

// Neural builtin surface. The bridge implements this; pure logic programs run
// with hooks = nullptr.
struct NeuralOutcome {
  std::vector<std::pair<size_t, TermPtr>> bindings;  // goal arg index -> term
  std::optional<DiffScalar> prob;                    // absent = deterministic
};

struct NeuralResponse {
  bool handled = false;
  std::vector<NeuralOutcome> outcomes;  // alternatives; exclusive if probabilistic
  int ad_id = -1;
  std::string instance_tag;
};

class EvalHooks {
 public:
  virtual ~EvalHooks() = default;
  virtual bool handles(const std::string& functor, size_t arity) const = 0;
  virtual NeuralResponse eval(const TermPtr& goal, Subst& subst, ChoiceTable& table) = 0;
  // Scalar probability carried by a tensor term, if any.
  virtual std::optional<DiffScalar> scalar_of(const TermPtr& t) const = 0;
};

struct SolveOptions {
  long max_steps = 10000;
  bool occurs_check = false;
};

struct Solution {
  std::vector<std::pair<std::string, TermPtr>> bindings;  // named query vars
  ProofSet proof;
};

// Return false to stop enumeration.
using SolutionCallback = std::function<bool(const Solution&)>;

// Depth-first, left-to-right SLD resolution over `prog`. Solutions stream
// through `cb` as they are derived. Throws EngineError on unknown predicates,
// bad builtin modes, and when max_steps is exceeded.
void solve(const TermPtr& goal, const Program& prog, const SolveOptions& opt,
           EvalHooks* hooks, ChoiceTable& table, const SolutionCallback& cb);

std::vector<Solution> solve_all(const TermPtr& goal, const Program& prog,
                                const SolveOptions& opt = {}, EvalHooks* hooks = nullptr,
                                ChoiceTable* table = nullptr);

bool is_builtin(const std::string& functor, size_t arity);

}  // namespace protolog
