#pragma once

#include <string>
#include <vector>

#include "protolog/solver.hpp"

namespace protolog {

// One grouped query answer: a substitution over the query's named variables,
// the exact probability of the disjunction of its proofs (as a node on the
// tape used while solving), and the proofs themselves.
struct QueryAnswer {
  std::vector<std::pair<std::string, TermPtr>> bindings;
  std::string key;  // canonical form of the bindings, used for grouping
  DiffScalar probability;
  std::vector<ProofSet> proofs;
};

// Exact probability of the disjunction of proofs by Shannon expansion over
// choice instances, memoized on the residual proof set. The result is a
// differentiable expression over the per-head probability nodes. Throws on
// internally inconsistent proofs.
DiffScalar query_probability(Tape& tape, const ChoiceTable& table,
                             const std::vector<ProofSet>& proofs);

// Runs solve(), groups solutions by the bindings of the query's variables,
// evaluates each group's probability and sorts by descending probability.
std::vector<QueryAnswer> answer(const TermPtr& goal, const Program& prog, Tape& tape,
                                EvalHooks* hooks = nullptr, const SolveOptions& opt = {},
                                ChoiceTable* table_out = nullptr);

// Test oracle: enumerates the full cross product of all disjunction choices,
// decides entailment of `goal` per total choice by running the deterministic
// solver on the induced world program, and sums world probabilities.
// Requires constant annotation probabilities and at most max_choices choice
// variables.
double brute_force_probability(const TermPtr& goal, const Program& prog,
                               const SolveOptions& opt = {}, size_t max_choices = 20);

}  // namespace protolog
