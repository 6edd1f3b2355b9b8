#pragma once

#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "protolog/term.hpp"

namespace protolog {

struct Clause {
  TermPtr head;
  std::vector<TermPtr> body;
};

struct ADHead {
  TermPtr prob;  // Float constant or an unbound slot variable
  TermPtr head;
};

// P1::H1; ...; Pk::Hk :- Body.  Probabilistic facts are 1-head disjunctions.
struct AnnotatedDisjunction {
  std::vector<ADHead> heads;
  std::vector<TermPtr> body;
};

// nn(name, [In...], Out) :: pred(In..., Out).
struct NeuralDecl {
  std::string network;
  TermPtr head;                    // declared predicate template
  std::vector<size_t> input_pos;   // argument positions that must be ground
  size_t output_pos = 0;
};

enum class ProgramMode { Training, Inference };

struct PredEntry {
  std::vector<size_t> clauses;
  std::vector<std::pair<size_t, size_t>> ad_heads;  // (ad index, head index)
  std::optional<size_t> neural;
};

struct Program {
  std::vector<Clause> clauses;
  std::vector<AnnotatedDisjunction> ads;
  std::vector<NeuralDecl> neural_decls;
  ProgramMode mode = ProgramMode::Training;

  std::unordered_map<std::string, PredEntry> index;
  std::set<std::string> known_preds;  // predicates that exist even with no clauses

  void rebuild_index();
  bool known(const std::string& key) const;
  const PredEntry* lookup(const std::string& key) const;
  size_t total_clause_count() const {
    return clauses.size() + ads.size() + neural_decls.size();
  }
};

std::string program_to_string(const Program& p);

}  // namespace protolog
