#include "protolog/wmc.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <unordered_map>

namespace protolog {

namespace {

void check_consistent(const ProofSet& p) {
  for (size_t i = 1; i < p.size(); ++i)
    if (p[i].inst == p[i - 1].inst && p[i].head != p[i - 1].head)
      throw EngineError(EngineError::Kind::Contract,
                        "inconsistent proof: two heads of one choice instance");
}

std::vector<ProofSet> canonicalize(std::vector<ProofSet> proofs) {
  for (auto& p : proofs) {
    std::sort(p.begin(), p.end());
    p.erase(std::unique(p.begin(), p.end()), p.end());
    check_consistent(p);
  }
  std::sort(proofs.begin(), proofs.end());
  proofs.erase(std::unique(proofs.begin(), proofs.end()), proofs.end());
  return proofs;
}

std::string formula_key(const std::vector<ProofSet>& proofs) {
  std::string key;
  for (const auto& p : proofs) {
    for (const auto& l : p) {
      key += std::to_string(l.inst);
      key += '.';
      key += std::to_string(l.head);
      key += ',';
    }
    key += ';';
  }
  return key;
}

class ShannonEval {
 public:
  ShannonEval(Tape& tape, const ChoiceTable& table) : tape_(tape), table_(table) {}

  DiffScalar eval(std::vector<ProofSet> proofs) {
    proofs = canonicalize(std::move(proofs));
    return rec(proofs);
  }

 private:
  DiffScalar rec(const std::vector<ProofSet>& proofs) {
    if (proofs.empty()) return tape_.constant_scalar(0.0);
    for (const auto& p : proofs)
      if (p.empty()) return tape_.constant_scalar(1.0);
    const std::string key = formula_key(proofs);
    auto it = memo_.find(key);
    if (it != memo_.end()) return it->second;

    // Branch on the lowest instance id present.
    int32_t inst = proofs[0][0].inst;
    for (const auto& p : proofs) inst = std::min(inst, p[0].inst);

    std::vector<ProofSet> without;            // proofs not mentioning inst
    std::map<int, std::vector<ProofSet>> by_head;
    for (const auto& p : proofs) {
      bool found = false;
      for (const auto& l : p) {
        if (l.inst == inst) {
          ProofSet rest;
          rest.reserve(p.size() - 1);
          for (const auto& l2 : p)
            if (!(l2.inst == inst && l2.head == l.head)) rest.push_back(l2);
          by_head[l.head].push_back(std::move(rest));
          found = true;
          break;
        }
      }
      if (!found) without.push_back(p);
    }

    DiffScalar acc = tape_.constant_scalar(0.0);
    std::vector<DiffScalar> head_probs;
    for (auto& [head, sub] : by_head) {
      DiffScalar p = table_.prob(inst, head);
      head_probs.push_back(p);
      std::vector<ProofSet> cond = sub;
      cond.insert(cond.end(), without.begin(), without.end());
      acc = tape_.add(acc, tape_.mul(p, rec(canonicalize(std::move(cond)))));
    }
    if (!without.empty()) {
      // Residual branch: none of the heads used in the formula was chosen.
      DiffScalar sum = head_probs[0];
      for (size_t i = 1; i < head_probs.size(); ++i) sum = tape_.add(sum, head_probs[i]);
      if (sum.value() > 1.0 + 1e-9)
        throw EngineError(EngineError::Kind::Contract,
                          "choice head probabilities sum above 1");
      DiffScalar residual =
          tape_.clamp(tape_.sub(tape_.constant_scalar(1.0), sum), 0.0, 1.0);
      acc = tape_.add(acc, tape_.mul(residual, rec(without)));
    }
    memo_.emplace(key, acc);
    return acc;
  }

  Tape& tape_;
  const ChoiceTable& table_;
  std::unordered_map<std::string, DiffScalar> memo_;
};

}  // namespace

DiffScalar query_probability(Tape& tape, const ChoiceTable& table,
                             const std::vector<ProofSet>& proofs) {
  ShannonEval eval(tape, table);
  return eval.eval(proofs);
}

std::vector<QueryAnswer> answer(const TermPtr& goal, const Program& prog, Tape& tape,
                                EvalHooks* hooks, const SolveOptions& opt,
                                ChoiceTable* table_out) {
  ChoiceTable local(&tape);
  ChoiceTable& table = table_out ? *table_out : local;

  // Grouped by canonical binding text, insertion-ordered for determinism.
  std::vector<QueryAnswer> groups;
  std::unordered_map<std::string, size_t> group_idx;
  solve(goal, prog, opt, hooks, table, [&](const Solution& s) {
    std::string key;
    for (const auto& [name, term] : s.bindings) {
      key += name;
      key += '=';
      key += term_to_string(term);
      key += ';';
    }
    auto it = group_idx.find(key);
    if (it == group_idx.end()) {
      QueryAnswer qa;
      qa.bindings = s.bindings;
      qa.key = key;
      qa.proofs.push_back(s.proof);
      group_idx.emplace(key, groups.size());
      groups.push_back(std::move(qa));
    } else {
      groups[it->second].proofs.push_back(s.proof);
    }
    return true;
  });

  for (auto& g : groups) g.probability = query_probability(tape, table, g.proofs);
  std::stable_sort(groups.begin(), groups.end(),
                   [](const QueryAnswer& a, const QueryAnswer& b) {
                     const double pa = a.probability.value();
                     const double pb = b.probability.value();
                     if (pa != pb) return pa > pb;
                     return a.key < b.key;
                   });
  return groups;
}

double brute_force_probability(const TermPtr& goal, const Program& prog,
                               const SolveOptions& opt, size_t max_choices) {
  if (prog.ads.size() > max_choices)
    throw EngineError(EngineError::Kind::Resource,
                      "too many choice variables for brute-force enumeration");
  // Option count per disjunction: each head, or no head.
  size_t worlds = 1;
  for (const auto& ad : prog.ads) {
    for (const auto& h : ad.heads)
      if (h.prob->tag != TermTag::Float && h.prob->tag != TermTag::Int)
        throw EngineError(EngineError::Kind::Contract,
                          "brute force requires constant probabilities");
    worlds *= ad.heads.size() + 1;
    if (worlds > (1u << 22))
      throw EngineError(EngineError::Kind::Resource,
                        "brute-force world count too large");
  }

  std::vector<size_t> choice(prog.ads.size(), 0);
  double total = 0.0;
  for (;;) {
    // World probability under this total choice.
    double wp = 1.0;
    for (size_t i = 0; i < prog.ads.size(); ++i) {
      const auto& ad = prog.ads[i];
      double head_sum = 0.0;
      for (const auto& h : ad.heads)
        head_sum += h.prob->tag == TermTag::Float ? h.prob->fval
                                                  : static_cast<double>(h.prob->ival);
      if (choice[i] < ad.heads.size()) {
        const auto& h = ad.heads[choice[i]];
        wp *= h.prob->tag == TermTag::Float ? h.prob->fval
                                            : static_cast<double>(h.prob->ival);
      } else {
        wp *= std::max(0.0, 1.0 - head_sum);
      }
    }

    if (wp > 0.0) {
      Program world;
      world.clauses = prog.clauses;
      world.mode = prog.mode;
      for (size_t i = 0; i < prog.ads.size(); ++i) {
        if (choice[i] >= prog.ads[i].heads.size()) continue;
        world.clauses.push_back(
            Clause{prog.ads[i].heads[choice[i]].head, prog.ads[i].body});
      }
      world.rebuild_index();
      // Heads that lost all clauses in this world stay known predicates.
      for (const auto& ad : prog.ads)
        for (const auto& h : ad.heads) world.known_preds.insert(pred_key_of(h.head));

      bool entailed = false;
      ChoiceTable table((Tape*)nullptr);
      solve(goal, world, opt, nullptr, table, [&](const Solution&) {
        entailed = true;
        return false;
      });
      if (entailed) total += wp;
    }

    // Next assignment.
    size_t i = 0;
    for (; i < choice.size(); ++i) {
      if (++choice[i] <= prog.ads[i].heads.size()) break;
      choice[i] = 0;
    }
    if (i == choice.size()) break;
    if (choice.empty()) break;
  }
  return total;
}

}  // namespace protolog
