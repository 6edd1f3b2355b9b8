#pragma once

// Random ground probabilistic programs for oracle-equivalence testing:
// constant-probability facts and disjunctions plus an acyclic rule layer.

#include <string>
#include <vector>

#include "protolog/rng.hpp"

namespace protolog::testing {

struct RandomProgram {
  struct ChoiceDecl {
    std::string pred;           // f3 (fact) or g2 with heads g2(1..k)
    std::vector<double> probs;  // one entry per head
  };
  std::vector<ChoiceDecl> choices;
  std::vector<std::string> rules;  // full clause lines
  std::string query;

  // perturb: add delta to probs[choice][head] when emitting.
  std::string to_text(int p_choice = -1, int p_head = -1, double delta = 0.0) const {
    std::string out;
    for (size_t c = 0; c < choices.size(); ++c) {
      const auto& d = choices[c];
      for (size_t h = 0; h < d.probs.size(); ++h) {
        double p = d.probs[h];
        if (static_cast<int>(c) == p_choice && static_cast<int>(h) == p_head)
          p += delta;
        char buf[64];
        snprintf(buf, sizeof(buf), "%.17g", p);
        out += buf;
        out += "::";
        out += d.pred;
        if (d.probs.size() > 1) out += "(" + std::to_string(h + 1) + ")";
        if (h + 1 < d.probs.size()) out += " ; ";
      }
      out += ".\n";
    }
    for (const auto& r : rules) out += r + "\n";
    return out;
  }
};

inline RandomProgram make_random_program(uint64_t seed) {
  RngStream rng(seed);
  RandomProgram out;

  const int n_choices = static_cast<int>(rng.next_int(1, 5));
  std::vector<std::string> literals;  // callable goals usable in rule bodies
  for (int c = 0; c < n_choices; ++c) {
    RandomProgram::ChoiceDecl d;
    const bool is_ad = rng.next_double() < 0.4;
    d.pred = (is_ad ? "g" : "f") + std::to_string(c);
    if (is_ad) {
      const int heads = static_cast<int>(rng.next_int(2, 3));
      double budget = 0.95;
      for (int h = 0; h < heads; ++h) {
        const double p = rng.next_uniform(0.05, budget / (heads - h));
        d.probs.push_back(p);
        budget -= p;
        literals.push_back(d.pred + "(" + std::to_string(h + 1) + ")");
      }
    } else {
      d.probs.push_back(rng.next_uniform(0.05, 0.95));
      literals.push_back(d.pred);
    }
    out.choices.push_back(std::move(d));
  }

  const int n_rules = static_cast<int>(rng.next_int(1, 6));
  for (int r = 0; r < n_rules; ++r) {
    std::string head = "r" + std::to_string(r);
    std::string body;
    const int n_lits = static_cast<int>(rng.next_int(1, 3));
    for (int l = 0; l < n_lits; ++l) {
      if (l) body += ", ";
      body += literals[static_cast<size_t>(
          rng.next_int(0, static_cast<int64_t>(literals.size()) - 1))];
    }
    out.rules.push_back(head + " :- " + body + ".");
    literals.push_back(head);
    // Occasionally give the same head a second clause (disjunctive proofs).
    if (rng.next_double() < 0.35) {
      std::string body2 = literals[static_cast<size_t>(
          rng.next_int(0, static_cast<int64_t>(literals.size()) - 2))];
      out.rules.push_back(head + " :- " + body2 + ".");
    }
  }
  out.query = "r" + std::to_string(n_rules - 1);
  return out;
}

}  // namespace protolog::testing
