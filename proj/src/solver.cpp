#include "protolog/solver.hpp"

#include <algorithm>
#include <cmath>

namespace protolog {

int32_t ChoiceTable::intern(int ad_id, const std::string& tag) {
  auto key = std::make_pair(ad_id, tag);
  auto it = lookup_.find(key);
  if (it != lookup_.end()) return it->second;
  instances_.push_back(Instance{ad_id, tag, {}});
  const int32_t idx = static_cast<int32_t>(instances_.size() - 1);
  lookup_.emplace(std::move(key), idx);
  return idx;
}

bool ChoiceTable::has_prob(int32_t inst, int head) const {
  return instances_[inst].prob.count(head) > 0;
}

void ChoiceTable::record_prob(int32_t inst, int head, DiffScalar p) {
  instances_[inst].prob.emplace(head, p);  // first recording wins
}

DiffScalar ChoiceTable::prob(int32_t inst, int head) const {
  auto it = instances_[inst].prob.find(head);
  if (it == instances_[inst].prob.end())
    throw EngineError(EngineError::Kind::Contract, "choice probability not recorded");
  return it->second;
}

DiffScalar ChoiceTable::const_prob_leaf(int32_t inst, int head, double v) {
  auto it = instances_[inst].prob.find(head);
  if (it != instances_[inst].prob.end()) return it->second;
  if (!tape_)
    throw EngineError(EngineError::Kind::Contract,
                      "probabilistic program solved without an expression tape");
  DiffScalar p = tape_->scalar_leaf(v);
  record_prob(inst, head, p);
  return p;
}

bool is_builtin(const std::string& f, size_t a) {
  return (f == "is" && a == 2) || (f == "between" && a == 3) ||
         (f == "ground" && a == 1) || (f == "var" && a == 1) ||
         (f == "\\=" && a == 2) || (f == "=" && a == 2) || (f == "call" && a == 3) ||
         (f == "true" && a == 0) || (f == "fail" && a == 0) ||
         (f == "<" && a == 2) || (f == ">" && a == 2) || (f == "=<" && a == 2) ||
         (f == ">=" && a == 2);
}

namespace {

struct GoalList {
  TermPtr goal;
  std::shared_ptr<const GoalList> rest;
};
using GoalsPtr = std::shared_ptr<const GoalList>;

GoalsPtr cons(TermPtr g, GoalsPtr rest) {
  return std::make_shared<const GoalList>(GoalList{std::move(g), std::move(rest)});
}

GoalsPtr splice(const std::vector<TermPtr>& body, GoalsPtr rest) {
  GoalsPtr out = std::move(rest);
  for (auto it = body.rbegin(); it != body.rend(); ++it) out = cons(*it, out);
  return out;
}

struct ArithValue {
  bool is_float = false;
  int64_t i = 0;
  double f = 0.0;
  double as_double() const { return is_float ? f : static_cast<double>(i); }
};

class Engine {
 public:
  Engine(const Program& prog, const SolveOptions& opt, EvalHooks* hooks,
         ChoiceTable& table, const SolutionCallback& cb,
         std::vector<std::pair<std::string, uint64_t>> query_vars)
      : prog_(prog), opt_(opt), hooks_(hooks), table_(table), cb_(cb),
        query_vars_(std::move(query_vars)) {}

  void run(const TermPtr& goal) { step(cons(goal, nullptr)); }

 private:
  void emit() {
    Solution sol;
    sol.bindings.reserve(query_vars_.size());
    for (const auto& [name, id] : query_vars_)
      sol.bindings.emplace_back(name, subst_.resolve(mk_var(name, id)));
    sol.proof = path_;
    std::sort(sol.proof.begin(), sol.proof.end());
    sol.proof.erase(std::unique(sol.proof.begin(), sol.proof.end()), sol.proof.end());
    if (!cb_(sol)) stopped_ = true;
  }

  void step(const GoalsPtr& goals) {
    if (stopped_) return;
    if (!goals) {
      emit();
      return;
    }
    if (++steps_ > opt_.max_steps)
      throw EngineError(EngineError::Kind::Resource,
                        "resolution step limit exceeded (" +
                            std::to_string(opt_.max_steps) + ")");
    TermPtr g = subst_.walk(goals->goal);
    if (g->tag == TermTag::Var)
      throw EngineError(EngineError::Kind::Instantiation, "unbound goal");
    if (!is_callable(g))
      throw EngineError(EngineError::Kind::Type,
                        "goal is not callable: " + term_to_string(g));

    const std::string& f = g->name;
    const size_t arity = g->args.size();

    if (f == "," && arity == 2) {
      step(cons(g->args[0], cons(g->args[1], goals->rest)));
      return;
    }
    if (f == "$ad_commit" && arity == 4) {
      ad_commit(g, goals->rest);
      return;
    }
    if (is_builtin(f, arity)) {
      eval_builtin(g, goals->rest);
      return;
    }
    if (hooks_ && hooks_->handles(f, arity)) {
      eval_neural(g, goals->rest);
      return;
    }

    const std::string key = pred_key(f, arity);
    const PredEntry* entry = prog_.lookup(key);
    if (!entry) {
      if (prog_.known(key)) return;  // known predicate with no clauses
      throw EngineError(EngineError::Kind::UnknownPredicate,
                        "unknown predicate " + key);
    }
    if (entry->neural && !(hooks_ && hooks_->handles(f, arity)))
      throw EngineError(EngineError::Kind::Mode,
                        "neural predicate " + key + " has no registered network");

    for (size_t ci : entry->clauses) {
      if (stopped_) return;
      const Clause& c = prog_.clauses[ci];
      std::unordered_map<uint64_t, TermPtr> ren;
      TermPtr head = rename_term(c.head, ren);
      const size_t m = subst_.mark();
      if (unify(g, head, subst_, opt_.occurs_check)) {
        std::vector<TermPtr> body;
        body.reserve(c.body.size());
        for (const auto& b : c.body) body.push_back(rename_term(b, ren));
        step(splice(body, goals->rest));
      }
      subst_.undo_to(m);
    }

    for (const auto& [ad_i, head_j] : entry->ad_heads) {
      if (stopped_) return;
      const AnnotatedDisjunction& ad = prog_.ads[ad_i];
      std::unordered_map<uint64_t, TermPtr> ren;
      TermPtr head = rename_term(ad.heads[head_j].head, ren);
      const size_t m = subst_.mark();
      if (unify(g, head, subst_, opt_.occurs_check) &&
          !excluded_choice(static_cast<int>(ad_i), static_cast<int>(head_j), head)) {
        std::vector<TermPtr> body;
        body.reserve(ad.body.size() + 1);
        for (const auto& b : ad.body) body.push_back(rename_term(b, ren));
        body.push_back(mk_compound(
            "$ad_commit",
            {mk_int(static_cast<int64_t>(ad_i)), mk_int(static_cast<int64_t>(head_j)),
             head, rename_term(ad.heads[head_j].prob, ren)}));
        step(splice(body, goals->rest));
      }
      subst_.undo_to(m);
    }
  }

  // Exclusivity pre-check: once the selected head's variables are ground the
  // choice instance is known, and a branch that picks a second head of an
  // instance already on the path has probability zero. Pruning here skips the
  // disjunction body; the commit marker re-checks after the body regardless.
  bool excluded_choice(int ad_id, int head_idx, const TermPtr& head) {
    std::vector<TermPtr> head_vars;
    collect_vars(head, head_vars);
    std::string tag;
    for (const auto& v : head_vars) {
      if (!subst_.is_ground(v)) return false;  // instance not determined yet
      tag += term_to_string(subst_.resolve(v));
      tag += '|';
    }
    const int32_t inst = table_.intern(ad_id, tag);
    for (const ChoiceLit& l : path_)
      if (l.inst == inst && l.head != head_idx) return true;
    return false;
  }

  // The probabilistic choice is committed only after the disjunction's body
  // succeeded: by then the head grounding and the probability slot are known.
  void ad_commit(const TermPtr& g, const GoalsPtr& rest) {
    const int ad_id = static_cast<int>(g->args[0]->ival);
    const int head_idx = static_cast<int>(g->args[1]->ival);
    const TermPtr& head = g->args[2];

    std::vector<TermPtr> head_vars;
    collect_vars(head, head_vars);
    std::string tag;
    for (const auto& v : head_vars) {
      tag += term_to_string(subst_.resolve(v));
      tag += '|';
    }
    const int32_t inst = table_.intern(ad_id, tag);

    DiffScalar p;
    if (table_.has_prob(inst, head_idx)) {
      p = table_.prob(inst, head_idx);
    } else {
      TermPtr pt = subst_.walk(g->args[3]);
      if (pt->tag == TermTag::Float) {
        p = table_.const_prob_leaf(inst, head_idx, pt->fval);
      } else if (pt->tag == TermTag::Int) {
        p = table_.const_prob_leaf(inst, head_idx, static_cast<double>(pt->ival));
      } else if (pt->tag == TermTag::Tensor && pt->tensor.kind == TensorKind::Scalar &&
                 hooks_) {
        auto ds = hooks_->scalar_of(pt);
        if (!ds)
          throw EngineError(EngineError::Kind::Contract,
                            "probability slot tensor has no scalar value");
        table_.record_prob(inst, head_idx, *ds);
        p = *ds;
      } else {
        throw EngineError(EngineError::Kind::Contract,
                          "annotation did not evaluate to a probability: " +
                              term_to_string(pt));
      }
      const double v = p.value();
      if (v < -1e-9 || v > 1.0 + 1e-9)
        throw EngineError(EngineError::Kind::Contract,
                          "head probability out of [0,1]: " + std::to_string(v));
    }

    push_choice(inst, head_idx, rest);
  }

  void push_choice(int32_t inst, int head_idx, const GoalsPtr& rest) {
    for (const ChoiceLit& l : path_) {
      if (l.inst != inst) continue;
      if (l.head != head_idx) return;  // exclusive heads: dead branch
      step(rest);                      // same choice reused: no duplicate
      return;
    }
    path_.push_back(ChoiceLit{inst, head_idx});
    step(rest);
    path_.pop_back();
  }

  void eval_neural(const TermPtr& g, const GoalsPtr& rest) {
    NeuralResponse r = hooks_->eval(g, subst_, table_);
    if (!r.handled)
      throw EngineError(EngineError::Kind::UnknownPredicate,
                        "neural hook refused goal " + term_to_string(g));
    for (size_t h = 0; h < r.outcomes.size(); ++h) {
      if (stopped_) return;
      const NeuralOutcome& out = r.outcomes[h];
      const size_t m = subst_.mark();
      bool ok = true;
      for (const auto& [pos, term] : out.bindings) {
        if (!unify(g->args[pos], term, subst_, opt_.occurs_check)) {
          ok = false;
          break;
        }
      }
      if (ok) {
        if (out.prob) {
          const int32_t inst = table_.intern(r.ad_id, r.instance_tag);
          if (!table_.has_prob(inst, static_cast<int>(h)))
            table_.record_prob(inst, static_cast<int>(h), *out.prob);
          push_choice(inst, static_cast<int>(h), rest);
        } else {
          step(rest);
        }
      }
      subst_.undo_to(m);
    }
  }

  // ---- builtins ----

  ArithValue eval_arith(const TermPtr& t0) {
    TermPtr t = subst_.walk(t0);
    switch (t->tag) {
      case TermTag::Int:
        return {false, t->ival, 0.0};
      case TermTag::Float:
        return {true, 0, t->fval};
      case TermTag::Var:
        throw EngineError(EngineError::Kind::Instantiation,
                          "arithmetic on unbound variable");
      case TermTag::Compound: {
        const std::string& op = t->name;
        if (t->args.size() == 1 && op == "-") {
          ArithValue v = eval_arith(t->args[0]);
          if (v.is_float) v.f = -v.f;
          else v.i = -v.i;
          return v;
        }
        if (t->args.size() == 2) {
          ArithValue a = eval_arith(t->args[0]);
          ArithValue b = eval_arith(t->args[1]);
          if (op == "+" || op == "-" || op == "*") {
            if (a.is_float || b.is_float) {
              const double x = a.as_double(), y = b.as_double();
              return {true, 0, op == "+" ? x + y : op == "-" ? x - y : x * y};
            }
            return {false,
                    op == "+"   ? a.i + b.i
                    : op == "-" ? a.i - b.i
                                : a.i * b.i,
                    0.0};
          }
          if (op == "/") {
            const double y = b.as_double();
            if (y == 0.0)
              throw EngineError(EngineError::Kind::Type, "division by zero");
            return {true, 0, a.as_double() / y};
          }
          if (op == "//" || op == "mod") {
            if (a.is_float || b.is_float)
              throw EngineError(EngineError::Kind::Type,
                                "integer operation on float");
            if (b.i == 0)
              throw EngineError(EngineError::Kind::Type, "division by zero");
            if (op == "//") return {false, a.i / b.i, 0.0};
            int64_t r = a.i % b.i;
            if (r != 0 && ((r < 0) != (b.i < 0))) r += b.i;
            return {false, r, 0.0};
          }
        }
        throw EngineError(EngineError::Kind::Type,
                          "unknown arithmetic term: " + term_to_string(t));
      }
      default:
        throw EngineError(EngineError::Kind::Type,
                          "arithmetic on non-numeric term: " + term_to_string(t));
    }
  }

  void eval_builtin(const TermPtr& g, const GoalsPtr& rest) {
    const std::string& f = g->name;
    const size_t arity = g->args.size();

    if (f == "true") {
      step(rest);
      return;
    }
    if (f == "fail") return;

    if (f == "is") {
      ArithValue v = eval_arith(g->args[1]);
      TermPtr val = v.is_float ? mk_float(v.f) : mk_int(v.i);
      const size_t m = subst_.mark();
      if (unify(g->args[0], val, subst_, opt_.occurs_check)) step(rest);
      subst_.undo_to(m);
      return;
    }
    if (f == "<" || f == ">" || f == "=<" || f == ">=") {
      const double a = eval_arith(g->args[0]).as_double();
      const double b = eval_arith(g->args[1]).as_double();
      const bool ok = f == "<" ? a < b : f == ">" ? a > b : f == "=<" ? a <= b : a >= b;
      if (ok) step(rest);
      return;
    }
    if (f == "between" && arity == 3) {
      TermPtr lo = subst_.walk(g->args[0]);
      TermPtr hi = subst_.walk(g->args[1]);
      if (lo->tag != TermTag::Int || hi->tag != TermTag::Int)
        throw EngineError(EngineError::Kind::Instantiation,
                          "between/3 bounds must be ground integers");
      TermPtr x = subst_.walk(g->args[2]);
      if (x->tag == TermTag::Int) {
        if (x->ival >= lo->ival && x->ival <= hi->ival) step(rest);
        return;
      }
      if (x->tag != TermTag::Var)
        throw EngineError(EngineError::Kind::Type, "between/3 third argument type");
      for (int64_t v = lo->ival; v <= hi->ival && !stopped_; ++v) {
        const size_t m = subst_.mark();
        subst_.bind(x->var_id, mk_int(v));
        step(rest);
        subst_.undo_to(m);
      }
      return;
    }
    if (f == "ground") {
      if (subst_.is_ground(g->args[0])) step(rest);
      return;
    }
    if (f == "var") {
      if (subst_.walk(g->args[0])->tag == TermTag::Var) step(rest);
      return;
    }
    if (f == "\\=") {
      const size_t m = subst_.mark();
      const bool unifiable = unify(g->args[0], g->args[1], subst_, opt_.occurs_check);
      subst_.undo_to(m);
      if (!unifiable) step(rest);
      return;
    }
    if (f == "=") {
      const size_t m = subst_.mark();
      if (unify(g->args[0], g->args[1], subst_, opt_.occurs_check)) step(rest);
      subst_.undo_to(m);
      return;
    }
    if (f == "call" && arity == 3) {
      TermPtr p = subst_.walk(g->args[0]);
      if (p->tag == TermTag::Var)
        throw EngineError(EngineError::Kind::Instantiation, "call/3 on unbound goal");
      if (!is_callable(p))
        throw EngineError(EngineError::Kind::Type,
                          "call/3 on non-callable: " + term_to_string(p));
      std::vector<TermPtr> args = p->args;
      args.push_back(g->args[1]);
      args.push_back(g->args[2]);
      step(cons(mk_compound(p->name, std::move(args)), rest));
      return;
    }
    throw EngineError(EngineError::Kind::Type, "bad builtin call " + term_to_string(g));
  }

  const Program& prog_;
  const SolveOptions& opt_;
  EvalHooks* hooks_;
  ChoiceTable& table_;
  const SolutionCallback& cb_;
  std::vector<std::pair<std::string, uint64_t>> query_vars_;

  Subst subst_;
  std::vector<ChoiceLit> path_;
  long steps_ = 0;
  bool stopped_ = false;
};

}  // namespace

void solve(const TermPtr& goal, const Program& prog, const SolveOptions& opt,
           EvalHooks* hooks, ChoiceTable& table, const SolutionCallback& cb) {
  std::vector<TermPtr> vars;
  collect_vars(goal, vars);
  std::vector<std::pair<std::string, uint64_t>> query_vars;
  for (const auto& v : vars)
    if (!v->name.empty() && v->name != "_") query_vars.emplace_back(v->name, v->var_id);
  Engine engine(prog, opt, hooks, table, cb, std::move(query_vars));
  engine.run(goal);
}

std::vector<Solution> solve_all(const TermPtr& goal, const Program& prog,
                                const SolveOptions& opt, EvalHooks* hooks,
                                ChoiceTable* table) {
  std::vector<Solution> out;
  ChoiceTable local((Tape*)nullptr);
  ChoiceTable& t = table ? *table : local;
  solve(goal, prog, opt, hooks, t, [&](const Solution& s) {
    out.push_back(s);
    return true;
  });
  return out;
}

}  // namespace protolog
