#include "protolog/parser.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <map>
#include <unordered_map>

namespace protolog {

namespace {

enum class Tok {
  Atom, Var, Int, Float, Str, Punct, HashImg, EndDot, Eof
};

struct Token {
  Tok kind = Tok::Eof;
  std::string text;
  int64_t ival = 0;
  double fval = 0.0;
  int line = 1;
  int col = 1;
};

class Lexer {
 public:
  explicit Lexer(const std::string& src) : src_(src) { advance(); }

  const Token& peek() const { return cur_; }
  Token take() {
    Token t = cur_;
    advance();
    return t;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) { throw ParseError(msg, line_, col_); }

  int get() {
    if (pos_ >= src_.size()) return -1;
    const char c = src_[pos_++];
    if (c == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    return static_cast<unsigned char>(c);
  }

  int look(size_t off = 0) const {
    return pos_ + off < src_.size() ? static_cast<unsigned char>(src_[pos_ + off]) : -1;
  }

  void advance() {
    // Skip whitespace and % comments.
    for (;;) {
      const int c = look();
      if (c == '%') {
        while (look() != -1 && look() != '\n') get();
      } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        get();
      } else {
        break;
      }
    }
    cur_ = Token{};
    cur_.line = line_;
    cur_.col = col_;
    const int c = look();
    if (c == -1) {
      cur_.kind = Tok::Eof;
      return;
    }
    if (std::isdigit(c)) {
      lex_number();
      return;
    }
    if (std::islower(c)) {
      lex_name(Tok::Atom);
      return;
    }
    if (std::isupper(c) || c == '_') {
      lex_name(Tok::Var);
      return;
    }
    if (c == '\'') {
      lex_quoted_atom();
      return;
    }
    if (c == '"') {
      lex_string();
      return;
    }
    if (c == '#') {
      get();
      if (std::islower(look())) {
        std::string name;
        while (std::isalnum(look()) || look() == '_') name += static_cast<char>(get());
        if (name != "img") fail("unknown # literal '#" + name + "'");
        cur_.kind = Tok::HashImg;
        return;
      }
      fail("stray '#'");
    }
    if (c == '.') {
      const int n = look(1);
      if (n == -1 || n == ' ' || n == '\t' || n == '\r' || n == '\n' || n == '%') {
        get();
        cur_.kind = Tok::EndDot;
        return;
      }
      fail("unexpected '.'");
    }
    lex_punct();
  }

  void lex_number() {
    std::string s;
    while (std::isdigit(look())) s += static_cast<char>(get());
    bool is_float = false;
    if (look() == '.' && std::isdigit(look(1))) {
      is_float = true;
      s += static_cast<char>(get());
      while (std::isdigit(look())) s += static_cast<char>(get());
    }
    if (look() == 'e' || look() == 'E') {
      size_t off = 1;
      if (look(1) == '+' || look(1) == '-') off = 2;
      if (std::isdigit(look(off))) {
        is_float = true;
        s += static_cast<char>(get());
        if (look() == '+' || look() == '-') s += static_cast<char>(get());
        while (std::isdigit(look())) s += static_cast<char>(get());
      }
    }
    if (is_float) {
      cur_.kind = Tok::Float;
      cur_.fval = std::strtod(s.c_str(), nullptr);
    } else {
      cur_.kind = Tok::Int;
      cur_.ival = std::strtoll(s.c_str(), nullptr, 10);
    }
    cur_.text = s;
  }

  void lex_name(Tok kind) {
    std::string s;
    while (std::isalnum(look()) || look() == '_') s += static_cast<char>(get());
    cur_.kind = kind;
    cur_.text = s;
  }

  void lex_quoted_atom() {
    get();  // opening '
    std::string s;
    for (;;) {
      const int c = get();
      if (c == -1) fail("unterminated quoted atom");
      if (c == '\'') {
        if (look() == '\'') {
          s += '\'';
          get();
          continue;
        }
        break;
      }
      s += static_cast<char>(c);
    }
    cur_.kind = Tok::Atom;
    cur_.text = s;
  }

  void lex_string() {
    get();  // opening "
    std::string s;
    for (;;) {
      const int c = get();
      if (c == -1) fail("unterminated string");
      if (c == '"') break;
      if (c == '\\') {
        const int e = get();
        if (e == 'n') s += '\n';
        else if (e == 't') s += '\t';
        else s += static_cast<char>(e);
        continue;
      }
      s += static_cast<char>(c);
    }
    cur_.kind = Tok::Str;
    cur_.text = s;
  }

  void lex_punct() {
    static const std::vector<std::string> multi = {":-", "::", "\\=", "=<", ">=", "//"};
    for (const auto& m : multi) {
      bool ok = true;
      for (size_t i = 0; i < m.size(); ++i)
        if (look(i) != static_cast<int>(static_cast<unsigned char>(m[i]))) {
          ok = false;
          break;
        }
      if (ok) {
        for (size_t i = 0; i < m.size(); ++i) get();
        cur_.kind = Tok::Punct;
        cur_.text = m;
        return;
      }
    }
    const int c = get();
    static const std::string singles = "()[],|;=<>+-*/";
    if (singles.find(static_cast<char>(c)) == std::string::npos)
      fail(std::string("unexpected character '") + static_cast<char>(c) + "'");
    cur_.kind = Tok::Punct;
    cur_.text = std::string(1, static_cast<char>(c));
  }

  const std::string& src_;
  size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;
  Token cur_;
};

struct OpInfo {
  int prec;
  enum Assoc { XFX, XFY, YFX } assoc;
};

const std::map<std::string, OpInfo>& infix_table() {
  static const std::map<std::string, OpInfo> ops = {
      {":-", {1200, OpInfo::XFX}}, {";", {1100, OpInfo::XFY}},
      {",", {1000, OpInfo::XFY}},  {"::", {990, OpInfo::XFX}},
      {"is", {700, OpInfo::XFX}},  {"=", {700, OpInfo::XFX}},
      {"\\=", {700, OpInfo::XFX}}, {"<", {700, OpInfo::XFX}},
      {">", {700, OpInfo::XFX}},   {"=<", {700, OpInfo::XFX}},
      {">=", {700, OpInfo::XFX}},  {"+", {500, OpInfo::YFX}},
      {"-", {500, OpInfo::YFX}},   {"*", {400, OpInfo::YFX}},
      {"/", {400, OpInfo::YFX}},   {"//", {400, OpInfo::YFX}},
      {"mod", {400, OpInfo::YFX}}};
  return ops;
}

// Variables are scoped per clause: same name, same variable.
class TermParser {
 public:
  TermParser(Lexer& lex,
             std::vector<std::pair<std::string, uint64_t>>* var_names = nullptr)
      : lex_(lex), var_names_(var_names) {}

  TermPtr parse(int max_prec) {
    TermPtr left = parse_primary();
    for (;;) {
      const Token& t = lex_.peek();
      std::string opname;
      if (t.kind == Tok::Punct) opname = t.text;
      else if (t.kind == Tok::Atom && infix_table().count(t.text)) opname = t.text;
      else break;
      auto it = infix_table().find(opname);
      if (it == infix_table().end()) break;
      const OpInfo& op = it->second;
      if (op.prec > max_prec) break;
      lex_.take();
      const int right_max = op.assoc == OpInfo::XFY ? op.prec : op.prec - 1;
      TermPtr right = parse(right_max);
      left = mk_compound(opname, {left, right});
    }
    return left;
  }

  void new_clause_scope() { scope_.clear(); }

 private:
  [[noreturn]] void fail(const std::string& msg) {
    throw ParseError(msg, lex_.peek().line, lex_.peek().col);
  }

  bool eat_punct(const std::string& p) {
    if (lex_.peek().kind == Tok::Punct && lex_.peek().text == p) {
      lex_.take();
      return true;
    }
    return false;
  }

  void expect_punct(const std::string& p) {
    if (!eat_punct(p)) fail("expected '" + p + "'");
  }

  TermPtr var_for(const std::string& name) {
    if (name == "_") return mk_var_fresh("_");
    auto it = scope_.find(name);
    if (it != scope_.end()) return it->second;
    TermPtr v = mk_var_fresh(name);
    scope_[name] = v;
    if (var_names_) var_names_->emplace_back(name, v->var_id);
    return v;
  }

  std::vector<TermPtr> parse_arglist() {
    std::vector<TermPtr> args;
    expect_punct("(");
    if (!eat_punct(")")) {
      for (;;) {
        args.push_back(parse(999));
        if (eat_punct(")")) break;
        expect_punct(",");
      }
    }
    return args;
  }

  TermPtr parse_primary() {
    const Token t = lex_.take();
    auto fail_at = [&t](const std::string& msg) -> TermPtr {
      throw ParseError(msg, t.line, t.col);
    };
    switch (t.kind) {
      case Tok::Int:
        return mk_int(t.ival);
      case Tok::Float:
        return mk_float(t.fval);
      case Tok::Str:
        return fail_at("string literal outside #img(...)");
      case Tok::HashImg: {
        if (!(lex_.peek().kind == Tok::Punct && lex_.peek().text == "("))
          return fail_at("expected '(' after #img");
        lex_.take();
        if (lex_.peek().kind != Tok::Str) fail("expected a string path in #img(...)");
        const Token path = lex_.take();
        if (!(lex_.peek().kind == Tok::Punct && lex_.peek().text == ")"))
          return fail_at("expected ')' after #img path");
        lex_.take();
        return mk_compound("$img", {mk_atom(path.text)});
      }
      case Tok::Var: {
        if (lex_.peek().kind == Tok::Punct && lex_.peek().text == "(")
          return fail_at("variable in functor position");
        return var_for(t.text);
      }
      case Tok::Atom: {
        if (lex_.peek().kind == Tok::Punct && lex_.peek().text == "(")
          return mk_compound(t.text, parse_arglist());
        return mk_atom(t.text);
      }
      case Tok::Punct: {
        if (t.text == "(") {
          TermPtr inner = parse(1200);
          expect_punct(")");
          return inner;
        }
        if (t.text == "[") return parse_list();
        if (t.text == "-") {
          // Unary minus: fold into numeric literals, otherwise build -(X).
          if (lex_.peek().kind == Tok::Int) return mk_int(-lex_.take().ival);
          if (lex_.peek().kind == Tok::Float) return mk_float(-lex_.take().fval);
          return mk_compound("-", {parse(200)});
        }
        if (t.text == "+") {
          if (lex_.peek().kind == Tok::Int) return mk_int(lex_.take().ival);
          if (lex_.peek().kind == Tok::Float) return mk_float(lex_.take().fval);
        }
        return fail_at("unexpected '" + t.text + "'");
      }
      case Tok::EndDot:
        return fail_at("unexpected end of clause");
      case Tok::Eof:
        return fail_at("unexpected end of input");
    }
    return fail_at("unexpected token");
  }

  TermPtr parse_list() {
    std::vector<TermPtr> items;
    if (eat_punct("]")) return nil();
    for (;;) {
      items.push_back(parse(999));
      if (eat_punct("]")) return mk_list(items);
      if (eat_punct("|")) {
        TermPtr tail = parse(999);
        expect_punct("]");
        return mk_list(items, tail);
      }
      expect_punct(",");
    }
  }

  Lexer& lex_;
  std::unordered_map<std::string, TermPtr> scope_;
  std::vector<std::pair<std::string, uint64_t>>* var_names_;
};

void flatten_conj(const TermPtr& t, std::vector<TermPtr>& out) {
  if (t->tag == TermTag::Compound && t->name == "," && t->args.size() == 2) {
    flatten_conj(t->args[0], out);
    flatten_conj(t->args[1], out);
    return;
  }
  out.push_back(t);
}

void flatten_disj(const TermPtr& t, std::vector<TermPtr>& out) {
  if (t->tag == TermTag::Compound && t->name == ";" && t->args.size() == 2) {
    flatten_disj(t->args[0], out);
    flatten_disj(t->args[1], out);
    return;
  }
  out.push_back(t);
}

bool is_annotation(const TermPtr& t) {
  return t->tag == TermTag::Compound && t->name == "::" && t->args.size() == 2;
}

[[noreturn]] void clause_error(const std::string& msg, const Token& at) {
  throw ParseError(msg, at.line, at.col);
}

void check_head(const TermPtr& h, const Token& at) {
  if (!is_callable(h))
    clause_error("clause head must be an atom or compound, got " + term_to_string(h), at);
}

NeuralDecl make_neural_decl(const TermPtr& nn, const TermPtr& head, const Token& at) {
  if (nn->args.size() != 3)
    clause_error("nn declaration must be nn(name, [inputs...], Out)", at);
  const TermPtr& name = nn->args[0];
  if (name->tag != TermTag::Atom) clause_error("nn network name must be an atom", at);
  check_head(head, at);
  std::vector<TermPtr> inputs;
  TermPtr cur = nn->args[1];
  while (is_cons(cur)) {
    inputs.push_back(cur->args[0]);
    cur = cur->args[1];
  }
  if (!is_nil(cur)) clause_error("nn inputs must be a proper list", at);
  const TermPtr& out = nn->args[2];
  if (out->tag != TermTag::Var) clause_error("nn output must be a variable", at);

  NeuralDecl decl;
  decl.network = name->name;
  decl.head = head;
  bool out_found = false;
  for (size_t i = 0; i < head->args.size(); ++i) {
    const TermPtr& a = head->args[i];
    if (a->tag == TermTag::Var && a->var_id == out->var_id) {
      decl.output_pos = i;
      out_found = true;
      continue;
    }
    for (const auto& in : inputs)
      if (in->tag == TermTag::Var && a->tag == TermTag::Var &&
          in->var_id == a->var_id)
        decl.input_pos.push_back(i);
  }
  if (!out_found) clause_error("nn output variable does not appear in the head", at);
  if (decl.input_pos.size() != inputs.size())
    clause_error("nn input variables must appear in the head", at);
  return decl;
}

}  // namespace

void Program::rebuild_index() {
  index.clear();
  for (size_t i = 0; i < clauses.size(); ++i)
    index[pred_key_of(clauses[i].head)].clauses.push_back(i);
  for (size_t i = 0; i < ads.size(); ++i)
    for (size_t j = 0; j < ads[i].heads.size(); ++j)
      index[pred_key_of(ads[i].heads[j].head)].ad_heads.emplace_back(i, j);
  for (size_t i = 0; i < neural_decls.size(); ++i)
    index[pred_key_of(neural_decls[i].head)].neural = i;
  for (const auto& [k, v] : index) known_preds.insert(k);
}

bool Program::known(const std::string& key) const {
  return known_preds.count(key) > 0 || index.count(key) > 0;
}

const PredEntry* Program::lookup(const std::string& key) const {
  auto it = index.find(key);
  return it == index.end() ? nullptr : &it->second;
}

Program parse_program(const std::string& text) {
  Lexer lex(text);
  Program prog;
  TermParser tp(lex);
  while (lex.peek().kind != Tok::Eof) {
    const Token at = lex.peek();
    tp.new_clause_scope();
    TermPtr t = tp.parse(1200);
    if (lex.peek().kind != Tok::EndDot)
      throw ParseError("expected '.' at end of clause", lex.peek().line, lex.peek().col);
    lex.take();

    TermPtr head = t;
    std::vector<TermPtr> body;
    if (t->tag == TermTag::Compound && t->name == ":-" && t->args.size() == 2) {
      head = t->args[0];
      flatten_conj(t->args[1], body);
    }

    std::vector<TermPtr> disj;
    flatten_disj(head, disj);
    const bool any_annotated =
        std::any_of(disj.begin(), disj.end(), [](const TermPtr& d) { return is_annotation(d); });

    if (!any_annotated) {
      if (disj.size() != 1)
        clause_error("';' in a clause head requires '::' annotations", at);
      check_head(head, at);
      prog.clauses.push_back(Clause{head, std::move(body)});
      continue;
    }

    // Annotated: neural declaration, probabilistic fact, or disjunction.
    if (disj.size() == 1) {
      const TermPtr& ann = disj[0];
      const TermPtr& p = ann->args[0];
      const TermPtr& h = ann->args[1];
      if (p->tag == TermTag::Compound && p->name == "nn") {
        if (!body.empty()) clause_error("nn declaration cannot have a body", at);
        prog.neural_decls.push_back(make_neural_decl(p, h, at));
        continue;
      }
    }

    AnnotatedDisjunction ad;
    double const_sum = 0.0;
    bool all_const = true;
    for (const TermPtr& d : disj) {
      if (!is_annotation(d))
        clause_error("every disjunct of an annotated disjunction needs 'P::Head'", at);
      TermPtr p = d->args[0];
      const TermPtr& h = d->args[1];
      check_head(h, at);
      if (p->tag == TermTag::Int) p = mk_float(static_cast<double>(p->ival));
      if (p->tag == TermTag::Float) {
        if (p->fval < 0.0 || p->fval > 1.0)
          clause_error("annotation probability out of [0,1]", at);
        const_sum += p->fval;
      } else if (p->tag == TermTag::Var) {
        all_const = false;
      } else {
        clause_error("unknown annotation form: " + term_to_string(p), at);
      }
      ad.heads.push_back(ADHead{p, h});
    }
    if (all_const && const_sum > 1.0 + 1e-9)
      clause_error("annotated disjunction probabilities sum to more than 1", at);
    ad.body = std::move(body);
    prog.ads.push_back(std::move(ad));
  }
  prog.rebuild_index();
  return prog;
}

TermPtr parse_goal(const std::string& text,
                   std::vector<std::pair<std::string, uint64_t>>* vars) {
  Lexer lex(text);
  TermParser tp(lex, vars);
  TermPtr t = tp.parse(1200);
  if (lex.peek().kind == Tok::EndDot) lex.take();
  if (lex.peek().kind != Tok::Eof)
    throw ParseError("trailing input after goal", lex.peek().line, lex.peek().col);
  if (!is_callable(t) && t->tag != TermTag::Var)
    throw ParseError("goal must be callable", 1, 1);
  return t;
}

std::string program_to_string(const Program& p) {
  std::string out;
  for (const auto& c : p.clauses) {
    out += term_to_string(c.head);
    if (!c.body.empty()) {
      out += " :- ";
      for (size_t i = 0; i < c.body.size(); ++i) {
        if (i) out += ", ";
        out += term_to_string(c.body[i]);
      }
    }
    out += ".\n";
  }
  for (const auto& ad : p.ads) {
    for (size_t i = 0; i < ad.heads.size(); ++i) {
      if (i) out += " ; ";
      out += term_to_string(ad.heads[i].prob);
      out += "::";
      out += term_to_string(ad.heads[i].head);
    }
    if (!ad.body.empty()) {
      out += " :- ";
      for (size_t i = 0; i < ad.body.size(); ++i) {
        if (i) out += ", ";
        out += term_to_string(ad.body[i]);
      }
    }
    out += ".\n";
  }
  for (const auto& d : p.neural_decls) {
    out += "nn(" + d.network + ", [";
    for (size_t i = 0; i < d.input_pos.size(); ++i) {
      if (i) out += ",";
      out += term_to_string(d.head->args[d.input_pos[i]]);
    }
    out += "], " + term_to_string(d.head->args[d.output_pos]) + ") :: ";
    out += term_to_string(d.head);
    out += ".\n";
  }
  return out;
}

}  // namespace protolog
