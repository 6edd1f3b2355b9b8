#include "protolog/bridge.hpp"

#include <cmath>

#include "protolog/parser.hpp"
#include "protolog/rng.hpp"

namespace protolog {

// ---- TensorStore ----

TensorStore::Entry& TensorStore::entry(uint64_t id) {
  if (!has(id)) throw EngineError(EngineError::Kind::Contract, "bad tensor handle");
  return entries_[id - 1];
}

const TensorStore::Entry& TensorStore::entry(uint64_t id) const {
  if (!has(id)) throw EngineError(EngineError::Kind::Contract, "bad tensor handle");
  return entries_[id - 1];
}

uint64_t TensorStore::add_constant(Tensor t, TensorKind kind) {
  Entry e;
  e.constant = std::move(t);
  e.kind = kind;
  entries_.push_back(std::move(e));
  return entries_.size();
}

uint64_t TensorStore::add_node(DiffVal v, TensorKind kind, bool generated) {
  Entry e;
  e.node = v;
  e.has_node = true;
  e.kind = kind;
  e.generated = generated;
  entries_.push_back(std::move(e));
  return entries_.size();
}

DiffVal TensorStore::node(Tape& tape, uint64_t id) {
  Entry& e = entry(id);
  if (!e.has_node) {
    e.node = tape.constant(e.constant);
    e.has_node = true;
  }
  return e.node;
}

Tensor TensorStore::value(uint64_t id) const {
  const Entry& e = entry(id);
  return e.has_node ? e.node.tensor() : e.constant;
}

TensorKind TensorStore::kind(uint64_t id) const { return entry(id).kind; }
bool TensorStore::generated(uint64_t id) const { return entry(id).generated; }

// ---- Model ----

Model make_untrained_model(const ModelConfig& cfg, uint64_t seed,
                           PrototypeInit proto_init) {
  Model m;
  m.cfg = cfg;
  init_model_params(m.params, cfg, seed, proto_init);
  return m;
}

void save_model(const Model& m, const std::string& path) {
  ParamStore copy = m.params;
  m.cfg.to_meta(copy.meta());
  save_checkpoint(copy, path);
}

Model load_model(const std::string& path) {
  Model m;
  m.params = load_checkpoint(path);
  m.cfg = ModelConfig::from_meta(m.params.meta());
  return m;
}

// ---- QueryContext ----

QueryContext::QueryContext(Session& s, const Program& prog, uint64_t query_seed)
    : s_(s), prog_(prog), seed_(query_seed) {
  for (size_t i = 0; i < prog.neural_decls.size(); ++i)
    decl_by_key_[pred_key_of(prog.neural_decls[i].head)] = i;
}

bool QueryContext::handles(const std::string& functor, size_t arity) const {
  if ((functor == "sample" && arity == 2) || (functor == "likelihood" && arity == 3) ||
      (functor == "mse" && arity == 3) || (functor == "mul" && arity == 3))
    return true;
  return decl_by_key_.count(pred_key(functor, arity)) > 0;
}

std::optional<DiffScalar> QueryContext::scalar_of(const TermPtr& t) const {
  if (t->tag != TermTag::Tensor || t->tensor.kind != TensorKind::Scalar)
    return std::nullopt;
  // Scalar entries always carry nodes.
  return DiffScalar{&s_.tape, const_cast<TensorStore&>(s_.store).node(s_.tape, t->tensor.id).id};
}

size_t QueryContext::prototype_index_of(const TermPtr& t0, Subst& subst) const {
  TermPtr t = subst.resolve(t0);
  if (!subst.is_ground(t0))
    throw EngineError(EngineError::Kind::Mode,
                      "prototype argument is not ground: " + term_to_string(t));
  // Accept N, prototype(N), tensor(prototype(N)): take the first integer found.
  std::function<const Term*(const TermPtr&)> find_int =
      [&](const TermPtr& u) -> const Term* {
    if (u->tag == TermTag::Int) return u.get();
    for (const auto& a : u->args)
      if (const Term* r = find_int(a)) return r;
    return nullptr;
  };
  const Term* i = find_int(t);
  if (!i)
    throw EngineError(EngineError::Kind::Type,
                      "cannot read a prototype id from " + term_to_string(t));
  if (i->ival < 0 ||
      static_cast<size_t>(i->ival) >= s_.model.cfg.num_prototypes)
    throw EngineError(EngineError::Kind::Type,
                      "prototype id out of range: " + std::to_string(i->ival));
  return static_cast<size_t>(i->ival);
}

TermPtr QueryContext::prototype_sample_term(size_t proto) {
  auto it = sample_cache_.find(proto);
  if (it != sample_cache_.end()) return it->second;
  const ModelConfig& cfg = s_.model.cfg;
  RngStream rng(mix_seed(seed_, "proto-eps", proto));
  Tensor eps({cfg.latent_dim});
  for (double& v : eps.data) v = rng.next_gaussian();
  DiffTensor z = sample_prototype(s_.tape, s_.binding, cfg, proto, eps);
  const uint64_t id = s_.store.add_node(z, TensorKind::Latent, false);
  TermPtr term = mk_tensor(TensorHandle{id, TensorKind::Latent});
  sample_cache_.emplace(proto, term);
  return term;
}

TermPtr QueryContext::encode_term(uint64_t image_id) {
  auto it = encode_cache_.find(image_id);
  if (it != encode_cache_.end()) return it->second;
  const ModelConfig& cfg = s_.model.cfg;
  DiffTensor img = s_.store.node(s_.tape, image_id);
  if (img.tensor().size() != cfg.img_size())
    throw EngineError(EngineError::Kind::Type, "image tensor has wrong shape");
  EncodedPosterior q = encode_image(s_.tape, s_.binding, cfg, img);
  RngStream rng(mix_seed(seed_, "enc-eps", image_id));
  Tensor eps({cfg.latent_dim});
  for (double& v : eps.data) v = rng.next_gaussian();
  DiffTensor z = s_.tape.gaussian_sample(q.mean, q.log_std, eps, cfg.std_floor);
  const uint64_t id = s_.store.add_node(z, TensorKind::Latent, false);
  TermPtr term = mk_tensor(TensorHandle{id, TensorKind::Latent});
  encode_cache_.emplace(image_id, term);
  posterior_cache_.emplace(image_id, q);
  return term;
}

EncodedPosterior QueryContext::posterior_of(uint64_t image_id) {
  encode_term(image_id);
  return posterior_cache_.at(image_id);
}

TermPtr QueryContext::decode_term(uint64_t latent_id) {
  auto it = decode_cache_.find(latent_id);
  if (it != decode_cache_.end()) return it->second;
  DiffTensor z = s_.store.node(s_.tape, latent_id);
  DiffTensor img = decode_latent(s_.tape, s_.binding, s_.model.cfg, z);
  const uint64_t id = s_.store.add_node(img, TensorKind::Image, true);
  TermPtr term = mk_tensor(TensorHandle{id, TensorKind::Image});
  decode_cache_.emplace(latent_id, term);
  return term;
}

DiffTensor QueryContext::membership_of(uint64_t latent_id) {
  auto it = membership_cache_.find(latent_id);
  if (it != membership_cache_.end()) return it->second;
  DiffTensor z = s_.store.node(s_.tape, latent_id);
  DiffTensor memb = membership_distribution(s_.tape, s_.binding, s_.model.cfg, z);
  membership_cache_.emplace(latent_id, memb);
  return memb;
}

DiffScalar QueryContext::similarity_of(uint64_t img_a, uint64_t img_b) {
  const auto key = std::minmax(img_a, img_b);
  auto it = similarity_cache_.find({key.first, key.second});
  if (it != similarity_cache_.end()) return it->second;
  DiffScalar sim = im_similar(s_.tape, s_.store.node(s_.tape, img_a),
                              s_.store.node(s_.tape, img_b));
  similarity_cache_.emplace(std::make_pair(key.first, key.second), sim);
  return sim;
}

namespace {

TermPtr scalar_term(Session& s, DiffScalar v) {
  const uint64_t id = s.store.add_node(v, TensorKind::Scalar, false);
  return mk_tensor(TensorHandle{id, TensorKind::Scalar});
}

DiffScalar scalar_value(QueryContext& ctx, Session& s, const TermPtr& t0, Subst& subst,
                        const char* what) {
  TermPtr t = subst.walk(t0);
  if (t->tag == TermTag::Float) return s.tape.constant_scalar(t->fval);
  if (t->tag == TermTag::Int) return s.tape.constant_scalar(static_cast<double>(t->ival));
  if (t->tag == TermTag::Tensor) {
    auto ds = ctx.scalar_of(t);
    if (ds) return *ds;
  }
  throw EngineError(EngineError::Kind::Type,
                    std::string(what) + ": expected a probability value, got " +
                        term_to_string(t));
}

uint64_t tensor_arg(Subst& subst, const TermPtr& t0, TensorKind want, const char* who) {
  TermPtr t = subst.walk(t0);
  if (t->tag == TermTag::Var)
    throw EngineError(EngineError::Kind::Mode,
                      std::string(who) + ": argument is unbound");
  if (t->tag != TermTag::Tensor || t->tensor.kind != want)
    throw EngineError(EngineError::Kind::Type,
                      std::string(who) + ": expected a tensor argument, got " +
                          term_to_string(t));
  return t->tensor.id;
}

}  // namespace

NeuralResponse QueryContext::eval(const TermPtr& goal, Subst& subst, ChoiceTable&) {
  NeuralResponse r;
  r.handled = true;
  const std::string& f = goal->name;
  const size_t arity = goal->args.size();

  if (f == "sample" && arity == 2) {
    const size_t proto = prototype_index_of(goal->args[0], subst);
    NeuralOutcome out;
    out.bindings.emplace_back(1, prototype_sample_term(proto));
    r.outcomes.push_back(std::move(out));
    return r;
  }
  if (f == "likelihood" && arity == 3) {
    const size_t proto = prototype_index_of(goal->args[0], subst);
    const uint64_t lat = tensor_arg(subst, goal->args[1], TensorKind::Latent,
                                    "likelihood/3");
    DiffScalar p = s_.tape.pick(membership_of(lat), proto);
    NeuralOutcome out;
    out.bindings.emplace_back(2, scalar_term(s_, p));
    r.outcomes.push_back(std::move(out));
    return r;
  }
  if (f == "mse" && arity == 3) {
    const uint64_t a = tensor_arg(subst, goal->args[0], TensorKind::Image, "mse/3");
    const uint64_t b = tensor_arg(subst, goal->args[1], TensorKind::Image, "mse/3");
    NeuralOutcome out;
    out.bindings.emplace_back(2, scalar_term(s_, similarity_of(a, b)));
    r.outcomes.push_back(std::move(out));
    return r;
  }
  if (f == "mul" && arity == 3) {
    DiffScalar a = scalar_value(*this, s_, goal->args[0], subst, "mul/3");
    DiffScalar b = scalar_value(*this, s_, goal->args[1], subst, "mul/3");
    NeuralOutcome out;
    out.bindings.emplace_back(2, scalar_term(s_, s_.tape.mul(a, b)));
    r.outcomes.push_back(std::move(out));
    return r;
  }

  auto it = decl_by_key_.find(pred_key(f, arity));
  if (it == decl_by_key_.end()) {
    r.handled = false;
    return r;
  }
  return eval_neural_decl(prog_.neural_decls[it->second], goal, subst);
}

NeuralResponse QueryContext::eval_neural_decl(const NeuralDecl& decl,
                                              const TermPtr& goal, Subst& subst) {
  NeuralResponse r;
  r.handled = true;

  if (decl.network == "encoder") {
    const uint64_t img = tensor_arg(subst, goal->args[decl.input_pos.at(0)],
                                    TensorKind::Image, "encoder");
    NeuralOutcome out;
    out.bindings.emplace_back(decl.output_pos, encode_term(img));
    r.outcomes.push_back(std::move(out));
    return r;
  }
  if (decl.network == "decoder") {
    const uint64_t lat = tensor_arg(subst, goal->args[decl.input_pos.at(0)],
                                    TensorKind::Latent, "decoder");
    NeuralOutcome out;
    out.bindings.emplace_back(decl.output_pos, decode_term(lat));
    r.outcomes.push_back(std::move(out));
    return r;
  }
  if (decl.network == "classifier") {
    // Functional neural predicate: a plain input->label classifier. With an
    // unbound input there is nothing to run, and resolution simply fails.
    TermPtr in = subst.walk(goal->args[decl.input_pos.at(0)]);
    if (in->tag == TermTag::Var) return r;  // no outcomes
    const uint64_t img = tensor_arg(subst, goal->args[decl.input_pos.at(0)],
                                    TensorKind::Image, "classifier");
    TermPtr lat = encode_term(img);
    DiffTensor memb = membership_of(lat->tensor.id);
    const size_t K = s_.model.cfg.num_prototypes;
    r.ad_id = 100000 + static_cast<int>(decl_by_key_.at(pred_key_of(decl.head)));
    r.instance_tag = "#t" + std::to_string(img);
    for (size_t i = 0; i < K; ++i) {
      NeuralOutcome out;
      out.bindings.emplace_back(
          decl.output_pos, mk_int(label_of_prototype(s_.model.params, i)));
      out.prob = s_.tape.pick(memb, i);
      r.outcomes.push_back(std::move(out));
    }
    return r;
  }
  throw EngineError(EngineError::Kind::Mode,
                    "no registered network named '" + decl.network + "'");
}

// ---- standalone ops ----

DiffScalar im_similar(Tape& tape, DiffTensor a, DiffTensor b) {
  return tape.clamp(tape.sub(tape.constant_scalar(1.0), tape.mse(a, b)), 0.0, 1.0);
}

Program transform_for_inference(const Program& training) {
  Program out;
  out.ads = training.ads;
  out.neural_decls = training.neural_decls;
  out.mode = ProgramMode::Inference;
  bool had_decode = false;
  for (const auto& c : training.clauses) {
    if (pred_key_of(c.head) == "decode/3") {
      had_decode = true;
      continue;
    }
    out.clauses.push_back(c);
  }
  if (!had_decode)
    throw EngineError(EngineError::Kind::Contract,
                      "transform_for_inference: program has no decode/3");
  Program snippet = parse_program("decode(Prot, Image, 1.0) :- ground(Prot).");
  out.clauses.push_back(snippet.clauses.at(0));
  out.rebuild_index();
  return out;
}

std::vector<DiffScalar> neural_ad_probabilities(QueryContext& ctx,
                                                const std::vector<TermPtr>& images) {
  Session& s = ctx.session();
  const ModelConfig& cfg = s.model.cfg;
  if (images.size() != cfg.num_prototypes)
    throw EngineError(EngineError::Kind::Contract,
                      "neural_ad_probabilities: need one image term per prototype");
  const bool training = ctx.program().mode == ProgramMode::Training;
  std::vector<DiffScalar> probs;
  probs.reserve(images.size());
  for (size_t i = 0; i < images.size(); ++i) {
    const TermPtr& im = images[i];
    if (im->tag == TermTag::Tensor) {
      TermPtr lat = ctx.encode_term(im->tensor.id);
      DiffScalar enc = s.tape.pick(ctx.membership_of(lat->tensor.id), i);
      if (training) {
        TermPtr sample = ctx.prototype_sample_term(i);
        TermPtr dec = ctx.decode_term(sample->tensor.id);
        enc = s.tape.mul(enc, ctx.similarity_of(im->tensor.id, dec->tensor.id));
      }
      probs.push_back(enc);
    } else if (im->tag == TermTag::Var) {
      TermPtr sample = ctx.prototype_sample_term(i);
      probs.push_back(s.tape.pick(ctx.membership_of(sample->tensor.id), i));
    } else {
      throw EngineError(EngineError::Kind::Type,
                        "head image must be a tensor or a variable");
    }
  }
  return probs;
}

SolveOptions bridge_solve_options() {
  SolveOptions opt;
  opt.max_steps = 20'000'000;
  return opt;
}

TermPtr instantiate_images(const TermPtr& goal, Session& s,
                           const std::function<Tensor(const std::string&)>& loader) {
  if (goal->tag == TermTag::Compound && goal->name == "$img" && goal->args.size() == 1) {
    Tensor img = loader(goal->args[0]->name);
    const uint64_t id = s.store.add_constant(std::move(img), TensorKind::Image);
    return mk_tensor(TensorHandle{id, TensorKind::Image});
  }
  if (goal->args.empty()) return goal;
  std::vector<TermPtr> args;
  args.reserve(goal->args.size());
  bool changed = false;
  for (const auto& a : goal->args) {
    TermPtr r = instantiate_images(a, s, loader);
    changed = changed || r.get() != a.get();
    args.push_back(std::move(r));
  }
  if (!changed) return goal;
  auto out = std::make_shared<Term>(*goal);
  out->args = std::move(args);
  return out;
}

std::optional<Tensor> tensor_of_term(const TensorStore& store, const TermPtr& t) {
  if (t->tag != TermTag::Tensor || !store.has(t->tensor.id)) return std::nullopt;
  return store.value(t->tensor.id);
}

QueryRun::QueryRun(const Model& model, const Program& prog, const TermPtr& goal,
                   uint64_t query_seed, SolveOptions opt)
    : session(model), ctx(session, prog, query_seed), table(&session.tape) {
  answers = answer(goal, prog, session.tape, &ctx, opt, &table);
}

}  // namespace protolog
