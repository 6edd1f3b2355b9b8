#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "protolog/nn.hpp"
#include "protolog/program.hpp"
#include "protolog/prototypes.hpp"
#include "protolog/solver.hpp"
#include "protolog/wmc.hpp"

namespace protolog {

// Session-scoped storage behind TensorHandle ids. Entries are either plain
// tensors (inputs) or nodes on the session tape (network outputs, sampled
// latents, probability scalars).
class TensorStore {
 public:
  uint64_t add_constant(Tensor t, TensorKind kind);
  uint64_t add_node(DiffVal v, TensorKind kind, bool generated);

  // Node on `tape`; constants are lifted lazily (once) as constant leaves.
  DiffVal node(Tape& tape, uint64_t id);
  Tensor value(uint64_t id) const;
  TensorKind kind(uint64_t id) const;
  bool generated(uint64_t id) const;
  bool has(uint64_t id) const { return id >= 1 && id <= entries_.size(); }

 private:
  struct Entry {
    Tensor constant;
    DiffVal node;
    TensorKind kind = TensorKind::Image;
    bool generated = false;
    bool has_node = false;
  };
  Entry& entry(uint64_t id);
  const Entry& entry(uint64_t id) const;
  std::vector<Entry> entries_;
};

struct Model {
  ModelConfig cfg;
  ParamStore params;
};

Model make_untrained_model(const ModelConfig& cfg, uint64_t seed,
                           PrototypeInit proto_init = PrototypeInit::Normal);
void save_model(const Model& m, const std::string& path);
Model load_model(const std::string& path);

// One expression-graph lifetime: a single CLI query or one training batch.
struct Session {
  explicit Session(const Model& m) : model(m), binding(tape, m.params) {}
  const Model& model;
  Tape tape;
  ParamBinding binding;
  TensorStore store;
};

// Neural builtins for one query: sample/2, likelihood/3, mse/3, mul/3 plus
// the program's nn-declared predicates (encoder, decoder, classifier).
// Sampling is cached so a query sees at most one sample per prototype, and
// noise streams are derived per (seed, prototype) / (seed, image), making
// results independent of resolution order.
class QueryContext final : public EvalHooks {
 public:
  QueryContext(Session& s, const Program& prog, uint64_t query_seed);

  bool handles(const std::string& functor, size_t arity) const override;
  NeuralResponse eval(const TermPtr& goal, Subst& subst, ChoiceTable& table) override;
  std::optional<DiffScalar> scalar_of(const TermPtr& t) const override;

  // Cached per-prototype latent sample as a tensor term.
  TermPtr prototype_sample_term(size_t proto);
  // Cached decode of a stored latent, as an image tensor term.
  TermPtr decode_term(uint64_t latent_id);
  // Cached encoding (one reparameterised posterior sample) of a stored image.
  TermPtr encode_term(uint64_t image_id);
  // Posterior parameters produced when the image was encoded.
  EncodedPosterior posterior_of(uint64_t image_id);
  DiffTensor membership_of(uint64_t latent_id);
  DiffScalar similarity_of(uint64_t img_a, uint64_t img_b);

  Session& session() { return s_; }
  const Program& program() const { return prog_; }
  uint64_t seed() const { return seed_; }

 private:
  NeuralResponse eval_neural_decl(const NeuralDecl& decl, const TermPtr& goal,
                                  Subst& subst);
  size_t prototype_index_of(const TermPtr& t, Subst& subst) const;

  Session& s_;
  const Program& prog_;
  uint64_t seed_;
  std::unordered_map<std::string, size_t> decl_by_key_;
  std::unordered_map<size_t, TermPtr> sample_cache_;
  std::unordered_map<uint64_t, TermPtr> encode_cache_;
  std::unordered_map<uint64_t, EncodedPosterior> posterior_cache_;
  std::unordered_map<uint64_t, TermPtr> decode_cache_;
  std::unordered_map<uint64_t, DiffTensor> membership_cache_;
  std::map<std::pair<uint64_t, uint64_t>, DiffScalar> similarity_cache_;
};

// Inverted mean squared error, clamped to [0,1]. The `mse/3` builtin binds
// this similarity; identical tensors give exactly 1.
DiffScalar im_similar(Tape& tape, DiffTensor a, DiffTensor b);

// Replaces the training decode/3 clauses with the single inference clause
// `decode(Prot, Image, 1.0) :- ground(Prot).` and flags the program.
// Idempotent; throws if decode/3 is absent.
Program transform_for_inference(const Program& training);

// The K per-head probabilities of the prototype-membership disjunction for
// the given head images (ground tensor terms or variables), computed the same
// way the program computes them. Mirrors the program path; used for fast
// normalization checks and as a cross-check in tests.
std::vector<DiffScalar> neural_ad_probabilities(QueryContext& ctx,
                                                const std::vector<TermPtr>& images);

SolveOptions bridge_solve_options();

// Walks a goal replacing '$img'(path) literals with image tensors provided
// by `loader`, registered as constants in the session store.
TermPtr instantiate_images(const TermPtr& goal, Session& s,
                           const std::function<Tensor(const std::string&)>& loader);

// Tensor payload of an image/latent term bound in an answer, if any.
std::optional<Tensor> tensor_of_term(const TensorStore& store, const TermPtr& t);

// Runs one goal end to end against a model and program. Keeps the session
// alive so answer probabilities and generated images stay readable.
class QueryRun {
 public:
  QueryRun(const Model& model, const Program& prog, const TermPtr& goal,
           uint64_t query_seed, SolveOptions opt = bridge_solve_options());

  Session session;
  QueryContext ctx;
  ChoiceTable table;
  std::vector<QueryAnswer> answers;
};

}  // namespace protolog
