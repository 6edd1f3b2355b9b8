#include "protolog/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <sstream>

#include "protolog/pgm.hpp"
#include "protolog/rng.hpp"

namespace protolog {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

TermPtr image_term(Session& s, const Tensor& img) {
  const uint64_t id = s.store.add_constant(img, TensorKind::Image);
  return mk_tensor(TensorHandle{id, TensorKind::Image});
}

void collect_image_ids(const TermPtr& t, std::vector<uint64_t>& out) {
  if (t->tag == TermTag::Tensor && t->tensor.kind == TensorKind::Image)
    out.push_back(t->tensor.id);
  for (const auto& a : t->args) collect_image_ids(a, out);
}

std::vector<size_t> shuffled_indices(size_t n, uint64_t seed) {
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  RngStream rng(seed);
  for (size_t i = n; i > 1; --i) {
    const size_t j = static_cast<size_t>(rng.next_int(0, static_cast<int64_t>(i - 1)));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

// Evidence-bound regularizer for one training image: weighted reconstruction
// plus KL against the labeled prototype, or against the membership-weighted
// mixture of prototypes when the digit is not observed (distant supervision).
DiffScalar aux_bound_terms(QueryContext& ctx, uint64_t img, std::optional<int> label,
                           const TrainConfig& cfg) {
  Session& s = ctx.session();
  TermPtr z = ctx.encode_term(img);
  TermPtr dec = ctx.decode_term(z->tensor.id);
  DiffScalar loss = s.tape.scale(
      s.tape.mse(s.store.node(s.tape, img), s.store.node(s.tape, dec->tensor.id)),
      cfg.recon_weight);
  if (cfg.kl_weight > 0.0) {
    EncodedPosterior q = ctx.posterior_of(img);
    DiffScalar kl{};
    if (label) {
      const size_t proto =
          static_cast<size_t>(prototype_for_label(s.model.params, *label));
      kl = s.tape.kl_diag_gaussian(q.mean, q.log_std,
                                   prototype_mean_row(s.tape, s.binding, s.model.cfg, proto),
                                   prototype_log_std_row(s.tape, s.binding, s.model.cfg, proto),
                                   s.model.cfg.std_floor);
    } else {
      DiffTensor memb = ctx.membership_of(z->tensor.id);
      kl = s.tape.constant_scalar(0.0);
      for (size_t d = 0; d < s.model.cfg.num_prototypes; ++d) {
        DiffScalar kd = s.tape.kl_diag_gaussian(
            q.mean, q.log_std,
            prototype_mean_row(s.tape, s.binding, s.model.cfg, d),
            prototype_log_std_row(s.tape, s.binding, s.model.cfg, d),
            s.model.cfg.std_floor);
        kl = s.tape.add(kl, s.tape.mul(s.tape.pick(memb, d), kd));
      }
    }
    loss = s.tape.add(loss, s.tape.scale(kl, cfg.kl_weight));
  }
  return loss;
}

// Shared minibatch trainer: `goal_of` builds the per-example query on the
// batch session; `label_of` reports the digit of the example's i-th image
// when direct supervision provides one.
Model train_loop(const Program& prog, const TrainConfig& cfg, size_t n_examples,
                 const std::function<TermPtr(Session&, size_t)>& goal_of,
                 const std::function<std::optional<int>(size_t, size_t)>& label_of,
                 const std::string& task, std::vector<double>* epoch_losses) {
  if (prog.mode != ProgramMode::Training)
    throw EngineError(EngineError::Kind::Contract,
                      "training requires the training-mode program");
  Model model = make_untrained_model(cfg.model, cfg.seed);
  cfg.to_meta(model.params.meta(), task);
  AdamConfig adam;
  adam.lr = cfg.lr;
  const SolveOptions opt = bridge_solve_options();

  uint64_t query_counter = 0;
  for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::vector<size_t> order =
        shuffled_indices(n_examples, mix_seed(cfg.seed, "shuffle", epoch));
    double epoch_loss = 0.0;
    size_t seen = 0;
    for (size_t start = 0; start < n_examples; start += cfg.batch) {
      const size_t stop = std::min(n_examples, start + cfg.batch);
      Session session(model);
      std::vector<DiffScalar> losses;
      losses.reserve(stop - start);
      for (size_t k = start; k < stop; ++k) {
        const size_t ex = order[k];
        try {
          QueryContext ctx(session, prog, mix_seed(cfg.seed, "query", query_counter++));
          TermPtr goal = goal_of(session, ex);
          auto answers = answer(goal, prog, session.tape, &ctx, opt);
          DiffScalar p = answers.empty() ? session.tape.constant_scalar(0.0)
                                         : answers.front().probability;
          DiffScalar loss = session.tape.bce(p, 1.0, cfg.model.prob_eps);
          if (cfg.recon_weight > 0.0 || cfg.kl_weight > 0.0) {
            std::vector<uint64_t> imgs;
            collect_image_ids(goal, imgs);
            for (size_t ii = 0; ii < imgs.size(); ++ii)
              loss = session.tape.add(
                  loss, aux_bound_terms(ctx, imgs[ii], label_of(ex, ii), cfg));
          }
          losses.push_back(loss);
        } catch (const std::exception& e) {
          throw EngineError(EngineError::Kind::Contract,
                            task + " training failed on example " +
                                std::to_string(ex) + ": " + e.what());
        }
      }
      DiffScalar batch_loss = session.tape.scale(
          session.tape.sum(session.tape.stack(losses)),
          1.0 / static_cast<double>(losses.size()));
      if (!std::isfinite(batch_loss.value()))
        throw EngineError(EngineError::Kind::Contract,
                          task + ": non-finite batch loss at example " +
                              std::to_string(order[start]));
      session.tape.backward(batch_loss);
      adam_step(model.params, session.binding.gradients(), adam);
      epoch_loss += batch_loss.value() * static_cast<double>(losses.size());
      seen += losses.size();
    }
    if (epoch_losses) epoch_losses->push_back(epoch_loss / static_cast<double>(seen));
  }
  return model;
}

}  // namespace

void TrainConfig::to_meta(std::map<std::string, std::string>& meta,
                          const std::string& task) const {
  meta["train.task"] = task;
  meta["train.epochs"] = std::to_string(epochs);
  meta["train.batch"] = std::to_string(batch);
  meta["train.lr"] = format_double_17(lr);
  meta["train.recon_weight"] = format_double_17(recon_weight);
  meta["train.kl_weight"] = format_double_17(kl_weight);
  meta["train.seed"] = std::to_string(seed);
}

Model train_direct(const Program& train_prog, const GlyphDataset& data,
                   const TrainConfig& cfg, std::vector<double>* epoch_losses) {
  return train_loop(
      train_prog, cfg, data.size(),
      [&](Session& s, size_t ex) {
        const Glyph& g = data.glyphs[ex];
        return mk_compound("digit", {image_term(s, g.pixels), mk_int(g.label)});
      },
      [&](size_t ex, size_t) { return std::optional<int>(data.glyphs[ex].label); },
      "digit", epoch_losses);
}

Model train_distant(const Program& train_prog, const GlyphDataset& data,
                    const TrainConfig& cfg, std::vector<double>* epoch_losses) {
  const size_t n_pairs = data.size() / 2;
  if (n_pairs == 0)
    throw EngineError(EngineError::Kind::Contract, "need at least two glyphs");
  return train_loop(
      train_prog, cfg, n_pairs,
      [&](Session& s, size_t ex) {
        const Glyph& a = data.glyphs[2 * ex];
        const Glyph& b = data.glyphs[2 * ex + 1];
        return mk_compound("addition", {image_term(s, a.pixels), image_term(s, b.pixels),
                                        mk_int(a.label + b.label)});
      },
      [](size_t, size_t) { return std::optional<int>(); },
      "add", epoch_losses);
}

namespace {

int int_binding(const QueryAnswer& qa, const std::string& var) {
  for (const auto& [name, term] : qa.bindings)
    if (name == var && term->tag == TermTag::Int) return static_cast<int>(term->ival);
  throw EngineError(EngineError::Kind::Contract, "answer missing integer binding " + var);
}

std::optional<Tensor> image_binding(const Session& s, const QueryAnswer& qa,
                                    const std::string& var) {
  for (const auto& [name, term] : qa.bindings)
    if (name == var) return tensor_of_term(s.store, term);
  return std::nullopt;
}

EvalReport eval_digit(const Model& model, const Program& prog, const GlyphDataset& data,
                      uint64_t seed, size_t max_examples) {
  EvalReport rep;
  rep.task = "digit";
  rep.confusion.assign(10, std::vector<int>(10, 0));
  const size_t n = max_examples ? std::min(max_examples, data.size()) : data.size();
  const SolveOptions opt = bridge_solve_options();
  size_t hits = 0;
  for (size_t i = 0; i < n; ++i) {
    Session session(model);
    QueryContext ctx(session, prog, mix_seed(seed, "eval-digit", i));
    TermPtr d = mk_var_fresh("D");
    TermPtr goal = mk_compound("digit", {image_term(session, data.glyphs[i].pixels), d});
    auto answers = answer(goal, prog, session.tape, &ctx, opt);
    if (answers.empty())
      throw EngineError(EngineError::Kind::Contract, "digit query returned no answers");
    const int pred = int_binding(answers.front(), "D");
    const int truth = data.glyphs[i].label;
    rep.confusion[truth][pred]++;
    if (pred == truth) ++hits;
  }
  rep.count = n;
  rep.value = static_cast<double>(hits) / static_cast<double>(n);
  return rep;
}

EvalReport eval_add(const Model& model, const Program& prog, const GlyphDataset& data,
                    uint64_t seed, size_t max_examples) {
  EvalReport rep;
  rep.task = "add";
  rep.confusion.assign(19, std::vector<int>(19, 0));
  const size_t n_pairs_all = data.size() / 2;
  const size_t n = max_examples ? std::min(max_examples, n_pairs_all) : n_pairs_all;
  const SolveOptions opt = bridge_solve_options();
  size_t hits = 0;
  for (size_t i = 0; i < n; ++i) {
    const Glyph& a = data.glyphs[2 * i];
    const Glyph& b = data.glyphs[2 * i + 1];
    Session session(model);
    QueryContext ctx(session, prog, mix_seed(seed, "eval-add", i));
    TermPtr sum = mk_var_fresh("S");
    TermPtr goal = mk_compound("addition", {image_term(session, a.pixels),
                                            image_term(session, b.pixels), sum});
    auto answers = answer(goal, prog, session.tape, &ctx, opt);
    if (answers.empty())
      throw EngineError(EngineError::Kind::Contract, "addition query returned no answers");
    const int pred = int_binding(answers.front(), "S");
    const int truth = a.label + b.label;
    rep.confusion[truth][pred]++;
    if (pred == truth) ++hits;
  }
  rep.count = n;
  rep.value = static_cast<double>(hits) / static_cast<double>(n);
  return rep;
}

EvalReport eval_gen_digit(const Model& model, const Program& prog,
                          const GlyphDataset& train, uint64_t seed, size_t repeats) {
  EvalReport rep;
  rep.task = "gen_digit";
  rep.metric_name = "generative_accuracy";
  rep.confusion.assign(10, std::vector<int>(10, 0));
  const SolveOptions opt = bridge_solve_options();
  std::vector<GenerativeSample> samples;
  for (size_t r = 0; r < repeats; ++r) {
    Session session(model);
    QueryContext ctx(session, prog, mix_seed(seed, "gen-digit", r));
    TermPtr iv = mk_var_fresh("I");
    TermPtr dv = mk_var_fresh("D");
    TermPtr goal = mk_compound("digit", {iv, dv});
    auto answers = answer(goal, prog, session.tape, &ctx, opt);
    for (const auto& qa : answers) {
      auto img = image_binding(session, qa, "I");
      if (!img) continue;
      GenerativeSample gs;
      gs.images.push_back(*img);
      gs.intended_labels.push_back(int_binding(qa, "D"));
      samples.push_back(std::move(gs));
    }
  }
  for (const auto& gs : samples) {
    const int rec = nearest_label(gs.images[0], train);
    rep.confusion[gs.intended_labels[0]][rec]++;
  }
  rep.count = samples.size();
  rep.value = generative_accuracy(samples, train, GenTask::Digit);
  return rep;
}

EvalReport eval_gen_add(const Model& model, const Program& prog,
                        const GlyphDataset& train, uint64_t seed, size_t repeats) {
  EvalReport rep;
  rep.task = "gen_add";
  rep.metric_name = "generative_accuracy";
  const SolveOptions opt = bridge_solve_options();
  std::vector<GenerativeSample> samples;
  for (size_t r = 0; r < repeats; ++r) {
    for (int s = 0; s <= 18; ++s) {
      Session session(model);
      QueryContext ctx(session, prog,
                       mix_seed(seed, "gen-add", r * 19 + static_cast<size_t>(s)));
      TermPtr i1 = mk_var_fresh("I1");
      TermPtr i2 = mk_var_fresh("I2");
      TermPtr goal = mk_compound("addition", {i1, i2, mk_int(s)});
      auto answers = answer(goal, prog, session.tape, &ctx, opt);
      for (const auto& qa : answers) {
        auto img1 = image_binding(session, qa, "I1");
        auto img2 = image_binding(session, qa, "I2");
        if (!img1 || !img2) continue;
        GenerativeSample gs;
        gs.images.push_back(*img1);
        gs.images.push_back(*img2);
        gs.target = s;
        samples.push_back(std::move(gs));
      }
    }
  }
  rep.count = samples.size();
  rep.value = generative_accuracy(samples, train, GenTask::Add);
  return rep;
}

EvalReport eval_multi_add(const Model& model, const Program& prog,
                          const GlyphDataset& train, uint64_t seed, size_t count) {
  EvalReport rep;
  rep.task = "multi_add";
  rep.metric_name = "satisfaction_rate";
  SolveOptions opt = bridge_solve_options();
  opt.max_steps = 400'000'000;
  auto queries = make_masked_queries(count, mix_seed(seed, "masked", 0));
  std::vector<GenerativeSample> samples;
  double baseline_sum = 0.0;
  for (size_t qi = 0; qi < queries.size(); ++qi) {
    const MaskedAdditionQuery& q = queries[qi];
    baseline_sum += random_guess_baseline(q);
    Session session(model);
    QueryContext ctx(session, prog, mix_seed(seed, "multi-add", qi));
    std::array<TermPtr, 8> pos_terms;
    std::array<std::string, 8> var_names;
    for (size_t p = 0; p < 8; ++p) {
      if (q.images[p]) {
        pos_terms[p] = image_term(session, *q.images[p]);
      } else {
        var_names[p] = "M" + std::to_string(p);
        pos_terms[p] = mk_var_fresh(var_names[p]);
      }
    }
    TermPtr list_a = mk_list({pos_terms[0], pos_terms[1], pos_terms[2], pos_terms[3]});
    TermPtr list_b = mk_list({pos_terms[4], pos_terms[5], pos_terms[6], pos_terms[7]});
    TermPtr goal = mk_compound("multi_addition", {list_a, list_b, mk_int(q.target)});
    // Pin each given image to its classified digit up front. Head exclusivity
    // then collapses the given positions to a single branch inside the main
    // goal, leaving only the masked positions to enumerate; this conditions
    // the answer ranking on the classification of the given images.
    for (size_t p = 8; p-- > 0;) {
      if (!q.images[p]) continue;
      Session probe(model);
      QueryContext probe_ctx(probe, prog, mix_seed(seed, "multi-pin", qi * 8 + p));
      TermPtr dv = mk_var_fresh("D");
      auto cls = answer(mk_compound("digit", {image_term(probe, *q.images[p]), dv}),
                        prog, probe.tape, &probe_ctx, bridge_solve_options());
      if (cls.empty())
        throw EngineError(EngineError::Kind::Contract, "digit classification failed");
      goal = mk_compound(
          ",", {mk_compound("digit", {pos_terms[p],
                                      mk_int(int_binding(cls.front(), "D"))}),
                goal});
    }
    auto answers = answer(goal, prog, session.tape, &ctx, opt);
    GenerativeSample gs;
    gs.target = q.target;
    if (answers.empty()) {
      // Unsatisfied query counts as a miss: keep an impossible sample.
      gs.images.assign(8, Tensor::zeros({kGlyphH * kGlyphW}));
      gs.target = -1;
      samples.push_back(std::move(gs));
      continue;
    }
    const QueryAnswer& top = answers.front();
    for (size_t p = 0; p < 8; ++p) {
      if (q.images[p]) {
        gs.images.push_back(*q.images[p]);
      } else {
        auto img = image_binding(session, top, var_names[p]);
        if (!img)
          throw EngineError(EngineError::Kind::Contract,
                            "masked position not bound to an image");
        gs.images.push_back(*img);
      }
    }
    samples.push_back(std::move(gs));
  }
  rep.count = samples.size();
  rep.value = generative_accuracy(samples, train, GenTask::MultiAdd);
  rep.baseline = baseline_sum / static_cast<double>(queries.size());
  return rep;
}

}  // namespace

EvalReport evaluate(const std::string& task, const Model& model,
                    const Program& infer_prog, const GlyphDataset& data,
                    const GlyphDataset* train_data, uint64_t seed,
                    const EvalOptions& opt) {
  const auto t0 = Clock::now();
  const bool needs_train =
      task == "gen_digit" || task == "gen_add" || task == "multi_add";
  if (needs_train && !train_data)
    throw EngineError(EngineError::Kind::Contract,
                      task + " evaluation needs the training dataset for labeling");
  EvalReport rep;
  if (task == "digit") rep = eval_digit(model, infer_prog, data, seed, opt.max_examples);
  else if (task == "add") rep = eval_add(model, infer_prog, data, seed, opt.max_examples);
  else if (task == "gen_digit")
    rep = eval_gen_digit(model, infer_prog, *train_data, seed, opt.gen_repeats);
  else if (task == "gen_add")
    rep = eval_gen_add(model, infer_prog, *train_data, seed, opt.gen_add_repeats);
  else if (task == "multi_add")
    rep = eval_multi_add(model, infer_prog, *train_data, seed, opt.multi_count);
  else
    throw EngineError(EngineError::Kind::Contract, "unknown evaluation task " + task);
  rep.seed = seed;
  rep.wall_seconds = seconds_since(t0);
  return rep;
}

std::string EvalReport::machine_line() const {
  char buf[256];
  if (baseline >= 0.0)
    std::snprintf(buf, sizeof(buf),
                  "RESULT task=%s metric=%s value=%.6f n=%zu seed=%llu wall_s=%.2f "
                  "baseline=%.6f",
                  task.c_str(), metric_name.c_str(), value, count,
                  static_cast<unsigned long long>(seed), wall_seconds, baseline);
  else
    std::snprintf(buf, sizeof(buf),
                  "RESULT task=%s metric=%s value=%.6f n=%zu seed=%llu wall_s=%.2f",
                  task.c_str(), metric_name.c_str(), value, count,
                  static_cast<unsigned long long>(seed), wall_seconds);
  return buf;
}

std::string EvalReport::human_table() const {
  std::ostringstream os;
  os << "task: " << task << "\n"
     << metric_name << ": " << value << "  (n=" << count << ", wall "
     << wall_seconds << " s)\n";
  if (baseline >= 0.0) os << "random-guess baseline: " << baseline << "\n";
  if (!confusion.empty()) {
    os << "confusion (rows = truth):\n";
    for (size_t r = 0; r < confusion.size(); ++r) {
      os << "  ";
      for (size_t c = 0; c < confusion[r].size(); ++c) {
        os << confusion[r][c];
        if (c + 1 < confusion[r].size()) os << " ";
      }
      os << "\n";
    }
  }
  return os.str();
}

void export_prototype_gallery(const Model& model, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  Session session(model);
  const ModelConfig& cfg = model.cfg;
  for (size_t i = 0; i < cfg.num_prototypes; ++i) {
    const Tensor& means = model.params.get("prototype.mean");
    Tensor row({cfg.latent_dim});
    for (size_t j = 0; j < cfg.latent_dim; ++j)
      row.data[j] = means.data[i * cfg.latent_dim + j];
    DiffTensor img =
        decode_latent(session.tape, session.binding, cfg, session.tape.constant(row));
    const int label = label_of_prototype(model.params, i);
    write_pgm(out_dir + "/proto_" + std::to_string(label) + ".pgm", img.tensor(),
              cfg.img_h, cfg.img_w);
  }
}

}  // namespace protolog
