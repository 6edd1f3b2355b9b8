#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "protolog/bridge.hpp"
#include "protolog/parser.hpp"
#include "protolog/pgm.hpp"
#include "protolog/train.hpp"

namespace fs = std::filesystem;
using namespace protolog;

namespace {

uint64_t default_seed() {
  if (const char* env = std::getenv("PROTOLOG_SEED")) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end && *end == '\0') return v;
    std::cerr << "warning: ignoring non-numeric PROTOLOG_SEED\n";
  }
  return 1;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

Program load_program(const std::string& path) { return parse_program(read_file(path)); }

Tensor load_image_file(const std::string& path) {
  size_t h = 0, w = 0;
  Tensor img = read_pgm(path, &h, &w);
  return img;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"protolog: prototype-based probabilistic logic over glyph images"};
  app.require_subcommand(1);

  uint64_t seed = default_seed();

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic glyph dataset");
  size_t gen_n = 10000;
  std::string gen_split = "train", gen_out;
  gen->add_option("--n", gen_n, "number of glyphs");
  gen->add_option("--split", gen_split, "train|test (selects the seed stream)")
      ->check(CLI::IsMember({"train", "test"}));
  gen->add_option("--seed", seed, "master seed");
  gen->add_option("--out", gen_out, "output file")->required();

  // train
  auto* tr = app.add_subcommand("train", "train a model");
  std::string tr_task = "digit", tr_program = "programs/reference.pl";
  std::string tr_data, tr_out;
  size_t tr_epochs = 0, tr_batch = 32;
  double tr_lr = 1e-3;
  tr->add_option("--task", tr_task, "digit|add")->check(CLI::IsMember({"digit", "add"}));
  tr->add_option("--program", tr_program, "training program file");
  tr->add_option("--data", tr_data, "glyph dataset file")->required();
  tr->add_option("--epochs", tr_epochs, "epochs (default 5 for digit, 10 for add)");
  tr->add_option("--batch", tr_batch, "minibatch size");
  tr->add_option("--lr", tr_lr, "Adam learning rate");
  tr->add_option("--seed", seed, "training seed");
  tr->add_option("--out", tr_out, "checkpoint output")->required();

  // query
  auto* qu = app.add_subcommand("query", "answer one goal");
  std::string qu_ckpt, qu_program = "programs/reference.pl", qu_goal, qu_imgout = "query-out";
  qu->add_option("--ckpt", qu_ckpt, "model checkpoint")->required();
  qu->add_option("--program", qu_program, "program file (training form)");
  qu->add_option("--goal", qu_goal, "goal text, e.g. 'digit(#img(\"x.pgm\"), D)'")
      ->required();
  qu->add_option("--img-out", qu_imgout, "directory for generated images");
  qu->add_option("--seed", seed, "query seed");

  // repl
  auto* rp = app.add_subcommand("repl", "read goals from standard input");
  std::string rp_ckpt, rp_program = "programs/reference.pl", rp_imgout = "query-out";
  rp->add_option("--ckpt", rp_ckpt, "model checkpoint")->required();
  rp->add_option("--program", rp_program, "program file (training form)");
  rp->add_option("--img-out", rp_imgout, "directory for generated images");
  rp->add_option("--seed", seed, "query seed");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_task = "digit", ev_ckpt, ev_data, ev_train_data,
              ev_program = "programs/reference.pl";
  size_t ev_gen_repeats = 50, ev_multi = 100, ev_max = 0;
  ev->add_option("--task", ev_task, "digit|add|gen_digit|gen_add|multi_add")
      ->check(CLI::IsMember({"digit", "add", "gen_digit", "gen_add", "multi_add"}));
  ev->add_option("--ckpt", ev_ckpt, "model checkpoint")->required();
  ev->add_option("--data", ev_data, "evaluation dataset");
  ev->add_option("--train-data", ev_train_data,
                 "training dataset (needed by gen_* and multi_add labeling)");
  ev->add_option("--program", ev_program, "program file (training form)");
  ev->add_option("--gen-repeats", ev_gen_repeats, "generative query repetitions");
  ev->add_option("--multi-count", ev_multi, "masked queries for multi_add");
  ev->add_option("--max-examples", ev_max, "cap on evaluated examples (0 = all)");
  ev->add_option("--seed", seed, "evaluation seed");

  // gallery
  auto* ga = app.add_subcommand("gallery", "decode each prototype mean to an image");
  std::string ga_ckpt, ga_out = "gallery";
  ga->add_option("--ckpt", ga_ckpt, "model checkpoint")->required();
  ga->add_option("--out-dir", ga_out, "output directory");
  ga->add_option("--seed", seed, "unused, accepted for consistency");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) {
      GlyphDataset ds = generate_dataset(gen_n, gen_split, seed);
      save_dataset(ds, gen_out);
      std::printf("wrote %zu %s glyphs to %s (seed %llu)\n", ds.size(),
                  gen_split.c_str(), gen_out.c_str(),
                  static_cast<unsigned long long>(seed));
      return 0;
    }

    if (*tr) {
      if (tr_epochs == 0) tr_epochs = tr_task == "digit" ? 5 : 10;
      Program prog = load_program(tr_program);
      GlyphDataset data = load_dataset(tr_data);
      TrainConfig cfg;
      cfg.epochs = tr_epochs;
      cfg.batch = tr_batch;
      cfg.lr = tr_lr;
      cfg.seed = seed;
      std::vector<double> losses;
      Model model = tr_task == "digit" ? train_direct(prog, data, cfg, &losses)
                                       : train_distant(prog, data, cfg, &losses);
      save_model(model, tr_out);
      for (size_t e = 0; e < losses.size(); ++e)
        std::printf("epoch %zu mean_loss %.6f\n", e + 1, losses[e]);
      std::printf("wrote checkpoint %s\n", tr_out.c_str());
      return 0;
    }

    if (*qu || *rp) {
      const std::string ckpt = *qu ? qu_ckpt : rp_ckpt;
      const std::string prog_path = *qu ? qu_program : rp_program;
      const std::string img_out = *qu ? qu_imgout : rp_imgout;
      Model model = load_model(ckpt);
      Program training = load_program(prog_path);
      Program prog = transform_for_inference(training);

      std::vector<std::string> goals;
      if (*qu) {
        goals.push_back(qu_goal);
      } else {
        std::string line;
        while (std::getline(std::cin, line)) {
          if (line.empty() || line == "quit" || line == "exit") {
            if (line.empty()) continue;
            break;
          }
          goals.push_back(line);
        }
      }
      for (size_t gi = 0; gi < goals.size(); ++gi) {
        TermPtr parsed = parse_goal(goals[gi]);
        struct GoalRun {
          Session session;
          QueryContext ctx;
          ChoiceTable table;
          std::vector<QueryAnswer> answers;
          GoalRun(const Model& m, const Program& p, const TermPtr& g, uint64_t qseed)
              : session(m), ctx(session, p, qseed), table(&session.tape) {
            TermPtr live = instantiate_images(g, session, load_image_file);
            answers =
                answer(live, p, session.tape, &ctx, bridge_solve_options(), &table);
          }
        } run(model, prog, parsed, mix_seed(seed, "cli-query", gi));

        const ModelConfig& cfg = model.cfg;
        for (size_t ai = 0; ai < run.answers.size(); ++ai) {
          const QueryAnswer& qa = run.answers[ai];
          std::string cols;
          for (const auto& [name, term] : qa.bindings) {
            if (!cols.empty()) cols += ", ";
            cols += name + " = ";
            if (term->tag == TermTag::Tensor && run.session.store.has(term->tensor.id)) {
              const auto& h = term->tensor;
              if (h.kind == TensorKind::Image && run.session.store.generated(h.id)) {
                fs::create_directories(img_out);
                const std::string file = img_out + "/q" + std::to_string(gi) + "_a" +
                                         std::to_string(ai) + "_" + name + ".pgm";
                write_pgm(file, run.session.store.value(h.id), cfg.img_h, cfg.img_w);
                cols += file;
              } else if (h.kind == TensorKind::Scalar) {
                char buf[32];
                std::snprintf(buf, sizeof(buf), "%.6g",
                              run.session.store.value(h.id).data[0]);
                cols += buf;
              } else {
                cols += term_to_string(term);
              }
            } else {
              cols += term_to_string(term);
            }
          }
          if (cols.empty()) cols = "true";
          std::printf("%.6f\t%s\n", qa.probability.value(), cols.c_str());
        }
        if (run.answers.empty()) std::printf("no answers\n");
        std::fflush(stdout);
      }
      return 0;
    }

    if (*ev) {
      Model model = load_model(ev_ckpt);
      Program prog = transform_for_inference(load_program(ev_program));
      GlyphDataset data;
      if (!ev_data.empty()) data = load_dataset(ev_data);
      GlyphDataset train_data;
      const GlyphDataset* train_ptr = nullptr;
      if (!ev_train_data.empty()) {
        train_data = load_dataset(ev_train_data);
        train_ptr = &train_data;
      }
      const bool needs_data = ev_task == "digit" || ev_task == "add";
      if (needs_data && data.size() == 0)
        throw std::runtime_error("--data is required for task " + ev_task);
      EvalOptions opt;
      opt.gen_repeats = ev_gen_repeats;
      opt.multi_count = ev_multi;
      opt.max_examples = ev_max;
      EvalReport rep = evaluate(ev_task, model, prog, data, train_ptr, seed, opt);
      std::printf("%s\n", rep.machine_line().c_str());
      std::printf("%s", rep.human_table().c_str());
      return 0;
    }

    if (*ga) {
      Model model = load_model(ga_ckpt);
      export_prototype_gallery(model, ga_out);
      std::printf("wrote %zu prototype images to %s\n", model.cfg.num_prototypes,
                  ga_out.c_str());
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
