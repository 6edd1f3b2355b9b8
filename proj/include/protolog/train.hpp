#pragma once

#include <string>
#include <vector>

#include "protolog/bridge.hpp"
#include "protolog/glyphs.hpp"

namespace protolog {

struct TrainConfig {
  size_t epochs = 5;
  size_t batch = 32;
  double lr = 1e-3;
  uint64_t seed = 1;
  // Weights of the auxiliary evidence-bound terms added per training image
  // outside the program, sharing the cached posterior sample with the
  // program's encode path: recon_weight scales mse(image, decode(z~q(z|X)))
  // (the n/2 factor of a unit-scale pixel likelihood) and kl_weight scales
  // KL(q(z|X) || prototype). The reconstruction term lets the decoder resolve
  // within-class variation; the KL term anchors class posteriors to their
  // prototype so prior samples decode to valid instances.
  double recon_weight = 128.0;
  double kl_weight = 1.0;
  ModelConfig model;

  void to_meta(std::map<std::string, std::string>& meta, const std::string& task) const;
};

struct EvalReport {
  std::string task;
  std::string metric_name = "accuracy";
  double value = 0.0;
  size_t count = 0;
  std::vector<std::vector<int>> confusion;
  double wall_seconds = 0.0;
  uint64_t seed = 0;
  double baseline = -1.0;  // >= 0 only for multi_add

  std::string machine_line() const;
  std::string human_table() const;
};

// Direct supervision: per glyph, BCE of P(digit(image, label)) against 1,
// computed through the training program; Adam per minibatch.
Model train_direct(const Program& train_prog, const GlyphDataset& data,
                   const TrainConfig& cfg, std::vector<double>* epoch_losses = nullptr);

// Distant supervision over consecutive glyph pairs (2i, 2i+1): BCE of
// P(addition(img1, img2, sum)) against 1.
Model train_distant(const Program& train_prog, const GlyphDataset& data,
                    const TrainConfig& cfg, std::vector<double>* epoch_losses = nullptr);

struct EvalOptions {
  size_t gen_repeats = 50;    // digit(I,D) sweeps for gen_digit
  size_t gen_add_repeats = 3; // full s=0..18 sweeps for gen_add
  size_t multi_count = 100;
  size_t max_examples = 0;    // 0 = whole dataset
};

// task: digit | add | gen_digit | gen_add | multi_add. Generative tasks need
// `train_data` for nearest-neighbour labeling. The program must already be
// the inference variant.
EvalReport evaluate(const std::string& task, const Model& model,
                    const Program& infer_prog, const GlyphDataset& data,
                    const GlyphDataset* train_data, uint64_t seed,
                    const EvalOptions& opt = {});

// Decodes each prototype mean (noise-free) into out_dir/proto_<label>.pgm.
void export_prototype_gallery(const Model& model, const std::string& out_dir);

}  // namespace protolog
