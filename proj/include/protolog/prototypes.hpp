#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "protolog/nn.hpp"
#include "protolog/tape.hpp"

namespace protolog {

// Model hyperparameters. Serialized into checkpoint metadata so a checkpoint
// is self-describing.
struct ModelConfig {
  size_t num_prototypes = 10;  // K
  size_t latent_dim = 8;       // L
  size_t hidden = 64;
  size_t img_h = 16;
  size_t img_w = 16;
  double temperature = 1.0;
  double prob_eps = 1e-7;
  double std_floor = 1e-6;

  size_t img_size() const { return img_h * img_w; }
  MlpSpec encoder_spec() const;  // img -> hidden(tanh) -> 2L
  MlpSpec decoder_spec() const;  // L -> hidden(tanh) -> img(sigmoid)

  void to_meta(std::map<std::string, std::string>& meta) const;
  static ModelConfig from_meta(const std::map<std::string, std::string>& meta);
};

enum class PrototypeInit { Normal, Zeros };

// Creates encoder/decoder weights and the prototype table:
//   prototype.mean [K,L], prototype.log_std [K,L], prototype.labels [K].
// Labels default to the identity mapping i -> digit i.
void init_model_params(ParamStore& store, const ModelConfig& cfg, uint64_t seed,
                       PrototypeInit proto_init = PrototypeInit::Normal);

int label_of_prototype(const ParamStore& store, size_t i);
int prototype_for_label(const ParamStore& store, int label);

// Row views into the bound prototype table.
DiffTensor prototype_mean_row(Tape& tape, ParamBinding& b, const ModelConfig& cfg, size_t i);
DiffTensor prototype_log_std_row(Tape& tape, ParamBinding& b, const ModelConfig& cfg, size_t i);

// z = mean_i + sigma_i .* eps, reparameterised.
DiffTensor sample_prototype(Tape& tape, ParamBinding& b, const ModelConfig& cfg,
                            size_t i, const Tensor& eps);

DiffScalar latent_log_density(Tape& tape, ParamBinding& b, const ModelConfig& cfg,
                              size_t i, DiffTensor z);

// softmax over per-prototype log densities scaled by 1/T; a K-vector node
// summing to one.
DiffTensor membership_distribution(Tape& tape, ParamBinding& b, const ModelConfig& cfg,
                                   DiffTensor z);
DiffTensor membership_from_log_densities(Tape& tape, const std::vector<DiffScalar>& log_d,
                                         double temperature);

// KL(prototype i || posterior), closed form.
DiffScalar kl_prototype_posterior(Tape& tape, ParamBinding& b, const ModelConfig& cfg,
                                  size_t i, DiffTensor post_mean, DiffTensor post_log_std);

struct EncodedPosterior {
  DiffTensor mean;
  DiffTensor log_std;
};

EncodedPosterior encode_image(Tape& tape, ParamBinding& b, const ModelConfig& cfg,
                              DiffTensor image);
DiffTensor decode_latent(Tape& tape, ParamBinding& b, const ModelConfig& cfg,
                         DiffTensor latent);

// One-sample evidence lower bound for (image, digit):
//   log(1/K) + log p(X|z) - KL(q(z|X) || prototype), z = mean_q + sigma_q.*eps.
// Pixel likelihood is an independent unit-scale Gaussian around the decoder
// output. Throws if no prototype carries the digit label.
DiffScalar elbo(Tape& tape, ParamBinding& b, const ModelConfig& cfg,
                const ParamStore& store, const Tensor& image, int digit,
                const Tensor& eps);

}  // namespace protolog
