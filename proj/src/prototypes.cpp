#include "protolog/prototypes.hpp"

#include <cmath>
#include <stdexcept>

namespace protolog {

MlpSpec ModelConfig::encoder_spec() const {
  return {{img_size(), hidden, Activation::Tanh},
          {hidden, 2 * latent_dim, Activation::None}};
}

MlpSpec ModelConfig::decoder_spec() const {
  return {{latent_dim, hidden, Activation::Tanh},
          {hidden, img_size(), Activation::Sigmoid}};
}

void ModelConfig::to_meta(std::map<std::string, std::string>& meta) const {
  meta["cfg.num_prototypes"] = std::to_string(num_prototypes);
  meta["cfg.latent_dim"] = std::to_string(latent_dim);
  meta["cfg.hidden"] = std::to_string(hidden);
  meta["cfg.img_h"] = std::to_string(img_h);
  meta["cfg.img_w"] = std::to_string(img_w);
  meta["cfg.temperature"] = format_double_17(temperature);
  meta["cfg.prob_eps"] = format_double_17(prob_eps);
  meta["cfg.std_floor"] = format_double_17(std_floor);
}

ModelConfig ModelConfig::from_meta(const std::map<std::string, std::string>& meta) {
  ModelConfig cfg;
  auto u = [&](const char* k, size_t& out) {
    auto it = meta.find(k);
    if (it != meta.end()) out = std::stoul(it->second);
  };
  auto d = [&](const char* k, double& out) {
    auto it = meta.find(k);
    if (it != meta.end()) out = std::stod(it->second);
  };
  u("cfg.num_prototypes", cfg.num_prototypes);
  u("cfg.latent_dim", cfg.latent_dim);
  u("cfg.hidden", cfg.hidden);
  u("cfg.img_h", cfg.img_h);
  u("cfg.img_w", cfg.img_w);
  d("cfg.temperature", cfg.temperature);
  d("cfg.prob_eps", cfg.prob_eps);
  d("cfg.std_floor", cfg.std_floor);
  return cfg;
}

void init_model_params(ParamStore& store, const ModelConfig& cfg, uint64_t seed,
                       PrototypeInit proto_init) {
  RngStream enc_rng(mix_seed(seed, "init.encoder", 0));
  RngStream dec_rng(mix_seed(seed, "init.decoder", 0));
  RngStream proto_rng(mix_seed(seed, "init.prototype", 0));
  init_mlp_params(store, "encoder", cfg.encoder_spec(), enc_rng);
  init_mlp_params(store, "decoder", cfg.decoder_spec(), dec_rng);

  const size_t K = cfg.num_prototypes, L = cfg.latent_dim;
  Tensor mean({K, L});
  if (proto_init == PrototypeInit::Normal)
    for (double& v : mean.data) v = proto_rng.next_gaussian();
  store.set("prototype.mean", std::move(mean));
  store.set("prototype.log_std", Tensor::zeros({K, L}));
  Tensor labels({K});
  for (size_t i = 0; i < K; ++i) labels.data[i] = static_cast<double>(i);
  store.set("prototype.labels", std::move(labels));
  cfg.to_meta(store.meta());
}

int label_of_prototype(const ParamStore& store, size_t i) {
  const Tensor& labels = store.get("prototype.labels");
  if (i >= labels.size()) throw std::runtime_error("prototype index out of range");
  return static_cast<int>(std::llround(labels.data[i]));
}

int prototype_for_label(const ParamStore& store, int label) {
  const Tensor& labels = store.get("prototype.labels");
  for (size_t i = 0; i < labels.size(); ++i)
    if (static_cast<int>(std::llround(labels.data[i])) == label)
      return static_cast<int>(i);
  throw std::runtime_error("no prototype with label " + std::to_string(label));
}

DiffTensor prototype_mean_row(Tape& tape, ParamBinding& b, const ModelConfig& cfg,
                              size_t i) {
  if (i >= cfg.num_prototypes) throw std::runtime_error("prototype index out of range");
  return tape.slice(b.node("prototype.mean"), i * cfg.latent_dim, cfg.latent_dim);
}

DiffTensor prototype_log_std_row(Tape& tape, ParamBinding& b, const ModelConfig& cfg,
                                 size_t i) {
  if (i >= cfg.num_prototypes) throw std::runtime_error("prototype index out of range");
  return tape.slice(b.node("prototype.log_std"), i * cfg.latent_dim, cfg.latent_dim);
}

DiffTensor sample_prototype(Tape& tape, ParamBinding& b, const ModelConfig& cfg,
                            size_t i, const Tensor& eps) {
  return tape.gaussian_sample(prototype_mean_row(tape, b, cfg, i),
                              prototype_log_std_row(tape, b, cfg, i), eps,
                              cfg.std_floor);
}

DiffScalar latent_log_density(Tape& tape, ParamBinding& b, const ModelConfig& cfg,
                              size_t i, DiffTensor z) {
  return tape.gaussian_log_density(z, prototype_mean_row(tape, b, cfg, i),
                                   prototype_log_std_row(tape, b, cfg, i),
                                   cfg.std_floor);
}

DiffTensor membership_from_log_densities(Tape& tape, const std::vector<DiffScalar>& log_d,
                                         double temperature) {
  if (temperature <= 0.0) throw std::runtime_error("membership: temperature must be > 0");
  DiffTensor stacked = tape.stack(log_d);
  return tape.softmax(tape.scale(stacked, 1.0 / temperature));
}

DiffTensor membership_distribution(Tape& tape, ParamBinding& b, const ModelConfig& cfg,
                                   DiffTensor z) {
  std::vector<DiffScalar> log_d;
  log_d.reserve(cfg.num_prototypes);
  for (size_t i = 0; i < cfg.num_prototypes; ++i)
    log_d.push_back(latent_log_density(tape, b, cfg, i, z));
  return membership_from_log_densities(tape, log_d, cfg.temperature);
}

DiffScalar kl_prototype_posterior(Tape& tape, ParamBinding& b, const ModelConfig& cfg,
                                  size_t i, DiffTensor post_mean, DiffTensor post_log_std) {
  return tape.kl_diag_gaussian(prototype_mean_row(tape, b, cfg, i),
                               prototype_log_std_row(tape, b, cfg, i), post_mean,
                               post_log_std, cfg.std_floor);
}

EncodedPosterior encode_image(Tape& tape, ParamBinding& b, const ModelConfig& cfg,
                              DiffTensor image) {
  if (image.tensor().size() != cfg.img_size())
    throw std::runtime_error("encode_image: image size mismatch");
  DiffTensor out = mlp_forward(tape, b, "encoder", cfg.encoder_spec(), image);
  return {tape.slice(out, 0, cfg.latent_dim),
          tape.slice(out, cfg.latent_dim, cfg.latent_dim)};
}

DiffTensor decode_latent(Tape& tape, ParamBinding& b, const ModelConfig& cfg,
                         DiffTensor latent) {
  if (latent.tensor().size() != cfg.latent_dim)
    throw std::runtime_error("decode_latent: latent size mismatch");
  return mlp_forward(tape, b, "decoder", cfg.decoder_spec(), latent);
}

DiffScalar elbo(Tape& tape, ParamBinding& b, const ModelConfig& cfg,
                const ParamStore& store, const Tensor& image, int digit,
                const Tensor& eps) {
  const size_t proto = static_cast<size_t>(prototype_for_label(store, digit));
  DiffTensor x = tape.constant(image);
  EncodedPosterior q = encode_image(tape, b, cfg, x);
  DiffTensor z = tape.gaussian_sample(q.mean, q.log_std, eps, cfg.std_floor);
  DiffTensor recon = decode_latent(tape, b, cfg, z);
  const double n = static_cast<double>(image.size());
  // log p(X|z) for unit-scale pixels = -n/2 log(2pi) - n/2 * mse.
  DiffScalar rec = tape.add_const(tape.scale(tape.mse(x, recon), -n / 2.0),
                                  -n / 2.0 * std::log(2.0 * M_PI));
  // Jensen direction: subtract KL(q || prototype).
  DiffScalar kl = tape.kl_diag_gaussian(q.mean, q.log_std,
                                        prototype_mean_row(tape, b, cfg, proto),
                                        prototype_log_std_row(tape, b, cfg, proto),
                                        cfg.std_floor);
  DiffScalar prior = tape.constant_scalar(-std::log(static_cast<double>(cfg.num_prototypes)));
  return tape.add(prior, tape.sub(rec, kl));
}

}  // namespace protolog
