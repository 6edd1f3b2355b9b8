#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "protolog/rng.hpp"
#include "protolog/tape.hpp"
#include "protolog/tensor.hpp"

namespace protolog {

// One fully-connected layer of an MLP description.
enum class Activation { None, Tanh, Sigmoid };

struct LayerSpec {
  size_t in = 0;
  size_t out = 0;
  Activation act = Activation::None;
};

using MlpSpec = std::vector<LayerSpec>;

struct AdamState {
  Tensor m;
  Tensor v;
};

// Named parameter tensors plus optimizer state. Keys are dotted paths such as
// "encoder.W0" or "prototype.mean".
class ParamStore {
 public:
  bool has(const std::string& name) const { return params_.count(name) > 0; }
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  void set(const std::string& name, Tensor t);

  const std::map<std::string, Tensor>& all() const { return params_; }
  std::map<std::string, AdamState>& adam_state() { return adam_; }
  const std::map<std::string, AdamState>& adam_state() const { return adam_; }
  int64_t& adam_step() { return adam_step_; }
  int64_t adam_step() const { return adam_step_; }

  std::map<std::string, std::string>& meta() { return meta_; }
  const std::map<std::string, std::string>& meta() const { return meta_; }

 private:
  std::map<std::string, Tensor> params_;
  std::map<std::string, AdamState> adam_;
  int64_t adam_step_ = 0;
  std::map<std::string, std::string> meta_;
};

// Per-tape leaf nodes for parameters, created once on first use so a batch
// shares a single node per parameter.
class ParamBinding {
 public:
  ParamBinding(Tape& tape, const ParamStore& store) : tape_(&tape), store_(&store) {}

  DiffTensor node(const std::string& name);
  const std::map<std::string, int32_t>& bound() const { return bound_; }

  // Gradients for every bound parameter after a backward pass; unbound
  // parameters are absent (treated as zero by the optimizer).
  std::map<std::string, Tensor> gradients() const;

 private:
  Tape* tape_;
  const ParamStore* store_;
  std::map<std::string, int32_t> bound_;
};

// Glorot-uniform weights, zero biases, under keys prefix.W<i> / prefix.b<i>.
void init_mlp_params(ParamStore& store, const std::string& prefix,
                     const MlpSpec& spec, RngStream& rng);

// Affine + activation chain. Input shape must match the first layer.
DiffTensor mlp_forward(Tape& tape, ParamBinding& binding, const std::string& prefix,
                       const MlpSpec& spec, DiffTensor input);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam update over the given gradients. Throws on non-finite
// gradients, naming the parameter.
void adam_step(ParamStore& store, const std::map<std::string, Tensor>& grads,
               const AdamConfig& cfg);

// Versioned text checkpoint. Floats are written with 17 significant digits so
// save -> load -> save is byte-identical.
void save_checkpoint(const ParamStore& store, const std::string& path);
ParamStore load_checkpoint(const std::string& path);
std::string checkpoint_to_string(const ParamStore& store);
ParamStore checkpoint_from_string(const std::string& text);

std::string format_double_17(double v);

}  // namespace protolog
