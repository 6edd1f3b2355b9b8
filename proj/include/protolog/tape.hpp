#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "protolog/tensor.hpp"

namespace protolog {

class Tape;

// Handle to a node in an expression graph. Scalar-valued handles (shape [1])
// are used for probabilities and losses; tensor-valued ones for images,
// latents and network activations.
struct DiffVal {
  Tape* tape = nullptr;
  int32_t id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  double value() const;                 // scalar nodes only
  const Tensor& tensor() const;
};

using DiffScalar = DiffVal;
using DiffTensor = DiffVal;

// Reverse-mode expression graph. Nodes are appended in evaluation order, so
// the creation order is already topological; backward() walks it once in
// reverse. Every op checks its output for NaN/Inf and throws if found.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  DiffVal leaf(Tensor value, bool needs_grad);
  DiffVal constant(Tensor value) { return leaf(std::move(value), false); }
  DiffScalar constant_scalar(double v) { return leaf(Tensor::scalar(v), false); }
  DiffScalar scalar_leaf(double v) { return leaf(Tensor::scalar(v), true); }

  // Elementwise / unary.
  DiffVal tanh(DiffVal x);
  DiffVal sigmoid(DiffVal x);
  DiffVal exp(DiffVal x);
  DiffVal log(DiffVal x);
  DiffVal neg(DiffVal x);
  DiffVal clamp(DiffVal x, double lo, double hi);
  DiffVal scale(DiffVal x, double c);
  DiffVal add_const(DiffVal x, double c);

  // Binary elementwise (same shape).
  DiffVal add(DiffVal a, DiffVal b);
  DiffVal sub(DiffVal a, DiffVal b);
  DiffVal mul(DiffVal a, DiffVal b);

  // y = W x + b with W [m,n], x [n], b [m].
  DiffVal affine(DiffVal W, DiffVal x, DiffVal b);

  DiffScalar sum(DiffVal x);
  DiffScalar mean(DiffVal x);
  DiffVal slice(DiffVal x, size_t offset, size_t len);
  DiffVal stack(const std::vector<DiffScalar>& xs);
  DiffScalar pick(DiffVal x, size_t i);

  DiffVal softmax(DiffVal x);

  // Mean squared error between same-shape tensors, as a scalar.
  DiffScalar mse(DiffVal a, DiffVal b);

  // Binary cross-entropy against a constant target; p is clamped to
  // [eps, 1-eps] before the logs (clamped region passes zero gradient).
  DiffScalar bce(DiffScalar p, double target, double eps);

  // Diagonal-Gaussian log density log N(z; mean, diag(sigma^2)) with
  // sigma = max(exp(log_std), std_floor).
  DiffScalar gaussian_log_density(DiffVal z, DiffVal mean, DiffVal log_std,
                                  double std_floor);

  // Reparameterised sample mean + sigma .* eps (eps is a plain tensor).
  DiffVal gaussian_sample(DiffVal mean, DiffVal log_std, const Tensor& eps,
                          double std_floor);

  // KL( N(mean_a, sigma_a^2) || N(mean_b, sigma_b^2) ), diagonal.
  DiffScalar kl_diag_gaussian(DiffVal mean_a, DiffVal log_std_a,
                              DiffVal mean_b, DiffVal log_std_b,
                              double std_floor);

  // Reverse pass from a scalar loss. Gradients accumulate into every node
  // with needs_grad; unreached nodes keep zero gradient.
  void backward(DiffScalar loss);

  const Tensor& value(int32_t id) const { return nodes_[id].value; }
  const Tensor& grad(int32_t id) const;
  bool needs_grad(int32_t id) const { return nodes_[id].needs_grad; }
  size_t size() const { return nodes_.size(); }

  void clear();

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // sized lazily during backward
    bool needs_grad = false;
    std::function<void(Tape&, int32_t)> backward;
  };

  int32_t push(Tensor value, bool needs_grad,
               std::function<void(Tape&, int32_t)> back, const char* op);
  Tensor& grad_ref(int32_t id);
  void check_tape(DiffVal v) const;

  std::vector<Node> nodes_;
};

}  // namespace protolog
