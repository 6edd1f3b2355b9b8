#include "protolog/tensor.hpp"

#include <cmath>

namespace protolog {

size_t shape_size(const std::vector<size_t>& s) {
  size_t n = 1;
  for (size_t d : s) n *= d;
  return n;
}

Tensor::Tensor(std::vector<size_t> s) : shape(std::move(s)) {
  data.assign(shape_size(shape), 0.0);
}

Tensor::Tensor(std::vector<size_t> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
  if (data.size() != shape_size(shape))
    throw std::runtime_error("tensor: data length does not match shape " + shape_str());
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::zeros(std::vector<size_t> s) { return Tensor(std::move(s)); }

Tensor Tensor::full(std::vector<size_t> s, double v) {
  Tensor t(std::move(s));
  for (double& x : t.data) x = v;
  return t;
}

bool Tensor::all_finite() const {
  for (double x : data)
    if (!std::isfinite(x)) return false;
  return true;
}

std::string Tensor::shape_str() const {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void check_finite(const Tensor& t, const char* where) {
  if (!t.all_finite())
    throw std::runtime_error(std::string("non-finite value produced by ") + where);
}

double mean_squared_error(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw std::runtime_error("mse: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

}  // namespace protolog
