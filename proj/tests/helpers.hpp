#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "protolog/rng.hpp"
#include "protolog/tensor.hpp"

namespace protolog::testing {

// Absolute-plus-relative gradient comparison, the usual gradcheck form.
inline bool grad_close(double a, double b, double rtol, double atol) {
  return std::abs(a - b) <= atol + rtol * std::max(std::abs(a), std::abs(b));
}

// Central finite difference of f at x along coordinate i.
inline double central_diff(const std::function<double(const Tensor&)>& f, Tensor x,
                           size_t i, double h = 1e-5) {
  const double orig = x.data[i];
  x.data[i] = orig + h;
  const double up = f(x);
  x.data[i] = orig - h;
  const double down = f(x);
  x.data[i] = orig;
  return (up - down) / (2.0 * h);
}

inline Tensor random_tensor(std::vector<size_t> shape, RngStream& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = scale * rng.next_gaussian();
  return t;
}

}  // namespace protolog::testing
