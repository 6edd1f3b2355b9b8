#pragma once

#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace protolog {

// Dense row-major float64 tensor. Shapes are small (images, latent vectors,
// weight matrices); everything is value-semantic.
struct Tensor {
  std::vector<size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<size_t> s);
  Tensor(std::vector<size_t> s, std::vector<double> d);

  static Tensor scalar(double v);
  static Tensor zeros(std::vector<size_t> s);
  static Tensor full(std::vector<size_t> s, double v);

  size_t size() const { return data.size(); }
  size_t rank() const { return shape.size(); }

  double& at(size_t i) { return data[i]; }
  double at(size_t i) const { return data[i]; }
  // 2-D access, row-major.
  double& at(size_t r, size_t c) { return data[r * shape[1] + c]; }
  double at(size_t r, size_t c) const { return data[r * shape[1] + c]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;

  std::string shape_str() const;
};

size_t shape_size(const std::vector<size_t>& s);

// Throws std::runtime_error naming `where` if any entry is NaN/Inf.
void check_finite(const Tensor& t, const char* where);

double mean_squared_error(const Tensor& a, const Tensor& b);

}  // namespace protolog
