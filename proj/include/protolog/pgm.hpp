#pragma once

#include <string>

#include "protolog/tensor.hpp"

namespace protolog {

// 8-bit binary graymap (P5); pixel = round(255 * value).
void write_pgm(const std::string& path, const Tensor& image, size_t h, size_t w);

// Reads P5 or P2, normalising to [0,1].
Tensor read_pgm(const std::string& path, size_t* h_out = nullptr, size_t* w_out = nullptr);

}  // namespace protolog
