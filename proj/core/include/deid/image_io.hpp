#pragma once

#include <string>

#include "deid/tensor.hpp"

namespace deid {

/// Images are [3,H,W] doubles in [-1,1], RGB.
void save_png(const Tensor& img, const std::string& path);
Tensor load_png(const std::string& path);

/// Decode, center-crop to square, resize to `resolution`, rescale to [-1,1].
/// Throws std::runtime_error on undecodable input.
Tensor load_and_fit(const std::string& path, std::size_t resolution);

} // namespace deid
