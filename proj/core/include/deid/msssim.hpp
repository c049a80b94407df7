#pragma once

#include "deid/ops.hpp"

namespace deid {
namespace msssim {

/// Multi-scale structural similarity on [N,3,H,W] batches in [-1,1]
/// (data range 2). Gaussian window 11, sigma 1.5, C1=(0.01*2)^2,
/// C2=(0.03*2)^2. Contrast-structure means are taken at every scale, the
/// luminance term only at the coarsest; canonical scale exponents are
/// renormalized to the requested scale count, so scales=1 reduces to plain
/// SSIM. Differentiable.
Variable ms_ssim(const Variable& a, const Variable& b, std::size_t scales);

/// Single-scale SSIM (mean of the per-pixel luminance*contrast-structure
/// map), identical to ms_ssim(a, b, 1).
Variable ssim(const Variable& a, const Variable& b);

/// Largest scale count usable for a given image side.
std::size_t max_scales(std::size_t side);

} // namespace msssim
} // namespace deid
