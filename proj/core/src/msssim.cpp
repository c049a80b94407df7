#include "deid/msssim.hpp"

#include <cmath>

namespace deid {
namespace msssim {

namespace op = ops;

namespace {

constexpr std::size_t kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = (0.01 * 2.0) * (0.01 * 2.0);
constexpr double kC2 = (0.03 * 2.0) * (0.03 * 2.0);
constexpr double kEps = 1e-8;
// Wang et al. scale exponents
constexpr double kWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

Tensor gaussian_kernel_h() {
    Tensor k({1, 1, 1, kWindow});
    double sum = 0.0;
    for (std::size_t i = 0; i < kWindow; ++i) {
        double d = static_cast<double>(i) - (kWindow - 1) / 2.0;
        k[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
        sum += k[i];
    }
    for (std::size_t i = 0; i < kWindow; ++i) k[i] /= sum;
    return k;
}

Tensor gaussian_kernel_v() {
    Tensor h = gaussian_kernel_h();
    Tensor k({1, 1, kWindow, 1});
    for (std::size_t i = 0; i < kWindow; ++i) k[i] = h[i];
    return k;
}

// separable valid-mode blur on [N,1,H,W]
Variable blur(const Variable& x, const Variable& kh, const Variable& kv) {
    return op::conv2d(op::conv2d(x, kh, 1, 0), kv, 1, 0);
}

struct SsimTerms {
    Variable cs_mean;   // mean contrast-structure over channels and pixels
    Variable full_mean; // mean of per-pixel l*cs
};

SsimTerms ssim_terms(const Variable& a, const Variable& b) {
    static const Tensor kh_t = gaussian_kernel_h();
    static const Tensor kv_t = gaussian_kernel_v();
    Variable kh = Variable::constant(kh_t);
    Variable kv = Variable::constant(kv_t);

    std::size_t channels = a.value().dim(1);
    Variable cs_acc, full_acc;
    for (std::size_t c = 0; c < channels; ++c) {
        Variable xc = op::slice_channels(a, c, c + 1);
        Variable yc = op::slice_channels(b, c, c + 1);
        Variable mu1 = blur(xc, kh, kv);
        Variable mu2 = blur(yc, kh, kv);
        Variable mu1sq = op::square(mu1);
        Variable mu2sq = op::square(mu2);
        Variable mu12 = op::mul(mu1, mu2);
        Variable s11 = op::sub(blur(op::square(xc), kh, kv), mu1sq);
        Variable s22 = op::sub(blur(op::square(yc), kh, kv), mu2sq);
        Variable s12 = op::sub(blur(op::mul(xc, yc), kh, kv), mu12);

        Variable cs = op::div(op::add_scalar(op::scale(s12, 2.0), kC2),
                              op::add_scalar(op::add(s11, s22), kC2));
        Variable l = op::div(op::add_scalar(op::scale(mu12, 2.0), kC1),
                             op::add_scalar(op::add(mu1sq, mu2sq), kC1));
        Variable cs_mean = op::mean_all(cs);
        Variable full_mean = op::mean_all(op::mul(l, cs));
        cs_acc = cs_acc.defined() ? op::add(cs_acc, cs_mean) : cs_mean;
        full_acc = full_acc.defined() ? op::add(full_acc, full_mean) : full_mean;
    }
    double inv = 1.0 / static_cast<double>(channels);
    return {op::scale(cs_acc, inv), op::scale(full_acc, inv)};
}

} // namespace

std::size_t max_scales(std::size_t side) {
    std::size_t s = 0;
    while (side >= kWindow && s < 5) {
        ++s;
        side /= 2;
    }
    return s;
}

Variable ms_ssim(const Variable& a, const Variable& b, std::size_t scales) {
    if (!a.value().same_shape(b.value()))
        throw std::invalid_argument("ms_ssim: shape mismatch");
    if (scales < 1 || scales > 5) throw std::invalid_argument("ms_ssim: scales must be 1..5");
    std::size_t side = std::min(a.value().dim(2), a.value().dim(3));
    if ((side >> (scales - 1)) < kWindow)
        throw std::invalid_argument("ms_ssim: image too small for scale count");

    double wsum = 0.0;
    for (std::size_t s = 0; s < scales; ++s) wsum += kWeights[s];

    Variable x = a, y = b, result;
    for (std::size_t s = 0; s < scales; ++s) {
        double expo = kWeights[s] / wsum;
        Variable term;
        if (s + 1 == scales) {
            term = ssim_terms(x, y).full_mean;
        } else {
            term = ssim_terms(x, y).cs_mean;
            x = op::avgpool2(x);
            y = op::avgpool2(y);
        }
        // unit exponent (the scales=1 case) must stay plain SSIM, which can
        // be negative; fractional powers need a positive base
        Variable factor = expo == 1.0
                              ? term
                              : op::pow_const(op::clamp_const(term, kEps, 1.0), expo);
        result = result.defined() ? op::mul(result, factor) : factor;
    }
    return result;
}

Variable ssim(const Variable& a, const Variable& b) { return ms_ssim(a, b, 1); }

} // namespace msssim
} // namespace deid
