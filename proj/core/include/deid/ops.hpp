#pragma once

#include "deid/autograd.hpp"

namespace deid {
namespace ops {

// elementwise
Variable add(const Variable& a, const Variable& b);
Variable sub(const Variable& a, const Variable& b);
Variable mul(const Variable& a, const Variable& b);
Variable div(const Variable& a, const Variable& b);
Variable neg(const Variable& x);
Variable scale(const Variable& x, double c);
Variable add_scalar(const Variable& x, double c);
Variable mulc(const Variable& x, const Tensor& c); // constant factor
Variable square(const Variable& x);
Variable abs(const Variable& x);
Variable sqrt(const Variable& x);
Variable exp(const Variable& x);
Variable log(const Variable& x);
Variable tanh(const Variable& x);
Variable sigmoid(const Variable& x);
Variable log_sigmoid(const Variable& x);
Variable leaky_relu(const Variable& x, double slope);
Variable clamp_const(const Variable& x, double lo, double hi);
Variable pow_const(const Variable& x, double e); // x > 0

// shape
Variable reshape(const Variable& x, std::vector<std::size_t> shape);
Variable slice_cols(const Variable& x, std::size_t c0, std::size_t c1);
Variable embed_cols(const Variable& x, std::size_t c0, std::size_t total_cols);
Variable concat_cols(const Variable& a, const Variable& b);
Variable slice_channels(const Variable& x, std::size_t c0, std::size_t c1);
Variable embed_channels(const Variable& x, std::size_t c0, std::size_t total_channels);
Variable slice_rows(const Variable& x, std::size_t r0, std::size_t r1);

// reductions / broadcasts
Variable sum_all(const Variable& x);
Variable mean_all(const Variable& x);
Variable broadcast_scalar(const Variable& s, std::vector<std::size_t> shape);
Variable sum_cols(const Variable& x);                       // [N,D] -> [N,1]
Variable broadcast_cols(const Variable& x, std::size_t d);  // [N,1] -> [N,D]
Variable sum_rows(const Variable& x);                       // [N,D] -> [D]
Variable broadcast_rows(const Variable& x, std::size_t n);  // [D] -> [N,D]
Variable sum_hw(const Variable& x);                         // [N,C,H,W] -> [N,C]
Variable broadcast_hw(const Variable& x, std::size_t h, std::size_t w);
Variable global_avgpool(const Variable& x);                 // [N,C,H,W] -> [N,C]

// linear algebra
Variable matmul(const Variable& a, const Variable& b);
Variable transpose(const Variable& x);
Variable add_row_bias(const Variable& x, const Variable& b);

// convolution (NCHW x OIHW, zero padding)
Variable conv2d(const Variable& x, const Variable& w, std::size_t stride, std::size_t pad);
Variable conv_transpose2d(const Variable& g, const Variable& w, std::size_t stride,
                          std::size_t pad, std::size_t out_h, std::size_t out_w);
Variable conv2d_grad_weight(const Variable& x, const Variable& g, std::size_t stride,
                            std::size_t pad, std::size_t kh, std::size_t kw);
Variable add_channel_bias(const Variable& x, const Variable& b);
Variable sum_nhw(const Variable& x);                        // [N,C,H,W] -> [C]
Variable broadcast_channel(const Variable& b, std::vector<std::size_t> shape);

// style modulation / noise
Variable scale_channels(const Variable& x, const Variable& s); // s: [N,C]
Variable channel_dot(const Variable& a, const Variable& b);    // [N,C]
Variable add_scaled_noise(const Variable& x, const Variable& strength, const Tensor& noise);
Variable noise_dot(const Variable& a, const Tensor& noise);     // -> [C]
Variable scale_by_noise(const Variable& u, const Tensor& noise, std::size_t n,
                        std::size_t c, std::size_t h, std::size_t w);

// resampling
Variable avgpool2(const Variable& x);
Variable upsample_nearest2(const Variable& x);

// composites
Variable softmax_cross_entropy(const Variable& logits, const Tensor& onehot);
Variable l1_sum(const Variable& a, const Variable& b);
Variable l2_norm(const Variable& a, const Variable& b);
Variable cosine_similarity(const Variable& a, const Variable& b); // flat vectors

} // namespace ops
} // namespace deid
