#include "deid/nn.hpp"

#include <cmath>

namespace deid {
namespace nn {

Tensor he_normal(Rng& rng, std::vector<std::size_t> shape, std::size_t fan_in) {
    Tensor t(shape);
    double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal() * std;
    return t;
}

Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape), 0.0); }

Dense::Dense(std::size_t in, std::size_t out, Rng& rng, bool zero_init) {
    Tensor w = zero_init ? zeros({in, out}) : he_normal(rng, {in, out}, in);
    weight_ = Variable::leaf(std::move(w), true);
    bias_ = Variable::leaf(zeros({out}), true);
}

Conv2d::Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t k, std::size_t stride,
               std::size_t pad, Rng& rng)
    : stride_(stride), pad_(pad) {
    weight_ = Variable::leaf(he_normal(rng, {out_ch, in_ch, k, k}, in_ch * k * k), true);
    bias_ = Variable::leaf(zeros({out_ch}), true);
}

Adam::Adam(std::vector<Variable> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
        m_.emplace_back(p.value().shape(), 0.0);
        v_.emplace_back(p.value().shape(), 0.0);
    }
}

void Adam::step() {
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (!params_[i].has_grad()) continue;
        const Tensor& g = params_[i].grad();
        Tensor& val = params_[i].mutable_value();
        for (std::size_t j = 0; j < g.size(); ++j) {
            m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g[j];
            v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g[j] * g[j];
            double mh = m_[i][j] / bc1;
            double vh = v_[i][j] / bc2;
            val[j] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
        }
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

} // namespace nn
} // namespace deid
