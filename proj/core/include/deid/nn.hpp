#pragma once

#include <string>
#include <vector>

#include "deid/ops.hpp"
#include "deid/rng.hpp"

namespace deid {
namespace nn {

struct NamedParam {
    std::string name;
    Variable param;
};

/// Base for anything with learnable parameters.
class Module {
public:
    virtual ~Module() = default;
    virtual std::vector<NamedParam> params() = 0;

    void zero_grad() {
        for (auto& p : params()) p.param.zero_grad();
    }
};

Tensor he_normal(Rng& rng, std::vector<std::size_t> shape, std::size_t fan_in);
Tensor zeros(std::vector<std::size_t> shape);

class Dense : public Module {
public:
    Dense() = default;
    Dense(std::size_t in, std::size_t out, Rng& rng, bool zero_init = false);

    Variable forward(const Variable& x) const {
        return ops::add_row_bias(ops::matmul(x, weight_), bias_);
    }
    std::vector<NamedParam> params() override { return {{"w", weight_}, {"b", bias_}}; }

    Variable weight() const { return weight_; }
    Variable bias() const { return bias_; }

private:
    Variable weight_, bias_;
};

class Conv2d : public Module {
public:
    Conv2d() = default;
    Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t k, std::size_t stride,
           std::size_t pad, Rng& rng);

    Variable forward(const Variable& x) const {
        return ops::add_channel_bias(ops::conv2d(x, weight_, stride_, pad_), bias_);
    }
    std::vector<NamedParam> params() override { return {{"w", weight_}, {"b", bias_}}; }

private:
    Variable weight_, bias_;
    std::size_t stride_ = 1, pad_ = 0;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    Adam(std::vector<Variable> params, AdamConfig cfg);

    void step();
    void zero_grad();
    void set_lr(double lr) { cfg_.lr = lr; }

private:
    std::vector<Variable> params_;
    std::vector<Tensor> m_, v_;
    AdamConfig cfg_;
    std::size_t t_ = 0;
};

} // namespace nn
} // namespace deid
