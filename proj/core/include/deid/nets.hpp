#pragma once

#include <memory>

#include "deid/facegen.hpp"
#include "deid/nn.hpp"

namespace deid {
namespace nets {

constexpr double kLReluSlope = 0.2;

struct NetConfig {
    std::size_t resolution = 64;
    std::size_t d_id = 128;
    std::size_t d_expr = 32;
    std::size_t d_w = 128;
    std::size_t landmark_count = facegen::kNumLandmarks;
    std::size_t mlp_hidden = 128;
    std::size_t base_channels = 16;   // encoder stem width
    std::size_t gen_channels = 96;    // generator width at 4x4
    std::uint64_t seed = 1;
};

/// Conv stem shared by the encoders and the image discriminator:
/// [conv3x3 + lrelu + avgpool] down to 4x4, then global average pool and a
/// dense feature head.
class Backbone : public nn::Module {
public:
    Backbone() = default;
    Backbone(const NetConfig& cfg, std::size_t feature_dim, Rng& rng);
    Variable forward(const Variable& img) const; // [N,3,R,R] -> [N,feature_dim]
    std::vector<nn::NamedParam> params() override;

private:
    std::vector<nn::Conv2d> convs_;
    nn::Dense feature_;
};

/// En_id: identity-bucket classifier; encode() is the penultimate feature.
class IdentityEncoder : public nn::Module {
public:
    IdentityEncoder() = default;
    IdentityEncoder(const NetConfig& cfg, Rng& rng);
    Variable encode(const Variable& img) const;  // [N,d_id]
    Variable logits(const Variable& img) const;  // [N,buckets]
    std::vector<nn::NamedParam> params() override;

private:
    Backbone backbone_;
    nn::Dense classifier_;
};

class ExpressionEncoder : public nn::Module {
public:
    ExpressionEncoder() = default;
    ExpressionEncoder(const NetConfig& cfg, Rng& rng);
    Variable encode(const Variable& img) const; // [N,d_expr]
    std::vector<nn::NamedParam> params() override;

private:
    Backbone backbone_;
};

/// En_lnd: regressor to K*2 coordinates in (0,1); the flat output is the
/// landmark code used by the landmark losses.
class LandmarkEncoder : public nn::Module {
public:
    LandmarkEncoder() = default;
    LandmarkEncoder(const NetConfig& cfg, Rng& rng);
    Variable encode(const Variable& img) const; // [N,2K]
    std::vector<nn::NamedParam> params() override;

private:
    Backbone backbone_;
    nn::Dense head_;
    std::size_t k_ = 0;
};

/// Four affine layers, LReLU between them.
class Mlp4 : public nn::Module {
public:
    Mlp4() = default;
    Mlp4(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng,
         bool zero_final = false);
    Variable forward(const Variable& x) const;
    std::vector<nn::NamedParam> params() override;
    std::size_t param_count() const;

private:
    nn::Dense l1_, l2_, l3_, l4_;
};

/// M: z -> w.
class MappingNetwork : public nn::Module {
public:
    MappingNetwork() = default;
    MappingNetwork(const NetConfig& cfg, Rng& rng);
    Variable forward(const Variable& z) const; // [N,d_z] -> [N,d_w]
    std::vector<nn::NamedParam> params() override;
    const Mlp4& mlp() const { return mlp_; }

private:
    Mlp4 mlp_;
};

/// M_adv: w -> w + mlp(w), final layer zero-initialized (identity at step 0).
class AdversarialMapping : public nn::Module {
public:
    AdversarialMapping() = default;
    AdversarialMapping(const NetConfig& cfg, Rng& rng);
    Variable forward(const Variable& w) const;
    std::vector<nn::NamedParam> params() override;

private:
    Mlp4 mlp_;
};

/// D_W: latent-space discriminator, scalar logit per row.
class WDiscriminator : public nn::Module {
public:
    WDiscriminator() = default;
    WDiscriminator(const NetConfig& cfg, Rng& rng);
    Variable logit(const Variable& w) const; // [N,d_w] -> [N,1]
    std::vector<nn::NamedParam> params() override;

private:
    nn::Dense l1_, l2_, l3_;
};

/// Miniature style-based synthesis network. A learned 4x4 constant is
/// upsampled through modulated conv blocks; per-block channel gains are an
/// affine function of w; tanh output. Gaussian inputs pass through a learned
/// mapping (`map_input`) to produce native-distribution w samples.
class Generator : public nn::Module {
public:
    Generator() = default;
    Generator(const NetConfig& cfg, Rng& rng);

    /// training=true injects per-block noise from `noise_rng`.
    Variable synthesize(const Variable& w, bool training = false,
                        Rng* noise_rng = nullptr) const;
    Variable map_input(const Variable& gaussian) const; // [N,d_w] -> [N,d_w]
    std::vector<nn::NamedParam> params() override;
    std::size_t resolution() const { return resolution_; }

private:
    struct Block {
        nn::Conv2d conv;
        nn::Dense style;     // w -> channel gains (zero-init, gain = 1 + out)
        Variable noise_gain; // [C_out]
        std::size_t in_ch;
    };
    Variable const_input_;
    std::vector<Block> blocks_;
    nn::Conv2d to_rgb_;
    nn::Dense map1_, map2_;
    std::size_t resolution_ = 0;
    std::size_t d_w_ = 0;
};

/// Image-space discriminator used only in stage-0 generator pretraining.
class ImageDiscriminator : public nn::Module {
public:
    ImageDiscriminator() = default;
    ImageDiscriminator(const NetConfig& cfg, Rng& rng);
    Variable logit(const Variable& img) const; // [N,1]
    std::vector<nn::NamedParam> params() override;

private:
    Backbone backbone_;
    nn::Dense head_;
};

/// Every network of the system, constructed deterministically from a seed.
struct ModelSet {
    NetConfig cfg;
    IdentityEncoder en_id;
    ExpressionEncoder en_expr;
    LandmarkEncoder en_lnd;
    MappingNetwork mapping;
    AdversarialMapping adv_mapping;
    WDiscriminator d_w;
    Generator generator;
    ImageDiscriminator d_img;

    explicit ModelSet(const NetConfig& config);

    std::vector<nn::NamedParam> named_params(); // all, prefixed per network
    std::vector<nn::NamedParam> named_params_of(const std::string& net);
};

/// Prefix helper.
std::vector<nn::NamedParam> prefixed(const std::string& prefix, std::vector<nn::NamedParam> ps);

} // namespace nets
} // namespace deid
