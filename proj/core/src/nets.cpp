#include "deid/nets.hpp"

#include <cmath>

namespace deid {
namespace nets {

namespace op = ops;

std::vector<nn::NamedParam> prefixed(const std::string& prefix, std::vector<nn::NamedParam> ps) {
    for (auto& p : ps) p.name = prefix + "." + p.name;
    return ps;
}

namespace {
std::size_t log2_int(std::size_t v) {
    std::size_t n = 0;
    while (v > 1) {
        v >>= 1;
        ++n;
    }
    return n;
}
} // namespace

Backbone::Backbone(const NetConfig& cfg, std::size_t feature_dim, Rng& rng) {
    std::size_t n_blocks = log2_int(cfg.resolution / 4);
    std::size_t in_ch = 3;
    std::size_t out_ch = cfg.base_channels;
    for (std::size_t b = 0; b < n_blocks; ++b) {
        convs_.emplace_back(in_ch, out_ch, 3, 1, 1, rng);
        in_ch = out_ch;
        out_ch = std::min<std::size_t>(out_ch * 2, 128);
    }
    feature_ = nn::Dense(in_ch, feature_dim, rng);
}

Variable Backbone::forward(const Variable& img) const {
    Variable x = img;
    for (const auto& conv : convs_)
        x = op::avgpool2(op::leaky_relu(conv.forward(x), kLReluSlope));
    return feature_.forward(op::global_avgpool(x));
}

std::vector<nn::NamedParam> Backbone::params() {
    std::vector<nn::NamedParam> out;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
        auto ps = prefixed("block" + std::to_string(i), convs_[i].params());
        out.insert(out.end(), ps.begin(), ps.end());
    }
    auto fs = prefixed("feature", feature_.params());
    out.insert(out.end(), fs.begin(), fs.end());
    return out;
}

IdentityEncoder::IdentityEncoder(const NetConfig& cfg, Rng& rng)
    : backbone_(cfg, cfg.d_id, rng),
      classifier_(cfg.d_id, facegen::kNumIdentityBuckets, rng) {}

Variable IdentityEncoder::encode(const Variable& img) const {
    return backbone_.forward(img);
}

Variable IdentityEncoder::logits(const Variable& img) const {
    return classifier_.forward(op::leaky_relu(encode(img), kLReluSlope));
}

std::vector<nn::NamedParam> IdentityEncoder::params() {
    auto out = prefixed("backbone", backbone_.params());
    auto cs = prefixed("classifier", classifier_.params());
    out.insert(out.end(), cs.begin(), cs.end());
    return out;
}

ExpressionEncoder::ExpressionEncoder(const NetConfig& cfg, Rng& rng)
    : backbone_(cfg, cfg.d_expr, rng) {}

Variable ExpressionEncoder::encode(const Variable& img) const { return backbone_.forward(img); }

std::vector<nn::NamedParam> ExpressionEncoder::params() {
    return prefixed("backbone", backbone_.params());
}

LandmarkEncoder::LandmarkEncoder(const NetConfig& cfg, Rng& rng)
    : backbone_(cfg, 128, rng), head_(128, cfg.landmark_count * 2, rng),
      k_(cfg.landmark_count) {}

Variable LandmarkEncoder::encode(const Variable& img) const {
    Variable f = op::leaky_relu(backbone_.forward(img), kLReluSlope);
    return op::sigmoid(head_.forward(f));
}

std::vector<nn::NamedParam> LandmarkEncoder::params() {
    auto out = prefixed("backbone", backbone_.params());
    auto hs = prefixed("head", head_.params());
    out.insert(out.end(), hs.begin(), hs.end());
    return out;
}

Mlp4::Mlp4(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng, bool zero_final)
    : l1_(in, hidden, rng), l2_(hidden, hidden, rng), l3_(hidden, hidden, rng),
      l4_(hidden, out, rng, zero_final) {}

Variable Mlp4::forward(const Variable& x) const {
    Variable h = op::leaky_relu(l1_.forward(x), kLReluSlope);
    h = op::leaky_relu(l2_.forward(h), kLReluSlope);
    h = op::leaky_relu(l3_.forward(h), kLReluSlope);
    return l4_.forward(h);
}

std::vector<nn::NamedParam> Mlp4::params() {
    std::vector<nn::NamedParam> out;
    const char* names[4] = {"l1", "l2", "l3", "l4"};
    nn::Dense* layers[4] = {&l1_, &l2_, &l3_, &l4_};
    for (int i = 0; i < 4; ++i) {
        auto ps = prefixed(names[i], layers[i]->params());
        out.insert(out.end(), ps.begin(), ps.end());
    }
    return out;
}

std::size_t Mlp4::param_count() const {
    std::size_t n = 0;
    for (const nn::Dense* l : {&l1_, &l2_, &l3_, &l4_})
        n += l->weight().value().size() + l->bias().value().size();
    return n;
}

MappingNetwork::MappingNetwork(const NetConfig& cfg, Rng& rng)
    : mlp_(cfg.d_id + cfg.d_expr, cfg.mlp_hidden, cfg.d_w, rng) {}

Variable MappingNetwork::forward(const Variable& z) const { return mlp_.forward(z); }

std::vector<nn::NamedParam> MappingNetwork::params() { return mlp_.params(); }

AdversarialMapping::AdversarialMapping(const NetConfig& cfg, Rng& rng)
    : mlp_(cfg.d_w, cfg.mlp_hidden, cfg.d_w, rng, /*zero_final=*/true) {}

Variable AdversarialMapping::forward(const Variable& w) const {
    return op::add(w, mlp_.forward(w));
}

std::vector<nn::NamedParam> AdversarialMapping::params() { return mlp_.params(); }

WDiscriminator::WDiscriminator(const NetConfig& cfg, Rng& rng)
    : l1_(cfg.d_w, cfg.mlp_hidden, rng), l2_(cfg.mlp_hidden, cfg.mlp_hidden, rng),
      l3_(cfg.mlp_hidden, 1, rng) {}

Variable WDiscriminator::logit(const Variable& w) const {
    Variable h = op::leaky_relu(l1_.forward(w), kLReluSlope);
    h = op::leaky_relu(l2_.forward(h), kLReluSlope);
    return l3_.forward(h);
}

std::vector<nn::NamedParam> WDiscriminator::params() {
    auto out = prefixed("l1", l1_.params());
    auto p2 = prefixed("l2", l2_.params());
    auto p3 = prefixed("l3", l3_.params());
    out.insert(out.end(), p2.begin(), p2.end());
    out.insert(out.end(), p3.begin(), p3.end());
    return out;
}

Generator::Generator(const NetConfig& cfg, Rng& rng)
    : resolution_(cfg.resolution), d_w_(cfg.d_w) {
    auto ch_at = [&cfg](std::size_t res) -> std::size_t {
        std::size_t c = cfg.gen_channels;
        for (std::size_t r = 8; r <= res; r *= 2) c = std::max<std::size_t>(c * 2 / 3, 16);
        return c;
    };

    Tensor cst({1, ch_at(4), 4, 4});
    for (std::size_t i = 0; i < cst.size(); ++i) cst[i] = rng.normal();
    const_input_ = Variable::leaf(std::move(cst), true);

    std::size_t in_ch = ch_at(4);
    for (std::size_t res = 4; res <= cfg.resolution; res *= 2) {
        std::size_t out_ch = ch_at(res);
        Block b;
        b.conv = nn::Conv2d(in_ch, out_ch, 3, 1, 1, rng);
        b.style = nn::Dense(cfg.d_w, in_ch, rng, /*zero_init=*/true);
        b.noise_gain = Variable::leaf(Tensor({out_ch}, 0.0), true);
        b.in_ch = in_ch;
        blocks_.push_back(std::move(b));
        in_ch = out_ch;
    }
    to_rgb_ = nn::Conv2d(in_ch, 3, 1, 1, 0, rng);
    map1_ = nn::Dense(cfg.d_w, cfg.mlp_hidden, rng);
    map2_ = nn::Dense(cfg.mlp_hidden, cfg.d_w, rng);
}

Variable Generator::map_input(const Variable& gaussian) const {
    return map2_.forward(op::leaky_relu(map1_.forward(gaussian), kLReluSlope));
}

Variable Generator::synthesize(const Variable& w, bool training, Rng* noise_rng) const {
    std::size_t n = w.value().dim(0);
    const Tensor& c = const_input_.value();
    // tile the learned constant across the batch
    Variable rows = op::broadcast_rows(op::reshape(const_input_, {c.size()}), n);
    Variable x = op::reshape(rows, {n, c.dim(1), 4, 4});

    for (std::size_t bi = 0; bi < blocks_.size(); ++bi) {
        const Block& b = blocks_[bi];
        if (bi > 0) x = op::upsample_nearest2(x);
        Variable gain = op::add_scalar(b.style.forward(w), 1.0); // [N,in_ch]
        x = op::scale_channels(x, gain);
        x = b.conv.forward(x);
        if (training && noise_rng) {
            Tensor noise({n, 1, x.value().dim(2), x.value().dim(3)});
            for (std::size_t i = 0; i < noise.size(); ++i) noise[i] = noise_rng->normal();
            x = op::add_scaled_noise(x, b.noise_gain, noise);
        }
        x = op::leaky_relu(x, kLReluSlope);
    }
    return op::tanh(to_rgb_.forward(x));
}

std::vector<nn::NamedParam> Generator::params() {
    std::vector<nn::NamedParam> out;
    out.push_back({"const", const_input_});
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        std::string p = "block" + std::to_string(i);
        auto cs = prefixed(p + ".conv", blocks_[i].conv.params());
        auto ss = prefixed(p + ".style", blocks_[i].style.params());
        out.insert(out.end(), cs.begin(), cs.end());
        out.insert(out.end(), ss.begin(), ss.end());
        out.push_back({p + ".noise_gain", blocks_[i].noise_gain});
    }
    auto rs = prefixed("to_rgb", to_rgb_.params());
    out.insert(out.end(), rs.begin(), rs.end());
    auto m1 = prefixed("map1", map1_.params());
    auto m2 = prefixed("map2", map2_.params());
    out.insert(out.end(), m1.begin(), m1.end());
    out.insert(out.end(), m2.begin(), m2.end());
    return out;
}

ImageDiscriminator::ImageDiscriminator(const NetConfig& cfg, Rng& rng)
    : backbone_(cfg, 128, rng), head_(128, 1, rng) {}

Variable ImageDiscriminator::logit(const Variable& img) const {
    return head_.forward(op::leaky_relu(backbone_.forward(img), kLReluSlope));
}

std::vector<nn::NamedParam> ImageDiscriminator::params() {
    auto out = prefixed("backbone", backbone_.params());
    auto hs = prefixed("head", head_.params());
    out.insert(out.end(), hs.begin(), hs.end());
    return out;
}

ModelSet::ModelSet(const NetConfig& config) : cfg(config) {
    Rng root(config.seed);
    Rng r_id = root.fork(1), r_expr = root.fork(2), r_lnd = root.fork(3), r_map = root.fork(4),
        r_adv = root.fork(5), r_dw = root.fork(6), r_gen = root.fork(7), r_dimg = root.fork(8);
    en_id = IdentityEncoder(cfg, r_id);
    en_expr = ExpressionEncoder(cfg, r_expr);
    en_lnd = LandmarkEncoder(cfg, r_lnd);
    mapping = MappingNetwork(cfg, r_map);
    adv_mapping = AdversarialMapping(cfg, r_adv);
    d_w = WDiscriminator(cfg, r_dw);
    generator = Generator(cfg, r_gen);
    d_img = ImageDiscriminator(cfg, r_dimg);
}

std::vector<nn::NamedParam> ModelSet::named_params() {
    std::vector<nn::NamedParam> out;
    for (const char* net : {"en_id", "en_expr", "en_lnd", "mapping", "adv_mapping", "d_w",
                            "generator", "d_img"}) {
        auto ps = named_params_of(net);
        out.insert(out.end(), ps.begin(), ps.end());
    }
    return out;
}

std::vector<nn::NamedParam> ModelSet::named_params_of(const std::string& net) {
    if (net == "en_id") return prefixed("en_id", en_id.params());
    if (net == "en_expr") return prefixed("en_expr", en_expr.params());
    if (net == "en_lnd") return prefixed("en_lnd", en_lnd.params());
    if (net == "mapping") return prefixed("mapping", mapping.params());
    if (net == "adv_mapping") return prefixed("adv_mapping", adv_mapping.params());
    if (net == "d_w") return prefixed("d_w", d_w.params());
    if (net == "generator") return prefixed("generator", generator.params());
    if (net == "d_img") return prefixed("d_img", d_img.params());
    throw std::invalid_argument("unknown network: " + net);
}

} // namespace nets
} // namespace deid
