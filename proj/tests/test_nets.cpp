#include "doctest.h"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "deid/checkpoint.hpp"
#include "deid/nets.hpp"

using namespace deid;
using namespace deid::nets;
namespace fs = std::filesystem;

namespace {

NetConfig tiny_cfg() {
    NetConfig cfg;
    cfg.resolution = 32;
    cfg.d_id = 16;
    cfg.d_expr = 16;
    cfg.d_w = 16;
    cfg.mlp_hidden = 16;
    cfg.base_channels = 8;
    cfg.gen_channels = 16;
    cfg.seed = 3;
    return cfg;
}

Tensor random_batch(Rng& rng, std::vector<std::size_t> shape) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1.0, 1.0);
    return t;
}

} // namespace

TEST_CASE("encoders produce correctly shaped deterministic embeddings") {
    auto cfg = tiny_cfg();
    ModelSet m(cfg);
    Rng rng(9);
    Variable img = Variable::constant(random_batch(rng, {2, 3, 32, 32}));

    autograd::NoGradGuard ng;
    Variable e1 = m.en_id.encode(img);
    Variable e2 = m.en_id.encode(img);
    CHECK(e1.value().shape() == std::vector<std::size_t>{2, 16});
    CHECK(std::memcmp(e1.value().data(), e2.value().data(), e1.value().size() * 8) == 0);

    CHECK(m.en_expr.encode(img).value().shape() == std::vector<std::size_t>{2, 16});
    Variable lnd = m.en_lnd.encode(img);
    CHECK(lnd.value().shape() == std::vector<std::size_t>{2, 2 * facegen::kNumLandmarks});
    for (std::size_t i = 0; i < lnd.value().size(); ++i) {
        CHECK(lnd.value()[i] > 0.0);
        CHECK(lnd.value()[i] < 1.0);
    }
}

TEST_CASE("default config dimensions follow the contract") {
    NetConfig cfg;
    CHECK(cfg.d_id == 128);
    // expression code is deliberately narrow so identity information must
    // travel through the identity code
    CHECK(cfg.d_expr == 32);
    CHECK(cfg.d_w == 128);
    Rng rng(1);
    MappingNetwork map(cfg, rng);
    Variable z = Variable::constant(Tensor({1, cfg.d_id + cfg.d_expr}, 0.1));
    CHECK(map.forward(z).value().shape() == std::vector<std::size_t>{1, 128});
}

TEST_CASE("Mlp4 parameter count matches the closed form") {
    Rng rng(4);
    std::size_t in = 10, h = 7, out = 5;
    Mlp4 mlp(in, h, out, rng);
    std::size_t expected = (in * h + h) + 2 * (h * h + h) + (h * out + out);
    CHECK(mlp.param_count() == expected);
}

TEST_CASE("mapping network with zeroed parameters maps to zero") {
    auto cfg = tiny_cfg();
    Rng rng(5);
    MappingNetwork map(cfg, rng);
    for (auto& p : map.params()) {
        Tensor& t = p.param.mutable_value();
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.0;
    }
    Variable z = Variable::constant(Tensor({3, 32}, 0.7));
    Variable wv = map.forward(z);
    const Tensor& w = wv.value();
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(w[i] == 0.0);
}

TEST_CASE("mapping output is sensitive to both halves of z") {
    auto cfg = tiny_cfg();
    ModelSet m(cfg);
    Rng rng(6);
    Tensor z0 = random_batch(rng, {1, 32});
    Tensor z_id = z0, z_ex = z0;
    z_id[3] += 0.5;       // identity half
    z_ex[16 + 3] += 0.5;  // expression half

    autograd::NoGradGuard ng;
    auto w0 = m.mapping.forward(Variable::constant(z0)).value();
    auto w1 = m.mapping.forward(Variable::constant(z_id)).value();
    auto w2 = m.mapping.forward(Variable::constant(z_ex)).value();
    double d1 = 0, d2 = 0;
    for (std::size_t i = 0; i < w0.size(); ++i) {
        d1 += std::fabs(w1[i] - w0[i]);
        d2 += std::fabs(w2[i] - w0[i]);
    }
    CHECK(d1 > 1e-6);
    CHECK(d2 > 1e-6);
}

TEST_CASE("adversarial mapping is the identity at initialization") {
    auto cfg = tiny_cfg();
    ModelSet m(cfg);
    Rng rng(7);
    Tensor w0 = random_batch(rng, {4, 16});
    autograd::NoGradGuard ng;
    Variable out = m.adv_mapping.forward(Variable::constant(w0));
    const Tensor& w1 = out.value();
    for (std::size_t i = 0; i < w0.size(); ++i)
        CHECK(w1[i] == doctest::Approx(w0[i]).epsilon(1e-15));
}

TEST_CASE("discriminator with zeroed final layer outputs logit 0, probability 0.5") {
    auto cfg = tiny_cfg();
    ModelSet m(cfg);
    for (auto& p : m.d_w.params()) {
        if (p.name.rfind("l3", 0) == 0) {
            Tensor& t = p.param.mutable_value();
            for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.0;
        }
    }
    Rng rng(8);
    autograd::NoGradGuard ng;
    Variable logit = m.d_w.logit(Variable::constant(random_batch(rng, {3, 16})));
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(logit.value()[i] == 0.0);
        CHECK(1.0 / (1.0 + std::exp(-logit.value()[i])) == doctest::Approx(0.5));
    }
}

TEST_CASE("generator output is in [-1,1], right shape, deterministic at inference") {
    auto cfg = tiny_cfg();
    ModelSet m(cfg);
    Rng rng(10);
    Variable w = Variable::constant(random_batch(rng, {2, 16}));
    autograd::NoGradGuard ng;
    Variable img1 = m.generator.synthesize(w);
    Variable img2 = m.generator.synthesize(w);
    CHECK(img1.value().shape() == std::vector<std::size_t>{2, 3, 32, 32});
    for (std::size_t i = 0; i < img1.value().size(); ++i) {
        CHECK(img1.value()[i] >= -1.0);
        CHECK(img1.value()[i] <= 1.0);
    }
    CHECK(std::memcmp(img1.value().data(), img2.value().data(), img1.value().size() * 8) == 0);
}

TEST_CASE("synthesize(map_latent(z)) yields configured resolution for any valid z") {
    auto cfg = tiny_cfg();
    ModelSet m(cfg);
    Rng rng(11);
    autograd::NoGradGuard ng;
    for (int i = 0; i < 3; ++i) {
        Variable z = Variable::constant(random_batch(rng, {1, 32}));
        Variable img = m.generator.synthesize(m.mapping.forward(z));
        CHECK(img.value().shape() == std::vector<std::size_t>{1, 3, cfg.resolution, cfg.resolution});
    }
}

TEST_CASE("model construction is deterministic per seed") {
    auto cfg = tiny_cfg();
    ModelSet a(cfg), b(cfg);
    auto pa = a.named_params(), pb = b.named_params();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].name == pb[i].name);
        CHECK(std::memcmp(pa[i].param.value().data(), pb[i].param.value().data(),
                          pa[i].param.value().size() * 8) == 0);
    }
}

TEST_CASE("checkpoint save/load round-trips byte-identically") {
    auto cfg = tiny_cfg();
    ModelSet m(cfg);
    auto dir1 = (fs::temp_directory_path() / "deid_ckpt_a").string();
    auto dir2 = (fs::temp_directory_path() / "deid_ckpt_b").string();
    fs::remove_all(dir1);
    fs::remove_all(dir2);

    checkpoint::Meta meta;
    meta.fields["stage"] = "0";
    checkpoint::save(dir1, m.named_params(), meta);

    ModelSet loaded(cfg);
    auto got = checkpoint::load(dir1, loaded.named_params());
    CHECK(got.fields.at("stage") == "0");
    checkpoint::save(dir2, loaded.named_params(), meta);
    CHECK(checkpoint::digest(dir1) != "");

    // loading then saving reproduces identical tensor bytes
    for (const auto& p : m.named_params()) {
        std::ifstream f1(fs::path(dir1) / (p.name + ".bin"), std::ios::binary);
        std::ifstream f2(fs::path(dir2) / (p.name + ".bin"), std::ios::binary);
        std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
        std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
        CHECK(s1 == s2);
        CHECK(!s1.empty());
    }
    fs::remove_all(dir1);
    fs::remove_all(dir2);
}

TEST_CASE("checkpoint rejects shape mismatches") {
    auto cfg = tiny_cfg();
    ModelSet m(cfg);
    auto dir = (fs::temp_directory_path() / "deid_ckpt_c").string();
    fs::remove_all(dir);
    checkpoint::save(dir, m.named_params(), {});
    auto cfg2 = cfg;
    cfg2.d_w = 24;
    ModelSet other(cfg2);
    CHECK_THROWS(checkpoint::load(dir, other.named_params()));
    fs::remove_all(dir);
}

TEST_CASE("gaussian inputs map through the generator input mapping") {
    auto cfg = tiny_cfg();
    ModelSet m(cfg);
    Rng rng(12);
    Tensor g({5, 16});
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = rng.normal();
    autograd::NoGradGuard ng;
    Variable w = m.generator.map_input(Variable::constant(g));
    CHECK(w.value().shape() == std::vector<std::size_t>{5, 16});
    CHECK(w.value().all_finite());
}
