#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "deid/training.hpp"

using namespace deid;
using namespace deid::training;

namespace fs = std::filesystem;

namespace {

TrainConfig tiny_config(const std::string& tag) {
    TrainConfig cfg;
    cfg.net.resolution = 32;
    cfg.net.d_id = 16;
    cfg.net.d_expr = 16;
    cfg.net.d_w = 16;
    cfg.net.mlp_hidden = 16;
    cfg.net.base_channels = 8;
    cfg.net.gen_channels = 16;
    cfg.net.seed = 5;
    cfg.batch_size = 2;
    cfg.steps_en_id = 4;
    cfg.steps_en_lnd = 4;
    cfg.steps_gan = 4;
    cfg.steps_stage1 = 12;
    cfg.steps_stage2 = 6;
    cfg.corpus_count = 40;
    cfg.sample_count = 20;
    cfg.msssim_scales = 2;
    cfg.fid_probe_count = 8;
    cfg.fid_gate_ratio = 50.0; // effectively no gate for smoke-size runs
    cfg.seed = 5;
    cfg.out_root = (fs::temp_directory_path() / ("deid_train_" + tag)).string();
    fs::remove_all(cfg.out_root);
    return cfg;
}

void build_tiny_corpus(const TrainConfig& cfg) {
    facegen::CorpusConfig cc;
    cc.out_dir = cfg.corpus_dir();
    cc.count = cfg.corpus_count;
    cc.resolution = cfg.net.resolution;
    cc.seed = cfg.seed;
    facegen::build_corpus(cc);
}

struct Pipeline {
    TrainConfig cfg;
    nets::ModelSet models;
    WDataset data;

    explicit Pipeline(const std::string& tag) : cfg(tiny_config(tag)), models(cfg.net) {}
};

// shared tiny end-to-end run reused by several cases (built once)
Pipeline& shared_run() {
    static Pipeline p = [] {
        Pipeline q("shared");
        build_tiny_corpus(q.cfg);
        pretrain_stage0(q.cfg, q.models);
        q.data = sample_w_dataset(q.cfg, q.models);
        train_stage1(q.cfg, q.models, q.data);
        train_stage2(q.cfg, q.models, q.data);
        return q;
    }();
    return p;
}

Tensor rand_img(Rng& rng, std::size_t r) {
    Tensor t({3, r, r});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1.0, 1.0);
    return t;
}

} // namespace

TEST_CASE("TrainLog round trip and monotonic step enforcement") {
    TrainLog log;
    log.add(1, 0, "a", 0.5);
    log.add(1, 0, "b", -2.0);
    log.add(1, 3, "a", 0.25);
    CHECK_THROWS(log.add(1, 2, "a", 0.0));
    log.add(2, 0, "a", 1.0);

    std::string path = (fs::temp_directory_path() / "deid_log_test.csv").string();
    log.save(path);
    TrainLog back = TrainLog::load(path);
    REQUIRE(back.rows.size() == log.rows.size());
    for (std::size_t i = 0; i < log.rows.size(); ++i) {
        CHECK(back.rows[i].stage == log.rows[i].stage);
        CHECK(back.rows[i].step == log.rows[i].step);
        CHECK(back.rows[i].name == log.rows[i].name);
        CHECK(back.rows[i].value == log.rows[i].value);
    }
    CHECK(log.series(1, "a") == std::vector<double>{0.5, 0.25});
    fs::remove(path);
}

TEST_CASE("fgsm: eps=0 identity, inf-ball bound, linear-stub direction") {
    Rng rng(51);
    Tensor img = rand_img(rng, 8);

    // linear stub embedding: two fixed projections of the flattened image
    Tensor proj({3 * 8 * 8, 2});
    for (std::size_t i = 0; i < proj.size(); ++i) proj[i] = rng.normal();
    losses::Encoder en = [proj](const Variable& x) {
        std::size_t n = x.value().dim(0);
        return ops::matmul(ops::reshape(x, {n, proj.dim(0)}), Variable::constant(proj));
    };

    Tensor same = fgsm_attack(en, img, 0.0);
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(same[i] == img[i]);

    double eps = 0.03;
    Tensor adv = fgsm_attack(en, img, eps);
    for (std::size_t i = 0; i < img.size(); ++i) {
        CHECK(std::fabs(adv[i] - img[i]) <= eps + 1e-12);
        CHECK(adv[i] >= -1.0);
        CHECK(adv[i] <= 1.0);
    }

    // analytic gradient of the linear stub: A^T c / ||c||^2, a fixed vector;
    // the perturbation is -eps * sign of it wherever clamping is inactive
    Tensor c({2}, 0.0);
    for (std::size_t i = 0; i < img.size(); ++i) {
        c[0] += proj.at2(i, 0) * img[i];
        c[1] += proj.at2(i, 1) * img[i];
    }
    std::size_t checked = 0;
    for (std::size_t i = 0; i < img.size(); ++i) {
        double gi = proj.at2(i, 0) * c[0] + proj.at2(i, 1) * c[1];
        if (gi == 0.0) continue;
        double expect = img[i] - eps * (gi > 0.0 ? 1.0 : -1.0);
        expect = std::clamp(expect, -1.0, 1.0);
        CHECK(adv[i] == doctest::Approx(expect).epsilon(1e-12));
        ++checked;
    }
    CHECK(checked > img.size() / 2);

    // the attack reduces the true cosine for the linear stub
    Tensor c_adv({2}, 0.0);
    for (std::size_t i = 0; i < img.size(); ++i) {
        c_adv[0] += proj.at2(i, 0) * adv[i];
        c_adv[1] += proj.at2(i, 1) * adv[i];
    }
    double cos_adv = (c[0] * c_adv[0] + c[1] * c_adv[1]) /
                     (std::sqrt(c[0] * c[0] + c[1] * c[1]) *
                      std::sqrt(c_adv[0] * c_adv[0] + c_adv[1] * c_adv[1]));
    CHECK(cos_adv < 1.0);
}

TEST_CASE("config validation") {
    TrainConfig cfg = tiny_config("validate");
    CHECK_NOTHROW(cfg.validate());
    TrainConfig bad = cfg;
    bad.batch_size = 0;
    CHECK_THROWS(bad.validate());
    bad = cfg;
    bad.msssim_scales = 3; // 32 >> 2 = 8 < 11
    CHECK_THROWS(bad.validate());
    bad = cfg;
    bad.fid_gate_ratio = 0.0;
    CHECK_THROWS(bad.validate());
    bad = cfg;
    bad.fgsm_eps = {-0.1};
    CHECK_THROWS(bad.validate());
}

TEST_CASE("stage 0 trains, checkpoints all four nets, and logs FID probes") {
    Pipeline& p = shared_run();
    for (const char* net : {"en_id", "en_lnd", "generator", "d_img"})
        CHECK(checkpoint::exists(p.cfg.ckpt_dir(net)));
    TrainLog log = TrainLog::load(p.cfg.log_path(0));
    CHECK(log.series(0, "en_id_ce").size() == p.cfg.steps_en_id);
    CHECK(log.series(0, "en_lnd_mse").size() == p.cfg.steps_en_lnd);
    CHECK(log.series(0, "d_loss").size() == p.cfg.steps_gan);
    CHECK(log.series(0, "fid_halves").size() == 1);
    CHECK(log.series(0, "fid_g_initial").size() == 1);
    CHECK(log.series(0, "fid_g_final").size() == 1);
    for (const auto& r : log.rows) CHECK(std::isfinite(r.value));
}

TEST_CASE("sampled w dataset persists and reloads") {
    Pipeline& p = shared_run();
    CHECK(p.data.ws.dim(0) == p.cfg.sample_count);
    CHECK(p.data.ws.dim(1) == p.cfg.net.d_w);
    CHECK(p.data.train_end == 16);
    CHECK(p.data.val_end == 18);

    WDataset back = load_w_dataset(p.cfg.samples_dir());
    CHECK(back.train_end == p.data.train_end);
    CHECK(back.image_paths.size() == p.data.image_paths.size());
    for (std::size_t i = 0; i < p.data.ws.size(); ++i)
        CHECK(back.ws[i] == doctest::Approx(p.data.ws[i]).epsilon(1e-6));
    Tensor img = back.image(0);
    CHECK(img.dim(1) == p.cfg.net.resolution);
}

TEST_CASE("stage 1 freeze contract and alternation bookkeeping") {
    Pipeline& p = shared_run();
    // stage 1 ran after stage 0 saved these; they must be untouched
    nets::ModelSet fresh(p.cfg.net);
    load_nets(fresh, p.cfg, {"en_id", "en_lnd", "generator"});

    TrainLog log = TrainLog::load(p.cfg.log_path(1));
    auto same = log.series(1, "same_face");
    REQUIRE(same.size() == p.cfg.steps_stage1);
    std::size_t f = p.cfg.alternation_f;
    for (std::size_t i = 0; i + f + 1 <= same.size(); ++i) {
        double cnt = 0;
        for (std::size_t j = 0; j < f + 1; ++j) cnt += same[i + j];
        CHECK(cnt == static_cast<double>(f));
    }

    // Eq. 7 gating: cross-face rounds contribute exactly 0 reconstruction
    auto l_mix = log.series(1, "l_mix");
    REQUIRE(l_mix.size() == same.size());
    std::size_t positive_same = 0, total_same = 0;
    for (std::size_t i = 0; i < same.size(); ++i) {
        if (same[i] == 0.0) {
            CHECK(l_mix[i] == 0.0);
        } else {
            ++total_same;
            if (l_mix[i] > 0.0) ++positive_same;
        }
    }
    CHECK(total_same > 0);
    CHECK(positive_same == total_same); // untrained nets are far from convergence
}

TEST_CASE("stage freeze contracts: byte-identity of untouched checkpoints") {
    Pipeline& p = shared_run();

    std::map<std::string, std::string> before;
    for (const char* net : {"en_id", "en_lnd", "generator", "d_img", "mapping", "en_expr", "d_w"})
        before[net] = checkpoint::digest(p.cfg.ckpt_dir(net));

    // re-run stage 2 (fresh model set, stage-0/1 weights loaded)
    nets::ModelSet m2(p.cfg.net);
    load_nets(m2, p.cfg, {"en_id", "en_lnd", "generator", "d_img", "mapping", "en_expr", "d_w"});
    train_stage2(p.cfg, m2, p.data);

    for (const auto& [net, digest] : before)
        CHECK(checkpoint::digest(p.cfg.ckpt_dir(net)) == digest);
    CHECK(checkpoint::exists(p.cfg.ckpt_dir("adv_mapping")));
}

TEST_CASE("stage 2 clip invariant holds on every logged step") {
    Pipeline& p = shared_run();
    TrainLog log = TrainLog::load(p.cfg.log_path(2));
    auto linf = log.series(2, "w_linf");
    REQUIRE(linf.size() == p.cfg.steps_stage2);
    for (double v : linf) CHECK(v <= p.cfg.weights.delta * (1.0 + 1e-12) + 1e-12);
    CHECK(log.series(2, "w_cos").size() == p.cfg.steps_stage2);
}

TEST_CASE("inference pipelines: determinism and pipeline equality") {
    Pipeline& p = shared_run();
    Tensor img = p.data.image(p.data.val_end); // test-split sample

    Tensor rec1 = reconstruct(p.models, img);
    Tensor rec2 = reconstruct(p.models, img);
    Tensor swp = swap_faces(p.models, img, img);
    REQUIRE(rec1.size() == img.size());
    for (std::size_t i = 0; i < rec1.size(); ++i) {
        CHECK(rec1[i] == rec2[i]);
        CHECK(rec1[i] == swp[i]);
        CHECK(rec1[i] >= -1.0);
        CHECK(rec1[i] <= 1.0);
    }

    Tensor adv1 = generate_adversarial(p.models, img, p.cfg.weights.delta);
    Tensor adv2 = generate_adversarial(p.models, img, p.cfg.weights.delta);
    for (std::size_t i = 0; i < adv1.size(); ++i) CHECK(adv1[i] == adv2[i]);

    Tensor other = p.data.image(p.data.val_end + 1);
    CHECK_THROWS(swap_faces(p.models, Tensor({3, 16, 16}, 0.0), other));
}

TEST_CASE("seeded determinism of a short stage-2 run") {
    Pipeline& p = shared_run();

    auto run = [&](const std::string& tag) {
        TrainConfig cfg = p.cfg;
        cfg.out_root = (fs::temp_directory_path() / ("deid_det_" + tag)).string();
        fs::remove_all(cfg.out_root);
        cfg.steps_stage2 = 3;
        nets::ModelSet m(cfg.net);
        load_nets(m, p.cfg, {"en_id", "en_lnd", "generator", "mapping", "en_expr", "d_w"});
        train_stage2(cfg, m, p.data);
        std::string d = checkpoint::digest(cfg.ckpt_dir("adv_mapping"));
        fs::remove_all(cfg.out_root);
        return d;
    };
    CHECK(run("a") == run("b"));
}

TEST_CASE("missing checkpoints are reported") {
    TrainConfig cfg = tiny_config("missing");
    nets::ModelSet m(cfg.net);
    CHECK_THROWS(load_nets(m, cfg, {"generator"}));
    CHECK_THROWS(load_w_dataset(cfg.samples_dir()));
}
