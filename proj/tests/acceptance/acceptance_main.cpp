// Acceptance gate: one pass/fail line per criterion, exit 0 only if all pass.
//
//   acceptance --cli <path-to-deid-binary> --work <scratch-directory>
//
// Criteria 1-3 and 5 run in process against the library. Criteria 4 and 10
// use two seeded smoke runs driven through the CLI. Criteria 6-9 use a full
// desk-scale run (64x64, 10k images) that is cached under the work directory
// and reused on later invocations.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "deid/checkpoint.hpp"
#include "deid/losses.hpp"
#include "deid/nets.hpp"
#include "deid/rng.hpp"
#include "deid/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace deid;
using namespace deid::losses;
using namespace deid::training;
namespace op = deid::ops;

namespace {

std::string g_cli;
fs::path g_work;
int g_failures = 0;

struct Result {
    bool pass = false;
    std::string line;
};
Result g_results[11];

void report(int criterion, bool pass, const std::string& what, const std::string& detail) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), "criterion %2d %s  %s%s%s", criterion, pass ? "PASS" : "FAIL",
                  what.c_str(), detail.empty() ? "" : "  -- ", detail.c_str());
    g_results[criterion] = {pass, buf};
    if (!pass) ++g_failures;
}

int run_cli(const std::string& args, const std::string& log_name) {
    std::string log = (g_work / (log_name + ".log")).string();
    int rc = std::system((g_cli + " " + args + " > " + log + " 2>&1").c_str());
    return WEXITSTATUS(rc);
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

Tensor randt(Rng& rng, std::vector<std::size_t> shape, double s = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal() * s;
    return t;
}

// ---------------------------------------------------------------- criterion 1

bool near(double a, double b, double tol) { return std::fabs(a - b) <= tol; }

void criterion1() {
    std::vector<std::string> bad;
    auto expect = [&](const char* name, double got, double want, double tol) {
        if (!near(got, want, tol)) bad.push_back(std::string(name) + "=" + fmt(got));
    };

    Critic half = [](const Variable& w) {
        return Variable::constant(Tensor({w.value().dim(0), 1}, 0.0));
    };
    Rng rng(101);
    Variable real = Variable::leaf(randt(rng, {4, 3}), true);
    Variable fake = Variable::constant(randt(rng, {4, 3}));
    expect("d_half", loss_adv_d(half, real, fake, 10.0).value()[0], 2.0 * std::log(2.0), 1e-9);

    Tensor a3({3, 1}, {1.0, 0.0, 0.0});
    Critic linear = [a3](const Variable& w) { return op::matmul(w, Variable::constant(a3)); };
    Variable real5 = Variable::leaf(randt(rng, {5, 3}), true);
    Variable fake5 = Variable::constant(randt(rng, {5, 3}));
    double plain = loss_adv_d(linear, real5, fake5, 0.0).value()[0];
    double with_r1 = loss_adv_d(linear, real5, fake5, 10.0).value()[0];
    expect("r1_linear", with_r1 - plain, 5.0, 1e-9);

    expect("g_half", loss_adv_g(half, fake).value()[0], std::log(2.0), 1e-9);
    double g3_oracle = (std::log1p(std::exp(0.0)) + std::log1p(std::exp(-1.0)) +
                        std::log1p(std::exp(1.0))) / 3.0;
    Tensor logits({3, 1}, {0.0, 1.0, -1.0});
    Critic fixed = [logits](const Variable&) { return Variable::constant(logits); };
    expect("g_batch3", loss_adv_g(fixed, fake).value()[0], g3_oracle, 1e-12);

    Encoder iden = [](const Variable& x) { return x; };
    Variable p = Variable::constant(Tensor({1, 2}, {1.0, 2.0}));
    Variable q = Variable::constant(Tensor({1, 2}, {0.0, 0.0}));
    expect("id_l1", loss_identity(iden, p, q).value()[0], 3.0, 1e-12);
    Variable u = Variable::constant(Tensor({1, 2}, {3.0, 4.0}));
    expect("lnd_l2", loss_landmark(iden, q, u).value()[0], 5.0, 1e-12);

    Variable x = Variable::constant(randt(rng, {1, 3, 16, 16}, 0.3));
    Variable y = Variable::constant(randt(rng, {1, 3, 16, 16}, 0.3));
    expect("mix_cross", loss_reconstruct(x, y, 0.84, false, 1).value()[0], 0.0, 0.0);
    expect("mix_same_eq", loss_reconstruct(x, x, 0.84, true, 1).value()[0], 0.0, 1e-9);
    Variable c0 = Variable::constant(Tensor({1, 3, 16, 16}, 0.0));
    Variable c5 = Variable::constant(Tensor({1, 3, 16, 16}, 0.5));
    expect("mix_alpha0", loss_reconstruct(c0, c5, 0.0, true, 1).value()[0], 0.5, 1e-12);

    LossWeights w;
    auto s = [](double v) { return Variable::constant(Tensor::scalar(v)); };
    w.lambda1 = 1;
    w.lambda2 = 2;
    w.lambda3 = 3;
    expect("gen_total", total_generator_loss(s(1.0), s(1.0), s(1.0), w).value()[0], 6.0, 1e-12);

    Variable e1 = Variable::constant(Tensor({1, 2}, {1.0, 0.0}));
    Variable e2 = Variable::constant(Tensor({1, 2}, {0.0, 1.0}));
    Variable e3 = Variable::constant(Tensor({1, 2}, {-1.0, 0.0}));
    expect("cos_same", loss_id_model(iden, e1, e1).value()[0], 1.0, 1e-12);
    expect("cos_orth", loss_id_model(iden, e1, e2).value()[0], 0.0, 1e-12);
    expect("cos_anti", loss_id_model(iden, e1, e3).value()[0], -1.0, 1e-12);
    expect("visual", loss_id_visual(iden, q, Variable::constant(Tensor({1, 2}, {1.0, 0.0})))
                         .value()[0], 1.0, 1e-12);
    w.lambda4 = 2;
    w.lambda5 = 0.5;
    expect("adv_total", total_adversarial_loss(s(1.0), s(2.0), w).value()[0], 3.0, 1e-12);

    Variable wv = Variable::constant(Tensor({1, 2}, {0.0, 0.0}));
    Variable wa = Variable::constant(Tensor({1, 2}, {0.3, -0.05}));
    Variable clipped = clip_latent(wa, wv, 0.1);
    expect("clip0", clipped.value()[0], 0.1, 1e-15);
    expect("clip1", clipped.value()[1], -0.05, 1e-15);

    std::string detail;
    for (const auto& b : bad) detail += (detail.empty() ? "" : ", ") + b;
    report(1, bad.empty(), "analytic loss suite matches hand-computed oracles", detail);
}

// ---------------------------------------------------------------- criterion 2

double grad_check(const std::function<Variable(const Variable&)>& f, const Tensor& x0,
                  double h = 1e-6) {
    Variable x = Variable::leaf(x0, true);
    Variable y = f(x);
    y.backward();
    const Tensor& g = x.grad();
    double worst = 0.0;
    for (std::size_t i = 0; i < x0.size(); ++i) {
        Tensor p = x0, m = x0;
        p[i] += h;
        m[i] -= h;
        double fp = f(Variable::leaf(p, true)).value()[0];
        double fm = f(Variable::leaf(m, true)).value()[0];
        double fd = (fp - fm) / (2 * h);
        double denom = std::max({std::fabs(fd), std::fabs(g[i]), 1e-8});
        worst = std::max(worst, std::fabs(fd - g[i]) / denom);
    }
    return worst;
}

void criterion2() {
    Rng rng(102);
    double worst = 0.0;

    Tensor W1 = randt(rng, {3, 6}, 0.6);
    Tensor W2 = randt(rng, {6, 1}, 0.6);
    Tensor fake_t = randt(rng, {4, 3});
    Tensor real_t = randt(rng, {4, 3});
    auto critic_with = [&](const Variable& weights) {
        return [weights, &W2](const Variable& w) {
            Variable h = op::leaky_relu(op::matmul(w, weights), 0.2);
            return op::matmul(h, Variable::constant(W2));
        };
    };
    // discriminator objective w.r.t. critic weights (second-order R1 path)
    worst = std::max(worst, grad_check(
        [&](const Variable& weights) {
            Variable real = Variable::leaf(real_t, true);
            return loss_adv_d(critic_with(weights), real, Variable::constant(fake_t), 10.0);
        },
        W1));
    Variable w1c = Variable::constant(W1);
    worst = std::max(worst,
                     grad_check([&](const Variable& f) { return loss_adv_g(critic_with(w1c), f); },
                                fake_t));

    Tensor We = randt(rng, {5, 4}, 0.7);
    Encoder en = [We](const Variable& x) { return op::tanh(op::matmul(x, Variable::constant(We))); };
    Tensor a = randt(rng, {2, 5});
    Variable bv = Variable::constant(randt(rng, {2, 5}));
    worst = std::max(worst, grad_check([&](const Variable& x) { return loss_identity(en, x, bv); }, a));
    worst = std::max(worst, grad_check([&](const Variable& x) { return loss_landmark(en, x, bv); }, a));
    worst = std::max(worst, grad_check([&](const Variable& x) { return loss_id_model(en, bv, x); }, a));
    worst = std::max(worst, grad_check([&](const Variable& x) { return loss_id_visual(en, bv, x); }, a));

    LossWeights w;
    w.lambda4 = 2.0;
    w.lambda5 = 0.3;
    worst = std::max(worst, grad_check(
        [&](const Variable& x) {
            return total_adversarial_loss(loss_id_model(en, bv, x), loss_id_visual(en, bv, x), w);
        },
        a));

    // mix reconstruction loss w.r.t. the output image
    Tensor imga = randt(rng, {1, 3, 12, 12}, 0.3);
    Tensor imgb = randt(rng, {1, 3, 12, 12}, 0.3);
    Variable ia = Variable::constant(imga);
    worst = std::max(worst, grad_check(
        [&](const Variable& out) { return loss_reconstruct(ia, out, 0.84, true, 1); }, imgb, 1e-5));

    report(2, worst < 1e-4, "finite-difference gradient checks for every trained objective",
           "worst rel err " + fmt(worst));
}

// ---------------------------------------------------------------- criterion 3

void criterion3() {
    Rng rng(103);
    std::size_t violations = 0;
    for (int i = 0; i < 10000; ++i) {
        double delta = rng.uniform(0.0, 2.0);
        Tensor wt = randt(rng, {1, 8});
        Tensor wat = randt(rng, {1, 8}, 3.0);
        Variable w = Variable::constant(wt);
        Variable c1 = clip_latent(Variable::constant(wat), w, delta);
        for (std::size_t j = 0; j < 8; ++j)
            if (std::fabs(c1.value()[j] - wt[j]) > delta * (1.0 + 1e-12) + 1e-12) ++violations;
        Variable c2 = clip_latent(c1, w, delta);
        for (std::size_t j = 0; j < 8; ++j)
            if (c2.value()[j] != c1.value()[j]) ++violations;
    }
    report(3, violations == 0, "clip stays inside the inf-ball and is idempotent (10000 cases)",
           violations ? fmt(double(violations)) + " violations" : "");
}

// ----------------------------------------------------- smoke runs (4 and 10)

struct SmokeRun {
    fs::path dir;
    std::string cfg_path;
    std::string out_root;
};

SmokeRun smoke_config(const std::string& tag) {
    SmokeRun r;
    r.dir = g_work / ("smoke_" + tag);
    fs::create_directories(r.dir);
    r.out_root = (r.dir / "run").string();
    r.cfg_path = (r.dir / "config.json").string();
    std::ofstream f(r.cfg_path);
    f << R"({
  "resolution": 32,
  "steps_en_id": 200, "steps_en_lnd": 200, "steps_gan": 200,
  "steps_stage1": 200, "steps_stage2": 200,
  "corpus_count": 500, "sample_count": 500,
  "msssim_scales": 2, "fid_probe_count": 64, "fid_gate_ratio": 1000.0,
  "eval_pairs": 20, "bootstrap_n": 200,
  "seed": 123,
  "out_root": ")" << r.out_root << R"("
})";
    return r;
}

bool smoke_pipeline(const SmokeRun& r, const std::string& tag, std::string& err) {
    for (const char* cmd : {"build-data", "pretrain", "train-disentangle", "train-adv"}) {
        if (run_cli(std::string(cmd) + " " + r.cfg_path, tag + "_" + cmd) != 0) {
            err = std::string(cmd) + " failed";
            return false;
        }
    }
    std::string img0 = r.out_root + "/samples/w_000000.png";
    std::string img1 = r.out_root + "/samples/w_000001.png";
    std::string d = r.dir.string();
    struct {
        const char* name;
        std::string args;
    } cmds[] = {
        {"swap", "swap --ckpt " + r.out_root + " --id " + img0 + " --expr " + img1 + " --out " +
                     d + "/swap.png"},
        {"reconstruct", "reconstruct --ckpt " + r.out_root + " --in " + img0 + " --out " + d +
                            "/rec.png"},
        {"attack", "attack --ckpt " + r.out_root + " --in " + img0 + " --out " + d + "/adv.png"},
        {"attack-fgsm", "attack --ckpt " + r.out_root + " --in " + img0 + " --out " + d +
                            "/fgsm.png --fgsm 0.03"},
        {"eval", "eval " + r.cfg_path + " --ckpt " + r.out_root},
    };
    for (const auto& c : cmds) {
        if (run_cli(c.args, tag + "_" + c.name) != 0) {
            err = std::string(c.name) + " failed";
            return false;
        }
    }
    return true;
}

const char* kAllNets[] = {"en_id", "en_expr", "en_lnd", "mapping",
                          "adv_mapping", "d_w", "generator", "d_img"};

void criteria_smoke() {
    SmokeRun a = smoke_config("a");
    SmokeRun b = smoke_config("b");
    std::string elapsed_file = (g_work / "smoke_elapsed.txt").string();

    bool cached = fs::exists(a.out_root + "/eval/metrics.json") &&
                  fs::exists(b.out_root + "/eval/metrics.json") && fs::exists(elapsed_file);
    double elapsed = 0.0;
    std::string err;
    bool ran_ok = true;
    if (cached) {
        elapsed = std::stod(slurp(elapsed_file));
    } else {
        fs::remove_all(a.out_root);
        fs::remove_all(b.out_root);
        auto t0 = std::chrono::steady_clock::now();
        ran_ok = smoke_pipeline(a, "smoke_a", err) && smoke_pipeline(b, "smoke_b", err);
        elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (ran_ok) {
            std::ofstream f(elapsed_file);
            f << elapsed << "\n";
        }
    }

    // criterion 4: reconstruction term gating on the logged smoke stage-1 run
    if (!ran_ok) {
        report(4, false, "reconstruction term gates on the same-face flag", err);
    } else {
        TrainLog log = TrainLog::load(a.out_root + "/log_stage1.csv");
        auto same = log.series(1, "same_face");
        auto lmix = log.series(1, "l_mix");
        std::size_t cross_bad = 0, same_total = 0, same_pos = 0;
        for (std::size_t i = 0; i < same.size() && i < lmix.size(); ++i) {
            if (same[i] == 0.0) {
                if (lmix[i] != 0.0) ++cross_bad;
            } else {
                ++same_total;
                if (lmix[i] > 0.0) ++same_pos;
            }
        }
        bool ok = !same.empty() && cross_bad == 0 && same_total > 0 &&
                  same_pos >= (same_total * 99 + 99) / 100;
        report(4, ok, "reconstruction term gates on the same-face flag",
               "cross violations " + fmt(double(cross_bad)) + ", same-face positive " +
                   fmt(double(same_pos)) + "/" + fmt(double(same_total)));
    }

    // criterion 10: smoke determinism and runtime
    if (!ran_ok) {
        report(10, false, "seeded smoke runs are byte-identical and fast", err);
        return;
    }
    std::vector<std::string> diffs;
    for (const char* net : kAllNets) {
        std::string da = checkpoint::digest(a.out_root + "/ckpt/" + net);
        std::string db = checkpoint::digest(b.out_root + "/ckpt/" + net);
        if (da != db) diffs.push_back(net);
    }
    for (const char* f : {"swap.png", "rec.png", "adv.png", "fgsm.png"})
        if (slurp((a.dir / f).string()) != slurp((b.dir / f).string())) diffs.push_back(f);
    if (slurp(a.out_root + "/eval/metrics.json") != slurp(b.out_root + "/eval/metrics.json"))
        diffs.push_back("metrics.json");
    bool fast = elapsed < 1800.0;
    std::string detail = fmt(elapsed) + "s";
    for (const auto& d : diffs) detail += ", differs: " + d;
    report(10, diffs.empty() && fast, "seeded smoke runs are byte-identical and fast", detail);
}

// ---------------------------------------------------------------- criterion 5

void criterion5() {
    TrainConfig fc;
    fc.net.resolution = 32;
    fc.net.d_id = fc.net.d_expr = fc.net.d_w = 32;
    fc.net.mlp_hidden = 32;
    fc.net.base_channels = 8;
    fc.net.gen_channels = 16;
    fc.net.seed = 7;
    fc.batch_size = 4;
    fc.steps_en_id = fc.steps_en_lnd = fc.steps_gan = 200;
    fc.steps_stage1 = fc.steps_stage2 = 200;
    fc.corpus_count = 300;
    fc.sample_count = 240;
    fc.msssim_scales = 2;
    fc.fid_probe_count = 16;
    fc.fid_gate_ratio = 1000.0;
    fc.seed = 7;
    fc.out_root = (g_work / "freeze").string();
    fs::remove_all(fc.out_root);

    facegen::CorpusConfig cc;
    cc.out_dir = fc.corpus_dir();
    cc.count = fc.corpus_count;
    cc.resolution = fc.net.resolution;
    cc.seed = fc.seed;
    facegen::build_corpus(cc);

    nets::ModelSet m(fc.net);
    pretrain_stage0(fc, m);
    WDataset data = sample_w_dataset(fc, m);

    auto dig = [&](const TrainConfig& c, const char* net) {
        return checkpoint::digest(c.ckpt_dir(net));
    };
    std::string d_id0 = dig(fc, "en_id"), d_lnd0 = dig(fc, "en_lnd"), d_gen0 = dig(fc, "generator");

    train_stage1(fc, m, data);
    TrainConfig probe1 = fc;
    probe1.out_root = (g_work / "freeze_probe1").string();
    fs::remove_all(probe1.out_root);
    save_nets(m, probe1, {"en_id", "en_lnd", "generator"}, 1, fc.steps_stage1);

    std::string d_map1 = dig(fc, "mapping"), d_expr1 = dig(fc, "en_expr"), d_dw1 = dig(fc, "d_w");

    train_stage2(fc, m, data);
    TrainConfig probe2 = fc;
    probe2.out_root = (g_work / "freeze_probe2").string();
    fs::remove_all(probe2.out_root);
    save_nets(m, probe2, {"en_id", "en_lnd", "generator", "mapping", "en_expr", "d_w"}, 2,
              fc.steps_stage2);

    std::vector<std::string> broken;
    auto check = [&](const char* net, const std::string& before, const TrainConfig& after) {
        if (before != checkpoint::digest(after.ckpt_dir(net))) broken.push_back(net);
    };
    check("en_id", d_id0, probe1);
    check("en_lnd", d_lnd0, probe1);
    check("generator", d_gen0, probe1);
    check("en_id", d_id0, probe2);
    check("en_lnd", d_lnd0, probe2);
    check("generator", d_gen0, probe2);
    check("mapping", d_map1, probe2);
    check("en_expr", d_expr1, probe2);
    check("d_w", d_dw1, probe2);

    std::string detail;
    for (const auto& b : broken) detail += (detail.empty() ? "modified: " : ", ") + b;
    report(5, broken.empty(), "frozen networks are byte-identical across 200-step stages", detail);
}

// --------------------------------------------------- full run (6, 7, 8, 9)

bool full_run(std::string& err) {
    std::string root = (g_work / "full").string();
    std::string cfg = (g_work / "full_config.json").string();
    {
        std::ofstream f(cfg);
        f << R"({
  "resolution": 64,
  "seed": 1,
  "eval_pairs": 500,
  "fid_gate_ratio": 0.5,
  "out_root": ")" << root << R"("
})";
    }
    struct Phase {
        const char* cmd;
        std::string marker;
        std::string args;
    };
    Phase phases[] = {
        {"build-data", root + "/corpus/manifest.jsonl", "build-data " + cfg},
        {"pretrain", root + "/samples/ws.bin", "pretrain " + cfg},
        {"train-disentangle", root + "/ckpt/mapping/meta.json", "train-disentangle " + cfg},
        {"train-adv", root + "/ckpt/adv_mapping/meta.json", "train-adv " + cfg},
        {"eval", root + "/eval/metrics.json", "eval " + cfg + " --ckpt " + root},
    };
    for (const auto& p : phases) {
        if (fs::exists(p.marker)) continue;
        if (run_cli(p.args, std::string("full_") + p.cmd) != 0) {
            err = std::string("full-scale ") + p.cmd + " failed";
            return false;
        }
    }
    return true;
}

void criteria_full() {
    std::string err;
    if (!full_run(err)) {
        for (int c : {6, 7, 8, 9}) report(c, false, "full-scale run unavailable", err);
        return;
    }
    std::string root = (g_work / "full").string();
    json mj = json::parse(slurp(root + "/eval/metrics.json"));

    double ms = mj.at("ms_ssim_recon_mean");
    double idl_rec = mj.at("identity_loss_recon_mean");
    double idl_rand = mj.at("identity_loss_random_mean");
    bool c6 = ms >= 0.85 && idl_rec < 0.5 * idl_rand;
    report(6, c6, "reconstruction quality gate",
           "ms-ssim " + fmt(ms) + ", id loss " + fmt(idl_rec) + " vs random " + fmt(idl_rand));

    double n = mj.at("n_pairs");
    double fid_id = mj.at("disent_id_frac");
    double fid_ex = mj.at("disent_expr_frac");
    bool c7 = n >= 500 && fid_id >= 0.90 && fid_ex >= 0.85;
    report(7, c7, "identity/expression disentanglement on cross-face swaps",
           "pairs " + fmt(n) + ", id frac " + fmt(fid_id) + ", expr frac " + fmt(fid_ex));

    double sim_rec = mj.at("id_sim_recon_mean");
    double sim_adv = mj.at("id_sim_adv_mean");
    double lnd_rec = mj.at("lnd_recon_mean");
    double lnd_adv = mj.at("lnd_adv_mean");
    double sim_fgsm = mj.at("id_sim_fgsm_0.03");
    double lnd_fgsm = mj.at("lnd_fgsm_0.03");
    // similarity drop per unit of landmark damage, each method against its
    // own clean baseline (the reconstruction for the latent attack, the
    // untouched image for the pixel attack)
    bool denom_ok = lnd_adv > lnd_rec && lnd_fgsm > 0.0;
    double eff_adv = denom_ok ? (sim_rec - sim_adv) / (lnd_adv - lnd_rec) : 0.0;
    double eff_fgsm = denom_ok ? (1.0 - sim_fgsm) / lnd_fgsm : 0.0;
    bool c8 = sim_adv < sim_rec - 0.2 && denom_ok && eff_adv > eff_fgsm;
    report(8, c8, "latent attack de-identifies more efficiently than the pixel baseline",
           "sim " + fmt(sim_adv) + " vs recon " + fmt(sim_rec) + ", efficiency " + fmt(eff_adv) +
               " vs fgsm " + fmt(eff_fgsm));

    TrainLog log0 = TrainLog::load(root + "/log_stage0.csv");
    auto halves = log0.series(0, "fid_halves");
    auto fid_i = log0.series(0, "fid_g_initial");
    auto fid_f = log0.series(0, "fid_g_final");
    bool have = halves.size() == 1 && fid_i.size() == 1 && fid_f.size() == 1;
    bool c9 = have && halves[0] < fid_i[0] && fid_f[0] <= 0.5 * fid_i[0];
    report(9, c9, "distribution metric sanity and pretraining improvement",
           have ? "split-half " + fmt(halves[0]) + ", init " + fmt(fid_i[0]) + ", final " +
                      fmt(fid_f[0])
                : "series missing");
}

} // namespace

int main(int argc, char** argv) {
    for (int i = 1; i + 1 < argc; i += 2) {
        std::string flag = argv[i];
        if (flag == "--cli") g_cli = argv[i + 1];
        else if (flag == "--work") g_work = argv[i + 1];
    }
    if (g_cli.empty() || g_work.empty()) {
        std::fprintf(stderr, "usage: acceptance --cli <deid binary> --work <dir>\n");
        return 2;
    }
    fs::create_directories(g_work);

    criterion1();
    criterion2();
    criterion3();
    criteria_smoke(); // criteria 4 and 10
    criterion5();
    criteria_full(); // criteria 6 through 9

    for (int c = 1; c <= 10; ++c) std::printf("%s\n", g_results[c].line.c_str());
    std::printf("%d/10 criteria passed\n", 10 - g_failures);
    return g_failures == 0 ? 0 : 1;
}
