#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "deid/config.hpp"
#include "deid/image_io.hpp"
#include "deid/metrics.hpp"
#include "deid/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace deid;

namespace {

// exit codes: 2 config, 3 missing checkpoint, 4 divergence/gate, 5 I/O
constexpr int kExitConfig = 2;
constexpr int kExitMissingCkpt = 3;
constexpr int kExitDiverged = 4;
constexpr int kExitIo = 5;

std::string now_iso() {
    auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

std::string git_describe() {
    FILE* p = popen("git describe --always --dirty 2>/dev/null", "r");
    if (!p) return "unknown";
    char buf[128] = {0};
    std::string out;
    while (fgets(buf, sizeof(buf), p)) out += buf;
    pclose(p);
    while (!out.empty() && (out.back() == '\n' || out.back() == '\r')) out.pop_back();
    return out.empty() ? "unknown" : out;
}

config::RunConfigFile load_config(const std::string& path) {
    config::RunConfigFile cfg = config::RunConfigFile::load(path);
    if (const char* root = std::getenv("DEID_OUT_ROOT")) {
        cfg.train.out_root = root;
        cfg.train.validate();
    }
    return cfg;
}

void write_run_artifacts(const config::RunConfigFile& cfg, const std::string& command,
                         const std::string& started) {
    fs::create_directories(cfg.train.out_root);
    cfg.save_resolved(cfg.train.out_root + "/resolved_config.json");
    json manifest{{"command", command},
                  {"seed", cfg.train.seed},
                  {"config_hash", cfg.hash()},
                  {"git_describe", git_describe()},
                  {"started", started},
                  {"finished", now_iso()}};
    std::ofstream f(cfg.train.out_root + "/run_manifest_" + command + ".json");
    f << manifest.dump(2) << '\n';
}

/// The --ckpt argument is a run output root holding ckpt/ and
/// resolved_config.json from the training commands.
config::RunConfigFile config_from_run_dir(const std::string& dir) {
    std::string path = dir + "/resolved_config.json";
    if (!fs::exists(path))
        throw std::runtime_error("missing checkpoint run dir (no resolved_config.json): " + dir);
    config::RunConfigFile cfg = config::RunConfigFile::load(path);
    cfg.train.out_root = dir;
    return cfg;
}

nets::ModelSet load_models(const config::RunConfigFile& cfg,
                           const std::vector<std::string>& names) {
    nets::ModelSet m(cfg.train.net);
    training::load_nets(m, cfg.train, names);
    return m;
}

const std::vector<std::string> kStage01Nets = {"en_id", "en_lnd", "generator",
                                               "mapping", "en_expr"};

double mean(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

int cmd_build_data(const std::string& config_path) {
    auto cfg = load_config(config_path);
    std::string started = now_iso();
    facegen::CorpusConfig cc;
    cc.out_dir = cfg.train.corpus_dir();
    cc.count = cfg.train.corpus_count;
    cc.resolution = cfg.train.net.resolution;
    cc.seed = cfg.train.seed;
    facegen::build_corpus(cc);
    write_run_artifacts(cfg, "build-data", started);
    std::cout << "corpus written to " << cc.out_dir << " (" << cc.count << " images)\n";
    return 0;
}

int cmd_pretrain(const std::string& config_path) {
    auto cfg = load_config(config_path);
    std::string started = now_iso();
    nets::ModelSet m(cfg.train.net);
    training::pretrain_stage0(cfg.train, m);
    training::sample_w_dataset(cfg.train, m);
    write_run_artifacts(cfg, "pretrain", started);
    std::cout << "stage-0 checkpoints and sampled latent dataset written under "
              << cfg.train.out_root << '\n';
    return 0;
}

int cmd_train_disentangle(const std::string& config_path) {
    auto cfg = load_config(config_path);
    std::string started = now_iso();
    nets::ModelSet m(cfg.train.net);
    training::load_nets(m, cfg.train, {"en_id", "en_lnd", "generator"});
    auto data = training::load_w_dataset(cfg.train.samples_dir());
    training::train_stage1(cfg.train, m, data);
    write_run_artifacts(cfg, "train-disentangle", started);
    std::cout << "stage-1 checkpoints written under " << cfg.train.out_root << '\n';
    return 0;
}

int cmd_train_adv(const std::string& config_path) {
    auto cfg = load_config(config_path);
    std::string started = now_iso();
    nets::ModelSet m(cfg.train.net);
    training::load_nets(m, cfg.train, kStage01Nets);
    auto data = training::load_w_dataset(cfg.train.samples_dir());
    training::train_stage2(cfg.train, m, data);
    write_run_artifacts(cfg, "train-adv", started);
    std::cout << "stage-2 checkpoint written under " << cfg.train.out_root << '\n';
    return 0;
}

int cmd_swap(const std::string& run_dir, const std::string& id_path, const std::string& expr_path,
             const std::string& out_path) {
    auto cfg = config_from_run_dir(run_dir);
    auto m = load_models(cfg, kStage01Nets);
    std::size_t r = cfg.train.net.resolution;
    Tensor out = training::swap_faces(m, load_and_fit(id_path, r), load_and_fit(expr_path, r));
    save_png(out, out_path);
    std::cout << out_path << '\n';
    return 0;
}

int cmd_reconstruct(const std::string& run_dir, const std::string& in_path,
                    const std::string& out_path) {
    auto cfg = config_from_run_dir(run_dir);
    auto m = load_models(cfg, kStage01Nets);
    Tensor out = training::reconstruct(m, load_and_fit(in_path, cfg.train.net.resolution));
    save_png(out, out_path);
    std::cout << out_path << '\n';
    return 0;
}

int cmd_attack(const std::string& run_dir, const std::string& in_path,
               const std::string& out_path, double fgsm_eps, bool use_fgsm) {
    auto cfg = config_from_run_dir(run_dir);
    Tensor img;
    Tensor out;
    if (use_fgsm) {
        auto m = load_models(cfg, {"en_id"});
        img = load_and_fit(in_path, cfg.train.net.resolution);
        out = training::fgsm_attack(training::id_encoder(m), img, fgsm_eps);
    } else {
        auto names = kStage01Nets;
        names.push_back("adv_mapping");
        auto m = load_models(cfg, names);
        img = load_and_fit(in_path, cfg.train.net.resolution);
        out = training::generate_adversarial(m, img, cfg.train.weights.delta);
    }
    save_png(out, out_path);
    std::cout << out_path << '\n';
    return 0;
}

int cmd_eval(const std::string& config_path, const std::string& run_dir) {
    auto cfg = load_config(config_path);
    std::string started = now_iso();
    auto run_cfg = config_from_run_dir(run_dir);
    auto names = kStage01Nets;
    names.push_back("adv_mapping");
    auto m = load_models(run_cfg, names);
    auto data = training::load_w_dataset(run_cfg.train.samples_dir());

    losses::Encoder en_id = training::id_encoder(m);
    losses::Encoder en_lnd = training::lnd_encoder(m);
    double delta = run_cfg.train.weights.delta;
    std::size_t scales = run_cfg.train.msssim_scales;

    std::size_t n_test = data.image_paths.size() - data.val_end;
    std::size_t n = std::min(cfg.eval_pairs, n_test);
    if (n < 2) throw std::runtime_error("eval: test split too small");
    Rng pair_rng(cfg.train.seed ^ 0x5eedull);

    std::vector<double> ms_recon, idl_recon, idl_random, sim_recon, sim_adv, lnd_recon, lnd_adv;
    std::vector<std::vector<double>> sim_fgsm(cfg.train.fgsm_eps.size());
    std::vector<std::vector<double>> lnd_fgsm(cfg.train.fgsm_eps.size());
    std::size_t disent_id_ok = 0, disent_expr_ok = 0;

    std::vector<Tensor> originals, recons, advs;
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t i = data.val_end + k;
        Tensor img = data.image(i);
        Tensor rec = training::reconstruct(m, img);
        Tensor adv = training::generate_adversarial(m, img, delta);

        {
            autograd::NoGradGuard guard;
            Variable a = Variable::constant(training::stack_images({img}));
            Variable b = Variable::constant(training::stack_images({rec}));
            Variable held = msssim::ms_ssim(a, b, scales);
            ms_recon.push_back(held.value()[0]);
        }
        idl_recon.push_back(metrics::identity_loss(en_id, img, rec));
        sim_recon.push_back(metrics::id_similarity(en_id, img, rec));
        sim_adv.push_back(metrics::id_similarity(en_id, img, adv));
        lnd_recon.push_back(metrics::expression_loss(en_lnd, img, rec));
        lnd_adv.push_back(metrics::expression_loss(en_lnd, img, adv));

        std::size_t j = data.val_end + pair_rng.below(n_test);
        if (j == i) j = data.val_end + (k + 1) % n_test;
        Tensor other = data.image(j);
        idl_random.push_back(metrics::identity_loss(en_id, img, other));

        // cross-face disentanglement pair
        Tensor swapped = training::swap_faces(m, img, other);
        double cos_id = metrics::id_similarity(en_id, swapped, img);
        double cos_expr = metrics::id_similarity(en_id, swapped, other);
        if (cos_id > cos_expr) ++disent_id_ok;
        double e_expr = metrics::expression_loss(en_lnd, swapped, other);
        double e_id = metrics::expression_loss(en_lnd, swapped, img);
        if (e_expr < e_id) ++disent_expr_ok;

        for (std::size_t e = 0; e < cfg.train.fgsm_eps.size(); ++e) {
            Tensor f = training::fgsm_attack(en_id, img, cfg.train.fgsm_eps[e]);
            sim_fgsm[e].push_back(metrics::id_similarity(en_id, img, f));
            lnd_fgsm[e].push_back(metrics::expression_loss(en_lnd, img, f));
        }

        if (originals.size() < 256) {
            originals.push_back(img);
            recons.push_back(rec);
            advs.push_back(adv);
        }
    }

    auto feat = training::id_feature_net(m);
    double fid_recon = metrics::fid(training::stack_images(originals),
                                    training::stack_images(recons), feat);
    double fid_adv = metrics::fid(training::stack_images(originals),
                                  training::stack_images(advs), feat);

    std::vector<metrics::MethodSamples> methods;
    metrics::MethodSamples rec_m;
    rec_m.name = "reconstruct";
    rec_m.fid_value = fid_recon;
    rec_m.id_sims = sim_recon;
    rec_m.identity_losses = idl_recon;
    rec_m.expression_losses = lnd_recon;
    methods.push_back(rec_m);
    metrics::MethodSamples adv_m;
    adv_m.name = "latent-adv";
    adv_m.fid_value = fid_adv;
    adv_m.id_sims = sim_adv;
    adv_m.identity_losses = idl_recon;
    adv_m.expression_losses = lnd_adv;
    methods.push_back(adv_m);
    for (std::size_t e = 0; e < cfg.train.fgsm_eps.size(); ++e) {
        metrics::MethodSamples f_m;
        f_m.name = "fgsm-" + std::to_string(cfg.train.fgsm_eps[e]).substr(0, 4);
        f_m.fid_value = 0.0;
        f_m.id_sims = sim_fgsm[e];
        f_m.identity_losses = idl_recon;
        f_m.expression_losses = lnd_fgsm[e];
        methods.push_back(f_m);
    }

    metrics::EvalReport report =
        metrics::build_report(methods, cfg.hash(), cfg.train.seed, cfg.bootstrap_n);

    std::string eval_dir = cfg.train.out_root + "/eval";
    fs::create_directories(eval_dir);
    {
        std::ofstream f(eval_dir + "/report.csv");
        f << report.to_csv();
    }
    {
        std::ofstream f(eval_dir + "/report.txt");
        f << report.to_table();
    }
    json metrics_json{
        {"n_pairs", n},
        {"ms_ssim_recon_mean", mean(ms_recon)},
        {"identity_loss_recon_mean", mean(idl_recon)},
        {"identity_loss_random_mean", mean(idl_random)},
        {"id_sim_recon_mean", mean(sim_recon)},
        {"id_sim_adv_mean", mean(sim_adv)},
        {"lnd_recon_mean", mean(lnd_recon)},
        {"lnd_adv_mean", mean(lnd_adv)},
        {"disent_id_frac", static_cast<double>(disent_id_ok) / static_cast<double>(n)},
        {"disent_expr_frac", static_cast<double>(disent_expr_ok) / static_cast<double>(n)},
        {"fid_recon", fid_recon},
        {"fid_adv", fid_adv}};
    for (std::size_t e = 0; e < cfg.train.fgsm_eps.size(); ++e) {
        std::string tag = std::to_string(cfg.train.fgsm_eps[e]).substr(0, 4);
        metrics_json["id_sim_fgsm_" + tag] = mean(sim_fgsm[e]);
        metrics_json["lnd_fgsm_" + tag] = mean(lnd_fgsm[e]);
    }
    {
        std::ofstream f(eval_dir + "/metrics.json");
        f << metrics_json.dump(2) << '\n';
    }
    write_run_artifacts(cfg, "eval", started);
    std::cout << report.to_table();
    std::cout << "eval artifacts written to " << eval_dir << '\n';
    return 0;
}

int classify(const std::exception& e) {
    std::string msg = e.what();
    if (msg.find("missing checkpoint") != std::string::npos ||
        msg.find("missing sample dataset") != std::string::npos)
        return kExitMissingCkpt;
    if (msg.find("diverged") != std::string::npos || msg.find("gate not met") != std::string::npos)
        return kExitDiverged;
    if (msg.find("config") != std::string::npos) return kExitConfig;
    return kExitIo;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"face de-identification pipeline"};
    app.require_subcommand(1);

    std::string config_path, run_dir, in_path, id_path, expr_path, out_path;
    double fgsm_eps = 0.0;

    auto* build = app.add_subcommand("build-data", "render the synthetic corpus");
    build->add_option("config", config_path)->required();

    auto* pre = app.add_subcommand("pretrain", "stage 0: G, En_id, En_lnd + latent samples");
    pre->add_option("config", config_path)->required();

    auto* s1 = app.add_subcommand("train-disentangle", "stage 1: M, En_expr, D_W");
    s1->add_option("config", config_path)->required();

    auto* s2 = app.add_subcommand("train-adv", "stage 2: M_adv");
    s2->add_option("config", config_path)->required();

    auto* swap = app.add_subcommand("swap", "identity/expression face swap");
    swap->add_option("--ckpt", run_dir)->required();
    swap->add_option("--id", id_path)->required();
    swap->add_option("--expr", expr_path)->required();
    swap->add_option("--out", out_path)->required();

    auto* rec = app.add_subcommand("reconstruct", "same-face reconstruction");
    rec->add_option("--ckpt", run_dir)->required();
    rec->add_option("--in", in_path)->required();
    rec->add_option("--out", out_path)->required();

    auto* atk = app.add_subcommand("attack", "adversarial de-identification");
    atk->add_option("--ckpt", run_dir)->required();
    atk->add_option("--in", in_path)->required();
    atk->add_option("--out", out_path)->required();
    auto* fgsm_opt = atk->add_option("--fgsm", fgsm_eps, "use the FGSM baseline with this eps");

    auto* ev = app.add_subcommand("eval", "evaluation report");
    ev->add_option("config", config_path)->required();
    ev->add_option("--ckpt", run_dir)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (build->parsed()) return cmd_build_data(config_path);
        if (pre->parsed()) return cmd_pretrain(config_path);
        if (s1->parsed()) return cmd_train_disentangle(config_path);
        if (s2->parsed()) return cmd_train_adv(config_path);
        if (swap->parsed()) return cmd_swap(run_dir, id_path, expr_path, out_path);
        if (rec->parsed()) return cmd_reconstruct(run_dir, in_path, out_path);
        if (atk->parsed()) return cmd_attack(run_dir, in_path, out_path, fgsm_eps, !fgsm_opt->empty());
        if (ev->parsed()) return cmd_eval(config_path, run_dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return classify(e);
    }
    return 1;
}
