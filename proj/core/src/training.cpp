#include "deid/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "deid/image_io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace deid {
namespace training {

namespace op = ops;

void TrainConfig::validate() const {
    weights.validate();
    if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
    if (steps_en_id == 0 || steps_en_lnd == 0 || steps_gan == 0 || steps_stage1 == 0 ||
        steps_stage2 == 0)
        throw std::invalid_argument("step counts must be positive");
    if (corpus_count == 0 || sample_count == 0 || fid_probe_count < 2)
        throw std::invalid_argument("data counts must be positive");
    if (r1_interval == 0) throw std::invalid_argument("r1_interval must be positive");
    if (!(lr_stage0 > 0.0) || !(lr_stage12 > 0.0))
        throw std::invalid_argument("learning rates must be positive");
    if (!(fid_gate_ratio > 0.0) || !std::isfinite(fid_gate_ratio))
        throw std::invalid_argument("fid_gate_ratio must be positive");
    if (msssim_scales < 1 || (net.resolution >> (msssim_scales - 1)) < 11)
        throw std::invalid_argument("msssim_scales too large for the resolution");
    for (double e : fgsm_eps)
        if (e < 0.0) throw std::invalid_argument("fgsm eps must be nonnegative");
    if (out_root.empty()) throw std::invalid_argument("out_root must be set");
}

std::string TrainConfig::log_path(int stage) const {
    return out_root + "/log_stage" + std::to_string(stage) + ".csv";
}

void TrainLog::add(int stage, std::size_t step, const std::string& name, double value) {
    if (!rows.empty() && rows.back().stage == stage && step < rows.back().step)
        throw std::logic_error("TrainLog: step index decreased within a stage");
    rows.push_back({stage, step, name, value});
}

std::vector<double> TrainLog::series(int stage, const std::string& name) const {
    std::vector<double> out;
    for (const Row& r : rows)
        if (r.stage == stage && r.name == name) out.push_back(r.value);
    return out;
}

void TrainLog::save(const std::string& path) const {
    fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "stage,step,name,value\n";
    f.precision(17);
    for (const Row& r : rows) f << r.stage << ',' << r.step << ',' << r.name << ',' << r.value << '\n';
}

TrainLog TrainLog::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read " + path);
    std::string line;
    std::getline(f, line); // header
    TrainLog log;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        Row r;
        std::string field;
        std::getline(ss, field, ',');
        r.stage = std::stoi(field);
        std::getline(ss, field, ',');
        r.step = static_cast<std::size_t>(std::stoull(field));
        std::getline(ss, r.name, ',');
        std::getline(ss, field, ',');
        r.value = std::stod(field);
        log.rows.push_back(r);
    }
    return log;
}

losses::Encoder id_encoder(const nets::ModelSet& m) {
    const nets::IdentityEncoder* en = &m.en_id;
    return [en](const Variable& img) { return en->encode(img); };
}

losses::Encoder lnd_encoder(const nets::ModelSet& m) {
    const nets::LandmarkEncoder* en = &m.en_lnd;
    return [en](const Variable& img) { return en->encode(img); };
}

metrics::FeatureNet id_feature_net(const nets::ModelSet& m) {
    const nets::IdentityEncoder* en = &m.en_id;
    return [en](const Tensor& imgs) {
        autograd::NoGradGuard guard;
        Variable held = en->encode(Variable::constant(imgs));
        return held.value();
    };
}

Tensor stack_images(const std::vector<Tensor>& imgs) {
    if (imgs.empty()) throw std::invalid_argument("stack_images: empty batch");
    std::size_t c = imgs[0].dim(0), h = imgs[0].dim(1), w = imgs[0].dim(2);
    Tensor out({imgs.size(), c, h, w});
    std::size_t per = c * h * w;
    for (std::size_t i = 0; i < imgs.size(); ++i) {
        if (imgs[i].size() != per) throw std::invalid_argument("stack_images: shape mismatch");
        for (std::size_t j = 0; j < per; ++j) out[i * per + j] = imgs[i][j];
    }
    return out;
}

namespace {

std::vector<Variable> just_params(std::vector<nn::NamedParam> ps) {
    std::vector<Variable> out;
    out.reserve(ps.size());
    for (auto& p : ps) out.push_back(p.param);
    return out;
}

void zero_all(nets::ModelSet& m) {
    for (auto& p : m.named_params()) p.param.zero_grad();
}

void ensure_finite(double v, int stage, std::size_t step, TrainLog& log, const TrainConfig& cfg) {
    if (std::isfinite(v)) return;
    log.save(cfg.log_path(stage));
    throw std::runtime_error("training diverged at stage " + std::to_string(stage) + " step " +
                             std::to_string(step));
}

Tensor gather_rows(const Tensor& src, const std::vector<std::size_t>& idx) {
    std::size_t d = src.dim(1);
    Tensor out({idx.size(), d});
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) out.at2(i, j) = src.at2(idx[i], j);
    return out;
}

Tensor normal_matrix(Rng& rng, std::size_t n, std::size_t d) {
    Tensor t({n, d});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
    return t;
}

std::vector<std::size_t> draw_indices(Rng& rng, std::size_t n, std::size_t lo, std::size_t hi) {
    std::vector<std::size_t> idx(n);
    for (auto& v : idx) v = lo + rng.below(hi - lo);
    return idx;
}

// flat-row landmark target (x,y per point) matching LandmarkEncoder::encode
Tensor landmark_target(const std::vector<const facegen::ManifestEntry*>& entries,
                       const std::vector<std::size_t>& idx) {
    std::size_t k = facegen::kNumLandmarks;
    Tensor out({idx.size(), 2 * k});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto& pts = entries[idx[i]]->landmarks->points;
        for (std::size_t j = 0; j < 2 * k; ++j) out.at2(i, j) = pts[j];
    }
    return out;
}

Tensor load_batch(const std::vector<const facegen::ManifestEntry*>& entries,
                  const std::vector<std::size_t>& idx) {
    std::vector<Tensor> imgs;
    imgs.reserve(idx.size());
    for (std::size_t i : idx) imgs.push_back(load_png(entries[i]->path));
    return stack_images(imgs);
}

double mean_cos_rows(const Tensor& a, const Tensor& b) {
    double acc = 0.0;
    std::size_t n = a.dim(0), d = a.dim(1);
    for (std::size_t i = 0; i < n; ++i) {
        double dot = 0, na = 0, nb = 0;
        for (std::size_t j = 0; j < d; ++j) {
            dot += a.at2(i, j) * b.at2(i, j);
            na += a.at2(i, j) * a.at2(i, j);
            nb += b.at2(i, j) * b.at2(i, j);
        }
        acc += dot / std::sqrt(na * nb);
    }
    return acc / static_cast<double>(n);
}

const std::map<std::string, int> kNetNames = {
    {"en_id", 0},  {"en_expr", 1}, {"en_lnd", 2}, {"mapping", 3},
    {"adv_mapping", 4}, {"d_w", 5}, {"generator", 6}, {"d_img", 7}};

} // namespace

void save_nets(nets::ModelSet& m, const TrainConfig& cfg, const std::vector<std::string>& names,
               int stage, std::size_t step) {
    for (const std::string& name : names) {
        if (!kNetNames.count(name)) throw std::invalid_argument("unknown net " + name);
        checkpoint::Meta meta;
        meta.fields["net"] = name;
        meta.fields["stage"] = std::to_string(stage);
        meta.fields["step"] = std::to_string(step);
        meta.fields["seed"] = std::to_string(cfg.seed);
        meta.fields["resolution"] = std::to_string(cfg.net.resolution);
        checkpoint::save(cfg.ckpt_dir(name), m.named_params_of(name), meta);
    }
}

void load_nets(nets::ModelSet& m, const TrainConfig& cfg, const std::vector<std::string>& names) {
    for (const std::string& name : names) {
        if (!checkpoint::exists(cfg.ckpt_dir(name)))
            throw std::runtime_error("missing checkpoint: " + cfg.ckpt_dir(name));
        checkpoint::load(cfg.ckpt_dir(name), m.named_params_of(name));
    }
}

TrainLog pretrain_stage0(const TrainConfig& cfg, nets::ModelSet& m) {
    cfg.validate();
    auto manifest = facegen::DatasetManifest::load(cfg.corpus_dir() + "/manifest.jsonl");
    auto train = manifest.split("train");
    auto val = manifest.split("val");
    auto test = manifest.split("test");
    if (train.size() < cfg.batch_size || val.empty() || test.size() < 4)
        throw std::runtime_error("corpus too small for training");

    TrainLog log;
    Rng root(cfg.seed);
    Rng batch_rng = root.fork(11);
    Rng aug_rng = root.fork(12);
    Rng gan_rng = root.fork(13);
    Rng noise_rng = root.fork(14);
    Rng probe_rng = root.fork(15);

    auto val_subset = [&](std::size_t cap) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < std::min(cap, val.size()); ++i) idx.push_back(i);
        return idx;
    };

    // ---- En_id: identity-bucket classifier, light pixel-noise augmentation,
    // plus an expression-invariance pull on freshly rendered same-identity
    // pairs so the feature head cannot encode pose or expression
    {
        nn::Adam opt(just_params(m.named_params_of("en_id")), {cfg.lr_stage0, 0.9, 0.999, 1e-8});
        std::size_t npair = std::max<std::size_t>(1, cfg.batch_size / 2);
        for (std::size_t step = 0; step < cfg.steps_en_id; ++step) {
            auto idx = draw_indices(batch_rng, cfg.batch_size, 0, train.size());
            Tensor imgs = load_batch(train, idx);
            for (std::size_t i = 0; i < imgs.size(); ++i) imgs[i] += 0.05 * aug_rng.normal();
            Tensor onehot({idx.size(), facegen::kNumIdentityBuckets}, 0.0);
            for (std::size_t i = 0; i < idx.size(); ++i)
                onehot.at2(i, facegen::identity_bucket(*train[idx[i]]->factors)) = 1.0;

            auto pf = facegen::sample_factors(cfg.seed * 7919 + step, 2 * npair,
                                              facegen::SampleMode::PairedIdentity);
            std::vector<Tensor> left, right;
            for (std::size_t i = 0; i < npair; ++i) {
                left.push_back(facegen::render_face(pf[2 * i], cfg.net.resolution).image);
                right.push_back(facegen::render_face(pf[2 * i + 1], cfg.net.resolution).image);
            }

            zero_all(m);
            Variable ce = op::softmax_cross_entropy(m.en_id.logits(Variable::constant(imgs)),
                                                    onehot);
            Variable ea = m.en_id.encode(Variable::constant(stack_images(left)));
            Variable eb = m.en_id.encode(Variable::constant(stack_images(right)));
            Variable inv = op::mean_all(op::square(op::sub(ea, eb)));
            Variable loss = op::add(ce, inv);
            ensure_finite(loss.value()[0], 0, step, log, cfg);
            loss.backward();
            opt.step();
            log.add(0, step, "en_id_ce", ce.value()[0]);
            log.add(0, step, "en_id_inv", inv.value()[0]);

            if ((step + 1) % 200 == 0 || step + 1 == cfg.steps_en_id) {
                autograd::NoGradGuard guard;
                auto vidx = val_subset(128);
                Tensor vimgs = load_batch(val, vidx);
                Variable logits = m.en_id.logits(Variable::constant(vimgs));
                std::size_t correct = 0;
                for (std::size_t i = 0; i < vidx.size(); ++i) {
                    std::size_t best = 0;
                    for (std::size_t j = 1; j < facegen::kNumIdentityBuckets; ++j)
                        if (logits.value().at2(i, j) > logits.value().at2(i, best)) best = j;
                    if (best == facegen::identity_bucket(*val[vidx[i]]->factors)) ++correct;
                }
                log.add(0, step, "en_id_val_acc",
                        static_cast<double>(correct) / static_cast<double>(vidx.size()));
            }
        }
    }

    // ---- En_lnd: landmark coordinate regressor
    {
        nn::Adam opt(just_params(m.named_params_of("en_lnd")), {cfg.lr_stage0, 0.9, 0.999, 1e-8});
        for (std::size_t step = 0; step < cfg.steps_en_lnd; ++step) {
            auto idx = draw_indices(batch_rng, cfg.batch_size, 0, train.size());
            Tensor imgs = load_batch(train, idx);
            Tensor target = landmark_target(train, idx);

            zero_all(m);
            Variable pred = m.en_lnd.encode(Variable::constant(imgs));
            Variable loss = op::mean_all(op::square(op::sub(pred, Variable::constant(target))));
            ensure_finite(loss.value()[0], 0, step, log, cfg);
            loss.backward();
            opt.step();
            log.add(0, cfg.steps_en_id + step, "en_lnd_mse", loss.value()[0]);

            if ((step + 1) % 200 == 0 || step + 1 == cfg.steps_en_lnd) {
                autograd::NoGradGuard guard;
                auto vidx = val_subset(128);
                Tensor vimgs = load_batch(val, vidx);
                Tensor vt = landmark_target(val, vidx);
                Variable vp = m.en_lnd.encode(Variable::constant(vimgs));
                double err = 0.0;
                std::size_t k = facegen::kNumLandmarks;
                for (std::size_t i = 0; i < vidx.size(); ++i)
                    for (std::size_t j = 0; j < k; ++j) {
                        double dx = vp.value().at2(i, 2 * j) - vt.at2(i, 2 * j);
                        double dy = vp.value().at2(i, 2 * j + 1) - vt.at2(i, 2 * j + 1);
                        err += std::sqrt(dx * dx + dy * dy);
                    }
                log.add(0, cfg.steps_en_id + step, "en_lnd_val_err",
                        err / static_cast<double>(vidx.size() * k));
            }
        }
    }

    // ---- G vs d_img, non-saturating + lazy R1
    {
        const std::size_t gan_base = cfg.steps_en_id + cfg.steps_en_lnd;
        losses::Critic critic = [&m](const Variable& img) { return m.d_img.logit(img); };
        auto probe_fid = [&](Rng& rng) {
            autograd::NoGradGuard guard;
            std::size_t n = std::min(cfg.fid_probe_count, train.size());
            Tensor real = load_batch(train, draw_indices(rng, n, 0, train.size()));
            std::vector<Tensor> fakes;
            for (std::size_t done = 0; done < n;) {
                std::size_t b = std::min(cfg.batch_size * 4, n - done);
                Variable w = m.generator.map_input(
                    Variable::constant(normal_matrix(rng, b, cfg.net.d_w)));
                Variable imgs = m.generator.synthesize(w, false);
                for (std::size_t i = 0; i < b; ++i) {
                    Tensor one({3, cfg.net.resolution, cfg.net.resolution});
                    std::size_t per = one.size();
                    for (std::size_t j = 0; j < per; ++j) one[j] = imgs.value()[i * per + j];
                    fakes.push_back(one);
                }
                done += b;
            }
            return metrics::fid(real, stack_images(fakes), id_feature_net(m));
        };

        // corpus split-half baseline and initial generator FID
        {
            autograd::NoGradGuard guard;
            std::size_t half = std::min(cfg.fid_probe_count, test.size() / 2);
            std::vector<std::size_t> a, b;
            for (std::size_t i = 0; i < half; ++i) {
                a.push_back(i);
                b.push_back(half + i);
            }
            log.add(0, gan_base, "fid_halves",
                    metrics::fid(load_batch(test, a), load_batch(test, b), id_feature_net(m)));
        }
        Rng probe0 = probe_rng.fork(1);
        double fid_initial = probe_fid(probe0);
        log.add(0, gan_base, "fid_g_initial", fid_initial);

        nn::Adam opt_g(just_params(m.named_params_of("generator")),
                       {cfg.lr_stage0, 0.0, 0.99, 1e-8});
        nn::Adam opt_d(just_params(m.named_params_of("d_img")), {cfg.lr_stage0, 0.0, 0.99, 1e-8});

        for (std::size_t step = 0; step < cfg.steps_gan; ++step) {
            // discriminator step
            auto idx = draw_indices(batch_rng, cfg.batch_size, 0, train.size());
            bool r1_now = step % cfg.r1_interval == 0;
            double gamma_eff = r1_now ? cfg.weights.gamma * static_cast<double>(cfg.r1_interval)
                                      : 0.0;
            Tensor fake_t;
            {
                autograd::NoGradGuard guard;
                Variable w = m.generator.map_input(
                    Variable::constant(normal_matrix(gan_rng, cfg.batch_size, cfg.net.d_w)));
                Variable held = m.generator.synthesize(w, true, &noise_rng);
                fake_t = held.value();
            }
            zero_all(m);
            Variable real = Variable::leaf(load_batch(train, idx), r1_now);
            Variable d_loss = losses::loss_adv_d(critic, real, Variable::constant(fake_t),
                                                 gamma_eff);
            ensure_finite(d_loss.value()[0], 0, step, log, cfg);
            d_loss.backward();
            opt_d.step();

            // generator step (fresh graph through G)
            zero_all(m);
            Variable w = m.generator.map_input(
                Variable::constant(normal_matrix(gan_rng, cfg.batch_size, cfg.net.d_w)));
            Variable fake = m.generator.synthesize(w, true, &noise_rng);
            Variable g_loss = losses::loss_adv_g(critic, fake);
            ensure_finite(g_loss.value()[0], 0, step, log, cfg);
            g_loss.backward();
            opt_g.step();

            log.add(0, gan_base + step, "d_loss", d_loss.value()[0]);
            log.add(0, gan_base + step, "g_loss", g_loss.value()[0]);
        }

        Rng probe1 = probe_rng.fork(2);
        double fid_final = probe_fid(probe1);
        log.add(0, gan_base + cfg.steps_gan, "fid_g_final", fid_final);

        if (fid_final > cfg.fid_gate_ratio * fid_initial) {
            log.save(cfg.log_path(0));
            std::ostringstream msg;
            msg << "stage-0 FID gate not met: initial " << fid_initial << ", final " << fid_final
                << ", required <= " << cfg.fid_gate_ratio * fid_initial;
            throw std::runtime_error(msg.str());
        }
    }

    save_nets(m, cfg, {"en_id", "en_lnd", "generator", "d_img"}, 0, cfg.steps_gan);
    log.save(cfg.log_path(0));
    return log;
}

Tensor WDataset::image(std::size_t i) const { return load_png(image_paths.at(i)); }

Tensor WDataset::w_row(std::size_t i) const {
    Tensor out({1, ws.dim(1)});
    for (std::size_t j = 0; j < ws.dim(1); ++j) out.at2(0, j) = ws.at2(i, j);
    return out;
}

WDataset sample_w_dataset(const TrainConfig& cfg, const nets::ModelSet& m) {
    autograd::NoGradGuard guard;
    fs::create_directories(cfg.samples_dir());
    Rng rng = Rng(cfg.seed).fork(21);

    WDataset data;
    data.ws = Tensor({cfg.sample_count, cfg.net.d_w});
    std::size_t res = cfg.net.resolution;
    for (std::size_t done = 0; done < cfg.sample_count;) {
        std::size_t b = std::min<std::size_t>(32, cfg.sample_count - done);
        Variable w = m.generator.map_input(Variable::constant(normal_matrix(rng, b, cfg.net.d_w)));
        Variable imgs = m.generator.synthesize(w, false);
        std::size_t per = 3 * res * res;
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t j = 0; j < cfg.net.d_w; ++j)
                data.ws.at2(done + i, j) = w.value().at2(i, j);
            Tensor one({3, res, res});
            for (std::size_t j = 0; j < per; ++j) one[j] = imgs.value()[i * per + j];
            char name[32];
            std::snprintf(name, sizeof(name), "w_%06zu.png", done + i);
            std::string path = (fs::path(cfg.samples_dir()) / name).string();
            save_png(one, path);
            data.image_paths.push_back(path);
        }
        done += b;
    }
    data.train_end = cfg.sample_count * 8 / 10;
    data.val_end = cfg.sample_count * 9 / 10;

    checkpoint::save_tensor(cfg.samples_dir() + "/ws.bin", data.ws);
    json meta{{"count", cfg.sample_count}, {"resolution", res}, {"d_w", cfg.net.d_w},
              {"seed", cfg.seed}, {"train_end", data.train_end}, {"val_end", data.val_end}};
    std::ofstream f(cfg.samples_dir() + "/meta.json");
    f << meta.dump(2) << '\n';
    return data;
}

WDataset load_w_dataset(const std::string& dir) {
    std::ifstream f(dir + "/meta.json");
    if (!f) throw std::runtime_error("missing sample dataset at " + dir);
    json meta = json::parse(f);
    WDataset data;
    data.ws = checkpoint::load_tensor(dir + "/ws.bin");
    data.train_end = meta.at("train_end").get<std::size_t>();
    data.val_end = meta.at("val_end").get<std::size_t>();
    std::size_t count = meta.at("count").get<std::size_t>();
    for (std::size_t i = 0; i < count; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "w_%06zu.png", i);
        data.image_paths.push_back((fs::path(dir) / name).string());
    }
    return data;
}

namespace {

Tensor load_sample_batch(const WDataset& data, const std::vector<std::size_t>& idx) {
    std::vector<Tensor> imgs;
    imgs.reserve(idx.size());
    for (std::size_t i : idx) imgs.push_back(data.image(i));
    return stack_images(imgs);
}

// w = M([En_id(img_id), En_expr(img_expr)]); grads flow only where the
// caller left them enabled
Variable map_codes(const nets::ModelSet& m, const Variable& id_code, const Variable& expr_code) {
    return m.mapping.forward(op::concat_cols(id_code, expr_code));
}

} // namespace

TrainLog train_stage1(const TrainConfig& cfg, nets::ModelSet& m, const WDataset& data) {
    cfg.validate();
    if (data.train_end < cfg.batch_size) throw std::runtime_error("sample dataset too small");

    TrainLog log;
    Rng root(cfg.seed);
    Rng batch_rng = root.fork(31);

    auto nonadv_params = m.named_params_of("mapping");
    {
        auto es = m.named_params_of("en_expr");
        nonadv_params.insert(nonadv_params.end(), es.begin(), es.end());
    }
    nn::Adam opt_nonadv(just_params(nonadv_params), {cfg.lr_stage12, 0.9, 0.999, 1e-8});
    // the latent-adversarial push on M runs at a reduced rate; at full rate
    // the D_W game eventually tears down the reconstruction it cannot see
    nn::Adam opt_gadv(just_params(m.named_params_of("mapping")),
                      {cfg.lr_stage12 * 0.2, 0.0, 0.99, 1e-8});
    nn::Adam opt_dw(just_params(m.named_params_of("d_w")), {cfg.lr_stage12, 0.0, 0.99, 1e-8});

    losses::Critic dw_critic = [&m](const Variable& w) { return m.d_w.logit(w); };
    losses::Encoder en_id = id_encoder(m);
    losses::Encoder en_lnd = lnd_encoder(m);

    double best_val = -2.0;
    for (std::size_t round = 0; round < cfg.steps_stage1; ++round) {
        bool cross_face = cfg.alternation_f == 0 ||
                          round % (cfg.alternation_f + 1) == cfg.alternation_f;
        auto idx_id = draw_indices(batch_rng, cfg.batch_size, 0, data.train_end);
        std::vector<std::size_t> idx_expr = idx_id;
        if (cross_face) {
            idx_expr = draw_indices(batch_rng, cfg.batch_size, 0, data.train_end);
            for (std::size_t i = 0; i < idx_expr.size(); ++i)
                if (idx_expr[i] == idx_id[i]) idx_expr[i] = (idx_expr[i] + 1) % data.train_end;
        }
        Tensor imgs_id_t = load_sample_batch(data, idx_id);
        Tensor imgs_expr_t = cross_face ? load_sample_batch(data, idx_expr) : imgs_id_t;
        Variable imgs_id = Variable::constant(imgs_id_t);
        Variable imgs_expr = Variable::constant(imgs_expr_t);

        // identity code has no trainable networks upstream in this stage
        Tensor id_code_t;
        {
            autograd::NoGradGuard guard;
            Variable held = m.en_id.encode(imgs_id);
            id_code_t = held.value();
        }

        // --- non-adversarial step w.r.t. {M, En_expr}
        zero_all(m);
        Variable w_out = map_codes(m, Variable::constant(id_code_t), m.en_expr.encode(imgs_expr));
        Variable img_out = m.generator.synthesize(w_out, false);
        Variable l_id = losses::loss_identity(en_id, imgs_id, img_out);
        Variable l_lnd = losses::loss_landmark(en_lnd, imgs_expr, img_out);
        Variable l_mix = losses::loss_reconstruct(imgs_id, img_out, cfg.weights.alpha, !cross_face,
                                                  cfg.msssim_scales);
        Variable eq4 = losses::total_generator_loss(l_id, l_lnd, l_mix, cfg.weights);
        ensure_finite(eq4.value()[0], 1, round, log, cfg);
        eq4.backward();
        opt_nonadv.step();

        // --- generator-side adversarial step w.r.t. {M}
        Tensor expr_code_t;
        {
            autograd::NoGradGuard guard;
            Variable held = m.en_expr.encode(imgs_expr);
            expr_code_t = held.value();
        }
        zero_all(m);
        Variable w_adv_side = map_codes(m, Variable::constant(id_code_t),
                                        Variable::constant(expr_code_t));
        Variable eq3 = losses::loss_adv_g(dw_critic, w_adv_side);
        ensure_finite(eq3.value()[0], 1, round, log, cfg);
        eq3.backward();
        opt_gadv.step();

        // --- latent discriminator step w.r.t. {D_W}
        bool r1_now = round % cfg.r1_interval == 0;
        double gamma_eff = r1_now ? cfg.weights.gamma * static_cast<double>(cfg.r1_interval) : 0.0;
        zero_all(m);
        Variable real_w = Variable::leaf(
            gather_rows(data.ws, draw_indices(batch_rng, cfg.batch_size, 0, data.train_end)),
            r1_now);
        Variable eq2 = losses::loss_adv_d(dw_critic, real_w,
                                          Variable::constant(w_adv_side.value()), gamma_eff);
        ensure_finite(eq2.value()[0], 1, round, log, cfg);
        eq2.backward();
        opt_dw.step();

        log.add(1, round, "same_face", cross_face ? 0.0 : 1.0);
        log.add(1, round, "l_id", l_id.value()[0]);
        log.add(1, round, "l_lnd", l_lnd.value()[0]);
        log.add(1, round, "l_mix", l_mix.value()[0]);
        log.add(1, round, "eq4", eq4.value()[0]);
        log.add(1, round, "eq3", eq3.value()[0]);
        log.add(1, round, "eq2", eq2.value()[0]);

        if ((round + 1) % 200 == 0 || round + 1 == cfg.steps_stage1) {
            double v;
            {
                autograd::NoGradGuard guard;
                std::size_t nval = std::min<std::size_t>(64, data.val_end - data.train_end);
                std::vector<std::size_t> vidx;
                for (std::size_t i = 0; i < nval; ++i) vidx.push_back(data.train_end + i);
                Tensor vimgs = load_sample_batch(data, vidx);
                Variable vin = Variable::constant(vimgs);
                Variable vcode = map_codes(m, m.en_id.encode(vin), m.en_expr.encode(vin));
                Variable vout = m.generator.synthesize(vcode, false);
                Variable ms = msssim::ms_ssim(vin, vout, cfg.msssim_scales);
                v = ms.value()[0];
            }
            log.add(1, round, "val_recon_msssim", v);
            // keep the best validated snapshot; the adversarial game can
            // degrade the mapping long after reconstruction has converged
            if (v > best_val) {
                best_val = v;
                save_nets(m, cfg, {"mapping", "en_expr", "d_w"}, 1, round + 1);
            }
        }
    }

    if (best_val == -2.0)
        save_nets(m, cfg, {"mapping", "en_expr", "d_w"}, 1, cfg.steps_stage1);
    else
        load_nets(m, cfg, {"mapping", "en_expr", "d_w"});
    log.save(cfg.log_path(1));
    return log;
}

TrainLog train_stage2(const TrainConfig& cfg, nets::ModelSet& m, const WDataset& data) {
    cfg.validate();
    if (!(cfg.weights.delta > 0.0)) throw std::invalid_argument("stage 2 requires delta > 0");
    if (data.train_end < cfg.batch_size) throw std::runtime_error("sample dataset too small");

    TrainLog log;
    Rng batch_rng = Rng(cfg.seed).fork(41);
    nn::Adam opt(just_params(m.named_params_of("adv_mapping")),
                 {cfg.lr_stage12, 0.9, 0.999, 1e-8});
    losses::Encoder en_id = id_encoder(m);
    losses::Encoder en_lnd = lnd_encoder(m);

    for (std::size_t step = 0; step < cfg.steps_stage2; ++step) {
        auto idx = draw_indices(batch_rng, cfg.batch_size, 0, data.train_end);
        Tensor imgs_t = load_sample_batch(data, idx);
        Variable imgs = Variable::constant(imgs_t);

        Tensor w_t;
        {
            autograd::NoGradGuard guard;
            Variable held = map_codes(m, m.en_id.encode(imgs), m.en_expr.encode(imgs));
            w_t = held.value();
        }
        zero_all(m);
        Variable w = Variable::constant(w_t);
        Variable w_adv = losses::clip_latent(m.adv_mapping.forward(w), w, cfg.weights.delta);
        Variable img_adv = m.generator.synthesize(w_adv, false);
        Variable model_term = losses::loss_id_model(en_id, imgs, img_adv);
        Variable visual_term = losses::loss_id_visual(en_lnd, imgs, img_adv);
        Variable eq12 = losses::total_adversarial_loss(model_term, visual_term, cfg.weights);
        ensure_finite(eq12.value()[0], 2, step, log, cfg);
        eq12.backward();
        opt.step();

        double linf = 0.0;
        for (std::size_t i = 0; i < w_t.size(); ++i)
            linf = std::max(linf, std::fabs(w_adv.value()[i] - w_t[i]));
        log.add(2, step, "eq12", eq12.value()[0]);
        log.add(2, step, "model_cos", model_term.value()[0]);
        log.add(2, step, "visual", visual_term.value()[0]);
        log.add(2, step, "w_cos", mean_cos_rows(w_t, w_adv.value()));
        log.add(2, step, "w_linf", linf);

        if ((step + 1) % 200 == 0 || step + 1 == cfg.steps_stage2 || step == 0) {
            autograd::NoGradGuard guard;
            std::size_t nval = std::min<std::size_t>(16, data.val_end - data.train_end);
            std::vector<std::size_t> vidx;
            for (std::size_t i = 0; i < nval; ++i) vidx.push_back(data.train_end + i);
            Tensor vimgs_t = load_sample_batch(data, vidx);
            Variable vimgs = Variable::constant(vimgs_t);
            Variable vw = map_codes(m, m.en_id.encode(vimgs), m.en_expr.encode(vimgs));
            Variable vw_adv = losses::clip_latent(m.adv_mapping.forward(vw), vw,
                                                  cfg.weights.delta);
            Variable vadv = m.generator.synthesize(vw_adv, false);
            Variable e_ref = m.en_id.encode(vimgs);
            Variable e_adv = m.en_id.encode(vadv);
            log.add(2, step, "val_id_cos", mean_cos_rows(e_ref.value(), e_adv.value()));
        }
    }

    save_nets(m, cfg, {"adv_mapping"}, 2, cfg.steps_stage2);
    log.save(cfg.log_path(2));
    return log;
}

namespace {

Tensor first_image(const Variable& batch) {
    Tensor out({batch.value().dim(1), batch.value().dim(2), batch.value().dim(3)});
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = batch.value()[i];
    return out;
}

Variable recon_w(const nets::ModelSet& m, const Variable& img_id, const Variable& img_expr) {
    return map_codes(m, m.en_id.encode(img_id), m.en_expr.encode(img_expr));
}

} // namespace

Tensor swap_faces(const nets::ModelSet& m, const Tensor& img_id, const Tensor& img_expr) {
    if (img_id.dim(1) != m.generator.resolution() || img_expr.dim(1) != m.generator.resolution())
        throw std::invalid_argument("swap_faces: resolution mismatch");
    autograd::NoGradGuard guard;
    Variable a = Variable::constant(stack_images({img_id}));
    Variable b = Variable::constant(stack_images({img_expr}));
    Variable out = m.generator.synthesize(recon_w(m, a, b), false);
    return first_image(out);
}

Tensor reconstruct(const nets::ModelSet& m, const Tensor& img) { return swap_faces(m, img, img); }

Tensor generate_adversarial(const nets::ModelSet& m, const Tensor& img, double delta) {
    autograd::NoGradGuard guard;
    Variable in = Variable::constant(stack_images({img}));
    Variable w = recon_w(m, in, in);
    Variable w_adv = losses::clip_latent(m.adv_mapping.forward(w), w, delta);
    Variable out = m.generator.synthesize(w_adv, false);
    return first_image(out);
}

Tensor fgsm_attack(const losses::Encoder& en, const Tensor& img, double eps) {
    if (eps < 0.0) throw std::invalid_argument("fgsm: negative eps");
    Tensor batch = stack_images({img});
    Tensor ref;
    {
        autograd::NoGradGuard guard;
        Variable held = en(Variable::constant(batch));
        ref = held.value();
    }
    double ref_sq = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) ref_sq += ref[i] * ref[i];
    if (ref_sq == 0.0) throw std::domain_error("fgsm: zero-norm reference embedding");

    // The exact self-cosine has a zero gradient at the clean image (it sits
    // at the maximum of the normalized similarity), so the one-step attack
    // differentiates the first-order surrogate <e_ref, e(x)> / ||e_ref||^2,
    // which equals the cosine at the clean point and has the same descent
    // direction to first order.
    Variable x = Variable::leaf(batch, true);
    Variable cos = op::scale(op::sum_all(op::mul(en(x), Variable::constant(ref))), 1.0 / ref_sq);
    cos.backward();
    Tensor out = img;
    const Tensor& g = x.grad();
    for (std::size_t i = 0; i < out.size(); ++i) {
        double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
        out[i] = std::clamp(out[i] - eps * s, -1.0, 1.0);
    }
    return out;
}

} // namespace training
} // namespace deid
