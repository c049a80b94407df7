#pragma once

#include <string>
#include <vector>

#include "deid/checkpoint.hpp"
#include "deid/facegen.hpp"
#include "deid/losses.hpp"
#include "deid/metrics.hpp"
#include "deid/nets.hpp"

namespace deid {
namespace training {

struct TrainConfig {
    nets::NetConfig net;
    losses::LossWeights weights;

    std::size_t batch_size = 8;
    double lr_stage0 = 1e-3;
    double lr_stage12 = 1e-4;

    std::size_t steps_en_id = 2500;
    std::size_t steps_en_lnd = 2500;
    std::size_t steps_gan = 3000;
    std::size_t steps_stage1 = 6000;
    std::size_t steps_stage2 = 1200;

    /// Same-face batches per one cross-face batch in stage 1.
    std::size_t alternation_f = 1;

    /// R1 penalty is applied every r1_interval-th discriminator step with the
    /// coefficient scaled by the interval (lazy regularization).
    std::size_t r1_interval = 4;

    std::size_t corpus_count = 10000;
    std::size_t sample_count = 10000;
    std::size_t msssim_scales = 3;
    std::size_t fid_probe_count = 256;
    /// Stage-0 gate: final generator FID must be <= fid_gate_ratio * initial.
    double fid_gate_ratio = 0.5;

    std::vector<double> fgsm_eps = {0.03, 0.1};

    std::string out_root = "out";
    std::uint64_t seed = 1;

    void validate() const;
    std::string corpus_dir() const { return out_root + "/corpus"; }
    std::string samples_dir() const { return out_root + "/samples"; }
    std::string ckpt_dir(const std::string& net) const { return out_root + "/ckpt/" + net; }
    std::string log_path(int stage) const;
};

/// Append-only long-format training log: stage, step, name, value.
struct TrainLog {
    struct Row {
        int stage;
        std::size_t step;
        std::string name;
        double value;
    };
    std::vector<Row> rows;

    void add(int stage, std::size_t step, const std::string& name, double value);
    std::vector<double> series(int stage, const std::string& name) const;
    void save(const std::string& path) const;
    static TrainLog load(const std::string& path);
};

/// Encoder adapters over a model set (frozen weights; pure functions).
losses::Encoder id_encoder(const nets::ModelSet& m);
losses::Encoder lnd_encoder(const nets::ModelSet& m);
metrics::FeatureNet id_feature_net(const nets::ModelSet& m);

/// [K images of 3,R,R] -> [K,3,R,R]
Tensor stack_images(const std::vector<Tensor>& imgs);

/// Stage 0: En_id bucket classifier, En_lnd landmark regressor, then G vs
/// d_img (non-saturating + lazy R1) with an FID improvement gate. Saves
/// en_id, en_lnd, generator and d_img checkpoints. Requires the corpus
/// manifest at cfg.corpus_dir().
TrainLog pretrain_stage0(const TrainConfig& cfg, nets::ModelSet& m);

/// Materialized (w, image) pairs drawn from the frozen generator.
struct WDataset {
    Tensor ws; // [n, d_w]
    std::vector<std::string> image_paths;
    std::size_t train_end = 0, val_end = 0; // index splits: [0,train) [train,val) [val,n)

    Tensor image(std::size_t i) const;
    Tensor w_row(std::size_t i) const;
};

WDataset sample_w_dataset(const TrainConfig& cfg, const nets::ModelSet& m);
WDataset load_w_dataset(const std::string& dir);

/// Stage 1: disentanglement. Per round, three disjoint optimizer steps:
/// the non-adversarial objective w.r.t. {M, En_expr}, the generator-side
/// adversarial objective w.r.t. {M}, the latent-discriminator objective
/// w.r.t. {D_W}. En_id, En_lnd and G stay frozen. Saves mapping, en_expr,
/// d_w checkpoints.
TrainLog train_stage1(const TrainConfig& cfg, nets::ModelSet& m, const WDataset& data);

/// Stage 2: adversarial mapping, same-face only, updates M_adv exclusively.
/// Saves the adv_mapping checkpoint.
TrainLog train_stage2(const TrainConfig& cfg, nets::ModelSet& m, const WDataset& data);

/// Inference pipelines (deterministic, no noise injection).
Tensor swap_faces(const nets::ModelSet& m, const Tensor& img_id, const Tensor& img_expr);
Tensor reconstruct(const nets::ModelSet& m, const Tensor& img);
Tensor generate_adversarial(const nets::ModelSet& m, const Tensor& img, double delta);

/// One-step signed-gradient baseline reducing the similarity of en(img') to
/// the frozen embedding of img (first-order cosine surrogate with detached
/// norms); output clamped to [-1,1], ||img'-img||_inf <= eps.
Tensor fgsm_attack(const losses::Encoder& en, const Tensor& img, double eps);

/// Checkpoint plumbing for a named subset of the model set.
void save_nets(nets::ModelSet& m, const TrainConfig& cfg, const std::vector<std::string>& names,
               int stage, std::size_t step);
void load_nets(nets::ModelSet& m, const TrainConfig& cfg, const std::vector<std::string>& names);

} // namespace training
} // namespace deid
