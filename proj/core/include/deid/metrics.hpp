#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "deid/losses.hpp"
#include "deid/tensor.hpp"

namespace deid {
namespace metrics {

/// [N,3,H,W] image batch -> [N,d] feature rows, no grad needed.
using FeatureNet = std::function<Tensor(const Tensor&)>;

struct GaussianStats {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

/// Sample mean and unbiased covariance of [N,d] feature rows, N >= 2.
/// The covariance is explicitly symmetrized.
GaussianStats fit_gaussian(const Tensor& features);

/// ||mu1-mu2||^2 + Tr(S1 + S2 - 2 sqrtm(S1 S2)). The matrix square root
/// uses the symmetrized product form sqrtm(A S2 A) with A = sqrtm(S1);
/// eigenvalues below -1e-6 are rejected, small negatives clamped to 0.
double frechet_distance(const GaussianStats& a, const GaussianStats& b);

/// Frechet distance between feature Gaussians of two image sets.
double fid(const Tensor& images_a, const Tensor& images_b, const FeatureNet& net);

/// Cosine similarity of identity embeddings for one image pair.
double id_similarity(const losses::Encoder& en_id, const Tensor& a, const Tensor& b);

/// L1 identity-embedding distance for one image pair.
double identity_loss(const losses::Encoder& en_id, const Tensor& a, const Tensor& b);

/// Landmark-code distance for one image pair.
double expression_loss(const losses::Encoder& en_lnd, const Tensor& a, const Tensor& b);

/// Per-method raw samples feeding one report row. All per-pair vectors
/// must have equal length.
struct MethodSamples {
    std::string name;
    double fid_value = 0.0;
    std::vector<double> id_sims;
    std::vector<double> identity_losses;
    std::vector<double> expression_losses;
    std::vector<double> perceptual_proxy; // feature-space L2, lower = more similar
};

struct ReportRow {
    std::string name;
    double fid_value;
    double id_sim_mean, id_sim_std;
    double identity_loss_mean;
    double expression_loss_mean;
    double perceptual_proxy_mean;
    std::size_t sample_count;
};

struct EvalReport {
    std::vector<ReportRow> rows;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::size_t bootstrap_n = 0;

    std::string to_csv() const;
    std::string to_table() const;
};

/// Deterministic report assembly. The +-std column is the bootstrap
/// standard deviation of the ID-similarity mean over bootstrap_n seeded
/// resamples.
EvalReport build_report(const std::vector<MethodSamples>& methods, const std::string& config_hash,
                        std::uint64_t seed, std::size_t bootstrap_n = 1000);

} // namespace metrics
} // namespace deid
