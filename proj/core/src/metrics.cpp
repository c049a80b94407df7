#include "deid/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "deid/rng.hpp"

namespace deid {
namespace metrics {

namespace {

Variable batch_of_one(const Tensor& img) {
    if (img.rank() != 3) throw std::invalid_argument("metrics: expected a [3,H,W] image");
    Tensor t({1, img.dim(0), img.dim(1), img.dim(2)});
    for (std::size_t i = 0; i < img.size(); ++i) t[i] = img[i];
    return Variable::constant(t);
}

double scalar_metric(const losses::Encoder& en, const Tensor& a, const Tensor& b,
                     Variable (*fn)(const losses::Encoder&, const Variable&, const Variable&)) {
    autograd::NoGradGuard guard;
    return fn(en, batch_of_one(a), batch_of_one(b)).value()[0];
}

// symmetric PSD square root via eigendecomposition; negatives below -tol rejected
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, const char* what) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    if (es.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");
    Eigen::VectorXd ev = es.eigenvalues();
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (ev[i] < -1e-6)
            throw std::invalid_argument(std::string(what) + ": covariance is indefinite");
        if (ev[i] < 0.0) ev[i] = 0.0;
    }
    return es.eigenvectors() * ev.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

} // namespace

GaussianStats fit_gaussian(const Tensor& features) {
    if (features.rank() != 2) throw std::invalid_argument("fit_gaussian: expected [N,d]");
    std::size_t n = features.dim(0), d = features.dim(1);
    if (n < 2) throw std::invalid_argument("fit_gaussian: need at least 2 samples");

    GaussianStats g;
    g.mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            g.mean[static_cast<Eigen::Index>(j)] += features.at2(i, j);
    g.mean /= static_cast<double>(n);

    g.cov = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < n; ++i) {
        Eigen::VectorXd c(static_cast<Eigen::Index>(d));
        for (std::size_t j = 0; j < d; ++j)
            c[static_cast<Eigen::Index>(j)] = features.at2(i, j) - g.mean[static_cast<Eigen::Index>(j)];
        g.cov.noalias() += c * c.transpose();
    }
    g.cov /= static_cast<double>(n - 1);
    g.cov = 0.5 * (g.cov + g.cov.transpose()).eval();
    return g;
}

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
    if (a.mean.size() != b.mean.size())
        throw std::invalid_argument("frechet_distance: dimension mismatch");
    Eigen::MatrixXd sa = psd_sqrt(0.5 * (a.cov + a.cov.transpose()), "frechet_distance");
    Eigen::MatrixXd prod = sa * 0.5 * (b.cov + b.cov.transpose()) * sa;
    Eigen::MatrixXd covmean = psd_sqrt(0.5 * (prod + prod.transpose()), "frechet_distance");
    double dist = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() -
                  2.0 * covmean.trace();
    return dist < 0.0 ? 0.0 : dist;
}

double fid(const Tensor& images_a, const Tensor& images_b, const FeatureNet& net) {
    if (images_a.rank() != 4 || images_b.rank() != 4)
        throw std::invalid_argument("fid: expected [N,3,H,W] batches");
    if (images_a.dim(0) < 2 || images_b.dim(0) < 2)
        throw std::invalid_argument("fid: need at least 2 images per set");
    return frechet_distance(fit_gaussian(net(images_a)), fit_gaussian(net(images_b)));
}

double id_similarity(const losses::Encoder& en_id, const Tensor& a, const Tensor& b) {
    return scalar_metric(en_id, a, b, &losses::loss_id_model);
}

double identity_loss(const losses::Encoder& en_id, const Tensor& a, const Tensor& b) {
    return scalar_metric(en_id, a, b, &losses::loss_identity);
}

double expression_loss(const losses::Encoder& en_lnd, const Tensor& a, const Tensor& b) {
    return scalar_metric(en_lnd, a, b, &losses::loss_landmark);
}

EvalReport build_report(const std::vector<MethodSamples>& methods, const std::string& config_hash,
                        std::uint64_t seed, std::size_t bootstrap_n) {
    EvalReport rep;
    rep.config_hash = config_hash;
    rep.seed = seed;
    rep.bootstrap_n = bootstrap_n;
    for (const MethodSamples& m : methods) {
        std::size_t n = m.id_sims.size();
        if (n == 0) throw std::invalid_argument("build_report: empty sample set for " + m.name);
        if (m.identity_losses.size() != n || m.expression_losses.size() != n ||
            (!m.perceptual_proxy.empty() && m.perceptual_proxy.size() != n))
            throw std::invalid_argument("build_report: mismatched sample counts for " + m.name);

        // bootstrap std of the ID-similarity mean; fresh stream per method so
        // identical inputs give identical rows
        Rng rng(seed);
        double bm_sum = 0.0, bm_sq = 0.0;
        for (std::size_t r = 0; r < bootstrap_n; ++r) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += m.id_sims[rng.below(n)];
            double bm = s / static_cast<double>(n);
            bm_sum += bm;
            bm_sq += bm * bm;
        }
        double std_dev = 0.0;
        if (bootstrap_n > 1) {
            double mu = bm_sum / static_cast<double>(bootstrap_n);
            double var = bm_sq / static_cast<double>(bootstrap_n) - mu * mu;
            std_dev = var > 0.0 ? std::sqrt(var) : 0.0;
        }

        ReportRow row;
        row.name = m.name;
        row.fid_value = m.fid_value;
        row.id_sim_mean = mean_of(m.id_sims);
        row.id_sim_std = std_dev;
        row.identity_loss_mean = mean_of(m.identity_losses);
        row.expression_loss_mean = mean_of(m.expression_losses);
        row.perceptual_proxy_mean = m.perceptual_proxy.empty() ? 0.0 : mean_of(m.perceptual_proxy);
        row.sample_count = n;
        rep.rows.push_back(row);
    }
    return rep;
}

std::string EvalReport::to_csv() const {
    std::ostringstream out;
    out << std::setprecision(10);
    out << "method,fid,id_similarity_mean,id_similarity_std,identity_loss,"
           "expression_loss,perceptual_proxy,sample_count,config_hash,seed,bootstrap_n\n";
    for (const ReportRow& r : rows)
        out << r.name << ',' << r.fid_value << ',' << r.id_sim_mean << ',' << r.id_sim_std << ','
            << r.identity_loss_mean << ',' << r.expression_loss_mean << ','
            << r.perceptual_proxy_mean << ',' << r.sample_count << ',' << config_hash << ','
            << seed << ',' << bootstrap_n << '\n';
    return out.str();
}

std::string EvalReport::to_table() const {
    std::ostringstream out;
    out << std::fixed << std::setprecision(4);
    out << std::left << std::setw(16) << "method" << std::right << std::setw(10) << "FID"
        << std::setw(18) << "ID sim (±std)" << std::setw(12) << "ID loss" << std::setw(12)
        << "expr loss" << std::setw(12) << "percep" << std::setw(8) << "n" << '\n';
    for (const ReportRow& r : rows) {
        std::ostringstream sim;
        sim << std::fixed << std::setprecision(3) << r.id_sim_mean << "±" << r.id_sim_std;
        out << std::left << std::setw(16) << r.name << std::right << std::setw(10) << r.fid_value
            << std::setw(18) << sim.str() << std::setw(12) << r.identity_loss_mean << std::setw(12)
            << r.expression_loss_mean << std::setw(12) << r.perceptual_proxy_mean << std::setw(8)
            << r.sample_count << '\n';
    }
    out << "config " << config_hash << ", seed " << seed << ", bootstrap n=" << bootstrap_n << '\n';
    out << "FID uses an in-house frozen feature backbone; values are not comparable to\n"
           "published FID numbers. 'percep' is feature-space mean L2 over the same\n"
           "backbone (lower = more similar), not LPIPS.\n";
    return out.str();
}

} // namespace metrics
} // namespace deid
