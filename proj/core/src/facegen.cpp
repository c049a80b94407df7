#include "deid/facegen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "json.hpp"

#include "deid/image_io.hpp"
#include "deid/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace deid {
namespace facegen {

bool FactorVector::valid() const {
    if (identity.size() != kNumIdentityFactors || expression.size() != kNumExpressionFactors)
        return false;
    auto ok = [](const std::vector<double>& v) {
        return std::all_of(v.begin(), v.end(),
                           [](double x) { return std::isfinite(x) && x >= -1.0 && x <= 1.0; });
    };
    return ok(identity) && ok(expression);
}

namespace {

struct Vec2 {
    double x, y;
};

/// All geometry derived from the factors, in canvas units ([0,1] square,
/// y down).
struct FaceGeometry {
    double cx = 0.5, cy = 0.52;
    double rx, ry;          // face half-axes
    double rx_head;         // yaw-compressed head half-axis
    double roll;            // radians
    double yaw_shift;       // horizontal feature displacement
    double yaw_scale;       // horizontal feature compression
    double eye_dx, eye_y, eye_rx, eye_ry;
    double brow_y, brow_arch, brow_half;
    double nose_y0, nose_y1, nose_w;
    double mouth_y, mouth_w, gap, lip_th;
    double skin[3];
    double light_angle, light_strength;

    explicit FaceGeometry(const FactorVector& f) {
        const auto& id = f.identity;
        const auto& ex = f.expression;
        auto u01 = [](double v) { return 0.5 * (v + 1.0); };

        rx = 0.30 * (1.0 + 0.10 * id[5]);
        ry = 0.38 * (1.0 - 0.08 * id[5]);
        roll = ex[1] * 0.2618; // +-15 degrees
        double yaw = ex[0];
        yaw_scale = 1.0 - 0.15 * std::fabs(yaw);
        yaw_shift = 0.10 * yaw * rx;
        rx_head = rx * (1.0 - 0.12 * std::fabs(yaw));

        eye_dx = rx * (0.42 + 0.12 * id[0]);
        eye_y = -ry * 0.18;
        eye_rx = rx * (0.16 + 0.05 * id[1]);
        eye_ry = eye_rx * (0.25 + 0.45 * u01(ex[4]));

        brow_y = eye_y - ry * (0.14 + 0.10 * u01(ex[3]));
        brow_arch = ry * 0.04;
        brow_half = eye_rx * 1.3;

        nose_y0 = -0.02 * ry;
        nose_y1 = nose_y0 + ry * (0.22 + 0.08 * id[3]);
        nose_w = rx * (0.14 + 0.06 * id[2]);

        mouth_y = ry * 0.45;
        mouth_w = rx * (0.34 + 0.12 * id[4]);
        gap = ry * (0.01 + 0.08 * u01(ex[2]));
        lip_th = ry * 0.045;

        double t = u01(id[6]);
        const double light_skin[3] = {0.98, 0.86, 0.74};
        const double dark_skin[3] = {0.45, 0.30, 0.22};
        for (int c = 0; c < 3; ++c) skin[c] = light_skin[c] + t * (dark_skin[c] - light_skin[c]);

        light_angle = ex[5] * 1.0471976; // +-60 degrees from vertical
        light_strength = u01(ex[6]);
    }

    /// feature-space offset -> canvas point (yaw then roll then translate)
    Vec2 to_canvas(double dx, double dy) const {
        double x = dx * yaw_scale + yaw_shift;
        double y = dy;
        double c = std::cos(roll), s = std::sin(roll);
        return {cx + c * x - s * y, cy + s * x + c * y};
    }

    /// canvas point -> face-local offset (roll removed, yaw kept for head)
    Vec2 to_local(double px, double py) const {
        double x = px - cx, y = py - cy;
        double c = std::cos(-roll), s = std::sin(-roll);
        return {c * x - s * y, s * x + c * y};
    }

    /// face-local -> feature space (yaw removed)
    Vec2 to_feature(const Vec2& p) const {
        return {(p.x - yaw_shift) / yaw_scale, p.y};
    }

    double shade(const Vec2& p) const {
        double s = 1.0 + 0.30 * light_strength *
                             (std::sin(light_angle) * (p.x / rx) - std::cos(light_angle) * (p.y / ry));
        return std::clamp(s, 0.55, 1.45);
    }
};

constexpr double kPi = 3.14159265358979323846;

// landmark layout: 8+8 eyes, 5+5 brows, 9 nose, 12 outer lip, 5 inner lip = 52
void append_eye(const FaceGeometry& g, double side, std::vector<Vec2>& pts) {
    for (int k = 0; k < 8; ++k) {
        double a = 2.0 * kPi * k / 8.0;
        pts.push_back(g.to_canvas(side * g.eye_dx + side * g.eye_rx * std::cos(a),
                                  g.eye_y + g.eye_ry * std::sin(a)));
    }
}

void append_brow(const FaceGeometry& g, double side, std::vector<Vec2>& pts) {
    for (int k = 0; k < 5; ++k) {
        double t = k / 4.0;
        double u = 2.0 * t - 1.0;
        double dx = side * (g.eye_dx + u * g.brow_half);
        double dy = g.brow_y - g.brow_arch * (1.0 - u * u);
        pts.push_back(g.to_canvas(dx, dy));
    }
}

std::vector<Vec2> landmark_points(const FaceGeometry& g) {
    std::vector<Vec2> pts;
    pts.reserve(kNumLandmarks);
    append_eye(g, -1.0, pts);
    append_eye(g, +1.0, pts);
    append_brow(g, -1.0, pts);
    append_brow(g, +1.0, pts);
    // nose bridge (4) + base (5)
    for (int k = 0; k < 4; ++k) {
        double t = k / 3.0;
        pts.push_back(g.to_canvas(0.0, g.nose_y0 + t * (g.nose_y1 - g.nose_y0)));
    }
    for (int k = 0; k < 5; ++k) {
        double u = k / 4.0 * 2.0 - 1.0;
        pts.push_back(g.to_canvas(u * g.nose_w, g.nose_y1));
    }
    // outer lip (12): ellipse (mouth_w, gap+lip_th) around mouth center
    for (int k = 0; k < 12; ++k) {
        double a = 2.0 * kPi * k / 12.0;
        pts.push_back(g.to_canvas(g.mouth_w * std::cos(a),
                                  g.mouth_y + (g.gap + g.lip_th) * std::sin(a)));
    }
    // inner lip line (5)
    for (int k = 0; k < 5; ++k) {
        double u = k / 4.0 * 2.0 - 1.0;
        pts.push_back(g.to_canvas(0.8 * g.mouth_w * u, g.mouth_y));
    }
    return pts;
}

double ell_q(double dx, double dy, double a, double b) {
    double u = dx / a, v = dy / b;
    return u * u + v * v;
}

double coverage(double q, double softness = 0.15) {
    return std::clamp((1.0 + softness - q) / (2.0 * softness), 0.0, 1.0);
}

void blend(double* dst, const double* src, double cov) {
    for (int c = 0; c < 3; ++c) dst[c] = dst[c] * (1.0 - cov) + src[c] * cov;
}

} // namespace

BoundingBox inner_face_bounds() {
    // generous box covering every feature at factor extremes
    return {0.08, 0.12, 0.92, 0.95};
}

LandmarkSet compute_landmarks(const FactorVector& factors) {
    FaceGeometry g(factors);
    auto pts = landmark_points(g);
    Tensor t({kNumLandmarks, 2});
    BoundingBox box = inner_face_bounds();
    for (std::size_t i = 0; i < pts.size(); ++i) {
        if (!box.contains(pts[i].x, pts[i].y))
            throw std::logic_error("landmark outside declared inner-face bounds");
        t.at2(i, 0) = pts[i].x;
        t.at2(i, 1) = pts[i].y;
    }
    return {std::move(t)};
}

RenderResult render_face(const FactorVector& factors, std::size_t resolution) {
    if (resolution != 32 && resolution != 64 && resolution != 128)
        throw std::invalid_argument("render_face: resolution must be 32, 64 or 128");
    if (!factors.valid())
        throw std::invalid_argument("render_face: factor out of range");

    FaceGeometry g(factors);
    Tensor img({3, resolution, resolution});
    const double R = static_cast<double>(resolution);

    const double bg[3] = {0.84, 0.85, 0.87};
    const double brow_col[3] = {0.25, 0.18, 0.12};
    const double sclera_col[3] = {0.95, 0.95, 0.94};
    const double iris_col[3] = {0.30, 0.22, 0.14};
    const double pupil_col[3] = {0.06, 0.05, 0.05};
    const double lip_col[3] = {0.72, 0.32, 0.32};
    const double mouth_col[3] = {0.22, 0.10, 0.10};

    for (std::size_t y = 0; y < resolution; ++y) {
        for (std::size_t x = 0; x < resolution; ++x) {
            double px = (x + 0.5) / R, py = (y + 0.5) / R;
            Vec2 p = g.to_local(px, py);
            Vec2 f = g.to_feature(p);
            double col[3] = {bg[0], bg[1], bg[2]};

            double sh = g.shade(p);
            double head_cov = coverage(ell_q(p.x, p.y, g.rx_head, g.ry), 0.04);
            double skin[3];
            for (int c = 0; c < 3; ++c) skin[c] = std::min(1.0, g.skin[c] * sh);
            blend(col, skin, head_cov);

            if (head_cov > 0.0) {
                // nose: bridge band + base ellipse, darker skin
                double nose_shade = 0.85;
                double nose[3];
                for (int c = 0; c < 3; ++c) nose[c] = skin[c] * nose_shade;
                if (f.y > g.nose_y0 && f.y < g.nose_y1) {
                    double half = 0.012 + 0.35 * g.nose_w *
                                              (f.y - g.nose_y0) / (g.nose_y1 - g.nose_y0);
                    double q = (f.x / half) * (f.x / half);
                    blend(col, nose, head_cov * coverage(q, 0.3));
                }
                double base_q = ell_q(f.x, f.y - g.nose_y1, g.nose_w, 0.035 * g.ry);
                blend(col, nose, head_cov * coverage(base_q, 0.3));

                // brows
                for (double side : {-1.0, 1.0}) {
                    double u = (f.x - side * g.eye_dx) / (side * g.brow_half);
                    if (u > -1.2 && u < 1.2) {
                        double uu = std::clamp(u, -1.0, 1.0);
                        double by = g.brow_y - g.brow_arch * (1.0 - uu * uu);
                        double d = (f.y - by) / (0.018 * (1.2 - 0.4 * std::fabs(uu)));
                        double q = d * d + std::max(0.0, std::fabs(u) - 1.0) * 8.0;
                        blend(col, brow_col, head_cov * coverage(q, 0.3));
                    }
                }

                // eyes: sclera, iris, pupil
                for (double side : {-1.0, 1.0}) {
                    double dx = f.x - side * g.eye_dx;
                    double dy = f.y - g.eye_y;
                    double sc = coverage(ell_q(dx, dy, g.eye_rx, g.eye_ry), 0.12);
                    blend(col, sclera_col, head_cov * sc);
                    double ir = coverage(ell_q(dx, dy, 0.45 * g.eye_rx, 0.9 * g.eye_ry), 0.15);
                    blend(col, iris_col, head_cov * sc * ir);
                    double pu = coverage(ell_q(dx, dy, 0.20 * g.eye_rx, 0.5 * g.eye_ry), 0.2);
                    blend(col, pupil_col, head_cov * sc * pu);
                }

                // mouth: lips then opening
                double lip_q = ell_q(f.x, f.y - g.mouth_y, g.mouth_w, g.gap + g.lip_th);
                blend(col, lip_col, head_cov * coverage(lip_q, 0.1));
                double open_q = ell_q(f.x, f.y - g.mouth_y, 0.85 * g.mouth_w, g.gap);
                blend(col, mouth_col, head_cov * coverage(open_q, 0.1));
            }

            for (std::size_t c = 0; c < 3; ++c)
                img.data()[(c * resolution + y) * resolution + x] =
                    std::clamp(col[c], 0.0, 1.0) * 2.0 - 1.0;
        }
    }

    return {std::move(img), compute_landmarks(factors)};
}

std::vector<FactorVector> sample_factors(std::uint64_t seed, std::size_t n, SampleMode mode) {
    if (n < 1) throw std::invalid_argument("sample_factors: n must be >= 1");
    Rng rng(seed);
    auto draw = [&rng](std::size_t k) {
        std::vector<double> v(k);
        for (auto& x : v) x = rng.uniform(-1.0, 1.0);
        return v;
    };

    std::vector<FactorVector> out;
    out.reserve(n);
    if (mode == SampleMode::Independent) {
        for (std::size_t i = 0; i < n; ++i)
            out.push_back({draw(kNumIdentityFactors), draw(kNumExpressionFactors)});
    } else {
        while (out.size() < n) {
            auto id = draw(kNumIdentityFactors);
            out.push_back({id, draw(kNumExpressionFactors)});
            if (out.size() < n) out.push_back({id, draw(kNumExpressionFactors)});
        }
    }
    return out;
}

std::size_t identity_bucket(const FactorVector& f) {
    std::size_t b = 0;
    for (std::size_t i = 0; i < kNumIdentityFactors; ++i)
        if (f.identity[i] >= 0.0) b |= (1u << i);
    return b;
}

namespace {

json factors_to_json(const FactorVector& f) {
    return json{{"identity", f.identity}, {"expression", f.expression}};
}

FactorVector factors_from_json(const json& j) {
    FactorVector f;
    f.identity = j.at("identity").get<std::vector<double>>();
    f.expression = j.at("expression").get<std::vector<double>>();
    return f;
}

json landmarks_to_json(const LandmarkSet& l) {
    std::vector<std::vector<double>> pts;
    for (std::size_t i = 0; i < l.points.dim(0); ++i)
        pts.push_back({l.points.at2(i, 0), l.points.at2(i, 1)});
    return json(pts);
}

LandmarkSet landmarks_from_json(const json& j) {
    auto pts = j.get<std::vector<std::vector<double>>>();
    Tensor t({pts.size(), 2});
    for (std::size_t i = 0; i < pts.size(); ++i) {
        t.at2(i, 0) = pts[i][0];
        t.at2(i, 1) = pts[i][1];
    }
    return {std::move(t)};
}

} // namespace

void DatasetManifest::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("manifest: cannot write " + path);
    out << json{{"type", "header"}, {"seed", seed}, {"count", entries.size()}}.dump() << "\n";
    for (const auto& e : entries) {
        json j{{"path", e.path}, {"split", e.split}};
        j["factors"] = e.factors ? factors_to_json(*e.factors) : json(nullptr);
        j["landmarks"] = e.landmarks ? landmarks_to_json(*e.landmarks) : json(nullptr);
        out << j.dump() << "\n";
    }
}

DatasetManifest DatasetManifest::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("manifest: cannot read " + path);
    DatasetManifest m;
    std::string line;
    bool first = true;
    std::set<std::string> paths;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        if (first) {
            m.seed = j.at("seed").get<std::uint64_t>();
            first = false;
            continue;
        }
        ManifestEntry e;
        e.path = j.at("path").get<std::string>();
        e.split = j.at("split").get<std::string>();
        if (!j.at("factors").is_null()) e.factors = factors_from_json(j["factors"]);
        if (!j.at("landmarks").is_null()) e.landmarks = landmarks_from_json(j["landmarks"]);
        if (!paths.insert(e.path).second)
            throw std::runtime_error("manifest: duplicate path " + e.path);
        m.entries.push_back(std::move(e));
    }
    return m;
}

std::vector<const ManifestEntry*> DatasetManifest::split(const std::string& tag) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
        if (e.split == tag) out.push_back(&e);
    return out;
}

DatasetManifest build_corpus(const CorpusConfig& config) {
    fs::create_directories(config.out_dir);
    auto factors = sample_factors(config.seed, config.count, SampleMode::Independent);

    std::size_t n_train = static_cast<std::size_t>(config.train_ratio * config.count);
    std::size_t n_val = static_cast<std::size_t>(config.val_ratio * config.count);

    DatasetManifest m;
    m.seed = config.seed;
    for (std::size_t i = 0; i < config.count; ++i) {
        auto res = render_face(factors[i], config.resolution);
        char name[32];
        std::snprintf(name, sizeof(name), "face_%06zu.png", i);
        std::string path = (fs::path(config.out_dir) / name).string();
        save_png(res.image, path);
        std::string split = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
        m.entries.push_back({path, factors[i], std::move(res.landmarks), split});
    }
    m.save((fs::path(config.out_dir) / "manifest.jsonl").string());
    return m;
}

DatasetManifest ingest_directory(const std::string& dir, const std::string& split_tag,
                                 std::size_t resolution, const std::string& out_dir,
                                 IngestReport* report) {
    if (!fs::is_directory(dir)) throw std::runtime_error("ingest: not a directory: " + dir);
    fs::create_directories(out_dir);
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file()) files.push_back(e.path().string());
    std::sort(files.begin(), files.end());

    IngestReport local;
    DatasetManifest m;
    std::size_t idx = 0;
    for (const auto& f : files) {
        Tensor img;
        try {
            img = load_and_fit(f, resolution);
        } catch (const std::exception& ex) {
            ++local.skipped;
            local.warnings.push_back(std::string("skipped ") + f + ": " + ex.what());
            continue;
        }
        char name[32];
        std::snprintf(name, sizeof(name), "ingest_%06zu.png", idx++);
        std::string path = (fs::path(out_dir) / name).string();
        save_png(img, path);
        m.entries.push_back({path, std::nullopt, std::nullopt, split_tag});
        ++local.accepted;
    }
    if (local.accepted == 0) throw std::runtime_error("ingest: no decodable images in " + dir);
    m.save((fs::path(out_dir) / "manifest.jsonl").string());
    if (report) *report = local;
    return m;
}

} // namespace facegen
} // namespace deid
