#pragma once

#include <optional>
#include <string>
#include <vector>

#include "deid/tensor.hpp"

namespace deid {
namespace facegen {

constexpr std::size_t kNumIdentityFactors = 7;
constexpr std::size_t kNumExpressionFactors = 7;
constexpr std::size_t kNumLandmarks = 52;

/// Ground-truth generative factors, every component in [-1,1].
/// identity: eye spacing, eye size, nose width, nose length, mouth width,
///           face aspect, skin tone.
/// expression: yaw, roll, mouth openness, brow raise, eye openness,
///             illumination angle, illumination strength.
struct FactorVector {
    std::vector<double> identity;   // size kNumIdentityFactors
    std::vector<double> expression; // size kNumExpressionFactors

    bool valid() const;
};

/// K x 2 normalized inner-face landmark coordinates in [0,1].
struct LandmarkSet {
    Tensor points; // [K,2], columns (x,y)
};

struct RenderResult {
    Tensor image; // [3,R,R] in [-1,1]
    LandmarkSet landmarks;
};

/// Inner-face bounding region every landmark must lie in.
struct BoundingBox {
    double x0, y0, x1, y1;
    bool contains(double x, double y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
};
BoundingBox inner_face_bounds();

/// Deterministic pure rasterizer; resolution must be 32, 64 or 128.
RenderResult render_face(const FactorVector& factors, std::size_t resolution);

/// Landmarks only (no rasterization) for fast ground-truth queries.
LandmarkSet compute_landmarks(const FactorVector& factors);

enum class SampleMode { Independent, PairedIdentity };

/// Seeded factor sampling. PairedIdentity yields pairs (2i, 2i+1) that share
/// the identity sub-vector.
std::vector<FactorVector> sample_factors(std::uint64_t seed, std::size_t n, SampleMode mode);

/// Identity bucket label in [0, 2^kNumIdentityFactors): sign pattern of the
/// identity factors. Used as the classification target for encoder pretraining.
std::size_t identity_bucket(const FactorVector& f);
constexpr std::size_t kNumIdentityBuckets = 1u << kNumIdentityFactors;

struct ManifestEntry {
    std::string path;
    std::optional<FactorVector> factors;
    std::optional<LandmarkSet> landmarks;
    std::string split; // train | val | test
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::uint64_t seed = 0;

    void save(const std::string& path) const;
    static DatasetManifest load(const std::string& path);
    std::vector<const ManifestEntry*> split(const std::string& tag) const;
};

struct CorpusConfig {
    std::string out_dir;
    std::size_t count = 10000;
    std::size_t resolution = 64;
    std::uint64_t seed = 1;
    double train_ratio = 0.8;
    double val_ratio = 0.1; // remainder is test
};

/// Render `count` faces with persisted factors/landmarks and a JSONL manifest
/// at <out_dir>/manifest.jsonl.
DatasetManifest build_corpus(const CorpusConfig& config);

struct IngestReport {
    std::size_t accepted = 0;
    std::size_t skipped = 0;
    std::vector<std::string> warnings;
};

/// Ingest an external directory of 8-bit images. Entries carry no factors.
DatasetManifest ingest_directory(const std::string& dir, const std::string& split_tag,
                                 std::size_t resolution, const std::string& out_dir,
                                 IngestReport* report = nullptr);

} // namespace facegen
} // namespace deid
