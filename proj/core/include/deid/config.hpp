#pragma once

#include <string>

#include "deid/training.hpp"

namespace deid {
namespace config {

constexpr int kSchemaVersion = 1;

/// Full run configuration: training, corpus and evaluation settings in one
/// versioned JSON document. Unknown keys are rejected; missing keys take
/// documented defaults and are echoed back by resolved_dump().
struct RunConfigFile {
    training::TrainConfig train;
    std::size_t eval_pairs = 500;
    std::size_t bootstrap_n = 1000;

    /// Bit-stable sorted-key JSON of every resolved field.
    std::string resolved_dump() const;

    /// FNV-1a hash of resolved_dump().
    std::string hash() const;

    static RunConfigFile from_json_text(const std::string& text);
    static RunConfigFile load(const std::string& path);
    void save_resolved(const std::string& path) const;
};

} // namespace config
} // namespace deid
