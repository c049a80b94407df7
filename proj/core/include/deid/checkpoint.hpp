#pragma once

#include <map>
#include <string>
#include <vector>

#include "deid/nn.hpp"

namespace deid {
namespace checkpoint {

/// Raw tensor files: magic "DTSR", u32 ndim, u32 dims..., float32 LE payload.
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

struct Meta {
    std::map<std::string, std::string> fields; // stage, step, seed, config_hash, dims...
};

/// One directory per checkpoint: <name>.bin per parameter + meta.json.
void save(const std::string& dir, const std::vector<nn::NamedParam>& params, const Meta& meta);

/// Load into existing parameter tensors (shapes must match).
Meta load(const std::string& dir, std::vector<nn::NamedParam> params);

Meta load_meta(const std::string& dir);
bool exists(const std::string& dir);

/// Order-independent digest of every tensor file in the directory.
std::string digest(const std::string& dir);

} // namespace checkpoint
} // namespace deid
