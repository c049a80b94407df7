#include "deid/config.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace deid {
namespace config {

namespace {

json to_json(const RunConfigFile& c) {
    const auto& t = c.train;
    const auto& n = t.net;
    const auto& w = t.weights;
    json j;
    j["schema_version"] = kSchemaVersion;
    j["resolution"] = n.resolution;
    j["d_id"] = n.d_id;
    j["d_expr"] = n.d_expr;
    j["d_w"] = n.d_w;
    j["mlp_hidden"] = n.mlp_hidden;
    j["base_channels"] = n.base_channels;
    j["gen_channels"] = n.gen_channels;
    j["net_seed"] = n.seed;
    j["lambda1"] = w.lambda1;
    j["lambda2"] = w.lambda2;
    j["lambda3"] = w.lambda3;
    j["lambda4"] = w.lambda4;
    j["lambda5"] = w.lambda5;
    j["gamma"] = w.gamma;
    j["alpha"] = w.alpha;
    j["delta"] = w.delta;
    j["batch_size"] = t.batch_size;
    j["lr_stage0"] = t.lr_stage0;
    j["lr_stage12"] = t.lr_stage12;
    j["steps_en_id"] = t.steps_en_id;
    j["steps_en_lnd"] = t.steps_en_lnd;
    j["steps_gan"] = t.steps_gan;
    j["steps_stage1"] = t.steps_stage1;
    j["steps_stage2"] = t.steps_stage2;
    j["alternation_f"] = t.alternation_f;
    j["r1_interval"] = t.r1_interval;
    j["corpus_count"] = t.corpus_count;
    j["sample_count"] = t.sample_count;
    j["msssim_scales"] = t.msssim_scales;
    j["fid_probe_count"] = t.fid_probe_count;
    j["fid_gate_ratio"] = t.fid_gate_ratio;
    j["fgsm_eps"] = t.fgsm_eps;
    j["out_root"] = t.out_root;
    j["seed"] = t.seed;
    j["eval_pairs"] = c.eval_pairs;
    j["bootstrap_n"] = c.bootstrap_n;
    return j;
}

template <typename T>
void take(const json& j, const char* key, T& into) {
    if (j.contains(key)) into = j.at(key).get<T>();
}

} // namespace

std::string RunConfigFile::resolved_dump() const {
    // nlohmann objects already iterate in sorted key order
    return to_json(*this).dump(2) + "\n";
}

std::string RunConfigFile::hash() const {
    std::string s = resolved_dump();
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char out[17];
    std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
    return out;
}

RunConfigFile from_parsed(const json& j) {
    if (!j.is_object()) throw std::invalid_argument("config: expected a JSON object");

    RunConfigFile c;
    std::set<std::string> known;
    json defaults = to_json(c);
    for (auto& [k, v] : defaults.items()) {
        (void)v;
        known.insert(k);
    }
    for (auto& [k, v] : j.items()) {
        (void)v;
        if (!known.count(k)) throw std::invalid_argument("config: unknown key '" + k + "'");
    }
    if (j.contains("schema_version") && j.at("schema_version").get<int>() != kSchemaVersion)
        throw std::invalid_argument("config: unsupported schema_version");

    auto& t = c.train;
    take(j, "resolution", t.net.resolution);
    take(j, "d_id", t.net.d_id);
    take(j, "d_expr", t.net.d_expr);
    take(j, "d_w", t.net.d_w);
    take(j, "mlp_hidden", t.net.mlp_hidden);
    take(j, "base_channels", t.net.base_channels);
    take(j, "gen_channels", t.net.gen_channels);
    take(j, "net_seed", t.net.seed);
    take(j, "lambda1", t.weights.lambda1);
    take(j, "lambda2", t.weights.lambda2);
    take(j, "lambda3", t.weights.lambda3);
    take(j, "lambda4", t.weights.lambda4);
    take(j, "lambda5", t.weights.lambda5);
    take(j, "gamma", t.weights.gamma);
    take(j, "alpha", t.weights.alpha);
    take(j, "delta", t.weights.delta);
    take(j, "batch_size", t.batch_size);
    take(j, "lr_stage0", t.lr_stage0);
    take(j, "lr_stage12", t.lr_stage12);
    take(j, "steps_en_id", t.steps_en_id);
    take(j, "steps_en_lnd", t.steps_en_lnd);
    take(j, "steps_gan", t.steps_gan);
    take(j, "steps_stage1", t.steps_stage1);
    take(j, "steps_stage2", t.steps_stage2);
    take(j, "alternation_f", t.alternation_f);
    take(j, "r1_interval", t.r1_interval);
    take(j, "corpus_count", t.corpus_count);
    take(j, "sample_count", t.sample_count);
    take(j, "msssim_scales", t.msssim_scales);
    take(j, "fid_probe_count", t.fid_probe_count);
    take(j, "fid_gate_ratio", t.fid_gate_ratio);
    take(j, "fgsm_eps", t.fgsm_eps);
    take(j, "out_root", t.out_root);
    take(j, "seed", t.seed);
    take(j, "eval_pairs", c.eval_pairs);
    take(j, "bootstrap_n", c.bootstrap_n);

    t.validate();
    if (c.eval_pairs == 0 || c.bootstrap_n == 0)
        throw std::invalid_argument("config: eval settings must be positive");
    return c;
}

RunConfigFile RunConfigFile::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(std::string("config: parse error: ") + e.what());
    }
    return from_parsed(j);
}

RunConfigFile RunConfigFile::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot read " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return from_json_text(text);
}

void RunConfigFile::save_resolved(const std::string& path) const {
    fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
    std::ofstream f(path);
    if (!f) throw std::runtime_error("config: cannot write " + path);
    f << resolved_dump();
}

} // namespace config
} // namespace deid
