#include "deid/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace deid {
namespace checkpoint {

namespace {
constexpr char kMagic[4] = {'D', 'T', 'S', 'R'};

void write_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<char*>(b), 4);
}

std::uint32_t read_u32(std::ifstream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return b[0] | (b[1] << 8) | (b[2] << 16) | (std::uint32_t(b[3]) << 24);
}

void write_f32(std::ofstream& out, float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    write_u32(out, u);
}

float read_f32(std::ifstream& in) {
    std::uint32_t u = read_u32(in);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}
} // namespace

void save_tensor(const std::string& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
    out.write(kMagic, 4);
    write_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) write_u32(out, static_cast<std::uint32_t>(d));
    for (std::size_t i = 0; i < t.size(); ++i) write_f32(out, static_cast<float>(t[i]));
}

Tensor load_tensor(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot read " + path);
    char magic[4];
    in.read(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    std::uint32_t ndim = read_u32(in);
    std::vector<std::size_t> shape(ndim);
    for (auto& d : shape) d = read_u32(in);
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = read_f32(in);
    if (!in) throw std::runtime_error("checkpoint: truncated tensor " + path);
    return t;
}

void save(const std::string& dir, const std::vector<nn::NamedParam>& params, const Meta& meta) {
    fs::create_directories(dir);
    json j;
    j["format"] = "deid-checkpoint-v1";
    for (const auto& [k, v] : meta.fields) j[k] = v;
    json tensors = json::array();
    for (const auto& p : params) {
        save_tensor((fs::path(dir) / (p.name + ".bin")).string(), p.param.value());
        tensors.push_back(p.name);
    }
    j["tensors"] = tensors;
    std::ofstream out(fs::path(dir) / "meta.json");
    out << j.dump(2) << "\n";
}

Meta load(const std::string& dir, std::vector<nn::NamedParam> params) {
    Meta meta = load_meta(dir);
    for (auto& p : params) {
        Tensor t = load_tensor((fs::path(dir) / (p.name + ".bin")).string());
        if (!t.same_shape(p.param.value()))
            throw std::runtime_error("checkpoint: shape mismatch for " + p.name + ": file " +
                                     t.shape_str() + " vs model " + p.param.value().shape_str());
        p.param.mutable_value() = std::move(t);
    }
    return meta;
}

Meta load_meta(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "meta.json");
    if (!in) throw std::runtime_error("checkpoint: missing meta.json in " + dir);
    json j = json::parse(in);
    Meta meta;
    for (auto& [k, v] : j.items())
        if (v.is_string()) meta.fields[k] = v.get<std::string>();
    return meta;
}

bool exists(const std::string& dir) { return fs::exists(fs::path(dir) / "meta.json"); }

std::string digest(const std::string& dir) {
    // FNV-1a over sorted (name, bytes)
    std::vector<std::pair<std::string, std::string>> files; // (name, path)
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".bin")
            files.emplace_back(e.path().filename().string(), e.path().string());
    std::sort(files.begin(), files.end());
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const char* data, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) {
            h ^= static_cast<unsigned char>(data[i]);
            h *= 1099511628211ull;
        }
    };
    for (const auto& [name, f] : files) {
        mix(name.data(), name.size());
        std::ifstream in(f, std::ios::binary);
        char buf[4096];
        while (in.read(buf, sizeof(buf)) || in.gcount() > 0) mix(buf, in.gcount());
    }
    char out[17];
    std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
    return out;
}

} // namespace checkpoint
} // namespace deid
