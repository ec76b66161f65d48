#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "skipt/encoder.hpp"

namespace skipt {

using nlohmann::json;

// On-disk container shared by checkpoints and feature caches: a fixed magic,
// a length-prefixed JSON header (config + manifest of names/shapes/offsets),
// then the raw little-endian float64 blob. Round-trips are byte-exact.
inline constexpr char kContainerMagic[8] = {'S', 'K', 'P', 'T', 'B', 'I', 'N', '1'};

struct Container {
    json header;
    std::vector<double> blob;
};

inline std::uint64_t fnv1a64_bytes(const void* data, std::size_t len, std::uint64_t h = 14695981039346656037ull) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string hash_hex(std::uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[h & 0xf];
        h >>= 4;
    }
    return out;
}

inline void write_container(const std::filesystem::path& path, const Container& c) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
    std::string header = c.header.dump();
    std::uint64_t len = header.size();
    f.write(kContainerMagic, sizeof(kContainerMagic));
    f.write(reinterpret_cast<const char*>(&len), sizeof(len));
    f.write(header.data(), static_cast<std::streamsize>(header.size()));
    f.write(reinterpret_cast<const char*>(c.blob.data()),
            static_cast<std::streamsize>(c.blob.size() * sizeof(double)));
    if (!f) throw std::runtime_error("short write to '" + path.string() + "'");
}

inline Container read_container(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read '" + path.string() + "'");
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kContainerMagic, sizeof(magic)) != 0)
        throw std::runtime_error("'" + path.string() + "' is not a container file");
    std::uint64_t len = 0;
    f.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string header(len, '\0');
    f.read(header.data(), static_cast<std::streamsize>(len));
    if (!f) throw std::runtime_error("truncated header in '" + path.string() + "'");

    Container c;
    c.header = json::parse(header);
    std::vector<char> rest((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (rest.size() % sizeof(double) != 0)
        throw std::runtime_error("blob size not a multiple of 8 in '" + path.string() + "'");
    c.blob.resize(rest.size() / sizeof(double));
    std::memcpy(c.blob.data(), rest.data(), rest.size());
    return c;
}

inline std::string file_hash(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read '" + path.string() + "'");
    std::uint64_t h = 14695981039346656037ull;
    char buf[1 << 16];
    while (f.read(buf, sizeof(buf)) || f.gcount() > 0) {
        h = fnv1a64_bytes(buf, static_cast<std::size_t>(f.gcount()), h);
        if (!f) break;
    }
    return hash_hex(h);
}

// ---------------------------------------------------------------------------
// config <-> json

inline json config_to_json(const EncoderConfig& c) {
    return json{{"n_layers", c.n_layers},   {"d_model", c.d_model},
                {"n_heads", c.n_heads},     {"d_ff", c.d_ff},
                {"d_proj", c.d_proj},       {"image_grid", c.image_grid},
                {"patch", c.patch},         {"channels", c.channels},
                {"vocab", c.vocab},         {"max_text_len", c.max_text_len}};
}

inline EncoderConfig config_from_json(const json& j) {
    EncoderConfig c;
    c.n_layers = j.at("n_layers");
    c.d_model = j.at("d_model");
    c.n_heads = j.at("n_heads");
    c.d_ff = j.at("d_ff");
    c.d_proj = j.at("d_proj");
    c.image_grid = j.at("image_grid");
    c.patch = j.at("patch");
    c.channels = j.at("channels");
    c.vocab = j.at("vocab");
    c.max_text_len = j.at("max_text_len");
    return c;
}

// ---------------------------------------------------------------------------
// checkpoints

inline void save_checkpoint(const std::filesystem::path& path, const ModelState& m) {
    Container c;
    json manifest = json::array();
    std::size_t offset = 0;
    for (const auto& [name, entry] : m.params) {
        manifest.push_back({{"name", name}, {"shape", entry.value.shape}, {"offset", offset}});
        c.blob.insert(c.blob.end(), entry.value.data.begin(), entry.value.data.end());
        offset += entry.value.size();
    }
    c.header = json{{"format_version", 1},
                    {"kind", "checkpoint"},
                    {"config", config_to_json(m.config)},
                    {"manifest", manifest}};
    write_container(path, c);
}

inline ModelState load_checkpoint(const std::filesystem::path& path) {
    Container c = read_container(path);
    if (c.header.value("kind", "") != "checkpoint")
        throw std::runtime_error("'" + path.string() + "' is not a checkpoint");
    ModelState m;
    m.config = config_from_json(c.header.at("config"));
    validate_config(m.config);
    for (const auto& item : c.header.at("manifest")) {
        std::string name = item.at("name");
        Shape shape = item.at("shape").get<Shape>();
        std::size_t offset = item.at("offset");
        std::size_t n = num_elements(shape);
        if (offset + n > c.blob.size())
            throw std::runtime_error("manifest entry '" + name + "' overruns blob");
        m.params.add(name, Array(shape, std::vector<double>(c.blob.begin() + static_cast<std::ptrdiff_t>(offset),
                                                            c.blob.begin() + static_cast<std::ptrdiff_t>(offset + n))));
    }
    return m;
}

// Hash of the inputs that determine depth-omega activations: config, prompt
// handling aside, the embedding front ends and layers 1..omega. Stays stable
// while deep layers are tuned, so a cache built before tuning remains valid
// for the whole run.
inline std::string shallow_hash(const ModelState& m, int omega) {
    std::uint64_t h = fnv1a64_bytes(nullptr, 0);
    std::string cfg = config_to_json(m.config).dump();
    h = fnv1a64_bytes(cfg.data(), cfg.size(), h);
    for (const std::string& name : shallow_param_names(m, omega)) {
        h = fnv1a64_bytes(name.data(), name.size(), h);
        const Array& a = m.params.get(name);
        h = fnv1a64_bytes(a.data.data(), a.data.size() * sizeof(double), h);
    }
    return hash_hex(h);
}

}  // namespace skipt
