#pragma once

#include <map>
#include <vector>

#include "skipt/checkpoint.hpp"
#include "skipt/steps.hpp"

namespace skipt {

// Depth-omega feature store, built once with the model frozen and immutable
// afterwards. Holds full per-position activations (deep layers consume whole
// sequences, not pooled vectors): one vision entry per training sample, one
// text entry per class. Provenance ties it to the shallow parameters and the
// prompt template that produced it.
struct FeatureCache {
    int omega = 0;
    std::string provenance;  // shallow_hash of the source model at this omega
    std::string prompt_template;
    std::map<int, Array> vision;  // sample id -> activations
    std::map<int, Array> text;    // class id -> activations

    const Array& vision_entry(int sample_id) const {
        auto it = vision.find(sample_id);
        if (it == vision.end())
            throw std::out_of_range("cache: no vision entry for sample " +
                                    std::to_string(sample_id));
        return it->second;
    }
    const Array& text_entry(int class_id) const {
        auto it = text.find(class_id);
        if (it == text.end())
            throw std::out_of_range("cache: no text entry for class " + std::to_string(class_id));
        return it->second;
    }
};

inline FeatureCache build_cache(const ModelState& m,
                                const std::vector<std::pair<int, Array>>& samples,
                                const std::vector<TokenSequence>& class_seqs, int omega,
                                const std::string& prompt_template) {
    if (omega < 0 || omega >= m.config.n_layers)
        throw std::invalid_argument("build_cache: omega " + std::to_string(omega) +
                                    " outside [0, " + std::to_string(m.config.n_layers) + ")");
    FeatureCache cache;
    cache.omega = omega;
    cache.provenance = shallow_hash(m, omega);
    cache.prompt_template = prompt_template;
    for (const auto& [id, image] : samples) {
        if (cache.vision.count(id))
            throw std::invalid_argument("build_cache: duplicate sample id " + std::to_string(id));
        cache.vision.emplace(id, run_layers(m, embed_image(m, image), Side::kVision, omega).values);
    }
    for (std::size_t j = 0; j < class_seqs.size(); ++j)
        cache.text.emplace(static_cast<int>(j),
                           run_layers(m, embed_tokens(m, class_seqs[j]), Side::kText, omega).values);
    return cache;
}

inline void save_cache(const std::filesystem::path& path, const FeatureCache& cache) {
    Container c;
    json manifest = json::array();
    std::size_t offset = 0;
    auto emit = [&](const std::string& name, const Array& a) {
        manifest.push_back({{"name", name}, {"shape", a.shape}, {"offset", offset}});
        c.blob.insert(c.blob.end(), a.data.begin(), a.data.end());
        offset += a.size();
    };
    for (const auto& [id, a] : cache.vision) emit("vision." + std::to_string(id), a);
    for (const auto& [id, a] : cache.text) emit("text." + std::to_string(id), a);
    c.header = json{{"format_version", 1},
                    {"kind", "feature_cache"},
                    {"omega", cache.omega},
                    {"provenance", cache.provenance},
                    {"prompt_template", cache.prompt_template},
                    {"manifest", manifest}};
    write_container(path, c);
}

inline FeatureCache load_cache(const std::filesystem::path& path) {
    Container c = read_container(path);
    if (c.header.value("kind", "") != "feature_cache")
        throw std::runtime_error("'" + path.string() + "' is not a feature cache");
    FeatureCache cache;
    cache.omega = c.header.at("omega");
    cache.provenance = c.header.at("provenance");
    cache.prompt_template = c.header.at("prompt_template");
    for (const auto& item : c.header.at("manifest")) {
        std::string name = item.at("name");
        Shape shape = item.at("shape").get<Shape>();
        std::size_t offset = item.at("offset");
        std::size_t n = num_elements(shape);
        if (offset + n > c.blob.size())
            throw std::runtime_error("cache entry '" + name + "' overruns blob");
        Array a(shape, std::vector<double>(c.blob.begin() + static_cast<std::ptrdiff_t>(offset),
                                           c.blob.begin() + static_cast<std::ptrdiff_t>(offset + n)));
        if (name.rfind("vision.", 0) == 0)
            cache.vision.emplace(std::stoi(name.substr(7)), std::move(a));
        else if (name.rfind("text.", 0) == 0)
            cache.text.emplace(std::stoi(name.substr(5)), std::move(a));
        else
            throw std::runtime_error("cache entry '" + name + "' has an unknown prefix");
    }
    return cache;
}

inline void check_cache_provenance(const FeatureCache& cache, const ModelState& m) {
    std::string expected = shallow_hash(m, cache.omega);
    if (cache.provenance != expected)
        throw std::runtime_error(
            "cache provenance mismatch: cache was built from shallow state " + cache.provenance +
            ", model has " + expected);
}

// One tuning step fed from the cache: deep layers only, loss plus gradients
// over the layers above omega, the projection heads, and the temperature. The
// built graph holds no nodes from layers 1..omega (checkable via scopes).
inline StepResult cached_step(const ModelState& m, const FeatureCache& cache, int sample_id,
                              const std::vector<int>& class_subset, std::size_t label_pos) {
    check_cache_provenance(cache, m);
    ItmExample ex;
    ex.vision_acts = LayerActivations{cache.omega, cache.vision_entry(sample_id)};
    for (int cid : class_subset) {
        TextBranch b;
        b.class_id = cid;
        b.acts = LayerActivations{cache.omega, cache.text_entry(cid)};
        ex.classes.push_back(std::move(b));
    }
    ex.label_pos = label_pos;
    return itm_example_step(m, ex, deep_trainable_names(m, cache.omega));
}

// The oracle counterpart: the same example executed live from pixels/tokens
// with layers 1..omega frozen. Exactness tests compare this against
// cached_step.
inline StepResult frozen_shallow_step(const ModelState& m, const Array& image,
                                      const std::vector<TokenSequence>& class_seqs,
                                      const std::vector<int>& class_subset, std::size_t label_pos,
                                      int omega) {
    ItmExample ex;
    ex.image = image;
    for (int cid : class_subset) {
        TextBranch b;
        b.class_id = cid;
        b.tokens = class_seqs.at(static_cast<std::size_t>(cid));
        ex.classes.push_back(std::move(b));
    }
    ex.label_pos = label_pos;
    return itm_example_step(m, ex, deep_trainable_names(m, omega));
}

}  // namespace skipt
