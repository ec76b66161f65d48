#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "skipt/graph.hpp"
#include "skipt/rng.hpp"
#include "skipt/tokenizer.hpp"

namespace skipt {

// Dual-encoder geometry. The vision and text towers share one transformer
// structure (same layer count, width, heads); only their front ends differ.
struct EncoderConfig {
    int n_layers = 12;
    int d_model = 64;
    int n_heads = 4;
    int d_ff = 128;
    int d_proj = 32;
    int image_grid = 16;
    int patch = 4;
    int channels = 3;
    int vocab = 64;
    int max_text_len = 8;

    int patches_per_side() const { return image_grid / patch; }
    int vision_positions() const { return patches_per_side() * patches_per_side() + 1; }
    int patch_dim() const { return patch * patch * channels; }

    bool operator==(const EncoderConfig&) const = default;
};

inline void validate_config(const EncoderConfig& c) {
    if (c.n_layers < 2) throw std::invalid_argument("config: n_layers must be >= 2");
    if (c.d_model % c.n_heads != 0)
        throw std::invalid_argument("config: d_model must be divisible by n_heads");
    if (c.image_grid % c.patch != 0)
        throw std::invalid_argument("config: image_grid must be divisible by patch");
    if (c.vocab < kTokenAlphabetSize)
        throw std::invalid_argument("config: vocab smaller than the tokenizer alphabet");
    if (c.max_text_len < 2) throw std::invalid_argument("config: max_text_len must be >= 2");
}

enum class Side { kVision, kText };

inline const char* side_name(Side s) { return s == Side::kVision ? "vision" : "text"; }

// Per-position features at a given depth. Depth 0 is the embedding output
// (before layer 1); depth N is the last layer's output (before projection).
struct LayerActivations {
    int depth = 0;
    Array values;
};

struct ModelState {
    EncoderConfig config;
    ParamStore params;
};

// ---------------------------------------------------------------------------
// parameter naming

inline std::string layer_prefix(Side side, int layer) {
    return std::string(side_name(side)) + ".layer." + std::to_string(layer);
}

inline std::vector<std::string> layer_param_names(Side side, int layer) {
    std::string p = layer_prefix(side, layer);
    return {p + ".ln1.g",   p + ".ln1.b",   p + ".attn.wq", p + ".attn.bq", p + ".attn.wk",
            p + ".attn.wv", p + ".attn.bv", p + ".attn.wo", p + ".attn.bo", p + ".ln2.g",
            p + ".ln2.b",   p + ".mlp.w1",  p + ".mlp.b1",  p + ".mlp.w2",  p + ".mlp.b2"};
}

// -1 when the name is not a transformer-layer parameter
inline int layer_index_of(const std::string& name) {
    auto parse = [&](const std::string& prefix) -> int {
        if (name.rfind(prefix, 0) != 0) return -1;
        std::size_t start = prefix.size();
        std::size_t dot = name.find('.', start);
        if (dot == std::string::npos) return -1;
        return std::stoi(name.substr(start, dot - start));
    };
    int v = parse("vision.layer.");
    return v >= 0 ? v : parse("text.layer.");
}

inline bool is_embedding_param(const std::string& name) {
    return name.rfind("vision.patch_embed.", 0) == 0 || name == "vision.cls_token" ||
           name == "vision.pos_emb" || name == "text.token_emb" || name == "text.pos_emb";
}

// Trainable set when tuning with depth omega cached: layers omega+1..N plus
// both projection heads and the temperature. The embedding front ends stay
// frozen in every configuration so that full fine-tuning is exactly the
// omega = 0 case.
inline std::set<std::string> deep_trainable_names(const ModelState& m, int omega) {
    std::set<std::string> out;
    for (const std::string& name : m.params.names()) {
        if (is_embedding_param(name)) continue;
        int l = layer_index_of(name);
        if (l >= 0 && l <= omega) continue;
        out.insert(name);
    }
    return out;
}

// Parameters that determine the depth-omega activations: the embedding front
// ends plus layers 1..omega. Their hash is the cache provenance.
inline std::vector<std::string> shallow_param_names(const ModelState& m, int omega) {
    std::vector<std::string> out;
    for (const std::string& name : m.params.names()) {
        int l = layer_index_of(name);
        if (is_embedding_param(name) || (l >= 1 && l <= omega)) out.push_back(name);
    }
    return out;
}

// ---------------------------------------------------------------------------
// initialization

inline Array init_xavier(Rng rng, std::size_t fan_in, std::size_t fan_out) {
    double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Array w = Array::zeros({fan_in, fan_out});
    for (double& v : w.data) v = rng.uniform(-limit, limit);
    return w;
}

inline Array init_normal(Rng rng, Shape shape, double stddev) {
    Array w = Array::zeros(std::move(shape));
    for (double& v : w.data) v = stddev * rng.normal();
    return w;
}

inline ModelState init_model(const EncoderConfig& config, std::uint64_t seed) {
    validate_config(config);
    ModelState m;
    m.config = config;
    Rng init = Rng(seed).stream("init");
    std::size_t d = static_cast<std::size_t>(config.d_model);
    std::size_t dff = static_cast<std::size_t>(config.d_ff);
    std::size_t dp = static_cast<std::size_t>(config.d_proj);

    // every parameter draws from its own named stream, so the values do not
    // depend on creation order
    auto xavier = [&](const std::string& name, std::size_t fi, std::size_t fo) {
        m.params.add(name, init_xavier(init.stream(name), fi, fo));
    };
    auto normal = [&](const std::string& name, Shape shape) {
        m.params.add(name, init_normal(init.stream(name), std::move(shape), 0.02));
    };
    auto zeros = [&](const std::string& name, Shape shape) {
        m.params.add(name, Array::zeros(std::move(shape)));
    };
    auto ones = [&](const std::string& name, Shape shape) {
        m.params.add(name, Array::full(std::move(shape), 1.0));
    };

    xavier("vision.patch_embed.w", static_cast<std::size_t>(config.patch_dim()), d);
    zeros("vision.patch_embed.b", {d});
    normal("vision.cls_token", {1, d});
    normal("vision.pos_emb", {static_cast<std::size_t>(config.vision_positions()), d});
    normal("text.token_emb", {static_cast<std::size_t>(config.vocab), d});
    normal("text.pos_emb", {static_cast<std::size_t>(config.max_text_len), d});

    for (Side side : {Side::kVision, Side::kText}) {
        for (int l = 1; l <= config.n_layers; ++l) {
            std::string p = layer_prefix(side, l);
            ones(p + ".ln1.g", {d});
            zeros(p + ".ln1.b", {d});
            xavier(p + ".attn.wq", d, d);
            zeros(p + ".attn.bq", {d});
            // no key bias: softmax scores are invariant to a per-row constant
            // shift, so a key bias would carry an identically-zero gradient
            xavier(p + ".attn.wk", d, d);
            xavier(p + ".attn.wv", d, d);
            zeros(p + ".attn.bv", {d});
            xavier(p + ".attn.wo", d, d);
            zeros(p + ".attn.bo", {d});
            ones(p + ".ln2.g", {d});
            zeros(p + ".ln2.b", {d});
            xavier(p + ".mlp.w1", d, dff);
            zeros(p + ".mlp.b1", {dff});
            xavier(p + ".mlp.w2", dff, d);
            zeros(p + ".mlp.b2", {d});
        }
        std::string head = std::string(side_name(side)) + ".head";
        ones(head + ".ln.g", {d});
        zeros(head + ".ln.b", {d});
        xavier(head + ".proj", d, dp);
    }

    m.params.add("temperature.log_tau", Array::scalar(std::log(0.07)));
    return m;
}

// ---------------------------------------------------------------------------
// graph builders

inline Array patches_from_image(const EncoderConfig& c, const Array& image) {
    Shape expect = {static_cast<std::size_t>(c.image_grid), static_cast<std::size_t>(c.image_grid),
                    static_cast<std::size_t>(c.channels)};
    if (image.shape != expect)
        throw std::invalid_argument("image shape " + shape_str(image.shape) + ", expected " +
                                    shape_str(expect));
    for (double v : image.data)
        if (v < 0.0 || v > 1.0)
            throw std::invalid_argument("image values must lie in [0,1]");

    std::size_t side = static_cast<std::size_t>(c.patches_per_side());
    std::size_t p = static_cast<std::size_t>(c.patch);
    std::size_t ch = static_cast<std::size_t>(c.channels);
    std::size_t grid = static_cast<std::size_t>(c.image_grid);
    Array out = Array::zeros({side * side, p * p * ch});
    for (std::size_t py = 0; py < side; ++py)
        for (std::size_t px = 0; px < side; ++px) {
            double* row = &out.data[(py * side + px) * out.cols()];
            std::size_t k = 0;
            for (std::size_t y = 0; y < p; ++y)
                for (std::size_t x = 0; x < p; ++x)
                    for (std::size_t cidx = 0; cidx < ch; ++cidx)
                        row[k++] = image.data[((py * p + y) * grid + (px * p + x)) * ch + cidx];
        }
    return out;
}

// patch embedding + class token + position embeddings -> depth-0 activations
inline NodeId embed_image_node(Graph& g, const ModelState& m, const Array& image,
                               const std::string& input_label = "image") {
    Graph::ScopeGuard scope(g, "vision.embed");
    NodeId patches = g.input(input_label, patches_from_image(m.config, image));
    NodeId proj = g.add_rowvec(g.matmul(patches, g.param("vision.patch_embed.w")),
                               g.param("vision.patch_embed.b"));
    NodeId seq = g.concat_rows({g.param("vision.cls_token"), proj});
    return g.add(seq, g.param("vision.pos_emb"));
}

// token + position embeddings -> depth-0 activations
inline NodeId embed_tokens_node(Graph& g, const ModelState& m, const TokenSequence& seq) {
    Graph::ScopeGuard scope(g, "text.embed");
    if (seq.ids.empty() || seq.ids.size() > static_cast<std::size_t>(m.config.max_text_len))
        throw std::invalid_argument("token sequence length " + std::to_string(seq.ids.size()) +
                                    " outside [1, " + std::to_string(m.config.max_text_len) + "]");
    for (std::int64_t id : seq.ids)
        if (id < 0 || id >= m.config.vocab)
            throw std::invalid_argument("token id " + std::to_string(id) + " outside vocab");
    NodeId tok = g.embed(g.param("text.token_emb"), seq.ids);
    NodeId pos = g.slice_rows(g.param("text.pos_emb"), 0, seq.ids.size());
    return g.add(tok, pos);
}

// one pre-norm transformer block
inline NodeId transformer_block_node(Graph& g, NodeId x, Side side, int layer,
                                     const EncoderConfig& c) {
    std::string p = layer_prefix(side, layer);
    int heads = c.n_heads;
    std::size_t dh = static_cast<std::size_t>(c.d_model / heads);

    NodeId h = g.layernorm(x, g.param(p + ".ln1.g"), g.param(p + ".ln1.b"));
    NodeId q = g.add_rowvec(g.matmul(h, g.param(p + ".attn.wq")), g.param(p + ".attn.bq"));
    NodeId k = g.matmul(h, g.param(p + ".attn.wk"));
    NodeId v = g.add_rowvec(g.matmul(h, g.param(p + ".attn.wv")), g.param(p + ".attn.bv"));

    std::vector<NodeId> head_outs;
    head_outs.reserve(heads);
    for (int i = 0; i < heads; ++i) {
        std::size_t c0 = static_cast<std::size_t>(i) * dh, c1 = c0 + dh;
        NodeId qi = g.slice_cols(q, c0, c1);
        NodeId ki = g.slice_cols(k, c0, c1);
        NodeId vi = g.slice_cols(v, c0, c1);
        NodeId scores = g.scale(g.matmul_nt(qi, ki), 1.0 / std::sqrt(static_cast<double>(dh)));
        head_outs.push_back(g.matmul(g.softmax(scores), vi));
    }
    NodeId attn = g.add_rowvec(g.matmul(g.concat_cols(head_outs), g.param(p + ".attn.wo")),
                               g.param(p + ".attn.bo"));
    NodeId x2 = g.add(x, attn);

    NodeId h2 = g.layernorm(x2, g.param(p + ".ln2.g"), g.param(p + ".ln2.b"));
    NodeId u = g.add_rowvec(g.matmul(h2, g.param(p + ".mlp.w1")), g.param(p + ".mlp.b1"));
    NodeId w = g.add_rowvec(g.matmul(g.gelu(u), g.param(p + ".mlp.w2")), g.param(p + ".mlp.b2"));
    return g.add(x2, w);
}

// layers from_depth+1 .. to_depth, each under its own scope
inline NodeId run_layers_node(Graph& g, NodeId acts, Side side, int from_depth, int to_depth,
                              const ModelState& m) {
    if (from_depth < 0 || to_depth < from_depth || to_depth > m.config.n_layers)
        throw std::invalid_argument("run_layers: invalid depth range " +
                                    std::to_string(from_depth) + ".." + std::to_string(to_depth));
    NodeId x = acts;
    for (int l = from_depth + 1; l <= to_depth; ++l) {
        Graph::ScopeGuard scope(g, layer_prefix(side, l));
        x = transformer_block_node(g, x, side, l, m.config);
    }
    return x;
}

// aggregation position -> final layernorm -> linear projection -> unit norm.
// Vision aggregates at the prepended class-token position, text at the
// terminal position.
inline NodeId project_node(Graph& g, NodeId acts, Side side, const ModelState& m,
                           std::size_t positions) {
    Graph::ScopeGuard scope(g, std::string(side_name(side)) + ".head");
    std::size_t pos = side == Side::kVision ? 0 : positions - 1;
    std::string head = std::string(side_name(side)) + ".head";
    NodeId row = g.reshape(g.slice_rows(acts, pos, pos + 1),
                           {static_cast<std::size_t>(m.config.d_model)});
    NodeId normed = g.layernorm(row, g.param(head + ".ln.g"), g.param(head + ".ln.b"));
    NodeId proj = g.reshape(g.matmul(normed, g.param(head + ".proj")),
                            {static_cast<std::size_t>(m.config.d_proj)});
    return g.l2_normalize(proj);
}

// ---------------------------------------------------------------------------
// value-level operations (single forward passes on a scratch graph)

inline LayerActivations embed_image(const ModelState& m, const Array& image) {
    Graph g(&m.params);
    NodeId out = embed_image_node(g, m, image);
    g.forward();
    return LayerActivations{0, g.value(out)};
}

inline LayerActivations embed_tokens(const ModelState& m, const TokenSequence& seq) {
    Graph g(&m.params);
    NodeId out = embed_tokens_node(g, m, seq);
    g.forward();
    return LayerActivations{0, g.value(out)};
}

inline LayerActivations run_layers(const ModelState& m, const LayerActivations& acts, Side side,
                                   int to_depth) {
    if (to_depth == acts.depth) return acts;  // empty range is the identity
    Graph g(&m.params);
    NodeId x = g.input("acts", acts.values);
    NodeId out = run_layers_node(g, x, side, acts.depth, to_depth, m);
    g.forward();
    return LayerActivations{to_depth, g.value(out)};
}

inline Array project(const ModelState& m, const LayerActivations& acts, Side side) {
    if (acts.depth != m.config.n_layers)
        throw std::invalid_argument("project: depth " + std::to_string(acts.depth) +
                                    ", expected " + std::to_string(m.config.n_layers));
    Graph g(&m.params);
    NodeId x = g.input("acts", acts.values);
    NodeId out = project_node(g, x, side, m, acts.values.rows());
    g.forward();
    return g.value(out);
}

// full tower: pixels or tokens -> unit-norm joint-space feature
inline Array encode_image(const ModelState& m, const Array& image) {
    return project(m, run_layers(m, embed_image(m, image), Side::kVision, m.config.n_layers),
                   Side::kVision);
}

inline Array encode_tokens(const ModelState& m, const TokenSequence& seq) {
    return project(m, run_layers(m, embed_tokens(m, seq), Side::kText, m.config.n_layers),
                   Side::kText);
}

}  // namespace skipt
