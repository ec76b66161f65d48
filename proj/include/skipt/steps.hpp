#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "skipt/encoder.hpp"
#include "skipt/objective.hpp"

namespace skipt {

// One image-text matching example: a vision input (raw pixels, or activations
// replayed from a depth-omega cache) matched against one text branch per
// class in its subset (token sequences, or cached activations). label_pos
// indexes the true class within the subset.
struct TextBranch {
    int class_id = 0;
    std::optional<TokenSequence> tokens;
    std::optional<LayerActivations> acts;
};

struct ItmExample {
    std::optional<Array> image;
    std::optional<LayerActivations> vision_acts;
    std::vector<TextBranch> classes;
    std::size_t label_pos = 0;
};

// Builds the per-example ITM loss into g. `tag` namespaces input labels so a
// batch of examples can share one graph.
inline NodeId build_itm_loss(Graph& g, const ModelState& m, const ItmExample& ex,
                             const std::string& tag = "ex") {
    if (ex.classes.empty()) throw std::invalid_argument("itm example: empty class subset");
    if (ex.label_pos >= ex.classes.size())
        throw std::out_of_range("itm example: label position " + std::to_string(ex.label_pos) +
                                " outside the " + std::to_string(ex.classes.size()) +
                                "-class subset");
    int n = m.config.n_layers;

    NodeId vision_top;
    std::size_t vision_positions;
    if (ex.image.has_value()) {
        NodeId x = embed_image_node(g, m, *ex.image, tag + ".image");
        vision_top = run_layers_node(g, x, Side::kVision, 0, n, m);
        vision_positions = static_cast<std::size_t>(m.config.vision_positions());
    } else if (ex.vision_acts.has_value()) {
        NodeId x = g.input(tag + ".vision_acts", ex.vision_acts->values);
        vision_top = run_layers_node(g, x, Side::kVision, ex.vision_acts->depth, n, m);
        vision_positions = ex.vision_acts->values.rows();
    } else {
        throw std::invalid_argument("itm example: no vision input");
    }
    NodeId image_feat = project_node(g, vision_top, Side::kVision, m, vision_positions);

    std::vector<NodeId> class_feats;
    class_feats.reserve(ex.classes.size());
    for (const TextBranch& branch : ex.classes) {
        NodeId t0;
        int depth;
        std::size_t positions;
        if (branch.tokens.has_value()) {
            t0 = embed_tokens_node(g, m, *branch.tokens);
            depth = 0;
            positions = branch.tokens->ids.size();
        } else if (branch.acts.has_value()) {
            t0 = g.input(tag + ".text" + std::to_string(branch.class_id), branch.acts->values);
            depth = branch.acts->depth;
            positions = branch.acts->values.rows();
        } else {
            throw std::invalid_argument("itm example: class " + std::to_string(branch.class_id) +
                                        " has no text input");
        }
        NodeId top = run_layers_node(g, t0, Side::kText, depth, n, m);
        class_feats.push_back(project_node(g, top, Side::kText, m, positions));
    }

    Graph::ScopeGuard scope(g, "loss");
    NodeId cosines = cosine_row_node(g, image_feat, class_feats);
    NodeId logits = itm_logits_node(g, cosines);
    return itm_loss_node(g, logits, ex.label_pos);
}

struct StepResult {
    double loss = 0.0;
    GradResult grads;
    Counters counters;
    std::size_t live_elements = 0;
    std::set<std::string> scopes;
};

// Single-example loss + gradients over the requested parameter names.
inline StepResult itm_example_step(const ModelState& m, const ItmExample& ex,
                                   const std::set<std::string>& wrt) {
    Graph g(&m.params);
    NodeId loss = build_itm_loss(g, m, ex);
    g.forward();
    StepResult r;
    r.grads = g.backward(loss, wrt);
    r.loss = g.value(loss).data[0];
    r.counters = g.counters();
    r.live_elements = g.live_elements();
    r.scopes = g.scopes();
    return r;
}

// Plain SGD: p -= lr * g on the provided names; the temperature is clamped to
// tau in [0.01, 1] (log space) after each update.
inline void sgd_update(ParamStore& params, const std::map<std::string, Array>& grads, double lr) {
    for (const auto& [name, g] : grads) {
        Array& p = params.mutable_get(name);
        if (p.shape != g.shape)
            throw std::logic_error("sgd: gradient shape mismatch for '" + name + "'");
        for (std::size_t i = 0; i < p.size(); ++i) p.data[i] -= lr * g.data[i];
    }
    if (params.has("temperature.log_tau") && grads.count("temperature.log_tau")) {
        double& lt = params.mutable_get("temperature.log_tau").data[0];
        lt = std::min(std::max(lt, std::log(0.01)), std::log(1.0));
    }
}

}  // namespace skipt
