#pragma once

#include <chrono>
#include <fstream>
#include <functional>
#include <vector>

#include "skipt/steps.hpp"

namespace skipt {

// ---------------------------------------------------------------------------
// Feature Sensitivity: per-layer Euclidean distance between a layer's output
// features before and after tuning, positions flattened, averaged over the
// provided samples. A layer whose parameters (and everything upstream) are
// untouched scores exactly zero.

struct FSProfile {
    std::vector<double> vision;  // index l-1 holds layer l
    std::vector<double> text;
};

inline FSProfile feature_sensitivity(const ModelState& before, const ModelState& after,
                                     const std::vector<Array>& images,
                                     const std::vector<TokenSequence>& class_seqs) {
    if (!(before.config == after.config))
        throw std::invalid_argument("feature_sensitivity: mismatched configs");
    int n = before.config.n_layers;
    FSProfile fs;
    fs.vision.assign(static_cast<std::size_t>(n), 0.0);
    fs.text.assign(static_cast<std::size_t>(n), 0.0);

    for (const Array& img : images) {
        LayerActivations a = embed_image(before, img);
        LayerActivations b = embed_image(after, img);
        for (int l = 1; l <= n; ++l) {
            a = run_layers(before, a, Side::kVision, l);
            b = run_layers(after, b, Side::kVision, l);
            fs.vision[static_cast<std::size_t>(l - 1)] += euclidean_distance(a.values, b.values);
        }
    }
    for (const TokenSequence& seq : class_seqs) {
        LayerActivations a = embed_tokens(before, seq);
        LayerActivations b = embed_tokens(after, seq);
        for (int l = 1; l <= n; ++l) {
            a = run_layers(before, a, Side::kText, l);
            b = run_layers(after, b, Side::kText, l);
            fs.text[static_cast<std::size_t>(l - 1)] += euclidean_distance(a.values, b.values);
        }
    }
    if (!images.empty())
        for (double& v : fs.vision) v /= static_cast<double>(images.size());
    if (!class_seqs.empty())
        for (double& v : fs.text) v /= static_cast<double>(class_seqs.size());
    return fs;
}

// ---------------------------------------------------------------------------
// Gradient Dependence: Euclidean distance between the loss gradient at the
// depth-N vision feature with the full class set and with class c removed
// from the matching softmax. Removing the true class would leave the loss
// undefined, so that (and M == 1) are errors.

enum class GdRoute { kMask, kRecompute };

inline double gradient_dependence(const ModelState& m, const Array& image,
                                  const std::vector<TokenSequence>& class_seqs,
                                  std::size_t true_label, std::size_t removed,
                                  GdRoute route = GdRoute::kMask) {
    std::size_t n_classes = class_seqs.size();
    if (n_classes < 2)
        throw std::invalid_argument("gradient_dependence: needs at least two classes");
    if (removed >= n_classes || true_label >= n_classes)
        throw std::out_of_range("gradient_dependence: class index outside the class set");
    if (removed == true_label)
        throw std::invalid_argument(
            "gradient_dependence: removing the true class leaves the loss undefined");
    int n = m.config.n_layers;

    auto feature_grad_without = [&](bool drop) -> Array {
        // one full graph; when drop is set the removed class never enters
        Graph g(&m.params);
        NodeId x = embed_image_node(g, m, image);
        NodeId vision_top = run_layers_node(g, x, Side::kVision, 0, n, m);
        NodeId f = project_node(g, vision_top, Side::kVision, m,
                                static_cast<std::size_t>(m.config.vision_positions()));
        std::vector<NodeId> cs;
        std::size_t label = true_label;
        for (std::size_t j = 0; j < n_classes; ++j) {
            if (drop && j == removed) {
                if (j < true_label) label--;
                continue;
            }
            NodeId t = embed_tokens_node(g, m, class_seqs[j]);
            NodeId top = run_layers_node(g, t, Side::kText, 0, n, m);
            cs.push_back(g.cosine(f, project_node(g, top, Side::kText, m, class_seqs[j].ids.size())));
        }
        NodeId loss = itm_loss_node(g, itm_logits_node(g, g.stack_scalars(cs)), label);
        g.forward();
        g.backward(loss, {}, {vision_top});
        return g.grad(vision_top);
    };

    if (route == GdRoute::kRecompute) {
        Array full = feature_grad_without(false);
        Array masked = feature_grad_without(true);
        return euclidean_distance(full, masked);
    }

    // mask route: a single stored graph, two loss heads over the same cosines
    Graph g(&m.params);
    NodeId x = embed_image_node(g, m, image);
    NodeId vision_top = run_layers_node(g, x, Side::kVision, 0, n, m);
    NodeId f = project_node(g, vision_top, Side::kVision, m,
                            static_cast<std::size_t>(m.config.vision_positions()));
    std::vector<NodeId> cs;
    for (std::size_t j = 0; j < n_classes; ++j) {
        NodeId t = embed_tokens_node(g, m, class_seqs[j]);
        NodeId top = run_layers_node(g, t, Side::kText, 0, n, m);
        cs.push_back(g.cosine(f, project_node(g, top, Side::kText, m, class_seqs[j].ids.size())));
    }
    NodeId inv_tau = inv_tau_node(g);
    NodeId loss_full =
        g.cross_entropy_logits(g.scale_by(g.stack_scalars(cs), inv_tau), true_label);

    std::vector<NodeId> cs_masked;
    std::size_t label_masked = true_label;
    for (std::size_t j = 0; j < n_classes; ++j) {
        if (j == removed) {
            if (j < true_label) label_masked--;
            continue;
        }
        cs_masked.push_back(cs[j]);
    }
    NodeId loss_masked =
        g.cross_entropy_logits(g.scale_by(g.stack_scalars(cs_masked), inv_tau), label_masked);

    g.forward();
    g.backward(loss_full, {}, {vision_top});
    Array grad_full = g.grad(vision_top);
    g.backward(loss_masked, {}, {vision_top});
    Array grad_masked = g.grad(vision_top);
    return euclidean_distance(grad_full, grad_masked);
}

// ---------------------------------------------------------------------------
// analytic FGPF cost model: baseline N*(C_V + C_T*M) per image against the
// skip variant (N-omega)*(C_V + C_T*m). The one-time cache build is not part
// of the per-step cost and is reported separately by callers.

struct CostPrediction {
    double baseline = 0.0;
    double skip = 0.0;
    double ratio = 1.0;
};

inline CostPrediction predict_cost(int n_layers, int omega, int m_classes, double m_expected,
                                   double c_v, double c_t) {
    if (omega < 0 || omega >= n_layers)
        throw std::invalid_argument("predict_cost: omega outside [0, N)");
    if (m_expected <= 0.0 || m_expected > static_cast<double>(m_classes))
        throw std::invalid_argument("predict_cost: m outside (0, M]");
    if (c_v <= 0.0 || c_t <= 0.0) throw std::invalid_argument("predict_cost: costs must be positive");
    CostPrediction p;
    p.baseline = static_cast<double>(n_layers) * (c_v + c_t * static_cast<double>(m_classes));
    p.skip = static_cast<double>(n_layers - omega) * (c_v + c_t * m_expected);
    p.ratio = p.baseline / p.skip;
    return p;
}

// ---------------------------------------------------------------------------
// instrumented measurement of one step

struct CostCounters {
    Counters counters;
    std::size_t peak_live_elements = 0;
    double wall_seconds = 0.0;

    double total_macs() const { return counters.total(); }
    double vision_body_macs() const { return counters.scoped_total("vision.layer."); }
    double text_body_macs() const { return counters.scoped_total("text.layer."); }
    double body_macs() const { return vision_body_macs() + text_body_macs(); }
};

inline CostCounters measure_step(const std::function<StepResult()>& step) {
    auto t0 = std::chrono::steady_clock::now();
    StepResult r = step();
    auto t1 = std::chrono::steady_clock::now();
    CostCounters c;
    c.counters = r.counters;
    c.peak_live_elements = r.live_elements;
    c.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
    return c;
}

// Per-layer costs measured from one instrumented full-depth step (forward +
// backward). C_V is the per-layer vision cost; C_T per layer per class.
inline std::pair<double, double> calibrate_layer_costs(const ModelState& m, const Array& image,
                                                       const std::vector<TokenSequence>& class_seqs) {
    std::vector<int> all;
    for (std::size_t j = 0; j < class_seqs.size(); ++j) all.push_back(static_cast<int>(j));
    StepResult r = frozen_shallow_step(m, image, class_seqs, all, 0, 0);
    double n = static_cast<double>(m.config.n_layers);
    double c_v = r.counters.scoped_total("vision.layer.") / n;
    double c_t =
        r.counters.scoped_total("text.layer.") / (n * static_cast<double>(class_seqs.size()));
    return {c_v, c_t};
}

// ---------------------------------------------------------------------------
// CSV exports

inline void write_fs_csv(const std::filesystem::path& path, const FSProfile& fs) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
    f << "side,layer,fs\n";
    for (std::size_t l = 0; l < fs.vision.size(); ++l)
        f << "vision," << l + 1 << "," << fs.vision[l] << "\n";
    for (std::size_t l = 0; l < fs.text.size(); ++l)
        f << "text," << l + 1 << "," << fs.text[l] << "\n";
}

struct GdRecord {
    int sample = 0;
    int class_id = 0;
    double gd = 0.0;
};

inline void write_gd_csv(const std::filesystem::path& path, const std::vector<GdRecord>& rows) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
    f << "sample,class,gd\n";
    for (const GdRecord& r : rows) f << r.sample << "," << r.class_id << "," << r.gd << "\n";
}

struct CostRecord {
    std::string config;
    double predicted = 0.0;
    double measured = 0.0;
};

inline void write_cost_csv(const std::filesystem::path& path, const std::vector<CostRecord>& rows) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
    f << "config,predicted,measured\n";
    for (const CostRecord& r : rows) f << r.config << "," << r.predicted << "," << r.measured << "\n";
}

}  // namespace skipt
