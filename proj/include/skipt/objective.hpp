#pragma once

#include <cmath>
#include <vector>

#include "skipt/encoder.hpp"
#include "skipt/graph.hpp"

namespace skipt {

// One image against a class subset: cosine per listed class plus the
// temperature. The matching probability is softmax(cosines / tau) over the
// listed classes only; skipped classes simply do not appear in the
// denominator, since their text features are never computed.
struct SimilarityRow {
    std::vector<int> class_ids;
    Array cosines;
    double tau = 0.07;
};

inline double cosine_value(const Array& u, const Array& v) { return ops::cosine(u, v); }

inline Array itm_probabilities(const SimilarityRow& row) {
    if (row.class_ids.empty() || row.cosines.size() != row.class_ids.size())
        throw std::invalid_argument("itm_probabilities: empty or inconsistent class list");
    if (row.tau <= 0.0) throw std::invalid_argument("itm_probabilities: tau must be positive");
    return ops::softmax(ops::scale(row.cosines, 1.0 / row.tau));
}

inline double itm_loss_value(const Array& probs, std::size_t label_pos) {
    if (label_pos >= probs.size())
        throw std::out_of_range("itm_loss: label position " + std::to_string(label_pos) +
                                " outside the " + std::to_string(probs.size()) + "-class subset");
    return -std::log(probs.data[label_pos]);
}

// ---------------------------------------------------------------------------
// graph builders

// 1/tau as a node, from the stored log-temperature
inline NodeId inv_tau_node(Graph& g) {
    return g.exp(g.scale(g.param("temperature.log_tau"), -1.0));
}

inline NodeId cosine_row_node(Graph& g, NodeId image_feat, const std::vector<NodeId>& class_feats) {
    if (class_feats.empty()) throw std::invalid_argument("cosine_row: empty class list");
    std::vector<NodeId> cs;
    cs.reserve(class_feats.size());
    for (NodeId cf : class_feats) cs.push_back(g.cosine(image_feat, cf));
    return g.stack_scalars(cs);
}

inline NodeId itm_logits_node(Graph& g, NodeId cosines) {
    return g.scale_by(cosines, inv_tau_node(g));
}

inline NodeId itm_probabilities_node(Graph& g, NodeId logits) { return g.softmax(logits); }

// -log p(label) computed in log-sum-exp form
inline NodeId itm_loss_node(Graph& g, NodeId logits, std::size_t label_pos) {
    return g.cross_entropy_logits(logits, label_pos);
}

}  // namespace skipt
