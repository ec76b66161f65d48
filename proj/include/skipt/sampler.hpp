#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "skipt/array.hpp"
#include "skipt/ops.hpp"
#include "skipt/rng.hpp"

namespace skipt {

// Per-image class ranking by cosine similarity, computed once from the
// pretrained features before tuning begins. order[0] is the closest class;
// rank_of is 1-based (rank 1 = closest). Ties break toward the smaller
// class id.
struct ClassRanking {
    std::vector<int> order;
    std::vector<int> rank_of;

    int num_classes() const { return static_cast<int>(order.size()); }
    int rank(int class_id) const { return rank_of.at(static_cast<std::size_t>(class_id)); }
};

inline ClassRanking rank_classes(const Array& image_feat, const std::vector<Array>& class_feats) {
    if (class_feats.empty()) throw std::invalid_argument("rank_classes: no classes");
    std::size_t m = class_feats.size();
    std::vector<double> cosines(m);
    for (std::size_t j = 0; j < m; ++j) cosines[j] = ops::cosine(image_feat, class_feats[j]);

    ClassRanking r;
    r.order.resize(m);
    std::iota(r.order.begin(), r.order.end(), 0);
    std::stable_sort(r.order.begin(), r.order.end(), [&](int a, int b) {
        double ca = cosines[static_cast<std::size_t>(a)], cb = cosines[static_cast<std::size_t>(b)];
        if (ca != cb) return ca > cb;
        return a < b;
    });
    r.rank_of.assign(m, 0);
    for (std::size_t i = 0; i < m; ++i)
        r.rank_of[static_cast<std::size_t>(r.order[i])] = static_cast<int>(i) + 1;
    return r;
}

enum class SamplerMode { kExponential, kTopK };

struct SamplerConfig {
    double ratio = 0.5;    // r: fraction of ranks kept deterministically
    double lambda = 0.3;   // exponential decay beyond the kept ranks
    SamplerMode mode = SamplerMode::kExponential;
};

inline void validate_sampler(const SamplerConfig& c) {
    if (c.ratio < 0.0 || c.ratio > 1.0)
        throw std::invalid_argument("sampler: ratio must lie in [0,1]");
    if (c.lambda <= 0.0) throw std::invalid_argument("sampler: lambda must be positive");
}

// p = 1 for ranks up to r*M (boundary inclusive), exp(-lambda*(rank - r*M))
// beyond.
inline double sample_probability(int rank, int num_classes, const SamplerConfig& c) {
    validate_sampler(c);
    if (rank < 1 || rank > num_classes)
        throw std::invalid_argument("sample_probability: rank " + std::to_string(rank) +
                                    " outside [1, " + std::to_string(num_classes) + "]");
    double threshold = c.ratio * static_cast<double>(num_classes);
    if (static_cast<double>(rank) <= threshold) return 1.0;
    return std::exp(-c.lambda * (static_cast<double>(rank) - threshold));
}

// Draw a class subset for one image: all ranks up to r*M, each deeper rank
// independently with its exponential probability, and the true class always.
// Draws consume the stream in rank order, so a fixed rng state reproduces the
// subset exactly. Returned ids are sorted ascending.
inline std::vector<int> sample_subset(const ClassRanking& ranking, const SamplerConfig& c,
                                      int true_class, Rng& rng) {
    validate_sampler(c);
    int m = ranking.num_classes();
    if (true_class < 0 || true_class >= m)
        throw std::invalid_argument("sample_subset: true class " + std::to_string(true_class) +
                                    " outside [0, " + std::to_string(m) + ")");
    double threshold = c.ratio * static_cast<double>(m);
    std::vector<int> subset;
    for (int i = 0; i < m; ++i) {
        int class_id = ranking.order[static_cast<std::size_t>(i)];
        int rank = i + 1;
        if (static_cast<double>(rank) <= threshold) {
            subset.push_back(class_id);
        } else {
            double p = std::exp(-c.lambda * (static_cast<double>(rank) - threshold));
            if (rng.uniform() < p) subset.push_back(class_id);
        }
    }
    if (std::find(subset.begin(), subset.end(), true_class) == subset.end())
        subset.push_back(true_class);
    std::sort(subset.begin(), subset.end());
    return subset;
}

// The deterministic alternative: top k ranks plus the true class. Selecting
// the same subset every epoch is exactly the behavior the exponential rule
// replaces; kept for the ablation.
inline std::vector<int> topk_subset(const ClassRanking& ranking, int k, int true_class) {
    int m = ranking.num_classes();
    if (k < 1 || k > m) throw std::invalid_argument("topk_subset: k outside [1, M]");
    std::vector<int> subset(ranking.order.begin(), ranking.order.begin() + k);
    if (std::find(subset.begin(), subset.end(), true_class) == subset.end())
        subset.push_back(true_class);
    std::sort(subset.begin(), subset.end());
    return subset;
}

// analytic expected subset size before force-inclusion:
// floor-free form r*M + sum_{ranks beyond} exp(-lambda * (rank - r*M))
inline double expected_subset_size(int num_classes, const SamplerConfig& c) {
    validate_sampler(c);
    double threshold = c.ratio * static_cast<double>(num_classes);
    double total = 0.0;
    for (int rank = 1; rank <= num_classes; ++rank)
        total += static_cast<double>(rank) <= threshold
                     ? 1.0
                     : std::exp(-c.lambda * (static_cast<double>(rank) - threshold));
    return total;
}

}  // namespace skipt
