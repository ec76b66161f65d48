#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "skipt/graph.hpp"
#include "skipt/rng.hpp"

namespace skipt {

struct GradCheckOptions {
    double step = 1e-5;
    // 0 checks every trainable scalar; otherwise a seeded sample of this many
    // coordinates per parameter (keeps the full-model check inside its budget)
    std::size_t max_coords_per_param = 0;
    std::uint64_t seed = 7;
};

// Central-difference check of every analytic gradient the graph produces.
// Returns max over checked scalars of |analytic - numeric| / max(|analytic|,
// |numeric|, 1e-8). Degenerate graphs (no trainable leaf on a path to the
// root) return 0.
inline double grad_check(Graph& g, NodeId root, ParamStore& params,
                         const GradCheckOptions& opt = {}) {
    if (opt.step <= 0.0) throw std::invalid_argument("grad_check: step must be positive");
    g.forward();
    GradResult res = g.backward(root);

    Rng rng(opt.seed);
    double worst = 0.0;
    for (auto& [name, grad] : res.grads) {
        Array& p = params.mutable_get(name);
        std::vector<std::size_t> coords;
        if (opt.max_coords_per_param == 0 || p.size() <= opt.max_coords_per_param) {
            coords.resize(p.size());
            for (std::size_t i = 0; i < p.size(); ++i) coords[i] = i;
        } else {
            Rng sub = rng.stream(name);
            std::set<std::size_t> picked;
            while (picked.size() < opt.max_coords_per_param)
                picked.insert(static_cast<std::size_t>(sub.integer(p.size())));
            coords.assign(picked.begin(), picked.end());
        }

        for (std::size_t c : coords) {
            double saved = p.data[c];
            p.data[c] = saved + opt.step;
            g.forward();
            double f_plus = g.value(root).data[0];
            p.data[c] = saved - opt.step;
            g.forward();
            double f_minus = g.value(root).data[0];
            p.data[c] = saved;

            double numeric = (f_plus - f_minus) / (2.0 * opt.step);
            double analytic = grad.data[c];
            double den = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            worst = std::max(worst, std::abs(analytic - numeric) / den);
        }
    }
    // leave the graph in a consistent state for the caller
    g.forward();
    return worst;
}

}  // namespace skipt
