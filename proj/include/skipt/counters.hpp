#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>

namespace skipt {

struct ScopeCounters {
    double fwd_macs = 0.0;
    double bwd_macs = 0.0;
    double total() const { return fwd_macs + bwd_macs; }
};

// Multiply-add accounting, bucketed by the scope that was active when each
// graph node was created. Scopes like "vision.layer.7" let callers separate
// encoder-body cost from embedding/head/loss overhead. The counts follow a
// fixed per-op convention (see graph.hpp); ratios between steps are the
// meaningful quantity, not the absolute numbers.
struct Counters {
    std::map<std::string, ScopeCounters> by_scope;
    double fwd_macs = 0.0;
    double bwd_macs = 0.0;

    void add_fwd(const std::string& scope, double n) {
        by_scope[scope].fwd_macs += n;
        fwd_macs += n;
    }
    void add_bwd(const std::string& scope, double n) {
        by_scope[scope].bwd_macs += n;
        bwd_macs += n;
    }
    void merge(const Counters& other) {
        for (const auto& [k, v] : other.by_scope) {
            by_scope[k].fwd_macs += v.fwd_macs;
            by_scope[k].bwd_macs += v.bwd_macs;
        }
        fwd_macs += other.fwd_macs;
        bwd_macs += other.bwd_macs;
    }
    void reset() {
        by_scope.clear();
        fwd_macs = bwd_macs = 0.0;
    }

    double total() const { return fwd_macs + bwd_macs; }

    // summed fwd+bwd macs over scopes whose name starts with prefix
    double scoped_total(std::string_view prefix) const {
        double s = 0.0;
        for (const auto& [k, v] : by_scope)
            if (k.size() >= prefix.size() && std::string_view(k).substr(0, prefix.size()) == prefix)
                s += v.total();
        return s;
    }
};

}  // namespace skipt
