#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "skipt/array.hpp"
#include "skipt/counters.hpp"
#include "skipt/ops.hpp"
#include "skipt/param_store.hpp"

namespace skipt {

enum class Op {
    kInput,
    kParam,
    kMatMul,
    kMatMulNT,
    kAdd,
    kAddRowVec,
    kScale,
    kScaleBy,
    kLayerNorm,
    kGelu,
    kExp,
    kLog,
    kSoftmax,
    kEmbed,
    kSliceRows,
    kSliceCols,
    kConcatRows,
    kConcatCols,
    kStackScalars,
    kReshape,
    kMean,
    kL2Normalize,
    kCosine,
    kPick,
    kCrossEntropyLogits,
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::kInput: return "input";
        case Op::kParam: return "param";
        case Op::kMatMul: return "matmul";
        case Op::kMatMulNT: return "matmul_nt";
        case Op::kAdd: return "add";
        case Op::kAddRowVec: return "add_rowvec";
        case Op::kScale: return "scale";
        case Op::kScaleBy: return "scale_by";
        case Op::kLayerNorm: return "layernorm";
        case Op::kGelu: return "gelu";
        case Op::kExp: return "exp";
        case Op::kLog: return "log";
        case Op::kSoftmax: return "softmax";
        case Op::kEmbed: return "embed";
        case Op::kSliceRows: return "slice_rows";
        case Op::kSliceCols: return "slice_cols";
        case Op::kConcatRows: return "concat_rows";
        case Op::kConcatCols: return "concat_cols";
        case Op::kStackScalars: return "stack_scalars";
        case Op::kReshape: return "reshape";
        case Op::kMean: return "mean";
        case Op::kL2Normalize: return "l2_normalize";
        case Op::kCosine: return "cosine";
        case Op::kPick: return "pick";
        case Op::kCrossEntropyLogits: return "cross_entropy_logits";
    }
    return "?";
}

struct NodeId {
    std::uint32_t index = 0;
};

struct Node {
    Op op;
    std::vector<std::uint32_t> inputs;
    std::vector<std::int64_t> iattrs;  // token ids, slice bounds, label index, target shape
    double dattr = 0.0;                // constant factor for kScale
    std::string label;                 // param name, input label, or op#index
    std::string scope;
    Shape out_shape;
    Array value;
    Array grad;
    Array aux;  // saved per-row stats for layernorm
    bool requires_grad = false;
    bool has_grad = false;
    bool evaluated = false;
};

// Gradients keyed by parameter name. `missing` lists requested names that had
// no leaf in the graph; they are flagged rather than returned as zero arrays.
struct GradResult {
    std::map<std::string, Array> grads;
    std::vector<std::string> missing;
};

// Reverse-mode tape. Nodes are appended in topological order by construction;
// shapes are inferred and validated at build time so shape errors carry the
// offending node's name. forward() fills values (checking finiteness at every
// node), backward() propagates from a scalar root into exactly the nodes that
// lie on a path from a requested leaf to that root.
class Graph {
public:
    explicit Graph(const ParamStore* params = nullptr) : params_(params) {}

    // ---- leaves ----

    NodeId input(const std::string& label, Array v) {
        if (!all_finite(v))
            throw std::invalid_argument("input '" + label + "': non-finite values");
        Node n;
        n.op = Op::kInput;
        n.label = label;
        n.out_shape = v.shape;
        n.value = std::move(v);
        n.evaluated = false;
        input_index_[label] = static_cast<std::uint32_t>(nodes_.size());
        return push(std::move(n));
    }

    NodeId param(const std::string& name) {
        auto it = param_index_.find(name);
        if (it != param_index_.end()) return NodeId{it->second};
        if (!params_ || !params_->has(name))
            throw std::out_of_range("graph: unresolvable parameter leaf '" + name + "'");
        Node n;
        n.op = Op::kParam;
        n.label = name;
        n.out_shape = params_->get(name).shape;
        param_index_[name] = static_cast<std::uint32_t>(nodes_.size());
        return push(std::move(n));
    }

    // ---- primitives ----

    NodeId matmul(NodeId a, NodeId b) {
        const Shape &sa = shape(a), &sb = shape(b);
        require(rank2(sa) && rank2(sb) && cols_of(sa) == rows_of(sb), "matmul", a, b);
        return push(make(Op::kMatMul, {a, b}, {rows_of(sa), cols_of(sb)}));
    }

    NodeId matmul_nt(NodeId a, NodeId b) {
        const Shape &sa = shape(a), &sb = shape(b);
        require(rank2(sa) && rank2(sb) && cols_of(sa) == cols_of(sb), "matmul_nt", a, b);
        return push(make(Op::kMatMulNT, {a, b}, {rows_of(sa), rows_of(sb)}));
    }

    NodeId add(NodeId a, NodeId b) {
        require(shape(a) == shape(b), "add", a, b);
        return push(make(Op::kAdd, {a, b}, shape(a)));
    }

    NodeId add_rowvec(NodeId a, NodeId v) {
        require(shape(v).size() == 1 && shape(v)[0] == cols_of(shape(a)), "add_rowvec", a, v);
        return push(make(Op::kAddRowVec, {a, v}, shape(a)));
    }

    NodeId scale(NodeId a, double c) {
        Node n = make(Op::kScale, {a}, shape(a));
        n.dattr = c;
        return push(std::move(n));
    }

    // multiply by the value of a scalar node
    NodeId scale_by(NodeId a, NodeId s) {
        require(num_elements(shape(s)) == 1, "scale_by", a, s);
        return push(make(Op::kScaleBy, {a, s}, shape(a)));
    }

    NodeId layernorm(NodeId x, NodeId gamma, NodeId beta) {
        require(shape(gamma).size() == 1 && shape(gamma)[0] == cols_of(shape(x)) &&
                    shape(beta) == shape(gamma),
                "layernorm", x, gamma);
        return push(make(Op::kLayerNorm, {x, gamma, beta}, shape(x)));
    }

    NodeId gelu(NodeId a) { return push(make(Op::kGelu, {a}, shape(a))); }
    NodeId exp(NodeId a) { return push(make(Op::kExp, {a}, shape(a))); }
    NodeId log(NodeId a) { return push(make(Op::kLog, {a}, shape(a))); }
    NodeId softmax(NodeId a) { return push(make(Op::kSoftmax, {a}, shape(a))); }

    NodeId embed(NodeId table, const std::vector<std::int64_t>& ids) {
        require(rank2(shape(table)) && !ids.empty(), "embed", table, table);
        Node n = make(Op::kEmbed, {table}, {ids.size(), cols_of(shape(table))});
        n.iattrs = ids;
        return push(std::move(n));
    }

    NodeId slice_rows(NodeId a, std::size_t r0, std::size_t r1) {
        require(r0 < r1 && r1 <= rows_of(shape(a)), "slice_rows", a, a);
        Node n = make(Op::kSliceRows, {a}, {r1 - r0, cols_of(shape(a))});
        n.iattrs = {static_cast<std::int64_t>(r0), static_cast<std::int64_t>(r1)};
        return push(std::move(n));
    }

    NodeId slice_cols(NodeId a, std::size_t c0, std::size_t c1) {
        require(c0 < c1 && c1 <= cols_of(shape(a)), "slice_cols", a, a);
        Node n = make(Op::kSliceCols, {a}, {rows_of(shape(a)), c1 - c0});
        n.iattrs = {static_cast<std::int64_t>(c0), static_cast<std::int64_t>(c1)};
        return push(std::move(n));
    }

    NodeId concat_rows(const std::vector<NodeId>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat_rows: empty list");
        std::size_t cols = cols_of(shape(parts[0])), rows = 0;
        std::vector<std::uint32_t> in;
        for (NodeId p : parts) {
            require(cols_of(shape(p)) == cols, "concat_rows", p, parts[0]);
            rows += rows_of(shape(p));
            in.push_back(p.index);
        }
        Node n = make(Op::kConcatRows, {}, {rows, cols});
        n.inputs = std::move(in);
        return push(std::move(n));
    }

    NodeId concat_cols(const std::vector<NodeId>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat_cols: empty list");
        std::size_t rows = rows_of(shape(parts[0])), cols = 0;
        std::vector<std::uint32_t> in;
        for (NodeId p : parts) {
            require(rows_of(shape(p)) == rows, "concat_cols", p, parts[0]);
            cols += cols_of(shape(p));
            in.push_back(p.index);
        }
        Node n = make(Op::kConcatCols, {}, {rows, cols});
        n.inputs = std::move(in);
        return push(std::move(n));
    }

    // scalars -> rank-1 vector
    NodeId stack_scalars(const std::vector<NodeId>& parts) {
        if (parts.empty()) throw std::invalid_argument("stack_scalars: empty list");
        std::vector<std::uint32_t> in;
        for (NodeId p : parts) {
            require(num_elements(shape(p)) == 1, "stack_scalars", p, p);
            in.push_back(p.index);
        }
        Node n = make(Op::kStackScalars, {}, {parts.size()});
        n.inputs = std::move(in);
        return push(std::move(n));
    }

    NodeId reshape(NodeId a, Shape target) {
        require(num_elements(target) == num_elements(shape(a)), "reshape", a, a);
        return push(make(Op::kReshape, {a}, std::move(target)));
    }

    NodeId mean(NodeId a) { return push(make(Op::kMean, {a}, {1})); }

    NodeId l2_normalize(NodeId a) {
        require(shape(a).size() == 1, "l2_normalize", a, a);
        return push(make(Op::kL2Normalize, {a}, shape(a)));
    }

    NodeId cosine(NodeId u, NodeId v) {
        require(shape(u).size() == 1 && shape(u) == shape(v), "cosine", u, v);
        return push(make(Op::kCosine, {u, v}, {1}));
    }

    NodeId pick(NodeId a, std::size_t idx) {
        require(shape(a).size() == 1 && idx < shape(a)[0], "pick", a, a);
        Node n = make(Op::kPick, {a}, {1});
        n.iattrs = {static_cast<std::int64_t>(idx)};
        return push(std::move(n));
    }

    NodeId cross_entropy_logits(NodeId logits, std::size_t label) {
        require(shape(logits).size() == 1 && label < shape(logits)[0], "cross_entropy_logits",
                logits, logits);
        Node n = make(Op::kCrossEntropyLogits, {logits}, {1});
        n.iattrs = {static_cast<std::int64_t>(label)};
        return push(std::move(n));
    }

    // ---- scopes & introspection ----

    void push_scope(const std::string& s) { scope_stack_.push_back(s); }
    void pop_scope() { scope_stack_.pop_back(); }

    struct ScopeGuard {
        Graph& g;
        ScopeGuard(Graph& graph, const std::string& s) : g(graph) { g.push_scope(s); }
        ~ScopeGuard() { g.pop_scope(); }
    };

    std::size_t node_count() const { return nodes_.size(); }
    const Node& node_at(std::size_t i) const { return nodes_[i]; }

    bool any_node_in_scope(std::string_view prefix) const {
        for (const Node& n : nodes_)
            if (n.scope.size() >= prefix.size() &&
                std::string_view(n.scope).substr(0, prefix.size()) == prefix)
                return true;
        return false;
    }

    std::set<std::string> scopes() const {
        std::set<std::string> s;
        for (const Node& n : nodes_) s.insert(n.scope);
        return s;
    }

    const Counters& counters() const { return counters_; }

    // total elements held live for the backward pass once forward completes
    std::size_t live_elements() const {
        std::size_t n = 0;
        for (const Node& node : nodes_) n += node.value.size() + node.aux.size();
        return n;
    }

    const std::vector<std::uint32_t>& backward_visited() const { return backward_visited_; }

    // ---- execution ----

    void set_input(const std::string& label, Array v) {
        auto it = input_index_.find(label);
        if (it == input_index_.end())
            throw std::out_of_range("graph: no input named '" + label + "'");
        Node& n = nodes_[it->second];
        if (v.shape != n.out_shape)
            throw std::invalid_argument("graph: input '" + label + "' expects " +
                                        shape_str(n.out_shape) + ", got " + shape_str(v.shape));
        n.value = std::move(v);
    }

    void forward() {
        counters_.reset();
        for (Node& n : nodes_) {
            eval_node(n);
            if (!all_finite(n.value))
                throw std::runtime_error("non-finite value in node '" + n.label + "' (" +
                                         op_name(n.op) + ")");
            n.evaluated = true;
        }
    }

    const Array& value(NodeId id) const {
        const Node& n = nodes_[id.index];
        if (!n.evaluated) throw std::logic_error("graph: node '" + n.label + "' not evaluated");
        return n.value;
    }

    bool node_has_grad(NodeId id) const { return nodes_[id.index].has_grad; }

    const Array& grad(NodeId id) const {
        const Node& n = nodes_[id.index];
        if (!n.has_grad)
            throw std::logic_error("graph: node '" + n.label + "' holds no gradient");
        return n.grad;
    }

    // Backward from a scalar root. wrt: parameter names (empty = every
    // trainable parameter referenced by the graph); tracked: extra nodes whose
    // gradients should be produced (used by the feature-gradient diagnostics).
    // Passing an empty wrt with non-empty tracked computes node gradients only.
    GradResult backward(NodeId root, const std::set<std::string>& wrt = {},
                        const std::vector<NodeId>& tracked = {}) {
        Node& r = nodes_[root.index];
        if (num_elements(r.out_shape) != 1)
            throw std::invalid_argument("backward: root '" + r.label + "' is not scalar");
        if (!r.evaluated) throw std::logic_error("backward: forward pass has not run");

        GradResult result;
        std::set<std::string> want = wrt;
        if (want.empty() && tracked.empty()) {
            for (const auto& [name, idx] : param_index_)
                if (params_->trainable(name)) want.insert(name);
        } else {
            for (const std::string& name : want) {
                if (!params_ || !params_->has(name))
                    throw std::out_of_range("backward: unknown parameter '" + name + "'");
                if (!params_->trainable(name))
                    throw std::invalid_argument("backward: parameter '" + name +
                                                "' is not trainable");
                if (!param_index_.count(name)) result.missing.push_back(name);
            }
        }

        // relevance: nodes on a path from a requested leaf to anywhere downstream
        for (Node& n : nodes_) {
            n.requires_grad = false;
            n.has_grad = false;
        }
        for (const auto& [name, idx] : param_index_)
            if (want.count(name)) nodes_[idx].requires_grad = true;
        for (NodeId t : tracked) nodes_[t.index].requires_grad = true;
        for (Node& n : nodes_)
            for (std::uint32_t in : n.inputs)
                if (nodes_[in].requires_grad) n.requires_grad = true;

        backward_visited_.clear();
        if (nodes_[root.index].requires_grad) {
            seed_grad(nodes_[root.index], Array::full(r.out_shape, 1.0));
            for (std::uint32_t i = root.index + 1; i-- > 0;) {
                Node& n = nodes_[i];
                if (!n.has_grad || !n.requires_grad) continue;
                backward_visited_.push_back(i);
                grad_node(n);
            }
        }

        for (const auto& [name, idx] : param_index_) {
            if (!want.count(name)) continue;
            Node& n = nodes_[idx];
            result.grads[name] = n.has_grad ? n.grad : Array::zeros(n.out_shape);
        }
        return result;
    }

    // labeled leaf/output values after a forward pass
    std::map<std::string, Array> labeled_values() const {
        std::map<std::string, Array> out;
        for (const Node& n : nodes_)
            if (!n.label.empty() && n.evaluated && n.op != Op::kParam) out[n.label] = n.value;
        return out;
    }

    void set_label(NodeId id, const std::string& label) { nodes_[id.index].label = label; }

    const ParamStore* params() const { return params_; }

private:
    std::vector<Node> nodes_;
    std::map<std::string, std::uint32_t> param_index_;
    std::map<std::string, std::uint32_t> input_index_;
    std::vector<std::string> scope_stack_;
    Counters counters_;
    std::vector<std::uint32_t> backward_visited_;
    const ParamStore* params_;

    static bool rank2(const Shape& s) { return s.size() == 1 || s.size() == 2; }
    static std::size_t rows_of(const Shape& s) { return s.size() == 1 ? 1 : s[0]; }
    static std::size_t cols_of(const Shape& s) { return s.size() == 1 ? s[0] : s[s.size() - 1]; }

    const Shape& shape(NodeId id) const { return nodes_[id.index].out_shape; }

    void require(bool ok, const char* what, NodeId a, NodeId b) const {
        if (!ok)
            throw std::invalid_argument(std::string(what) + ": incompatible shapes " +
                                        shape_str(shape(a)) + " and " + shape_str(shape(b)) +
                                        " (inputs '" + nodes_[a.index].label + "', '" +
                                        nodes_[b.index].label + "')");
    }

    Node make(Op op, std::initializer_list<NodeId> inputs, Shape out) {
        Node n;
        n.op = op;
        for (NodeId id : inputs) n.inputs.push_back(id.index);
        n.out_shape = std::move(out);
        return n;
    }

    NodeId push(Node n) {
        n.scope = scope_stack_.empty() ? std::string("other") : scope_stack_.back();
        if (n.label.empty())
            n.label = std::string(op_name(n.op)) + "#" + std::to_string(nodes_.size());
        nodes_.push_back(std::move(n));
        return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

    const Array& in(const Node& n, std::size_t i) const { return nodes_[n.inputs[i]].value; }

    void seed_grad(Node& n, Array g) {
        if (!n.has_grad) {
            n.grad = std::move(g);
            n.has_grad = true;
        } else {
            for (std::size_t i = 0; i < g.size(); ++i) n.grad.data[i] += g.data[i];
        }
    }

    Array& grad_buf(std::uint32_t idx) {
        Node& n = nodes_[idx];
        if (!n.has_grad) {
            n.grad = Array::zeros(n.out_shape);
            n.has_grad = true;
        }
        return n.grad;
    }

    bool wants(std::uint32_t idx) const { return nodes_[idx].requires_grad; }

    // ---- forward dispatch (multiply-add counts per op are the documented
    //      convention: matmuls count m*n*k, elementwise ops count a small
    //      fixed multiple of the element count, moves count zero) ----

    void eval_node(Node& n) {
        const std::string& sc = n.scope;
        switch (n.op) {
            case Op::kInput:
                if (n.value.size() == 0 && num_elements(n.out_shape) != 0)
                    throw std::logic_error("input '" + n.label + "' has no value bound");
                break;
            case Op::kParam:
                n.value = params_->get(n.label);
                break;
            case Op::kMatMul:
                n.value = ops::matmul(in(n, 0), in(n, 1));
                counters_.add_fwd(sc, static_cast<double>(in(n, 0).rows()) * in(n, 0).cols() *
                                          in(n, 1).cols());
                break;
            case Op::kMatMulNT:
                n.value = ops::matmul_nt(in(n, 0), in(n, 1));
                counters_.add_fwd(sc, static_cast<double>(in(n, 0).rows()) * in(n, 0).cols() *
                                          in(n, 1).rows());
                break;
            case Op::kAdd:
                n.value = ops::add(in(n, 0), in(n, 1));
                counters_.add_fwd(sc, static_cast<double>(n.value.size()));
                break;
            case Op::kAddRowVec:
                n.value = ops::add_rowvec(in(n, 0), in(n, 1));
                counters_.add_fwd(sc, static_cast<double>(n.value.size()));
                break;
            case Op::kScale:
                n.value = ops::scale(in(n, 0), n.dattr);
                counters_.add_fwd(sc, static_cast<double>(n.value.size()));
                break;
            case Op::kScaleBy:
                n.value = ops::scale(in(n, 0), in(n, 1).data[0]);
                counters_.add_fwd(sc, static_cast<double>(n.value.size()));
                break;
            case Op::kLayerNorm:
                n.value = ops::layernorm(in(n, 0), in(n, 1), in(n, 2), n.aux);
                counters_.add_fwd(sc, 6.0 * static_cast<double>(n.value.size()));
                break;
            case Op::kGelu:
                n.value = ops::gelu(in(n, 0));
                counters_.add_fwd(sc, 8.0 * static_cast<double>(n.value.size()));
                break;
            case Op::kExp:
                n.value = ops::exp_elem(in(n, 0));
                counters_.add_fwd(sc, static_cast<double>(n.value.size()));
                break;
            case Op::kLog:
                n.value = ops::log_elem(in(n, 0));
                counters_.add_fwd(sc, static_cast<double>(n.value.size()));
                break;
            case Op::kSoftmax:
                n.value = ops::softmax(in(n, 0));
                counters_.add_fwd(sc, 4.0 * static_cast<double>(n.value.size()));
                break;
            case Op::kEmbed:
                n.value = ops::embed(in(n, 0), n.iattrs);
                break;
            case Op::kSliceRows: {
                const Array& x = in(n, 0);
                std::size_t r0 = static_cast<std::size_t>(n.iattrs[0]);
                std::size_t r1 = static_cast<std::size_t>(n.iattrs[1]);
                Array out = Array::zeros(n.out_shape);
                std::copy(&x.data[r0 * x.cols()], &x.data[r1 * x.cols()], out.data.begin());
                n.value = std::move(out);
                break;
            }
            case Op::kSliceCols: {
                const Array& x = in(n, 0);
                std::size_t c0 = static_cast<std::size_t>(n.iattrs[0]);
                std::size_t c1 = static_cast<std::size_t>(n.iattrs[1]);
                Array out = Array::zeros(n.out_shape);
                for (std::size_t i = 0; i < x.rows(); ++i)
                    std::copy(&x.data[i * x.cols() + c0], &x.data[i * x.cols() + c1],
                              &out.data[i * (c1 - c0)]);
                n.value = std::move(out);
                break;
            }
            case Op::kConcatRows: {
                Array out = Array::zeros(n.out_shape);
                std::size_t off = 0;
                for (std::uint32_t idx : n.inputs) {
                    const Array& p = nodes_[idx].value;
                    std::copy(p.data.begin(), p.data.end(), out.data.begin() + off);
                    off += p.size();
                }
                n.value = std::move(out);
                break;
            }
            case Op::kConcatCols: {
                Array out = Array::zeros(n.out_shape);
                std::size_t rows = rows_of(n.out_shape), cols = cols_of(n.out_shape);
                std::size_t coff = 0;
                for (std::uint32_t idx : n.inputs) {
                    const Array& p = nodes_[idx].value;
                    std::size_t pc = p.cols();
                    for (std::size_t i = 0; i < rows; ++i)
                        std::copy(&p.data[i * pc], &p.data[(i + 1) * pc],
                                  &out.data[i * cols + coff]);
                    coff += pc;
                }
                n.value = std::move(out);
                break;
            }
            case Op::kStackScalars: {
                Array out = Array::zeros(n.out_shape);
                for (std::size_t i = 0; i < n.inputs.size(); ++i)
                    out.data[i] = nodes_[n.inputs[i]].value.data[0];
                n.value = std::move(out);
                break;
            }
            case Op::kReshape: {
                Array out = in(n, 0);
                out.shape = n.out_shape;
                n.value = std::move(out);
                break;
            }
            case Op::kMean: {
                const Array& x = in(n, 0);
                double s = 0.0;
                for (double v : x.data) s += v;
                n.value = Array::scalar(s / static_cast<double>(x.size()));
                counters_.add_fwd(sc, static_cast<double>(x.size()));
                break;
            }
            case Op::kL2Normalize:
                n.value = ops::l2_normalize(in(n, 0), "node '" + n.label + "'");
                counters_.add_fwd(sc, 3.0 * static_cast<double>(n.value.size()));
                break;
            case Op::kCosine:
                n.value = Array::scalar(ops::cosine(in(n, 0), in(n, 1)));
                counters_.add_fwd(sc, 3.0 * static_cast<double>(in(n, 0).size()));
                break;
            case Op::kPick:
                n.value = Array::scalar(in(n, 0).data[static_cast<std::size_t>(n.iattrs[0])]);
                break;
            case Op::kCrossEntropyLogits:
                n.value = Array::scalar(ops::cross_entropy_logits(
                    in(n, 0), static_cast<std::size_t>(n.iattrs[0])));
                counters_.add_fwd(sc, 4.0 * static_cast<double>(in(n, 0).size()));
                break;
        }
    }

    // ---- backward dispatch; propagates only into inputs that need it ----

    void grad_node(Node& n) {
        const std::string& sc = n.scope;
        const Array& g = n.grad;
        switch (n.op) {
            case Op::kInput:
            case Op::kParam:
                break;
            case Op::kMatMul: {
                const Array &a = in(n, 0), &b = in(n, 1);
                double macs = static_cast<double>(a.rows()) * a.cols() * b.cols();
                if (wants(n.inputs[0])) {
                    ops::matmul_grad_a(g, b, grad_buf(n.inputs[0]));
                    counters_.add_bwd(sc, macs);
                }
                if (wants(n.inputs[1])) {
                    ops::matmul_grad_b(a, g, grad_buf(n.inputs[1]));
                    counters_.add_bwd(sc, macs);
                }
                break;
            }
            case Op::kMatMulNT: {
                const Array &a = in(n, 0), &b = in(n, 1);
                double macs = static_cast<double>(a.rows()) * a.cols() * b.rows();
                if (wants(n.inputs[0])) {
                    ops::matmul_nt_grad_a(g, b, grad_buf(n.inputs[0]));
                    counters_.add_bwd(sc, macs);
                }
                if (wants(n.inputs[1])) {
                    ops::matmul_nt_grad_b(a, g, grad_buf(n.inputs[1]));
                    counters_.add_bwd(sc, macs);
                }
                break;
            }
            case Op::kAdd:
                for (int i = 0; i < 2; ++i)
                    if (wants(n.inputs[i])) {
                        Array& d = grad_buf(n.inputs[i]);
                        for (std::size_t j = 0; j < g.size(); ++j) d.data[j] += g.data[j];
                    }
                break;
            case Op::kAddRowVec:
                if (wants(n.inputs[0])) {
                    Array& d = grad_buf(n.inputs[0]);
                    for (std::size_t j = 0; j < g.size(); ++j) d.data[j] += g.data[j];
                }
                if (wants(n.inputs[1])) {
                    ops::add_rowvec_grad_v(g, grad_buf(n.inputs[1]));
                    counters_.add_bwd(sc, static_cast<double>(g.size()));
                }
                break;
            case Op::kScale:
                if (wants(n.inputs[0])) {
                    Array& d = grad_buf(n.inputs[0]);
                    for (std::size_t j = 0; j < g.size(); ++j) d.data[j] += g.data[j] * n.dattr;
                    counters_.add_bwd(sc, static_cast<double>(g.size()));
                }
                break;
            case Op::kScaleBy: {
                double s = in(n, 1).data[0];
                const Array& a = in(n, 0);
                if (wants(n.inputs[0])) {
                    Array& d = grad_buf(n.inputs[0]);
                    for (std::size_t j = 0; j < g.size(); ++j) d.data[j] += g.data[j] * s;
                    counters_.add_bwd(sc, static_cast<double>(g.size()));
                }
                if (wants(n.inputs[1])) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < g.size(); ++j) dot += g.data[j] * a.data[j];
                    grad_buf(n.inputs[1]).data[0] += dot;
                    counters_.add_bwd(sc, static_cast<double>(g.size()));
                }
                break;
            }
            case Op::kLayerNorm: {
                Array* dx = wants(n.inputs[0]) ? &grad_buf(n.inputs[0]) : nullptr;
                Array* dgamma = wants(n.inputs[1]) ? &grad_buf(n.inputs[1]) : nullptr;
                Array* dbeta = wants(n.inputs[2]) ? &grad_buf(n.inputs[2]) : nullptr;
                ops::layernorm_grad(g, in(n, 0), in(n, 1), n.aux, dx, dgamma, dbeta);
                counters_.add_bwd(sc, 9.0 * static_cast<double>(g.size()));
                break;
            }
            case Op::kGelu:
                if (wants(n.inputs[0])) {
                    const Array& x = in(n, 0);
                    Array& d = grad_buf(n.inputs[0]);
                    for (std::size_t j = 0; j < g.size(); ++j)
                        d.data[j] += g.data[j] * ops::gelu_grad_scalar(x.data[j]);
                    counters_.add_bwd(sc, 12.0 * static_cast<double>(g.size()));
                }
                break;
            case Op::kExp:
                if (wants(n.inputs[0])) {
                    Array& d = grad_buf(n.inputs[0]);
                    for (std::size_t j = 0; j < g.size(); ++j)
                        d.data[j] += g.data[j] * n.value.data[j];
                    counters_.add_bwd(sc, static_cast<double>(g.size()));
                }
                break;
            case Op::kLog:
                if (wants(n.inputs[0])) {
                    const Array& x = in(n, 0);
                    Array& d = grad_buf(n.inputs[0]);
                    for (std::size_t j = 0; j < g.size(); ++j) d.data[j] += g.data[j] / x.data[j];
                    counters_.add_bwd(sc, static_cast<double>(g.size()));
                }
                break;
            case Op::kSoftmax:
                if (wants(n.inputs[0])) {
                    ops::softmax_grad(g, n.value, grad_buf(n.inputs[0]));
                    counters_.add_bwd(sc, 3.0 * static_cast<double>(g.size()));
                }
                break;
            case Op::kEmbed:
                if (wants(n.inputs[0])) {
                    ops::embed_grad(g, n.iattrs, grad_buf(n.inputs[0]));
                    counters_.add_bwd(sc, static_cast<double>(g.size()));
                }
                break;
            case Op::kSliceRows:
                if (wants(n.inputs[0])) {
                    Array& d = grad_buf(n.inputs[0]);
                    std::size_t r0 = static_cast<std::size_t>(n.iattrs[0]);
                    std::size_t cols = d.cols();
                    for (std::size_t j = 0; j < g.size(); ++j) d.data[r0 * cols + j] += g.data[j];
                }
                break;
            case Op::kSliceCols:
                if (wants(n.inputs[0])) {
                    Array& d = grad_buf(n.inputs[0]);
                    std::size_t c0 = static_cast<std::size_t>(n.iattrs[0]);
                    std::size_t w = cols_of(n.out_shape), cols = d.cols();
                    for (std::size_t i = 0; i < g.rows(); ++i)
                        for (std::size_t j = 0; j < w; ++j)
                            d.data[i * cols + c0 + j] += g.data[i * w + j];
                }
                break;
            case Op::kConcatRows: {
                std::size_t off = 0;
                for (std::uint32_t idx : n.inputs) {
                    std::size_t sz = nodes_[idx].value.size();
                    if (wants(idx)) {
                        Array& d = grad_buf(idx);
                        for (std::size_t j = 0; j < sz; ++j) d.data[j] += g.data[off + j];
                    }
                    off += sz;
                }
                break;
            }
            case Op::kConcatCols: {
                std::size_t rows = rows_of(n.out_shape), cols = cols_of(n.out_shape);
                std::size_t coff = 0;
                for (std::uint32_t idx : n.inputs) {
                    std::size_t pc = nodes_[idx].value.cols();
                    if (wants(idx)) {
                        Array& d = grad_buf(idx);
                        for (std::size_t i = 0; i < rows; ++i)
                            for (std::size_t j = 0; j < pc; ++j)
                                d.data[i * pc + j] += g.data[i * cols + coff + j];
                    }
                    coff += pc;
                }
                break;
            }
            case Op::kStackScalars:
                for (std::size_t i = 0; i < n.inputs.size(); ++i)
                    if (wants(n.inputs[i])) grad_buf(n.inputs[i]).data[0] += g.data[i];
                break;
            case Op::kReshape:
                if (wants(n.inputs[0])) {
                    Array& d = grad_buf(n.inputs[0]);
                    for (std::size_t j = 0; j < g.size(); ++j) d.data[j] += g.data[j];
                }
                break;
            case Op::kMean:
                if (wants(n.inputs[0])) {
                    Array& d = grad_buf(n.inputs[0]);
                    double gv = g.data[0] / static_cast<double>(d.size());
                    for (double& v : d.data) v += gv;
                    counters_.add_bwd(sc, static_cast<double>(d.size()));
                }
                break;
            case Op::kL2Normalize:
                if (wants(n.inputs[0])) {
                    ops::l2_normalize_grad(g, in(n, 0), grad_buf(n.inputs[0]));
                    counters_.add_bwd(sc, 4.0 * static_cast<double>(g.size()));
                }
                break;
            case Op::kCosine: {
                Array* du = wants(n.inputs[0]) ? &grad_buf(n.inputs[0]) : nullptr;
                Array* dv = wants(n.inputs[1]) ? &grad_buf(n.inputs[1]) : nullptr;
                ops::cosine_grad(g.data[0], in(n, 0), in(n, 1), du, dv);
                counters_.add_bwd(sc, 6.0 * static_cast<double>(in(n, 0).size()));
                break;
            }
            case Op::kPick:
                if (wants(n.inputs[0]))
                    grad_buf(n.inputs[0]).data[static_cast<std::size_t>(n.iattrs[0])] += g.data[0];
                break;
            case Op::kCrossEntropyLogits:
                if (wants(n.inputs[0])) {
                    ops::cross_entropy_logits_grad(g.data[0], in(n, 0),
                                                   static_cast<std::size_t>(n.iattrs[0]),
                                                   grad_buf(n.inputs[0]));
                    counters_.add_bwd(sc, 2.0 * static_cast<double>(in(n, 0).size()));
                }
                break;
        }
    }
};

// Evaluate a graph against a set of named inputs: binds the inputs, runs the
// forward pass, and returns every labeled node's value. Pure with respect to
// the parameter store and the caller's arrays.
inline std::map<std::string, Array> evaluate(Graph& g, const std::map<std::string, Array>& inputs) {
    for (const auto& [name, v] : inputs) g.set_input(name, v);
    g.forward();
    return g.labeled_values();
}

// Spec-level gradient entry point: forward (if needed) is the caller's
// business; this runs backward at `root` for the requested parameter names.
inline GradResult gradients(Graph& g, NodeId root, const std::set<std::string>& wrt) {
    return g.backward(root, wrt);
}

}  // namespace skipt
