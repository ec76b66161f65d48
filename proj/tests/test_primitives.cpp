#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "skipt/grad_check.hpp"
#include "skipt/graph.hpp"
#include "skipt/ops.hpp"
#include "skipt/rng.hpp"

using namespace skipt;

namespace {

Array random_array(Rng& rng, Shape shape) {
    Array a = Array::zeros(std::move(shape));
    for (double& v : a.data) v = rng.normal();
    return a;
}

// independent scalar evaluation of the tanh-form GELU, written from the
// formula rather than via ops::gelu
double gelu_oracle(double x) {
    return 0.5 * x * (1.0 + std::tanh(0.7978845608 * (x + 0.044715 * x * x * x)));
}

}  // namespace

TEST_CASE("rng substreams are independent and deterministic") {
    Rng a(42), b(42);
    CHECK(a.uniform() == b.uniform());
    Rng s1 = Rng(42).stream("data");
    Rng s2 = Rng(42).stream("sampler");
    CHECK(s1.uniform() != s2.uniform());
    CHECK(Rng(42).stream("data").uniform() == Rng(42).stream("data").uniform());
}

TEST_CASE("matmul against identity") {
    Array a({2, 2}, {1, 0, 0, 1});
    Array b({2, 1}, {3, 4});
    Array c = ops::matmul(a, b);
    CHECK(c.data == std::vector<double>{3, 4});
}

TEST_CASE("softmax symmetry and row sums") {
    Array z({2}, {0, 0});
    Array p = ops::softmax(z);
    CHECK(p.data[0] == Catch::Approx(0.5).margin(1e-15));
    CHECK(p.data[1] == Catch::Approx(0.5).margin(1e-15));

    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        Array x = random_array(rng, {4, 7});
        Array y = ops::softmax(x);
        for (std::size_t r = 0; r < 4; ++r) {
            double s = 0;
            for (std::size_t c = 0; c < 7; ++c) s += y.at(r, c);
            CHECK(std::abs(s - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("softmax is stable under large logits") {
    Array z({3}, {1000.0, 999.0, -1000.0});
    Array p = ops::softmax(z);
    CHECK(all_finite(p));
    CHECK(p.data[0] > p.data[1]);
}

TEST_CASE("gelu matches the scalar oracle") {
    CHECK(ops::gelu_scalar(0.5) == Catch::Approx(gelu_oracle(0.5)).epsilon(1e-15));
    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
        double x = 3.0 * rng.normal();
        CHECK(ops::gelu_scalar(x) == Catch::Approx(gelu_oracle(x)).margin(1e-14));
    }
}

TEST_CASE("cross entropy logits equals -log softmax") {
    Array z({4}, {0.3, -1.2, 2.0, 0.0});
    Array p = ops::softmax(z);
    for (std::size_t label = 0; label < 4; ++label)
        CHECK(ops::cross_entropy_logits(z, label) ==
              Catch::Approx(-std::log(p.data[label])).epsilon(1e-12));
}

TEST_CASE("every primitive matches central finite differences over many seeds") {
    // one tiny graph per primitive, re-drawn over >= 100 seeds
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed * 7919 + 1);
        ParamStore params;
        params.add("a", random_array(rng, {3, 4}));
        params.add("b", random_array(rng, {4, 2}));
        params.add("bt", random_array(rng, {2, 4}));
        params.add("v", random_array(rng, {4}));
        params.add("g", random_array(rng, {4}));
        params.add("u1", random_array(rng, {5}));
        params.add("u2", random_array(rng, {5}));
        params.add("s", Array::scalar(0.3 + rng.uniform()));
        params.add("table", random_array(rng, {6, 3}));

        auto check = [&](const char* what, auto build) {
            Graph g(&params);
            NodeId root = build(g);
            double err = grad_check(g, root, params, {.step = 1e-5});
            INFO("primitive: " << what << ", seed " << seed);
            CHECK(err < 1e-4);
        };

        check("matmul", [](Graph& g) { return g.mean(g.matmul(g.param("a"), g.param("b"))); });
        check("matmul_nt",
              [](Graph& g) { return g.mean(g.matmul_nt(g.param("a"), g.param("bt"))); });
        check("add", [](Graph& g) { return g.mean(g.add(g.param("a"), g.param("a"))); });
        check("add_rowvec",
              [](Graph& g) { return g.mean(g.add_rowvec(g.param("a"), g.param("v"))); });
        check("scale", [](Graph& g) { return g.mean(g.scale(g.param("a"), -1.7)); });
        check("scale_by",
              [](Graph& g) { return g.mean(g.scale_by(g.param("a"), g.param("s"))); });
        check("layernorm", [](Graph& g) {
            return g.mean(g.layernorm(g.param("a"), g.param("v"), g.param("g")));
        });
        check("gelu", [](Graph& g) { return g.mean(g.gelu(g.param("a"))); });
        check("exp", [](Graph& g) { return g.mean(g.exp(g.scale(g.param("a"), 0.1))); });
        check("log", [](Graph& g) { return g.mean(g.log(g.exp(g.param("a")))); });
        // reduce over a strict subset of columns so the loss is not constant
        check("softmax",
              [](Graph& g) { return g.mean(g.slice_cols(g.softmax(g.param("a")), 0, 2)); });
        check("embed",
              [](Graph& g) { return g.mean(g.embed(g.param("table"), {0, 2, 5, 2})); });
        check("slice_rows", [](Graph& g) { return g.mean(g.slice_rows(g.param("a"), 1, 3)); });
        check("slice_cols", [](Graph& g) { return g.mean(g.slice_cols(g.param("a"), 1, 4)); });
        check("concat_rows", [](Graph& g) {
            return g.mean(g.concat_rows({g.param("a"), g.param("bt")}));
        });
        check("concat_cols", [](Graph& g) {
            return g.mean(g.concat_cols({g.param("a"), g.param("a")}));
        });
        check("stack_scalars", [](Graph& g) {
            return g.mean(g.stack_scalars({g.mean(g.param("a")), g.mean(g.param("v"))}));
        });
        check("reshape", [](Graph& g) { return g.mean(g.reshape(g.param("a"), {4, 3})); });
        check("l2_normalize", [](Graph& g) { return g.mean(g.l2_normalize(g.param("u1"))); });
        check("cosine", [](Graph& g) { return g.cosine(g.param("u1"), g.param("u2")); });
        check("pick", [](Graph& g) { return g.pick(g.softmax(g.param("v")), 2); });
        check("cross_entropy",
              [](Graph& g) { return g.cross_entropy_logits(g.param("v"), 1); });
    }
}

TEST_CASE("array invariants are enforced") {
    CHECK_THROWS(Array({2, 2}, {1.0, 2.0}));
    Array ok({2, 2}, {1, 2, 3, 4});
    CHECK(num_elements(ok.shape) == ok.size());
}
