#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "skipt/grad_check.hpp"
#include "skipt/objective.hpp"
#include "skipt/rng.hpp"

using namespace skipt;

namespace {

Array unit_vec(Rng& rng, std::size_t d) {
    Array v = Array::zeros({d});
    for (double& x : v.data) x = rng.normal();
    return ops::l2_normalize(v, "test");
}

}  // namespace

TEST_CASE("cosine examples") {
    Array e0({2}, {1, 0}), e1({2}, {0, 1});
    CHECK(cosine_value(e0, e0) == Catch::Approx(1.0).margin(1e-15));
    CHECK(cosine_value(e0, e1) == Catch::Approx(0.0).margin(1e-15));
    Array u({2}, {0.6, 0.8});
    CHECK(cosine_value(u, e0) == Catch::Approx(0.6).epsilon(1e-12));

    Rng rng(1);
    for (int i = 0; i < 50; ++i) {
        double c = cosine_value(unit_vec(rng, 7), unit_vec(rng, 7));
        CHECK(c >= -1.0 - 1e-12);
        CHECK(c <= 1.0 + 1e-12);
    }
}

TEST_CASE("itm_probabilities examples") {
    SECTION("equal cosines split evenly") {
        SimilarityRow row{{1, 2}, Array({2}, {0.4, 0.4}), 0.5};
        Array p = itm_probabilities(row);
        CHECK(p.data[0] == Catch::Approx(0.5).margin(1e-15));
        CHECK(p.data[1] == Catch::Approx(0.5).margin(1e-15));
    }
    SECTION("cosines (1,0) at tau=1 give (e/(e+1), 1/(e+1))") {
        SimilarityRow row{{1, 2}, Array({2}, {1.0, 0.0}), 1.0};
        Array p = itm_probabilities(row);
        double e = std::exp(1.0);
        CHECK(p.data[0] == Catch::Approx(e / (e + 1)).epsilon(1e-12));
        CHECK(p.data[1] == Catch::Approx(1 / (e + 1)).epsilon(1e-12));
        CHECK(p.data[0] == Catch::Approx(0.7311).margin(5e-5));
    }
    SECTION("a single class gets probability one") {
        SimilarityRow row{{3}, Array({1}, {-0.2}), 0.07};
        Array p = itm_probabilities(row);
        CHECK(p.data[0] == Catch::Approx(1.0).margin(1e-15));
    }
    SECTION("empty class list is an error") {
        SimilarityRow row{{}, Array::zeros({0}), 0.07};
        CHECK_THROWS(itm_probabilities(row));
    }
    SECTION("probabilities sum to one") {
        Rng rng(2);
        for (int i = 0; i < 30; ++i) {
            Array cos = Array::zeros({5});
            for (double& v : cos.data) v = rng.uniform(-1.0, 1.0);
            SimilarityRow row{{1, 2, 3, 4, 5}, cos, 0.07};
            Array p = itm_probabilities(row);
            double s = 0;
            for (double v : p.data) s += v;
            CHECK(std::abs(s - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("itm_loss examples") {
    CHECK(itm_loss_value(Array({1}, {1.0}), 0) == Catch::Approx(0.0).margin(1e-15));
    CHECK(itm_loss_value(Array({2}, {0.5, 0.5}), 0) == Catch::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK_THROWS_AS(itm_loss_value(Array({2}, {0.5, 0.5}), 2), std::out_of_range);
    // loss is non-negative, zero iff the label holds all mass
    CHECK(itm_loss_value(Array({3}, {0.2, 0.5, 0.3}), 1) > 0.0);
}

TEST_CASE("graph itm loss equals -log of the reported probability") {
    Rng rng(5);
    ParamStore params;
    params.add("temperature.log_tau", Array::scalar(std::log(0.07)));
    Array img = unit_vec(rng, 8);
    std::vector<Array> cls;
    for (int j = 0; j < 6; ++j) cls.push_back(unit_vec(rng, 8));

    Graph g(&params);
    NodeId fi = g.input("img", img);
    std::vector<NodeId> cf;
    for (int j = 0; j < 6; ++j) cf.push_back(g.input("c" + std::to_string(j), cls[j]));
    NodeId cos = cosine_row_node(g, fi, cf);
    NodeId logits = itm_logits_node(g, cos);
    NodeId probs = itm_probabilities_node(g, logits);
    NodeId loss = itm_loss_node(g, logits, 2);
    g.forward();

    double direct = -std::log(g.value(probs).data[2]);
    CHECK(g.value(loss).data[0] == Catch::Approx(direct).epsilon(1e-12));
}

TEST_CASE("subset loss with the full class set matches dense cross-entropy") {
    Rng rng(6);
    const std::size_t m_classes = 9;
    Array cos = Array::zeros({m_classes});
    for (double& v : cos.data) v = rng.uniform(-1.0, 1.0);
    double tau = 0.07;
    std::size_t label = 4;

    // reference dense cross-entropy over all classes, written directly
    double denom = 0.0;
    for (double v : cos.data) denom += std::exp(v / tau);
    double reference = -std::log(std::exp(cos.data[label] / tau) / denom);

    SimilarityRow row;
    row.cosines = cos;
    row.tau = tau;
    for (std::size_t j = 0; j < m_classes; ++j) row.class_ids.push_back(static_cast<int>(j));
    double via_probs = itm_loss_value(itm_probabilities(row), label);
    CHECK(via_probs == Catch::Approx(reference).margin(1e-12));
}

TEST_CASE("gradient of itm_loss w.r.t. each cosine matches finite differences") {
    // tau = 0.3 keeps every class branch alive, so no probability is driven
    // into the finite-difference noise floor
    Rng rng(7);
    ParamStore params;
    params.add("temperature.log_tau", Array::scalar(std::log(0.3)), /*trainable=*/true);
    Array cos = Array::zeros({5});
    for (double& v : cos.data) v = rng.uniform(-0.9, 0.9);
    params.add("cosines", cos);

    Graph g(&params);
    NodeId logits = itm_logits_node(g, g.param("cosines"));
    NodeId loss = itm_loss_node(g, logits, 1);
    double err = grad_check(g, loss, params, {.step = 1e-6});
    CHECK(err < 1e-6);
}

TEST_CASE("subsetting preserves the argmax among retained classes") {
    Rng rng(8);
    for (int trial = 0; trial < 30; ++trial) {
        Array cos = Array::zeros({8});
        for (double& v : cos.data) v = rng.uniform(-1.0, 1.0);
        SimilarityRow full{{0, 1, 2, 3, 4, 5, 6, 7}, cos, 0.07};
        Array pf = itm_probabilities(full);

        // keep classes {0, 2, 5, 7}
        std::vector<int> keep = {0, 2, 5, 7};
        Array sub_cos = Array::zeros({4});
        for (std::size_t i = 0; i < 4; ++i)
            sub_cos.data[i] = cos.data[static_cast<std::size_t>(keep[i])];
        SimilarityRow sub{keep, sub_cos, 0.07};
        Array ps = itm_probabilities(sub);

        std::size_t arg_full = 0, arg_sub = 0;
        for (std::size_t i = 0; i < 4; ++i) {
            if (pf.data[static_cast<std::size_t>(keep[i])] >
                pf.data[static_cast<std::size_t>(keep[arg_full])])
                arg_full = i;
            if (ps.data[i] > ps.data[arg_sub]) arg_sub = i;
        }
        CHECK(arg_full == arg_sub);
    }
}
