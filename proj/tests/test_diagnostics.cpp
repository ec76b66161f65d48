#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "skipt/cache.hpp"
#include "skipt/diagnostics.hpp"

using namespace skipt;

namespace {

EncoderConfig cfg(int n_layers) {
    EncoderConfig c;
    c.n_layers = n_layers;
    c.d_model = 16;
    c.n_heads = 2;
    c.d_ff = 32;
    c.d_proj = 8;
    c.image_grid = 8;
    c.patch = 4;
    c.max_text_len = 12;
    return c;
}

Array random_image(Rng& rng) {
    Array img = Array::zeros({8, 8, 3});
    for (double& v : img.data) v = rng.uniform();
    return img;
}

std::vector<TokenSequence> class_sequences(int m) {
    std::vector<std::string> names;
    for (int j = 0; j < m; ++j) names.push_back("c" + std::to_string(j));
    return encode_class_names(names, "a [CLS]", 12);
}

}  // namespace

TEST_CASE("feature sensitivity is zero for identical models") {
    ModelState m = init_model(cfg(3), 5);
    Rng rng(6);
    FSProfile fs = feature_sensitivity(m, m, {random_image(rng)}, class_sequences(2));
    for (double v : fs.vision) CHECK(v == 0.0);
    for (double v : fs.text) CHECK(v == 0.0);
}

TEST_CASE("feature sensitivity is exactly zero at and below frozen depth") {
    ModelState before = init_model(cfg(4), 7);
    ModelState after = before;
    // emulate tuning only layers > omega
    int omega = 2;
    for (const std::string& name : deep_trainable_names(after, omega)) {
        if (layer_index_of(name) < 0) continue;  // heads do not enter layer outputs
        Array& p = after.params.mutable_get(name);
        for (double& v : p.data) v += 1e-3;
    }
    Rng rng(8);
    std::vector<Array> imgs = {random_image(rng), random_image(rng)};
    FSProfile fs = feature_sensitivity(before, after, imgs, class_sequences(3));
    for (int l = 1; l <= omega; ++l) {
        CHECK(fs.vision[static_cast<std::size_t>(l - 1)] == 0.0);
        CHECK(fs.text[static_cast<std::size_t>(l - 1)] == 0.0);
    }
    bool any_deep = false;
    for (int l = omega + 1; l <= 4; ++l)
        any_deep = any_deep || fs.vision[static_cast<std::size_t>(l - 1)] > 0.0;
    CHECK(any_deep);
}

TEST_CASE("perturbing one weight in layer k moves FS at k but not below") {
    ModelState before = init_model(cfg(4), 9);
    ModelState after = before;
    int k = 3;
    after.params.mutable_get(layer_prefix(Side::kVision, k) + ".mlp.w1").data[5] += 0.05;
    Rng rng(10);
    FSProfile fs = feature_sensitivity(before, after, {random_image(rng)}, {});
    for (int l = 1; l < k; ++l) CHECK(fs.vision[static_cast<std::size_t>(l - 1)] == 0.0);
    CHECK(fs.vision[static_cast<std::size_t>(k - 1)] > 0.0);
}

TEST_CASE("feature sensitivity rejects mismatched configs") {
    ModelState a = init_model(cfg(3), 1);
    ModelState b = init_model(cfg(4), 1);
    CHECK_THROWS(feature_sensitivity(a, b, {}, {}));
}

TEST_CASE("gradient dependence: mask route equals recomputation") {
    ModelState m = init_model(cfg(3), 11);
    Rng rng(12);
    Array img = random_image(rng);
    auto seqs = class_sequences(5);
    for (std::size_t c : {std::size_t(1), std::size_t(3), std::size_t(4)}) {
        double masked = gradient_dependence(m, img, seqs, 0, c, GdRoute::kMask);
        double recomputed = gradient_dependence(m, img, seqs, 0, c, GdRoute::kRecompute);
        INFO("removed class " << c);
        CHECK(std::abs(masked - recomputed) <= 1e-9);
        CHECK(masked >= 0.0);
    }
}

TEST_CASE("gradient dependence: duplicate class tokens give equal GD") {
    ModelState m = init_model(cfg(3), 13);
    Rng rng(14);
    Array img = random_image(rng);
    std::vector<std::string> names = {"base", "twin", "twin", "other"};
    auto seqs = encode_class_names(names, "a [CLS]", 12);
    double gd1 = gradient_dependence(m, img, seqs, 0, 1);
    double gd2 = gradient_dependence(m, img, seqs, 0, 2);
    CHECK(gd1 == Catch::Approx(gd2).margin(1e-12));
}

TEST_CASE("gradient dependence error cases") {
    ModelState m = init_model(cfg(3), 15);
    Rng rng(16);
    Array img = random_image(rng);
    CHECK_THROWS(gradient_dependence(m, img, class_sequences(1), 0, 0));
    CHECK_THROWS(gradient_dependence(m, img, class_sequences(4), 2, 2));  // c == true class
    CHECK_THROWS(gradient_dependence(m, img, class_sequences(4), 0, 9));
}

TEST_CASE("a class with negligible softmax weight has GD near zero") {
    // the GD machinery on a hand-built head: image feature as a leaf, class
    // features constant, temperature small. the removed class sits at cosine
    // -1 while every other class is near +1, so its softmax weight is about
    // exp(-2/tau) and removing it barely moves the feature gradient.
    ParamStore params;
    params.add("temperature.log_tau", Array::scalar(std::log(0.07)));
    Array f = ops::l2_normalize(Array({6}, {1, 1, 1, 1, 1, 1}), "f");
    Graph g(&params);
    NodeId feat = g.input("feat", f);

    auto clsvec = [&](double flip, double jitter) {
        Array v = f;
        v.data[0] += jitter;
        v = ops::l2_normalize(v, "cls");
        return ops::scale(v, flip);
    };
    std::vector<NodeId> cs;
    cs.push_back(g.cosine(feat, g.input("c0", clsvec(1.0, 0.00))));  // true class, cos ~ +1
    cs.push_back(g.cosine(feat, g.input("c1", clsvec(1.0, 0.05))));
    cs.push_back(g.cosine(feat, g.input("c2", clsvec(-1.0, 0.0))));  // cos = -1, weight ~ e^(-28)
    NodeId inv_tau = inv_tau_node(g);
    NodeId full = g.cross_entropy_logits(g.scale_by(g.stack_scalars(cs), inv_tau), 0);
    NodeId masked =
        g.cross_entropy_logits(g.scale_by(g.stack_scalars({cs[0], cs[1]}), inv_tau), 0);
    g.forward();
    g.backward(full, {}, {feat});
    Array grad_full = g.grad(feat);
    g.backward(masked, {}, {feat});
    Array grad_masked = g.grad(feat);
    CHECK(euclidean_distance(grad_full, grad_masked) < 1e-8);
}

TEST_CASE("predict_cost examples") {
    SECTION("no skipping means ratio one") {
        CostPrediction p = predict_cost(12, 0, 100, 100.0, 1.0, 1.0);
        CHECK(p.ratio == Catch::Approx(1.0).epsilon(1e-12));
    }
    SECTION("N=12, omega=6, M=100, m=50 gives ~3.96") {
        CostPrediction p = predict_cost(12, 6, 100, 50.0, 1.0, 1.0);
        CHECK(p.baseline == Catch::Approx(1212.0).epsilon(1e-12));
        CHECK(p.skip == Catch::Approx(306.0).epsilon(1e-12));
        CHECK(p.ratio == Catch::Approx(1212.0 / 306.0).epsilon(1e-12));
        CHECK(p.ratio == Catch::Approx(3.96).margin(0.005));
    }
    SECTION("a single class cancels the width term") {
        CostPrediction p = predict_cost(12, 9, 1, 1.0, 2.5, 0.7);
        CHECK(p.ratio == Catch::Approx(12.0 / 3.0).epsilon(1e-12));
    }
    SECTION("bad arguments") {
        CHECK_THROWS(predict_cost(12, 12, 10, 5.0, 1.0, 1.0));
        CHECK_THROWS(predict_cost(12, 2, 10, 0.0, 1.0, 1.0));
        CHECK_THROWS(predict_cost(12, 2, 10, 5.0, 0.0, 1.0));
    }
}

TEST_CASE("identical steps produce identical counters") {
    ModelState m = init_model(cfg(3), 17);
    Rng rng(18);
    Array img = random_image(rng);
    auto seqs = class_sequences(4);
    auto run = [&]() { return frozen_shallow_step(m, img, seqs, {0, 1, 2, 3}, 0, 0); };
    CostCounters a = measure_step(run);
    CostCounters b = measure_step(run);
    CHECK(a.total_macs() == b.total_macs());
    CHECK(a.body_macs() == b.body_macs());
    CHECK(a.peak_live_elements == b.peak_live_elements);
}

TEST_CASE("halving the class subset halves text-side multiply-adds") {
    ModelState m = init_model(cfg(4), 19);
    Rng rng(20);
    Array img = random_image(rng);
    auto seqs = class_sequences(8);
    StepResult full = frozen_shallow_step(m, img, seqs, {0, 1, 2, 3, 4, 5, 6, 7}, 0, 0);
    StepResult half = frozen_shallow_step(m, img, seqs, {0, 1, 2, 3}, 0, 0);
    double ratio =
        half.counters.scoped_total("text.layer.") / full.counters.scoped_total("text.layer.");
    CHECK(ratio == Catch::Approx(0.5).margin(0.05));
    // vision cost unchanged
    CHECK(half.counters.scoped_total("vision.layer.") ==
          full.counters.scoped_total("vision.layer."));
}

TEST_CASE("predicted and measured cost ratios agree on a small grid") {
    const int n_layers = 6;
    ModelState m = init_model(cfg(n_layers), 23);
    Rng rng(24);
    Array img = random_image(rng);
    auto seqs = class_sequences(8);
    auto [c_v, c_t] = calibrate_layer_costs(m, img, seqs);
    // both towers run 5 positions at this config, so per-layer costs coincide
    CHECK(c_v > 0.0);
    CHECK(c_t > 0.0);
    CHECK(c_v == Catch::Approx(c_t).epsilon(0.01));

    std::vector<std::pair<int, Array>> samples = {{0, img}};
    StepResult base = frozen_shallow_step(m, img, seqs, {0, 1, 2, 3, 4, 5, 6, 7}, 0, 0);
    double base_macs = base.counters.scoped_total("vision.layer.") +
                       base.counters.scoped_total("text.layer.");

    for (int omega : {2, 3}) {
        for (int m_sub : {4, 8}) {
            FeatureCache cache = build_cache(m, samples, seqs, omega, "a [CLS]");
            std::vector<int> subset;
            for (int j = 0; j < m_sub; ++j) subset.push_back(j);
            StepResult skip = cached_step(m, cache, 0, subset, 0);
            double skip_macs = skip.counters.scoped_total("vision.layer.") +
                               skip.counters.scoped_total("text.layer.");
            double measured_ratio = base_macs / skip_macs;
            CostPrediction p = predict_cost(n_layers, omega, 8, m_sub, c_v, c_t);
            INFO("omega " << omega << " m " << m_sub);
            CHECK(std::abs(measured_ratio - p.ratio) / p.ratio <= 0.10);
        }
    }
}

TEST_CASE("csv exports have the documented headers") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "skipt_diag_test";
    fs::create_directories(dir);
    FSProfile prof;
    prof.vision = {0.0, 0.5};
    prof.text = {0.1, 0.2};
    write_fs_csv(dir / "fs.csv", prof);
    write_gd_csv(dir / "gd.csv", {{0, 1, 0.25}});
    write_cost_csv(dir / "cost.csv", {{"omega=3;m=4", 2.0, 1.9}});

    auto first_line = [](const fs::path& p) {
        std::ifstream f(p);
        std::string line;
        std::getline(f, line);
        return line;
    };
    CHECK(first_line(dir / "fs.csv") == "side,layer,fs");
    CHECK(first_line(dir / "gd.csv") == "sample,class,gd");
    CHECK(first_line(dir / "cost.csv") == "config,predicted,measured");
}
