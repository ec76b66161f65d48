#include <catch2/catch_amalgamated.hpp>

#include "skipt/trainer.hpp"

using namespace skipt;

namespace {

EncoderConfig mini_config() {
    EncoderConfig c;
    c.n_layers = 4;
    c.d_model = 32;
    c.n_heads = 4;
    c.d_ff = 64;
    c.d_proj = 16;
    c.image_grid = 8;
    c.patch = 4;
    c.max_text_len = 8;
    return c;
}

struct Fixture {
    SyntheticTask world;
    ModelState pretrained;
    std::vector<std::pair<int, Array>> train_images;
    std::vector<TokenSequence> class_seqs;
};

const Fixture& fixture() {
    static Fixture f = [] {
        Fixture fx;
        fx.world = generate_task(1234, 8, 4);
        fx.pretrained = init_model(mini_config(), 7);
        PretrainConfig pc;
        pc.steps = 220;
        pc.lr = 0.05;
        pc.batch = 8;
        pc.seed = 99;
        pretrain(fx.pretrained, fx.world, pc);
        for (const TrainSample& s : base_train_samples(fx.world))
            fx.train_images.emplace_back(s.sample_id, task_image(fx.world, s.class_id, s.instance,
                                                                 8, 3));
        fx.class_seqs = encode_class_names(fx.world.class_names, "a [CLS]", 8);
        return fx;
    }();
    return f;
}

TrainConfig mini_train(bool lskip, bool cskip, int omega) {
    TrainConfig cfg;
    cfg.lr_multiplier = 500.0;
    cfg.batch = 4;
    cfg.epochs = 3;
    cfg.omega = omega;
    cfg.lskip = lskip;
    cfg.cskip = cskip;
    cfg.seed = 5;
    cfg.eval_instances = 8;
    return cfg;
}

}  // namespace

TEST_CASE("harmonic mean helper reproduces the reference average") {
    CHECK(harmonic_mean(82.69, 63.22) == Catch::Approx(71.66).margin(0.005));
    CHECK(harmonic_mean(50.0, 50.0) == Catch::Approx(50.0).epsilon(1e-12));
    CHECK(harmonic_mean(0.0, 0.0) == 0.0);
}

TEST_CASE("untrained model scores near chance; pretraining lifts it") {
    const Fixture& f = fixture();
    ModelState untrained = init_model(mini_config(), 7);
    std::vector<int> all = {0, 1, 2, 3, 4, 5, 6, 7};
    double zs_untrained = evaluate_split(untrained, f.world, all, "a [CLS]",
                                         kEvalInstanceOffset, 8);
    CHECK(zs_untrained <= 55.0);  // constant-ish predictions, far from aligned

    // held-out zero-shot must clear twice chance (2/M)
    double zs = evaluate_split(f.pretrained, f.world, all, "a [CLS]", kEvalInstanceOffset, 8);
    CHECK(zs >= 2.0 * 100.0 / 8.0);
}

TEST_CASE("pretraining is deterministic given the seed") {
    const Fixture& f = fixture();
    ModelState a = init_model(mini_config(), 7);
    ModelState b = init_model(mini_config(), 7);
    PretrainConfig pc;
    pc.steps = 20;
    pc.lr = 0.05;
    pc.seed = 42;
    auto la = pretrain(a, f.world, pc);
    auto lb = pretrain(b, f.world, pc);
    CHECK(la == lb);
    for (const std::string& name : a.params.names())
        CHECK(a.params.get(name).data == b.params.get(name).data);
}

TEST_CASE("degenerate toggles reproduce plain full fine-tuning exactly") {
    const Fixture& f = fixture();
    FeatureCache cache0 = build_cache(f.pretrained, f.train_images, f.class_seqs, 0, "a [CLS]");

    ModelState ft_model = f.pretrained;
    TrainConfig ft_cfg = mini_train(false, false, 0);
    RunReport ft = tune(ft_model, f.world, nullptr, ft_cfg);

    ModelState skip_model = f.pretrained;
    TrainConfig skip_cfg = mini_train(true, true, 0);
    skip_cfg.ratio = 1.0;  // CSkip keeps every class
    RunReport skip = tune(skip_model, f.world, &cache0, skip_cfg);

    REQUIRE(ft.epochs.size() == skip.epochs.size());
    for (std::size_t e = 0; e < ft.epochs.size(); ++e)
        CHECK(std::abs(ft.epochs[e].mean_loss - skip.epochs[e].mean_loss) <= 1e-9);
    for (const std::string& name : ft_model.params.names()) {
        INFO(name);
        CHECK(max_abs_diff(ft_model.params.get(name), skip_model.params.get(name)) <= 1e-9);
    }
    CHECK(ft.base_acc == skip.base_acc);
    CHECK(ft.new_acc == skip.new_acc);
}

TEST_CASE("lskip run matches the frozen-shallow live oracle step for step") {
    const Fixture& f = fixture();
    int omega = 2;
    FeatureCache cache = build_cache(f.pretrained, f.train_images, f.class_seqs, omega, "a [CLS]");

    ModelState cached_model = f.pretrained;
    RunReport cached = tune(cached_model, f.world, &cache, mini_train(true, false, omega));

    ModelState live_model = f.pretrained;
    TrainConfig oracle_cfg = mini_train(false, false, omega);
    oracle_cfg.frozen_depth = omega;  // live towers, frozen shallow layers
    RunReport live = tune(live_model, f.world, nullptr, oracle_cfg);

    REQUIRE(cached.epochs.size() == live.epochs.size());
    for (std::size_t e = 0; e < cached.epochs.size(); ++e) {
        double rel = std::abs(cached.epochs[e].mean_loss - live.epochs[e].mean_loss) /
                     std::max(std::abs(live.epochs[e].mean_loss), 1e-12);
        CHECK(rel <= 1e-6);
    }
    // the cached run does strictly less work
    CHECK(cached.avg_step_total_macs < live.avg_step_total_macs);
}

TEST_CASE("fixed seed and config give an identical run report") {
    const Fixture& f = fixture();
    FeatureCache cache = build_cache(f.pretrained, f.train_images, f.class_seqs, 2, "a [CLS]");
    TrainConfig cfg = mini_train(true, true, 2);

    ModelState m1 = f.pretrained;
    ModelState m2 = f.pretrained;
    RunReport r1 = tune(m1, f.world, &cache, cfg);
    RunReport r2 = tune(m2, f.world, &cache, cfg);
    CHECK(report_to_json(r1).dump() == report_to_json(r2).dump());
    for (const std::string& name : m1.params.names())
        CHECK(m1.params.get(name).data == m2.params.get(name).data);
}

TEST_CASE("tuning improves over the zero-shot baseline on base training images") {
    const Fixture& f = fixture();
    ModelState m = f.pretrained;
    TrainConfig cfg = mini_train(false, false, 0);
    cfg.epochs = 5;
    RunReport rep = tune(m, f.world, nullptr, cfg);

    double before = evaluate_split(f.pretrained, f.world, f.world.base_classes, "a [CLS]", 0, 4);
    double after = evaluate_split(m, f.world, f.world.base_classes, "a [CLS]", 0, 4);
    CHECK(after >= before);
    CHECK(rep.base_acc >= rep.zero_shot_base - 1e-9);
}

TEST_CASE("cskip narrows the measured step cost and the prediction agrees") {
    const Fixture& f = fixture();
    ModelState plain_model = f.pretrained;
    RunReport plain = tune(plain_model, f.world, nullptr, mini_train(false, false, 0));

    ModelState cs_model = f.pretrained;
    TrainConfig cs_cfg = mini_train(false, true, 0);
    cs_cfg.ratio = 0.5;
    cs_cfg.lambda = 0.3;
    RunReport cs = tune(cs_model, f.world, nullptr, cs_cfg);

    CHECK(cs.avg_step_total_macs < plain.avg_step_total_macs);
    // text-side width shrinks toward E[m]/M
    double measured_ratio = plain.avg_step_body_macs / cs.avg_step_body_macs;
    CHECK(measured_ratio > 1.05);
    CHECK(cs.predicted.ratio > 1.05);
}

TEST_CASE("tune validates its preconditions") {
    const Fixture& f = fixture();
    ModelState m = f.pretrained;

    TrainConfig no_cache = mini_train(true, false, 2);
    CHECK_THROWS_AS(tune(m, f.world, nullptr, no_cache), std::invalid_argument);

    FeatureCache cache = build_cache(f.pretrained, f.train_images, f.class_seqs, 2, "a [CLS]");
    TrainConfig wrong_omega = mini_train(true, false, 3);
    CHECK_THROWS_WITH(tune(m, f.world, &cache, wrong_omega),
                      Catch::Matchers::ContainsSubstring("depth"));

    TrainConfig wrong_template = mini_train(true, false, 2);
    wrong_template.prompt_template = "photo [CLS]";
    CHECK_THROWS_WITH(tune(m, f.world, &cache, wrong_template),
                      Catch::Matchers::ContainsSubstring("template"));

    // a model whose shallow layers moved invalidates provenance
    ModelState moved = f.pretrained;
    moved.params.mutable_get("vision.layer.1.mlp.w1").data[0] += 0.5;
    TrainConfig ok = mini_train(true, false, 2);
    CHECK_THROWS_WITH(tune(moved, f.world, &cache, ok),
                      Catch::Matchers::ContainsSubstring("provenance"));
}
