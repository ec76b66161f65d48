#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include <CLI11.hpp>

#include "skipt/trainer.hpp"

namespace skipt::cli {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// flat run configuration. A config file, when given, must spell out every key
// (a missing or unknown key is an error naming it); the fully resolved config
// is echoed into each run's manifest, which is itself a valid config file.

struct RunConfig {
    std::uint64_t seed = 1;
    int classes = 16;
    int shots = 16;
    int eval_instances = 16;

    int n_layers = 12;
    int d_model = 64;
    int n_heads = 4;
    int d_ff = 128;
    int d_proj = 32;
    int image_grid = 16;
    int patch = 4;
    int channels = 3;
    int vocab = 64;
    int max_text_len = 8;

    std::string prompt_template = "a [CLS]";

    int pretrain_steps = 600;
    int pretrain_batch = 8;
    double pretrain_lr = 0.08;
    int pretrain_pool = 64;

    double lr = 2e-5;
    double lr_multiplier = 250.0;
    int batch = 4;
    int epochs = 20;

    int omega = 6;
    double ratio = 0.5;
    double lambda = 0.3;
    bool lskip = false;
    bool cskip = false;

    int diag_samples = 100;
};

inline json config_json(const RunConfig& c) {
    return json{{"seed", c.seed},
                {"classes", c.classes},
                {"shots", c.shots},
                {"eval_instances", c.eval_instances},
                {"n_layers", c.n_layers},
                {"d_model", c.d_model},
                {"n_heads", c.n_heads},
                {"d_ff", c.d_ff},
                {"d_proj", c.d_proj},
                {"image_grid", c.image_grid},
                {"patch", c.patch},
                {"channels", c.channels},
                {"vocab", c.vocab},
                {"max_text_len", c.max_text_len},
                {"prompt_template", c.prompt_template},
                {"pretrain_steps", c.pretrain_steps},
                {"pretrain_batch", c.pretrain_batch},
                {"pretrain_lr", c.pretrain_lr},
                {"pretrain_pool", c.pretrain_pool},
                {"lr", c.lr},
                {"lr_multiplier", c.lr_multiplier},
                {"batch", c.batch},
                {"epochs", c.epochs},
                {"omega", c.omega},
                {"ratio", c.ratio},
                {"lambda", c.lambda},
                {"lskip", c.lskip},
                {"cskip", c.cskip},
                {"diag_samples", c.diag_samples}};
}

inline RunConfig config_from_file(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read config '" + path.string() + "'");
    json j = json::parse(f);
    json known = config_json(RunConfig{});
    for (const auto& [key, _] : j.items())
        if (!known.contains(key))
            throw std::runtime_error("unknown config key '" + key + "' in " + path.string());
    for (const auto& [key, _] : known.items())
        if (!j.contains(key))
            throw std::runtime_error("missing config key '" + key + "' in " + path.string());

    RunConfig c;
    c.seed = j.at("seed");
    c.classes = j.at("classes");
    c.shots = j.at("shots");
    c.eval_instances = j.at("eval_instances");
    c.n_layers = j.at("n_layers");
    c.d_model = j.at("d_model");
    c.n_heads = j.at("n_heads");
    c.d_ff = j.at("d_ff");
    c.d_proj = j.at("d_proj");
    c.image_grid = j.at("image_grid");
    c.patch = j.at("patch");
    c.channels = j.at("channels");
    c.vocab = j.at("vocab");
    c.max_text_len = j.at("max_text_len");
    c.prompt_template = j.at("prompt_template");
    c.pretrain_steps = j.at("pretrain_steps");
    c.pretrain_batch = j.at("pretrain_batch");
    c.pretrain_lr = j.at("pretrain_lr");
    c.pretrain_pool = j.at("pretrain_pool");
    c.lr = j.at("lr");
    c.lr_multiplier = j.at("lr_multiplier");
    c.batch = j.at("batch");
    c.epochs = j.at("epochs");
    c.omega = j.at("omega");
    c.ratio = j.at("ratio");
    c.lambda = j.at("lambda");
    c.lskip = j.at("lskip");
    c.cskip = j.at("cskip");
    c.diag_samples = j.at("diag_samples");
    return c;
}

inline EncoderConfig encoder_of(const RunConfig& c) {
    EncoderConfig e;
    e.n_layers = c.n_layers;
    e.d_model = c.d_model;
    e.n_heads = c.n_heads;
    e.d_ff = c.d_ff;
    e.d_proj = c.d_proj;
    e.image_grid = c.image_grid;
    e.patch = c.patch;
    e.channels = c.channels;
    e.vocab = c.vocab;
    e.max_text_len = c.max_text_len;
    return e;
}

inline fs::path resolve_out_dir(const std::string& flag_value) {
    if (!flag_value.empty()) return flag_value;
    if (const char* env = std::getenv("SKIPT_OUT_DIR")) return env;
    return "skipt_out";
}

inline void write_manifest(const fs::path& out_dir, const std::string& command,
                           const std::string& config_path, const RunConfig& cfg,
                           const json& input_hashes, const std::vector<fs::path>& outputs) {
    json output_hashes = json::object();
    for (const fs::path& p : outputs) output_hashes[p.filename().string()] = file_hash(p);
    json manifest{{"command", command},
                  {"config_path", config_path},
                  {"resolved_config", config_json(cfg)},
                  {"out_dir", out_dir.string()},
                  {"input_hashes", input_hashes},
                  {"output_hashes", output_hashes}};
    std::ofstream f(out_dir / "manifest.json");
    f << manifest.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// subcommands

struct CommonArgs {
    std::string config_path;
    std::string out_flag;

    RunConfig load() const {
        return config_path.empty() ? RunConfig{} : config_from_file(config_path);
    }
};

inline int cmd_pretrain(const CommonArgs& common) {
    RunConfig cfg = common.load();
    fs::path out = resolve_out_dir(common.out_flag);
    fs::create_directories(out);

    SyntheticTask world = generate_task(cfg.seed, cfg.classes, cfg.shots);
    ModelState model = init_model(encoder_of(cfg), cfg.seed);
    PretrainConfig pc;
    pc.steps = cfg.pretrain_steps;
    pc.batch = cfg.pretrain_batch;
    pc.lr = cfg.pretrain_lr;
    pc.pool = cfg.pretrain_pool;
    pc.prompt_template = cfg.prompt_template;
    pc.seed = cfg.seed;

    auto t0 = std::chrono::steady_clock::now();
    auto losses = pretrain(model, world, pc);
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    fs::path ckpt = out / "pretrained.ckpt";
    save_checkpoint(ckpt, model);
    write_manifest(out, "pretrain", common.config_path, cfg, json::object(), {ckpt});
    std::cerr << "pretrained " << pc.steps << " steps in " << secs << "s, loss "
              << losses.front() << " -> " << losses.back() << "\n";
    std::cout << ckpt.string() << "\n";
    return 0;
}

inline int cmd_cache(const CommonArgs& common, const std::string& checkpoint_path, int omega_flag) {
    RunConfig cfg = common.load();
    if (omega_flag >= 0) cfg.omega = omega_flag;
    fs::path out = resolve_out_dir(common.out_flag);
    fs::create_directories(out);

    ModelState model = load_checkpoint(checkpoint_path);
    SyntheticTask world = generate_task(cfg.seed, cfg.classes, cfg.shots);
    std::vector<std::pair<int, Array>> samples;
    for (const TrainSample& s : base_train_samples(world))
        samples.emplace_back(s.sample_id, task_image(world, s.class_id, s.instance,
                                                     model.config.image_grid,
                                                     model.config.channels));
    auto seqs = encode_class_names(world.class_names, cfg.prompt_template,
                                   static_cast<std::size_t>(model.config.max_text_len));

    auto t0 = std::chrono::steady_clock::now();
    FeatureCache cache = build_cache(model, samples, seqs, cfg.omega, cfg.prompt_template);
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    fs::path cache_path = out / "cache.fcache";
    save_cache(cache_path, cache);
    write_manifest(out, "cache", common.config_path, cfg,
                   json{{"checkpoint", file_hash(checkpoint_path)}}, {cache_path});
    std::cerr << "cached depth-" << cfg.omega << " features for " << cache.vision.size()
              << " samples, " << cache.text.size() << " classes in " << secs << "s\n";
    std::cout << cache_path.string() << "\n";
    return 0;
}

struct TuneFlags {
    std::string checkpoint;
    std::string cache_path;
    bool lskip = false;
    bool cskip = false;
    int omega = -1;
    double ratio = -1.0;
    double lambda = -1.0;
    double lr = -1.0;
    int epochs = -1;
    std::int64_t seed = -1;
};

inline int cmd_tune(const CommonArgs& common, const TuneFlags& flags) {
    RunConfig cfg = common.load();
    if (flags.lskip) cfg.lskip = true;
    if (flags.cskip) cfg.cskip = true;
    if (flags.omega >= 0) cfg.omega = flags.omega;
    if (flags.ratio >= 0) cfg.ratio = flags.ratio;
    if (flags.lambda >= 0) cfg.lambda = flags.lambda;
    if (flags.lr > 0) cfg.lr = flags.lr;
    if (flags.epochs > 0) cfg.epochs = flags.epochs;
    if (flags.seed >= 0) cfg.seed = static_cast<std::uint64_t>(flags.seed);
    fs::path out = resolve_out_dir(common.out_flag);
    fs::create_directories(out);

    ModelState model = load_checkpoint(flags.checkpoint);
    SyntheticTask world = generate_task(cfg.seed, cfg.classes, cfg.shots);

    FeatureCache cache;
    json input_hashes{{"checkpoint", file_hash(flags.checkpoint)}};
    if (cfg.lskip) {
        cache = load_cache(flags.cache_path);
        input_hashes["cache"] = file_hash(flags.cache_path);
    }

    TrainConfig tc;
    tc.lr = cfg.lr;
    tc.lr_multiplier = cfg.lr_multiplier;
    tc.batch = cfg.batch;
    tc.epochs = cfg.epochs;
    tc.omega = cfg.omega;
    tc.ratio = cfg.ratio;
    tc.lambda = cfg.lambda;
    tc.lskip = cfg.lskip;
    tc.cskip = cfg.cskip;
    tc.seed = cfg.seed;
    tc.prompt_template = cfg.prompt_template;
    tc.eval_instances = cfg.eval_instances;

    RunReport report = tune(model, world, cfg.lskip ? &cache : nullptr, tc);

    fs::path report_path = out / "run_report.json";
    {
        std::ofstream f(report_path);
        f << report_to_json(report).dump(2) << "\n";
    }
    fs::path metrics_path = out / "metrics.csv";
    {
        std::ofstream f(metrics_path);
        f << "epoch,loss,total_macs,body_macs\n";
        for (const EpochStats& e : report.epochs)
            f << e.epoch << "," << e.mean_loss << "," << e.total_macs << "," << e.body_macs
              << "\n";
    }
    fs::path cost_path = out / "cost.csv";
    {
        std::string label = "N=" + std::to_string(model.config.n_layers) +
                            ";omega=" + std::to_string(report.omega) +
                            ";M=" + std::to_string(world.base_classes.size()) +
                            ";m=" + std::to_string(report.predicted_m_expected);
        write_cost_csv(cost_path,
                       {{label, report.predicted.skip,
                         report.avg_step_body_macs / static_cast<double>(cfg.batch)}});
    }
    fs::path tuned_path = out / "tuned.ckpt";
    save_checkpoint(tuned_path, model);

    write_manifest(out, "tune", common.config_path, cfg, input_hashes,
                   {report_path, metrics_path, cost_path, tuned_path});
    std::cerr << "tuned in " << report.elapsed_seconds << "s: base " << report.base_acc
              << "%, new " << report.new_acc << "%, H " << report.h << "\n";
    std::cout << report_path.string() << "\n";
    return 0;
}

inline int cmd_diagnose(const CommonArgs& common, const std::string& before_path,
                        const std::string& after_path, int samples_flag) {
    RunConfig cfg = common.load();
    if (samples_flag > 0) cfg.diag_samples = samples_flag;
    fs::path out = resolve_out_dir(common.out_flag);
    fs::create_directories(out);

    ModelState before = load_checkpoint(before_path);
    ModelState after = load_checkpoint(after_path);
    if (!(before.config == after.config))
        throw std::runtime_error("diagnose: checkpoint configs do not match");
    SyntheticTask world = generate_task(cfg.seed, cfg.classes, cfg.shots);

    auto pool = base_train_samples(world);
    Rng rng = Rng(cfg.seed).stream("diagnose");
    rng.shuffle(pool);
    std::size_t n = std::min(pool.size(), static_cast<std::size_t>(cfg.diag_samples));
    pool.resize(n);

    std::vector<std::string> base_names;
    for (int id : world.base_classes)
        base_names.push_back(world.class_names[static_cast<std::size_t>(id)]);
    auto base_seqs = encode_class_names(base_names, cfg.prompt_template,
                                        static_cast<std::size_t>(before.config.max_text_len));

    std::vector<Array> images;
    for (const TrainSample& s : pool)
        images.push_back(task_image(world, s.class_id, s.instance, before.config.image_grid,
                                    before.config.channels));

    FSProfile fs_profile = feature_sensitivity(before, after, images, base_seqs);
    fs::path fs_path = out / "fs_profile.csv";
    write_fs_csv(fs_path, fs_profile);

    // GD of every class token except each image's own label (removing the
    // label is undefined), measured on the tuned model
    std::vector<GdRecord> gd_rows;
    std::vector<int> local_of(static_cast<std::size_t>(world.num_classes), -1);
    for (std::size_t j = 0; j < world.base_classes.size(); ++j)
        local_of[static_cast<std::size_t>(world.base_classes[j])] = static_cast<int>(j);
    for (std::size_t i = 0; i < pool.size(); ++i) {
        std::size_t label = static_cast<std::size_t>(local_of[static_cast<std::size_t>(pool[i].class_id)]);
        for (std::size_t c = 0; c < base_seqs.size(); ++c) {
            if (c == label) continue;
            double gd = gradient_dependence(after, images[i], base_seqs, label, c, GdRoute::kMask);
            gd_rows.push_back(GdRecord{static_cast<int>(i), world.base_classes[c], gd});
        }
    }
    fs::path gd_path = out / "gd_hist.csv";
    write_gd_csv(gd_path, gd_rows);

    write_manifest(out, "diagnose", common.config_path, cfg,
                   json{{"before", file_hash(before_path)}, {"after", file_hash(after_path)}},
                   {fs_path, gd_path});
    std::cout << fs_path.string() << "\n" << gd_path.string() << "\n";
    return 0;
}

inline int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_flag) {
    if (run_dirs.empty()) throw std::runtime_error("report: at least one run directory required");
    fs::path out = resolve_out_dir(out_flag);
    fs::create_directories(out);

    std::vector<fs::path> unique_dirs;
    std::set<std::string> seen;
    for (const std::string& d : run_dirs) {
        std::string canon = fs::weakly_canonical(d).string();
        if (!seen.insert(canon).second) {
            std::cerr << "warning: duplicate run dir '" << d << "' ignored\n";
            continue;
        }
        unique_dirs.push_back(d);
    }

    struct Row {
        bool lskip, cskip;
        double base, nw, h, step_macs;
    };
    std::vector<Row> rows;
    for (const fs::path& dir : unique_dirs) {
        std::ifstream f(dir / "run_report.json");
        if (!f) throw std::runtime_error("report: no run_report.json in '" + dir.string() + "'");
        json j = json::parse(f);
        rows.push_back(Row{j.at("lskip"), j.at("cskip"), j.at("base_acc"), j.at("new_acc"),
                           j.at("h"), j.at("avg_step_total_macs")});
    }
    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
        return (a.lskip ? 1 : 0) + (a.cskip ? 2 : 0) < (b.lskip ? 1 : 0) + (b.cskip ? 2 : 0);
    });
    double ft_macs = 0.0;
    for (const Row& r : rows)
        if (!r.lskip && !r.cskip) ft_macs = r.step_macs;

    std::ostringstream table;
    table << "LSkip  CSkip    Base     New       H    Step-MACs(M)   vs FT\n";
    char line[160];
    for (const Row& r : rows) {
        double rel = ft_macs > 0 ? 100.0 * r.step_macs / ft_macs : 0.0;
        std::snprintf(line, sizeof(line), "%5s  %5s  %6.2f  %6.2f  %6.2f  %12.1f  %5.1f%%\n",
                      r.lskip ? "yes" : "no", r.cskip ? "yes" : "no", r.base, r.nw, r.h,
                      r.step_macs / 1e6, rel);
        table << line;
    }
    std::cout << table.str();

    fs::path txt = out / "ablation.txt";
    std::ofstream(txt) << table.str();
    fs::path csv = out / "ablation.csv";
    {
        std::ofstream f(csv);
        f << "lskip,cskip,base,new,h,step_macs,vs_ft\n";
        for (const Row& r : rows) {
            double rel = ft_macs > 0 ? r.step_macs / ft_macs : 0.0;
            f << (r.lskip ? 1 : 0) << "," << (r.cskip ? 1 : 0) << "," << r.base << "," << r.nw
              << "," << r.h << "," << r.step_macs << "," << rel << "\n";
        }
    }
    return 0;
}

// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv) {
    CLI::App app{"Skip-tuning workbench for dual-encoder image-text models"};
    app.require_subcommand(1);

    CommonArgs pre_common, cache_common, tune_common, diag_common;
    std::string cache_ckpt;
    int cache_omega = -1;
    TuneFlags tune_flags;
    std::string diag_before, diag_after;
    int diag_samples = -1;
    std::vector<std::string> report_dirs;
    std::string report_out;

    CLI::App* p = app.add_subcommand("pretrain", "train a base model on the synthetic world");
    p->add_option("--config", pre_common.config_path, "config file (must be complete)");
    p->add_option("--out", pre_common.out_flag, "output directory");

    CLI::App* c = app.add_subcommand("cache", "store depth-omega features for the tuning set");
    c->add_option("--config", cache_common.config_path, "config file");
    c->add_option("--out", cache_common.out_flag, "output directory");
    c->add_option("--checkpoint", cache_ckpt, "pretrained checkpoint")->required();
    c->add_option("--omega", cache_omega, "skip depth");

    CLI::App* t = app.add_subcommand("tune", "fine-tune with optional LSkip/CSkip");
    t->add_option("--config", tune_common.config_path, "config file");
    t->add_option("--out", tune_common.out_flag, "output directory");
    t->add_option("--checkpoint", tune_flags.checkpoint, "pretrained checkpoint")->required();
    auto* cache_opt = t->add_option("--cache", tune_flags.cache_path, "feature cache file");
    t->add_flag("--lskip", tune_flags.lskip, "enable layer-wise skipping")->needs(cache_opt);
    t->add_flag("--cskip", tune_flags.cskip, "enable class-wise skipping");
    t->add_option("--omega", tune_flags.omega, "skip depth");
    t->add_option("--r", tune_flags.ratio, "sampling ratio");
    t->add_option("--lambda", tune_flags.lambda, "decay coefficient");
    t->add_option("--lr", tune_flags.lr, "base learning rate");
    t->add_option("--epochs", tune_flags.epochs, "training epochs");
    t->add_option("--seed", tune_flags.seed, "run seed");

    CLI::App* d = app.add_subcommand("diagnose", "feature-sensitivity and gradient-dependence CSVs");
    d->add_option("--config", diag_common.config_path, "config file");
    d->add_option("--out", diag_common.out_flag, "output directory");
    d->add_option("--before", diag_before, "checkpoint before tuning")->required();
    d->add_option("--after", diag_after, "checkpoint after tuning")->required();
    d->add_option("--samples", diag_samples, "training images to average over");

    CLI::App* r = app.add_subcommand("report", "ablation table from tune run directories");
    r->add_option("dirs", report_dirs, "run directories")->required();
    r->add_option("--out", report_out, "output directory");

    try {
        app.parse(argc, argv);
        if (p->parsed()) return cmd_pretrain(pre_common);
        if (c->parsed()) return cmd_cache(cache_common, cache_ckpt, cache_omega);
        if (t->parsed()) return cmd_tune(tune_common, tune_flags);
        if (d->parsed()) return cmd_diagnose(diag_common, diag_before, diag_after, diag_samples);
        if (r->parsed()) return cmd_report(report_dirs, report_out);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

}  // namespace skipt::cli
