#pragma once

#include <chrono>

#include "skipt/cache.hpp"
#include "skipt/diagnostics.hpp"
#include "skipt/sampler.hpp"
#include "skipt/task.hpp"

namespace skipt {

inline double harmonic_mean(double base, double new_acc) {
    if (base + new_acc <= 0.0) return 0.0;
    return 2.0 * base * new_acc / (base + new_acc);
}

// ---------------------------------------------------------------------------
// zero-shot evaluation: argmax cosine between the image feature and the text
// features of the split's classes

inline double evaluate_split(const ModelState& m, const SyntheticTask& t,
                             const std::vector<int>& split_ids, const std::string& prompt_template,
                             int instance_offset, int instances_per_class) {
    if (split_ids.empty()) throw std::invalid_argument("evaluate: empty split");
    std::vector<std::string> names;
    for (int id : split_ids) names.push_back(t.class_names.at(static_cast<std::size_t>(id)));
    auto seqs = encode_class_names(names, prompt_template,
                                   static_cast<std::size_t>(m.config.max_text_len));
    std::vector<Array> class_feats;
    for (const TokenSequence& s : seqs) class_feats.push_back(encode_tokens(m, s));

    int correct = 0, total = 0;
    for (std::size_t j = 0; j < split_ids.size(); ++j) {
        for (int k = 0; k < instances_per_class; ++k) {
            Array img = task_image(t, split_ids[j], instance_offset + k, m.config.image_grid,
                                   m.config.channels);
            Array f = encode_image(m, img);
            std::size_t best = 0;
            double best_cos = -2.0;
            for (std::size_t c = 0; c < class_feats.size(); ++c) {
                double cos = ops::cosine(f, class_feats[c]);
                if (cos > best_cos) {
                    best_cos = cos;
                    best = c;
                }
            }
            correct += best == j ? 1 : 0;
            total++;
        }
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

enum class Split { kBase, kNew };

inline double evaluate(const ModelState& m, const SyntheticTask& t, Split split,
                       const std::string& prompt_template, int instances_per_class,
                       int instance_offset = kEvalInstanceOffset) {
    const auto& ids = split == Split::kBase ? t.base_classes : t.new_classes;
    return evaluate_split(m, t, ids, prompt_template, instance_offset, instances_per_class);
}

// ---------------------------------------------------------------------------
// toy alignment pretraining: full ITM over every class of the world, text
// towers shared across the batch, every parameter trainable (this phase
// stands in for the large-scale pretraining that produced the base model)

struct PretrainConfig {
    int steps = 400;
    int batch = 8;
    double lr = 0.05;
    int pool = 64;  // distinct pretraining instances per class
    std::string prompt_template = "a [CLS]";
    std::uint64_t seed = 1;
};

inline std::vector<double> pretrain(ModelState& model, const SyntheticTask& world,
                                    const PretrainConfig& cfg) {
    if (cfg.steps < 1 || cfg.batch < 1 || cfg.lr <= 0.0)
        throw std::invalid_argument("pretrain: steps, batch and lr must be positive");
    auto seqs = encode_class_names(world.class_names, cfg.prompt_template,
                                   static_cast<std::size_t>(model.config.max_text_len));
    std::size_t m_classes = seqs.size();
    Rng rng = Rng(cfg.seed).stream("pretrain");
    std::vector<double> losses;
    losses.reserve(static_cast<std::size_t>(cfg.steps));

    for (int step = 0; step < cfg.steps; ++step) {
        Graph g(&model.params);
        std::vector<NodeId> class_feats;
        for (std::size_t j = 0; j < m_classes; ++j) {
            NodeId t0 = embed_tokens_node(g, model, seqs[j]);
            NodeId top = run_layers_node(g, t0, Side::kText, 0, model.config.n_layers, model);
            class_feats.push_back(project_node(g, top, Side::kText, model, seqs[j].ids.size()));
        }
        std::vector<NodeId> batch_losses;
        for (int b = 0; b < cfg.batch; ++b) {
            std::size_t cls = static_cast<std::size_t>(rng.integer(m_classes));
            int inst = kPretrainInstanceOffset + static_cast<int>(rng.integer(static_cast<std::uint64_t>(cfg.pool)));
            Array img = task_image(world, static_cast<int>(cls), inst, model.config.image_grid,
                                   model.config.channels);
            NodeId x = embed_image_node(g, model, img, "img" + std::to_string(b));
            NodeId top = run_layers_node(g, x, Side::kVision, 0, model.config.n_layers, model);
            NodeId f = project_node(g, top, Side::kVision, model,
                                    static_cast<std::size_t>(model.config.vision_positions()));
            Graph::ScopeGuard scope(g, "loss");
            NodeId cos = cosine_row_node(g, f, class_feats);
            batch_losses.push_back(itm_loss_node(g, itm_logits_node(g, cos), cls));
        }
        Graph::ScopeGuard scope(g, "loss");
        NodeId loss = g.mean(g.stack_scalars(batch_losses));
        try {
            g.forward();
        } catch (const std::runtime_error& e) {
            throw std::runtime_error("pretraining diverged at step " + std::to_string(step) +
                                     " (seed " + std::to_string(cfg.seed) + ", lr " +
                                     std::to_string(cfg.lr) + "): " + e.what());
        }
        double loss_value = g.value(loss).data[0];
        if (!std::isfinite(loss_value))
            throw std::runtime_error("pretraining diverged at step " + std::to_string(step) +
                                     " (seed " + std::to_string(cfg.seed) + ", lr " +
                                     std::to_string(cfg.lr) + ")");
        auto grads = g.backward(loss);
        sgd_update(model.params, grads.grads, cfg.lr);
        losses.push_back(loss_value);
    }
    return losses;
}

// ---------------------------------------------------------------------------
// fine-tuning with the LSkip / CSkip toggles. One code path serves all four
// ablation rows: lskip off runs the live towers with omega = 0 semantics,
// cskip off uses the full base class set for every image.

struct TrainConfig {
    double lr = 2e-5;
    double lr_multiplier = 1000.0;  // toy loss surfaces need larger steps than CLIP's
    int batch = 4;
    int epochs = 20;
    int omega = 6;
    double ratio = 0.5;
    double lambda = 0.3;
    bool lskip = false;
    bool cskip = false;
    std::uint64_t seed = 0;
    std::string prompt_template = "a [CLS]";
    int eval_instances = 16;
    // cache-free control: freeze layers 1..frozen_depth while still running
    // them live. -1 means no override. Used to compare caching against the
    // frozen-shallow full model it must reproduce.
    int frozen_depth = -1;
};

struct EpochStats {
    int epoch = 0;
    double mean_loss = 0.0;
    double total_macs = 0.0;
    double body_macs = 0.0;
};

struct RunReport {
    bool lskip = false, cskip = false;
    int omega = 0;
    double ratio = 1.0, lambda = 0.3;
    double base_acc = 0.0, new_acc = 0.0, h = 0.0;
    double zero_shot_base = 0.0, zero_shot_new = 0.0;
    std::vector<EpochStats> epochs;
    double avg_step_total_macs = 0.0;
    double avg_step_body_macs = 0.0;
    std::size_t peak_live_elements = 0;
    CostPrediction predicted;
    double predicted_m_expected = 0.0;
    double elapsed_seconds = 0.0;  // wall clock; excluded from the serialized report
};

inline json report_to_json(const RunReport& r) {
    json epochs = json::array();
    for (const EpochStats& e : r.epochs)
        epochs.push_back({{"epoch", e.epoch},
                          {"mean_loss", e.mean_loss},
                          {"total_macs", e.total_macs},
                          {"body_macs", e.body_macs}});
    return json{{"lskip", r.lskip},
                {"cskip", r.cskip},
                {"omega", r.omega},
                {"ratio", r.ratio},
                {"lambda", r.lambda},
                {"base_acc", r.base_acc},
                {"new_acc", r.new_acc},
                {"h", r.h},
                {"zero_shot_base", r.zero_shot_base},
                {"zero_shot_new", r.zero_shot_new},
                {"epochs", epochs},
                {"avg_step_total_macs", r.avg_step_total_macs},
                {"avg_step_body_macs", r.avg_step_body_macs},
                {"peak_live_elements", r.peak_live_elements},
                {"predicted_baseline", r.predicted.baseline},
                {"predicted_skip", r.predicted.skip},
                {"predicted_ratio", r.predicted.ratio},
                {"predicted_m_expected", r.predicted_m_expected}};
}

inline RunReport tune(ModelState& model, const SyntheticTask& task, const FeatureCache* cache,
                      const TrainConfig& cfg) {
    if (cfg.epochs < 1 || cfg.batch < 1 || cfg.lr <= 0.0 || cfg.lr_multiplier <= 0.0)
        throw std::invalid_argument("tune: lr, batch and epochs must be positive");
    if (cfg.lskip) {
        if (!cache) throw std::invalid_argument("tune: lskip requires a feature cache");
        if (cache->omega != cfg.omega)
            throw std::runtime_error("tune: cache depth " + std::to_string(cache->omega) +
                                     " does not match omega " + std::to_string(cfg.omega));
        if (cache->prompt_template != cfg.prompt_template)
            throw std::runtime_error("tune: cache prompt template '" + cache->prompt_template +
                                     "' does not match '" + cfg.prompt_template + "'");
        check_cache_provenance(*cache, model);
    }
    auto t_start = std::chrono::steady_clock::now();

    const std::vector<int>& base_ids = task.base_classes;
    std::size_t m_base = base_ids.size();
    std::vector<std::string> base_names;
    for (int id : base_ids) base_names.push_back(task.class_names.at(static_cast<std::size_t>(id)));
    auto base_seqs = encode_class_names(base_names, cfg.prompt_template,
                                        static_cast<std::size_t>(model.config.max_text_len));
    std::vector<int> local_of(static_cast<std::size_t>(task.num_classes), -1);
    for (std::size_t j = 0; j < m_base; ++j) local_of[static_cast<std::size_t>(base_ids[j])] = static_cast<int>(j);

    auto samples = base_train_samples(task);

    RunReport report;
    report.lskip = cfg.lskip;
    report.cskip = cfg.cskip;
    report.omega = cfg.lskip ? cfg.omega : (cfg.frozen_depth >= 0 ? cfg.frozen_depth : 0);
    report.ratio = cfg.cskip ? cfg.ratio : 1.0;
    report.lambda = cfg.lambda;
    report.zero_shot_base =
        evaluate(model, task, Split::kBase, cfg.prompt_template, cfg.eval_instances);
    report.zero_shot_new =
        evaluate(model, task, Split::kNew, cfg.prompt_template, cfg.eval_instances);

    // image-conditioned class rankings, computed once from the incoming
    // (pretrained) model
    SamplerConfig sampler_cfg{cfg.ratio, cfg.lambda, SamplerMode::kExponential};
    std::map<int, ClassRanking> rankings;  // sample id -> ranking over local indices
    if (cfg.cskip) {
        validate_sampler(sampler_cfg);
        std::vector<Array> class_feats;
        for (const TokenSequence& s : base_seqs) class_feats.push_back(encode_tokens(model, s));
        for (const TrainSample& s : samples) {
            Array img = task_image(task, s.class_id, s.instance, model.config.image_grid,
                                   model.config.channels);
            rankings.emplace(s.sample_id, rank_classes(encode_image(model, img), class_feats));
        }
    }

    // analytic cost prediction from per-layer costs measured on one probe step
    {
        Array probe_img = task_image(task, samples[0].class_id, samples[0].instance,
                                     model.config.image_grid, model.config.channels);
        auto [c_v, c_t] = calibrate_layer_costs(model, probe_img, base_seqs);
        report.predicted_m_expected =
            cfg.cskip ? expected_subset_size(static_cast<int>(m_base), sampler_cfg)
                      : static_cast<double>(m_base);
        report.predicted = predict_cost(model.config.n_layers, report.omega,
                                        static_cast<int>(m_base), report.predicted_m_expected,
                                        c_v, c_t);
    }

    std::set<std::string> trainable = deep_trainable_names(model, report.omega);
    double lr_eff = cfg.lr * cfg.lr_multiplier;
    Rng data_rng = Rng(cfg.seed).stream("data");
    Rng sampler_rng = Rng(cfg.seed).stream("sampler");

    std::vector<int> all_locals(m_base);
    for (std::size_t j = 0; j < m_base; ++j) all_locals[j] = static_cast<int>(j);

    long total_steps = 0;
    double total_macs = 0.0, total_body = 0.0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<TrainSample> order = samples;
        data_rng.shuffle(order);
        double loss_sum = 0.0;
        double epoch_macs = 0.0, epoch_body = 0.0;
        long epoch_steps = 0;

        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
            std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
            Graph g(&model.params);
            std::vector<NodeId> losses;
            for (std::size_t i = start; i < stop; ++i) {
                const TrainSample& s = order[i];
                int local_true = local_of[static_cast<std::size_t>(s.class_id)];
                std::vector<int> subset =
                    cfg.cskip ? sample_subset(rankings.at(s.sample_id), sampler_cfg, local_true,
                                              sampler_rng)
                              : all_locals;
                std::size_t label_pos =
                    static_cast<std::size_t>(std::find(subset.begin(), subset.end(), local_true) -
                                             subset.begin());

                ItmExample ex;
                if (cfg.lskip) {
                    ex.vision_acts = LayerActivations{cache->omega, cache->vision_entry(s.sample_id)};
                } else {
                    ex.image = task_image(task, s.class_id, s.instance, model.config.image_grid,
                                          model.config.channels);
                }
                for (int local : subset) {
                    TextBranch b;
                    b.class_id = base_ids[static_cast<std::size_t>(local)];
                    if (cfg.lskip)
                        b.acts = LayerActivations{cache->omega, cache->text_entry(b.class_id)};
                    else
                        b.tokens = base_seqs[static_cast<std::size_t>(local)];
                    ex.classes.push_back(std::move(b));
                }
                ex.label_pos = label_pos;
                losses.push_back(build_itm_loss(g, model, ex, "ex" + std::to_string(i - start)));
            }
            NodeId batch_loss;
            {
                Graph::ScopeGuard scope(g, "loss");
                batch_loss = g.mean(g.stack_scalars(losses));
            }
            try {
                g.forward();
            } catch (const std::runtime_error& e) {
                throw std::runtime_error("tuning diverged (non-finite loss) at epoch " +
                                         std::to_string(epoch) + ", seed " +
                                         std::to_string(cfg.seed) + ": " + e.what());
            }
            double loss_value = g.value(batch_loss).data[0];
            auto grads = g.backward(batch_loss, trainable);
            sgd_update(model.params, grads.grads, lr_eff);

            loss_sum += loss_value * static_cast<double>(stop - start);
            epoch_macs += g.counters().total();
            epoch_body += g.counters().scoped_total("vision.layer.") +
                          g.counters().scoped_total("text.layer.");
            report.peak_live_elements = std::max(report.peak_live_elements, g.live_elements());
            epoch_steps++;
        }
        total_steps += epoch_steps;
        total_macs += epoch_macs;
        total_body += epoch_body;
        report.epochs.push_back(EpochStats{epoch, loss_sum / static_cast<double>(order.size()),
                                           epoch_macs, epoch_body});
    }
    report.avg_step_total_macs = total_macs / static_cast<double>(total_steps);
    report.avg_step_body_macs = total_body / static_cast<double>(total_steps);

    report.base_acc = evaluate(model, task, Split::kBase, cfg.prompt_template, cfg.eval_instances);
    report.new_acc = evaluate(model, task, Split::kNew, cfg.prompt_template, cfg.eval_instances);
    report.h = harmonic_mean(report.base_acc, report.new_acc);
    report.elapsed_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return report;
}

}  // namespace skipt
