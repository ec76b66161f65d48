#pragma once

#include <string>
#include <vector>

#include "skipt/array.hpp"
#include "skipt/rng.hpp"

namespace skipt {

// Procedurally generated image-text classification world. Every image is a
// pure function of (seed, class, instance): a class-specific stripe/checker
// pattern with a class-colored blob, plus per-instance noise and brightness
// jitter strong enough that raw pixels do not separate classes trivially.
// Classes are split half base / half new by a seeded shuffle.
struct SyntheticTask {
    std::uint64_t seed = 0;
    int num_classes = 0;
    int shots = 0;  // training instances per base class
    std::vector<std::string> class_names;
    std::vector<int> base_classes;
    std::vector<int> new_classes;
};

// instance-index blocks; training uses [0, shots), held-out evaluation and
// the pretraining pool draw from disjoint ranges
inline constexpr int kEvalInstanceOffset = 100000;
inline constexpr int kPretrainInstanceOffset = 200000;

inline std::string synth_class_name(std::uint64_t seed, int class_id,
                                    const std::vector<std::string>& taken) {
    static const char* consonants = "bcdfgklmnprstvz";
    static const char* vowels = "aeiou";
    Rng rng = Rng(seed).stream("name" + std::to_string(class_id));
    for (;;) {
        std::string name;
        for (int i = 0; i < 5; ++i) {
            const char* pool = (i % 2 == 0) ? consonants : vowels;
            std::size_t len = (i % 2 == 0) ? 15 : 5;
            name.push_back(pool[rng.integer(len)]);
        }
        bool clash = false;
        for (const std::string& t : taken) clash = clash || t == name;
        if (!clash) return name;
    }
}

inline SyntheticTask generate_task(std::uint64_t seed, int num_classes, int shots) {
    if (num_classes < 4 || num_classes % 2 != 0)
        throw std::invalid_argument("task: class count must be even and at least 4");
    if (shots < 1) throw std::invalid_argument("task: shots must be positive");
    SyntheticTask t;
    t.seed = seed;
    t.num_classes = num_classes;
    t.shots = shots;
    for (int j = 0; j < num_classes; ++j)
        t.class_names.push_back(synth_class_name(seed, j, t.class_names));

    std::vector<int> ids(static_cast<std::size_t>(num_classes));
    for (int j = 0; j < num_classes; ++j) ids[static_cast<std::size_t>(j)] = j;
    Rng split = Rng(seed).stream("split");
    split.shuffle(ids);
    t.base_classes.assign(ids.begin(), ids.begin() + num_classes / 2);
    t.new_classes.assign(ids.begin() + num_classes / 2, ids.end());
    return t;
}

inline Array task_image(const SyntheticTask& t, int class_id, int instance, int grid = 16,
                        int channels = 3) {
    if (class_id < 0 || class_id >= t.num_classes)
        throw std::out_of_range("task_image: class " + std::to_string(class_id));
    Rng style = Rng(t.seed).stream("style" + std::to_string(class_id));
    int pattern = static_cast<int>(style.integer(4));  // h / v / diagonal / checker
    int period = 3 + static_cast<int>(style.integer(3));
    int phase = static_cast<int>(style.integer(static_cast<std::uint64_t>(period)));
    double fg[3], bg[3], blob[3];
    for (int c = 0; c < 3; ++c) {
        fg[c] = style.uniform(0.55, 0.95);
        bg[c] = style.uniform(0.05, 0.45);
        blob[c] = style.uniform(0.1, 0.9);
    }
    int blob_cx = 3 + static_cast<int>(style.integer(static_cast<std::uint64_t>(grid - 6)));
    int blob_cy = 3 + static_cast<int>(style.integer(static_cast<std::uint64_t>(grid - 6)));
    int blob_r = 2 + static_cast<int>(style.integer(2));

    Rng inst = Rng(t.seed).stream("img" + std::to_string(class_id) + "." + std::to_string(instance));
    double brightness = inst.uniform(-0.06, 0.06);
    int jx = static_cast<int>(inst.integer(3)) - 1;
    int jy = static_cast<int>(inst.integer(3)) - 1;

    Array img = Array::zeros({static_cast<std::size_t>(grid), static_cast<std::size_t>(grid),
                              static_cast<std::size_t>(channels)});
    for (int y = 0; y < grid; ++y)
        for (int x = 0; x < grid; ++x) {
            int stripe_coord;
            switch (pattern) {
                case 0: stripe_coord = y; break;
                case 1: stripe_coord = x; break;
                case 2: stripe_coord = x + y; break;
                default: stripe_coord = (x / period + y / period); break;
            }
            bool on = ((stripe_coord + phase) / (pattern == 3 ? 1 : period)) % 2 == 0;
            int dx = x - (blob_cx + jx), dy = y - (blob_cy + jy);
            bool in_blob = dx * dx + dy * dy <= blob_r * blob_r;
            for (int c = 0; c < channels; ++c) {
                double base = in_blob ? blob[c % 3] : (on ? fg[c % 3] : bg[c % 3]);
                double v = base + brightness + 0.10 * inst.normal();
                img.data[static_cast<std::size_t>((y * grid + x) * channels + c)] =
                    std::min(1.0, std::max(0.0, v));
            }
        }
    return img;
}

struct TrainSample {
    int sample_id = 0;
    int class_id = 0;
    int instance = 0;
};

// stable enumeration of the tuning set: base classes in split order, shots in
// instance order; sample ids are unique across the task
inline std::vector<TrainSample> base_train_samples(const SyntheticTask& t) {
    std::vector<TrainSample> out;
    for (int class_id : t.base_classes)
        for (int k = 0; k < t.shots; ++k)
            out.push_back(TrainSample{class_id * 1000000 + k, class_id, k});
    return out;
}

// the full M x K training pool (both splits)
inline std::vector<TrainSample> all_train_samples(const SyntheticTask& t) {
    std::vector<TrainSample> out;
    for (int class_id = 0; class_id < t.num_classes; ++class_id)
        for (int k = 0; k < t.shots; ++k)
            out.push_back(TrainSample{class_id * 1000000 + k, class_id, k});
    return out;
}

}  // namespace skipt
