#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace skipt {

// Seeded RNG with named sub-streams. All randomness in a run flows from one
// root seed; sub-streams ("data", "sampler", "init", ...) are derived by
// hashing the stream name into the seed, so adding a consumer never perturbs
// the draws of another. The uniform/normal mappings are spelled out here
// instead of using std distributions, which are not pinned by the standard.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    Rng stream(std::string_view name) const {
        return Rng(mix(seed_of(eng_), fnv1a64(name)));
    }

    std::uint64_t raw() { return eng_(); }

    // uniform in [0, 1) with 53-bit resolution
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; one value per call, deterministic across platforms
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // unbiased integer in [0, n)
    std::uint64_t integer(std::uint64_t n) {
        if (n == 0) return 0;
        std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v = eng_();
        while (v >= limit) v = eng_();
        return v % n;
    }

    template <typename T>
    void shuffle(std::vector<T>& xs) {
        for (std::size_t i = xs.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(integer(i));
            std::swap(xs[i - 1], xs[j]);
        }
    }

    static std::uint64_t fnv1a64(std::string_view s) {
        std::uint64_t h = 14695981039346656037ull;
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ull;
        }
        return h;
    }

private:
    std::mt19937_64 eng_;

    // draw one word to derive a child seed without disturbing this stream's
    // callers: the parent is const, so re-seed a copy
    static std::uint64_t seed_of(std::mt19937_64 eng) { return eng(); }

    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        std::uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2));
        x ^= x >> 30;
        x *= 0xbf58476d1ce4e5b9ull;
        x ^= x >> 27;
        x *= 0x94d049bb133111ebull;
        x ^= x >> 31;
        return x;
    }
};

}  // namespace skipt
