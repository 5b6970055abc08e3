#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mpa {

// Deterministic seed derivation. splitmix64 is stable across platforms,
// unlike std::seed_seq or distribution internals.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t seed_mix(std::uint64_t a, std::uint64_t b) {
    return splitmix64(a + 0x632be59bd9b4e019ULL * splitmix64(b));
}

inline std::uint64_t seed_mix(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return seed_mix(seed_mix(a, b), c);
}

// Small self-contained PRNG for permutations and parameter draws where
// bit-reproducibility must not depend on libstdc++ internals.
class SplitMix {
public:
    explicit SplitMix(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double next_double() {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    // Uniform in [lo, hi].
    double uniform(double lo, double hi) {
        return lo + (hi - lo) * next_double();
    }

    // Uniform integer in [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(next() % span);
    }

    // Standard normal via Box-Muller, deterministic two-draw form.
    double normal() {
        double u1 = next_double();
        while (u1 <= 0.0) {
            u1 = next_double();
        }
        const double u2 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return r * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

private:
    std::uint64_t state_;
};

template <class RandomIt>
void fisher_yates_shuffle(RandomIt first, RandomIt last, SplitMix& rng) {
    const auto n = last - first;
    for (auto i = n - 1; i > 0; --i) {
        const auto j = rng.uniform_int(0, i);
        std::swap(first[i], first[j]);
    }
}

// Plain image/mask containers for the data plane (generation, augmentation,
// metrics). The autodiff tensors live in tensor.hpp; images are cast into
// them only at encode time.
struct Image {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> data;  // channel-major, row-major within channel

    Image() = default;
    Image(int c, int h, int w, double fill = 0.0)
        : channels(c), height(h), width(w),
          data(static_cast<std::size_t>(c) * h * w, fill) {}

    double& at(int c, int y, int x) {
        return data[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    double at(int c, int y, int x) const {
        return data[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
};

struct BinaryMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> data;  // 0 or 1, row-major

    BinaryMask() = default;
    BinaryMask(int h, int w, std::uint8_t fill = 0)
        : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

    std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }

    std::int64_t foreground_count() const {
        std::int64_t n = 0;
        for (const auto v : data) {
            n += (v != 0);
        }
        return n;
    }
};

// One few-shot task: K annotated supports plus held-out queries, all from
// one category of one domain.
struct Episode {
    std::vector<std::pair<Image, BinaryMask>> supports;
    std::vector<std::pair<Image, BinaryMask>> eval_queries;
    int category_id = 0;
    int domain_id = 0;
};

struct degenerate_mask_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct adaptation_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace mpa
