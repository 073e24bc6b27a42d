#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "imtfa/common.hpp"

namespace imtfa {

// Seeded RNG with explicitly-implemented distributions so that results
// do not depend on the standard library's distribution internals.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint32_t next_u32() { return engine_(); }

    // Uniform in [0,1).
    float uniform() {
        return float(engine_() >> 8) * (1.0f / 16777216.0f);
    }

    float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    int uniform_int(int n) {
        check(n > 0, "Rng::uniform_int: n must be positive");
        return int(uint64_t(engine_()) * uint64_t(n) >> 32);
    }

    // Standard normal via Box-Muller.
    float normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        float u1 = uniform();
        float u2 = uniform();
        if (u1 < 1e-12f) u1 = 1e-12f;
        const float r = std::sqrt(-2.f * std::log(u1));
        const float t = 2.f * 3.14159265358979323846f * u2;
        spare_ = r * std::sin(t);
        have_spare_ = true;
        return r * std::cos(t);
    }

    float normal(float mean, float stddev) { return mean + stddev * normal(); }

    // Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int i = int(v.size()) - 1; i > 0; --i) {
            std::swap(v[size_t(i)], v[size_t(uniform_int(i + 1))]);
        }
    }

    // k distinct indices drawn uniformly from [0, n) without replacement.
    std::vector<int> sample_without_replacement(int n, int k) {
        check(k <= n, "Rng::sample_without_replacement: k > n");
        std::vector<int> idx(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) idx[size_t(i)] = i;
        shuffle(idx);
        idx.resize(size_t(k));
        return idx;
    }

private:
    std::mt19937 engine_;
    bool have_spare_ = false;
    float spare_ = 0.f;
};

}  // namespace imtfa
