// Seeded randomness with fully pinned-down transforms. std::mt19937_64 has a
// standard-specified output sequence; the distribution transforms here are
// hand-rolled because the stdlib ones are implementation-defined, which would
// break byte-identical artifact reproduction.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <utility>
#include <vector>

namespace proalign {

inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt) {
    // splitmix64 finalizer over base ^ rotated salt
    std::uint64_t z = base ^ (salt + 0x9e3779b97f4a7c15ull + (base << 6) + (base >> 2));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1)
    double next_unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // uniform in [0, bound); bound >= 1
    std::size_t next_index(std::size_t bound) { return static_cast<std::size_t>(engine_() % bound); }

    double next_normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        // Box-Muller; u1 in (0,1] keeps the log finite
        const double u1 = 1.0 - next_unit();
        const double u2 = next_unit();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        cached_ = r * std::sin(theta);
        has_cached_ = true;
        return r * std::cos(theta);
    }

    // Marsaglia-Tsang, with the alpha < 1 boost
    double next_gamma(double alpha) {
        if (alpha < 1.0) {
            const double u = next_unit();
            return next_gamma(alpha + 1.0) * std::pow(u > 0.0 ? u : 1e-300, 1.0 / alpha);
        }
        const double d = alpha - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = next_normal();
            double v = 1.0 + c * x;
            if (v <= 0.0) continue;
            v = v * v * v;
            const double u = next_unit();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    std::vector<double> next_dirichlet(double alpha, std::size_t k) {
        std::vector<double> w(k);
        double sum = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            w[i] = next_gamma(alpha);
            sum += w[i];
        }
        if (sum <= 0.0) {
            for (double& v : w) v = 1.0 / static_cast<double>(k);
            return w;
        }
        for (double& v : w) v /= sum;
        return w;
    }

    template <class T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::swap(items[i - 1], items[next_index(i)]);
        }
    }

    // k distinct indices from [0, n), sorted ascending
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        for (std::size_t i = 0; i < k && i + 1 < n; ++i) {
            std::swap(idx[i], idx[i + next_index(n - i)]);
        }
        idx.resize(k < n ? k : n);
        std::sort(idx.begin(), idx.end());
        return idx;
    }

private:
    std::mt19937_64 engine_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

}  // namespace proalign
