#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "ruackit/grid.hpp"

namespace ruackit {

/// Deterministic RNG. Uniform/normal draws are derived from raw mt19937_64
/// words rather than std::*_distribution so that streams are identical across
/// standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform in [0, 1) with 53-bit resolution.
    double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    /// Uniform in the open interval (0, 1); never returns exactly 0.
    double uniform_open01() {
        double u = uniform01();
        return u > 0.0 ? u : 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    int uniform_int(int lo, int hi) {  // inclusive range
        return lo + static_cast<int>(gen_() % static_cast<std::uint64_t>(hi - lo + 1));
    }

    double normal() {
        // Box-Muller; caches the second variate.
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform_open01();
        double u2 = uniform01();
        double r = std::sqrt(-2.0 * std::log(u1));
        double t = 2.0 * M_PI * u2;
        spare_ = r * std::sin(t);
        has_spare_ = true;
        return r * std::cos(t);
    }

    Grid uniform_grid(const std::vector<int>& shape, double lo, double hi) {
        Grid g(shape);
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] = uniform(lo, hi);
        return g;
    }

    Grid normal_grid(const std::vector<int>& shape, double stddev) {
        Grid g(shape);
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] = stddev * normal();
        return g;
    }

    /// Independent child stream; used to give scenes/workers their own RNGs.
    Rng fork(std::uint64_t salt) {
        std::uint64_t s = gen_() ^ (salt * 0x9e3779b97f4a7c15ULL + 0xd1b54a32d192ed03ULL);
        return Rng(s);
    }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace ruackit
