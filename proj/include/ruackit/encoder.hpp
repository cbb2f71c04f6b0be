#pragma once

#include "ruackit/grid.hpp"
#include "ruackit/grid_ops.hpp"
#include "ruackit/rng.hpp"

namespace ruackit {

/// Frozen random-feature backbone the attack networks read from. It is
/// fixed at creation and never trained, so attacker inputs stay constant
/// with respect to every optimized parameter.
struct FrozenEncoder {
    Grid w;  // [F,3,3,3]
    Grid b;  // [F]

    static FrozenEncoder create(int f_enc, std::uint64_t seed) {
        Rng rng(seed);
        FrozenEncoder e;
        e.w = rng.normal_grid({f_enc, 3, 3, 3}, std::sqrt(2.0 / 27.0));
        e.b = rng.normal_grid({f_enc}, 0.1);
        return e;
    }

    Grid features(const Grid& image) const { return gridops::tanh(gridops::conv3x3(image, w, b)); }
};

/// Masked average pooling of [F,H,W] features over a [H,W] mask -> [1,F].
inline Grid masked_avg_pool(const Grid& feats, const Grid& mask) {
    int f = feats.extent(0), h = feats.extent(1), w = feats.extent(2);
    Grid out({1, f});
    double denom = 1e-8;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) denom += mask.at(y, x);
    for (int c = 0; c < f; ++c) {
        double acc = 0.0;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) acc += feats.at(c, y, x) * mask.at(y, x);
        out[c] = acc / denom;
    }
    return out;
}

}  // namespace ruackit
