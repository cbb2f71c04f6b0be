#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "ruackit/encoder.hpp"
#include "ruackit/grid.hpp"
#include "ruackit/grid_ops.hpp"
#include "ruackit/params.hpp"
#include "ruackit/rng.hpp"
#include "ruackit/tape.hpp"

namespace ruackit {

/// Frozen mask/feature fusion stack feeding the trainable offset predictor.
/// Proj, MaskEnc and Fuser are fixed at creation; only the offset
/// convolution learns.
struct FrozenDeformStack {
    Grid proj_w, proj_b;  // [D,F,3,3], [D]
    Grid mask_w, mask_b;  // [D,1,3,3], [D]
    Grid fuse_w, fuse_b;  // [D,D,3,3], [D]

    static FrozenDeformStack create(int f_enc, int d, std::uint64_t seed) {
        Rng rng(seed);
        FrozenDeformStack s;
        s.proj_w = rng.normal_grid({d, f_enc, 3, 3}, std::sqrt(2.0 / (f_enc * 9.0)));
        s.proj_b = Grid({d}, 0.0);
        s.mask_w = rng.normal_grid({d, 1, 3, 3}, std::sqrt(2.0 / 9.0));
        s.mask_b = Grid({d}, 0.0);
        s.fuse_w = rng.normal_grid({d, d, 3, 3}, std::sqrt(2.0 / (d * 9.0)));
        s.fuse_b = Grid({d}, 0.0);
        return s;
    }

    /// h = tanh(Fuser(Proj(z) + MaskEnc(M))); constant w.r.t. trainables.
    Grid fuse(const Grid& enc_feats, const Grid& mask) const {
        int h = mask.extent(0), w = mask.extent(1);
        Grid mask_chw({1, h, w}, mask.vec());
        Grid p = gridops::conv3x3(enc_feats, proj_w, proj_b);
        Grid me = gridops::conv3x3(mask_chw, mask_w, mask_b);
        return gridops::tanh(gridops::conv3x3(gridops::add(p, me), fuse_w, fuse_b));
    }
};

inline void init_deform_params(ParamStore& store, int d_chan) {
    // zero-initialized so the attack starts as the identity transform
    store.declare("deform.offset.w", Grid({2, d_chan, 3, 3}, 0.0));
    store.declare("deform.offset.b", Grid({2}, 0.0));
}

/// Raw offset logits for one object; GRL attached for attacker optimization.
inline Value predict_offsets(Tape& t, const FrozenDeformStack& stack, const Grid& enc_feats,
                             const Grid& mask, BoundParams& p, double grl_scale = 1.0) {
    Grid fused = stack.fuse(enc_feats, mask);
    Value raw = conv3x3(t.input(fused, "deform.fused"), p["deform.offset.w"],
                        p["deform.offset.b"]);
    return grad_reverse(raw, grl_scale);
}

/// delta = eps*(2 sigmoid(raw) - 1), then alternating per-component
/// spatial-mean subtraction and re-clipping to [-eps, eps]. The alternation
/// converges onto both constraints (sup-norm bound and zero mean); a fixed
/// iteration count keeps the tape static.
inline Value bound_offsets(Value raw, double eps, int fixpoint_iters = 25) {
    if (!(eps > 0.0)) throw std::invalid_argument("bound_offsets: eps must be > 0");
    Tape& t = *raw.tape;
    const Grid& g = raw.value();
    if (g.rank() != 3 || g.extent(0) != 2)
        throw std::invalid_argument("bound_offsets: raw must be [2,H,W]");
    Grid ind_y(g.shape()), ind_x(g.shape());
    std::int64_t half = g.size() / 2;
    for (std::int64_t i = 0; i < half; ++i) {
        ind_y[i] = 1.0;
        ind_x[half + i] = 1.0;
    }
    Value iy = t.input(std::move(ind_y)), ix = t.input(std::move(ind_x));
    Value d = eps * (2.0 * raw.sigmoid() - 1.0);
    for (int it = 0; it < fixpoint_iters; ++it) {
        Value my = masked_mean(d, iy);
        Value mx = masked_mean(d, ix);
        d = d - (my * iy + mx * ix);
        d = clip(d, -eps, eps);
    }
    return d;
}

/// Weighted-average composite of per-object offset fields; weights are each
/// object's soft mask value, uniform in uncovered regions. A single object
/// falls back to its own field everywhere.
inline Value composite_offsets(Tape& t, const std::vector<Value>& deltas,
                               const std::vector<Grid>& masks) {
    if (deltas.empty()) throw std::invalid_argument("composite_offsets: no fields");
    if (deltas.size() == 1) return deltas[0];
    const Grid& shape_ref = deltas[0].value();
    int h = shape_ref.extent(1), w = shape_ref.extent(2);
    size_t k = deltas.size();
    std::vector<Grid> weights(k, Grid(shape_ref.shape()));
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double total = 0.0;
            for (size_t i = 0; i < k; ++i) total += masks[i].at(y, x);
            for (size_t i = 0; i < k; ++i) {
                double wv = total > 0.0 ? masks[i].at(y, x) / total : 1.0 / static_cast<double>(k);
                weights[i].at(0, y, x) = wv;
                weights[i].at(1, y, x) = wv;
            }
        }
    Value acc = t.input(std::move(weights[0])) * deltas[0];
    for (size_t i = 1; i < k; ++i) acc = acc + t.input(std::move(weights[i])) * deltas[i];
    return acc;
}

struct WarpedPair {
    Value image;               // [3,H,W]
    std::vector<Value> masks;  // [1,H,W] each, kept soft in [0,1]
};

/// Warps the image and every ground-truth mask by the same offset field so
/// supervision stays in correspondence with the perturbed pixels.
inline WarpedPair warp_pair(Value image, const std::vector<Grid>& masks, Value delta) {
    Tape& t = *image.tape;
    WarpedPair out;
    out.image = grid_sample(image, delta, BorderMode::kClamp);
    out.masks.reserve(masks.size());
    for (const Grid& m : masks) {
        Grid chw({1, m.extent(0), m.extent(1)}, m.vec());
        out.masks.push_back(grid_sample(t.input(std::move(chw)), delta, BorderMode::kClamp));
    }
    return out;
}

}  // namespace ruackit
