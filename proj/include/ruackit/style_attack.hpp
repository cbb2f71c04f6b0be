#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "ruackit/encoder.hpp"
#include "ruackit/grid.hpp"
#include "ruackit/params.hpp"
#include "ruackit/rng.hpp"
#include "ruackit/tape.hpp"

namespace ruackit {

/// Per-object RGB statistics inside the mask.
struct ObjectStyle {
    std::array<double, 3> mu{};
    std::array<double, 3> sigma{};
};

/// Raw (unbounded) residual layout inside the 9-vector network output:
/// [d_mu(3) | d_sigma(3) | d_shift(3)].
struct BoundedStyle {
    Value mu_adv;     // [1,3]
    Value sigma_adv;  // [1,3], floored at 0
};

struct GraphThresholds {
    double tau_iou = 0.1;
    double tau_sim = 0.5;
    double tau_d_frac = 0.25;  // tau_d = frac * image diagonal; d_max = tau_d
};

struct ObjectGraph {
    int count = 0;
    Grid adjacency;  // [K,K], symmetric, unit self-loops
    Grid row_norm;   // D^-1 (A + I-already-present) rows summing to 1
};

inline ObjectStyle extract_object_style(const Grid& image, const Grid& mask) {
    int h = mask.extent(0), w = mask.extent(1);
    double n = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) n += mask.at(y, x) > 0.5 ? 1.0 : 0.0;
    if (n < 1.0) throw std::invalid_argument("extract_object_style: empty mask");
    ObjectStyle s;
    for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (mask.at(y, x) > 0.5) acc += image.at(c, y, x);
        double mu = acc / n;
        double var = 0.0;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (mask.at(y, x) > 0.5) {
                    double d = image.at(c, y, x) - mu;
                    var += d * d;
                }
        s.mu[static_cast<size_t>(c)] = mu;
        s.sigma[static_cast<size_t>(c)] = std::sqrt(var / n);  // population std
    }
    return s;
}

inline void init_style_params(ParamStore& store, int f_enc, int hidden, Rng& rng) {
    store.declare("style.mlp.w1", rng.normal_grid({f_enc, hidden}, std::sqrt(2.0 / f_enc)));
    store.declare("style.mlp.b1", Grid({1, hidden}, 0.0));
    store.declare("style.mlp.w2", rng.normal_grid({hidden, 9}, std::sqrt(2.0 / hidden)));
    store.declare("style.mlp.b2", Grid({1, 9}, 0.0));
    store.declare("style.proj.w", rng.normal_grid({f_enc, 6}, std::sqrt(2.0 / f_enc)));
    store.declare("style.proj.b", Grid({1, 6}, 0.0));
    store.declare("style.gcn.w1", rng.normal_grid({12, 12}, std::sqrt(2.0 / 12.0)));
    store.declare("style.gcn.ln_g", Grid({1, 12}, 1.0));
    store.declare("style.gcn.ln_b", Grid({1, 12}, 0.0));
    store.declare("style.gcn.w2", rng.normal_grid({12, 6}, std::sqrt(2.0 / 12.0)));
}

/// Two-layer perceptron over the pooled object feature; 9 raw residual
/// outputs. The GRL is attached here when the residual feeds AdaIN directly;
/// the GCN pipeline defers it until after refinement so that every attacker
/// parameter sees exactly one sign flip.
inline Value predict_style_residual(Tape& t, const Grid& pooled, BoundParams& p,
                                    bool apply_grl = true, double grl_scale = 1.0) {
    Value f = t.input(pooled, "pooled");
    Value hidden = (matmul(f, p["style.mlp.w1"]) + p["style.mlp.b1"]).tanh();
    Value raw = matmul(hidden, p["style.mlp.w2"]) + p["style.mlp.b2"];
    return apply_grl ? grad_reverse(raw, grl_scale) : raw;
}

/// Sigmoid-based relative bounding:
///   mu_adv    = mu    * (1 + eps_mu    * (2 sigmoid(d_mu)    - 1)) + eps_shift * tanh(d_shift)
///   sigma_adv = sigma * (1 + eps_sigma * (2 sigmoid(d_sigma) - 1)), floored at 0
inline BoundedStyle bound_style(const ObjectStyle& style, Value residual, double eps_mu,
                                double eps_sigma, double eps_shift) {
    if (!(eps_mu > 0.0 && eps_sigma > 0.0 && eps_shift > 0.0))
        throw std::invalid_argument("bound_style: eps values must be > 0");
    Tape& t = *residual.tape;
    auto part = [&](int which) {
        Grid sel({9, 3});
        for (int i = 0; i < 3; ++i) sel[(which * 3 + i) * 3 + i] = 1.0;
        return matmul(residual, t.input(std::move(sel)));
    };
    Value d_mu = part(0), d_sigma = part(1), d_shift = part(2);
    Value mu0 = t.input(Grid({1, 3}, {style.mu[0], style.mu[1], style.mu[2]}));
    Value sg0 = t.input(Grid({1, 3}, {style.sigma[0], style.sigma[1], style.sigma[2]}));
    Value mu_adv = mu0 * (1.0 + eps_mu * (2.0 * d_mu.sigmoid() - 1.0)) +
                   eps_shift * d_shift.tanh();
    Value sigma_adv = (sg0 * (1.0 + eps_sigma * (2.0 * d_sigma.sigmoid() - 1.0))).ste_relu();
    return {mu_adv, sigma_adv};
}

/// AdaIN re-normalization of each masked region to its adversarial style:
/// inside mask k the pixel becomes sigma_adv * (p - mu_k)/max(sigma_k,1e-6)
/// + mu_adv, background stays untouched, output clipped to [0,1].
///
/// Since image and masks are constants, the result is an affine function of
/// the 6K adversarial scalars; each scalar multiplies a precomputed grid.
inline Value adain_apply(Tape& t, const Grid& image, const std::vector<Grid>& masks,
                         const std::vector<ObjectStyle>& styles,
                         const std::vector<BoundedStyle>& adv) {
    int h = image.extent(1), w = image.extent(2);
    if (masks.size() != styles.size() || masks.size() != adv.size())
        throw std::invalid_argument("adain_apply: list sizes differ");
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double cover = 0.0;
            for (const Grid& m : masks) cover += m.at(y, x) > 0.5 ? 1.0 : 0.0;
            if (cover > 1.0) throw std::invalid_argument("adain_apply: overlapping masks");
        }

    Grid background(image.shape());
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                bool inside = false;
                for (const Grid& m : masks) inside = inside || m.at(y, x) > 0.5;
                background.at(c, y, x) = inside ? 0.0 : image.at(c, y, x);
            }

    // Styled regions accumulate separately and are clipped before the
    // background is added back, so untouched pixels stay bit-identical.
    Value styled = t.input(Grid(image.shape(), 0.0));

    for (size_t k = 0; k < masks.size(); ++k) {
        for (int c = 0; c < 3; ++c) {
            double denom = std::max(styles[k].sigma[static_cast<size_t>(c)], 1e-6);
            double mu_src = styles[k].mu[static_cast<size_t>(c)];
            Grid norm({3, h, w});   // (p - mu)/denom inside mask, channel c
            Grid onemask({3, h, w});
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    if (masks[k].at(y, x) > 0.5) {
                        norm.at(c, y, x) = (image.at(c, y, x) - mu_src) / denom;
                        onemask.at(c, y, x) = 1.0;
                    }
            Grid sel({3, 1});
            sel[c] = 1.0;
            Value sel_v = t.input(std::move(sel));
            Value s_kc = matmul(adv[k].sigma_adv, sel_v);  // scalar value
            Value m_kc = matmul(adv[k].mu_adv, sel_v);
            styled = styled + s_kc * t.input(std::move(norm)) + m_kc * t.input(std::move(onemask));
        }
    }
    return clip01(styled) + t.input(std::move(background));
}

inline double mask_iou(const Grid& a, const Grid& b) {
    double inter = 0.0, uni = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) {
        bool fa = a[i] > 0.5, fb = b[i] > 0.5;
        inter += fa && fb ? 1.0 : 0.0;
        uni += fa || fb ? 1.0 : 0.0;
    }
    return uni > 0.0 ? inter / uni : 1.0;
}

/// Boundary pixels: foreground with a 4-neighbor outside the mask (images
/// edges count as outside).
inline std::vector<std::pair<int, int>> boundary_pixels(const Grid& mask) {
    int h = mask.extent(0), w = mask.extent(1);
    std::vector<std::pair<int, int>> out;
    auto fg = [&](int y, int x) {
        return y >= 0 && y < h && x >= 0 && x < w && mask.at(y, x) > 0.5;
    };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (fg(y, x) &&
                (!fg(y - 1, x) || !fg(y + 1, x) || !fg(y, x - 1) || !fg(y, x + 1)))
                out.emplace_back(y, x);
    return out;
}

/// Exact minimum Euclidean distance between the two boundary pixel sets.
inline double boundary_distance(const Grid& a, const Grid& b) {
    auto ba = boundary_pixels(a);
    auto bb = boundary_pixels(b);
    double best = 1e300;
    for (auto [ya, xa] : ba)
        for (auto [yb, xb] : bb) {
            double dy = ya - yb, dx = xa - xb;
            best = std::min(best, dy * dy + dx * dx);
        }
    return std::sqrt(best);
}

inline double cosine_similarity(const Grid& a, const Grid& b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::int64_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    double denom = std::sqrt(aa) * std::sqrt(bb);
    return denom > 0 ? ab / denom : 0.0;
}

/// Edge weights combine thresholded IoU, boundary proximity and pooled
/// feature similarity; unit self-loops keep node identity.
inline ObjectGraph build_object_graph(const std::vector<Grid>& masks,
                                      const std::vector<Grid>& pooled,
                                      const GraphThresholds& th) {
    if (masks.empty()) throw std::invalid_argument("build_object_graph: need >= 1 object");
    int k = static_cast<int>(masks.size());
    int h = masks[0].extent(0), w = masks[0].extent(1);
    double diag = std::sqrt(static_cast<double>(h) * h + static_cast<double>(w) * w);
    double tau_d = th.tau_d_frac * diag;
    double d_max = tau_d;
    ObjectGraph g;
    g.count = k;
    g.adjacency = Grid({k, k});
    for (int i = 0; i < k; ++i) g.adjacency[i * k + i] = 1.0;
    for (int i = 0; i < k; ++i)
        for (int j = i + 1; j < k; ++j) {
            double iou = mask_iou(masks[static_cast<size_t>(i)], masks[static_cast<size_t>(j)]);
            double d = boundary_distance(masks[static_cast<size_t>(i)], masks[static_cast<size_t>(j)]);
            double cos = cosine_similarity(pooled[static_cast<size_t>(i)], pooled[static_cast<size_t>(j)]);
            double wgt = (iou > th.tau_iou ? iou : 0.0) +
                         (d < tau_d ? std::max(0.0, 1.0 - d / d_max) : 0.0) +
                         (cos > th.tau_sim ? cos : 0.0);
            g.adjacency[i * k + j] = wgt;
            g.adjacency[j * k + i] = wgt;
        }
    g.row_norm = Grid({k, k});
    for (int i = 0; i < k; ++i) {
        double deg = 0.0;
        for (int j = 0; j < k; ++j) deg += g.adjacency[i * k + j];
        for (int j = 0; j < k; ++j) g.row_norm[i * k + j] = g.adjacency[i * k + j] / deg;
    }
    return g;
}

/// Two graph-convolution layers over per-object 12-d node states
/// ([d_mu, d_sigma] concatenated with projected pooled features); the
/// second layer projects back to 6 style dimensions without activation, and
/// the output is a 0.1-scaled residual update of the (d_mu, d_sigma) block.
/// The shift block passes through untouched.
inline std::vector<Value> gcn_refine(Tape& t, const ObjectGraph& graph,
                                     const std::vector<Value>& residuals,
                                     const std::vector<Grid>& pooled, BoundParams& p) {
    if (static_cast<size_t>(graph.count) != residuals.size())
        throw std::invalid_argument("gcn_refine: node count mismatch");
    int k = graph.count;
    Grid sel_res({9, 12});  // first 6 dims into node slots 0..5
    for (int i = 0; i < 6; ++i) sel_res[i * 12 + i] = 1.0;
    Grid sel_proj({6, 12});  // projected features into slots 6..11
    for (int i = 0; i < 6; ++i) sel_proj[i * 12 + 6 + i] = 1.0;
    Grid back({6, 9});  // 6-d update back into the residual's first block
    for (int i = 0; i < 6; ++i) back[i * 9 + i] = 1.0;
    Value sel_res_v = t.input(sel_res), sel_proj_v = t.input(sel_proj), back_v = t.input(back);

    std::vector<Value> h0;
    h0.reserve(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) {
        Value proj = matmul(t.input(pooled[static_cast<size_t>(i)]), p["style.proj.w"]) +
                     p["style.proj.b"];
        h0.push_back(matmul(residuals[static_cast<size_t>(i)], sel_res_v) +
                     matmul(proj, sel_proj_v));
    }

    auto aggregate = [&](const std::vector<Value>& states) {
        std::vector<Value> out;
        out.reserve(static_cast<size_t>(k));
        for (int i = 0; i < k; ++i) {
            Value acc = graph.row_norm[i * k] * states[0];
            for (int j = 1; j < k; ++j) acc = acc + graph.row_norm[i * k + j] * states[static_cast<size_t>(j)];
            out.push_back(acc);
        }
        return out;
    };

    std::vector<Value> h1;
    h1.reserve(static_cast<size_t>(k));
    for (Value m : aggregate(h0)) {
        Value z = matmul(m, p["style.gcn.w1"]);
        Value mu = z.mean();
        Value centered = z - mu;
        Value var = (centered * centered).mean();
        Value normed = centered * (var + 1e-5).pow(-0.5);
        h1.push_back((normed * p["style.gcn.ln_g"] + p["style.gcn.ln_b"]).ste_relu());
    }

    std::vector<Value> refined;
    refined.reserve(static_cast<size_t>(k));
    std::vector<Value> agg2 = aggregate(h1);
    for (int i = 0; i < k; ++i) {
        Value update = matmul(agg2[static_cast<size_t>(i)], p["style.gcn.w2"]);  // linear, no activation
        refined.push_back(residuals[static_cast<size_t>(i)] + 0.1 * matmul(update, back_v));
    }
    return refined;
}

enum class StyleVariant { kSingle, kMulti, kMultiBg, kGcn };

inline StyleVariant style_variant_from_string(const std::string& s) {
    if (s == "single") return StyleVariant::kSingle;
    if (s == "multi") return StyleVariant::kMulti;
    if (s == "multi_bg") return StyleVariant::kMultiBg;
    if (s == "gcn") return StyleVariant::kGcn;
    throw std::invalid_argument("unknown style variant: " + s);
}

struct StyleAttackResult {
    Value image_styled;                 // [3,H,W]
    std::vector<Grid> attack_masks;     // masks the attack actually used
    std::vector<ObjectStyle> styles;    // source statistics per attacked region
    std::vector<BoundedStyle> bounded;  // adversarial statistics (tape values)
};

/// Full style-attack pipeline: per-object pooling, residual MLP, optional
/// GCN coordination, one GRL over the final residuals, bounding, AdaIN.
inline StyleAttackResult style_attack_apply(Tape& t, const Grid& image,
                                            const std::vector<Grid>& masks, int target_index,
                                            const Grid& enc_feats, BoundParams& p,
                                            StyleVariant variant, double eps_style,
                                            double eps_shift, double grl_scale,
                                            const GraphThresholds& th = {}) {
    StyleAttackResult res;
    if (variant == StyleVariant::kSingle) {
        res.attack_masks = {masks.at(static_cast<size_t>(target_index))};
    } else {
        res.attack_masks = masks;
        if (variant == StyleVariant::kMultiBg) {
            Grid bg(masks[0].shape(), 1.0);
            for (const Grid& m : masks)
                for (std::int64_t i = 0; i < m.size(); ++i)
                    if (m[i] > 0.5) bg[i] = 0.0;
            if (bg.sum() >= 1.0) res.attack_masks.push_back(std::move(bg));
        }
    }

    std::vector<Grid> pooled;
    std::vector<Value> raw;
    pooled.reserve(res.attack_masks.size());
    for (const Grid& m : res.attack_masks) {
        res.styles.push_back(extract_object_style(image, m));
        pooled.push_back(masked_avg_pool(enc_feats, m));
        raw.push_back(predict_style_residual(t, pooled.back(), p, /*apply_grl=*/false));
    }

    std::vector<Value> residuals = raw;
    if (variant == StyleVariant::kGcn && res.attack_masks.size() >= 1) {
        ObjectGraph graph = build_object_graph(res.attack_masks, pooled, th);
        residuals = gcn_refine(t, graph, raw, pooled, p);
    }

    for (size_t k = 0; k < residuals.size(); ++k) {
        Value final_res = grad_reverse(residuals[k], grl_scale);
        res.bounded.push_back(bound_style(res.styles[k], final_res, eps_style, eps_style,
                                          eps_shift));
    }
    res.image_styled = adain_apply(t, image, res.attack_masks, res.styles, res.bounded);
    return res;
}

}  // namespace ruackit
