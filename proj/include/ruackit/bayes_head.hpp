#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ruackit/grid.hpp"
#include "ruackit/params.hpp"
#include "ruackit/rng.hpp"
#include "ruackit/tape.hpp"
#include "ruackit/weibull.hpp"

namespace ruackit {

struct HeadConfig {
    int c_in = 5;        // 3 RGB channels + 2 prompt distance channels
    int c_feat = 8;      // feature dimension C'
    int k_hyp = 1;       // mask hypotheses, up to 4
    int mlp_hidden = 16; // token MLP hidden width
};

/// Per-pixel Weibull posterior over evidence features, plus the sparse
/// trunk activations the parameters were predicted from.
struct PixelPosterior {
    Value lam;    // [C',H,W], strictly positive
    Value kap;    // [C',H,W], clamped to [0.5, 10]
    Value trunk;  // [C',H,W], STE-ReLU activations
};

/// Per-hypothesis posterior over foreground/background decision weights.
struct MaskTokenPosterior {
    Value lam_fg, kap_fg;  // [1,C']
    Value lam_bg, kap_bg;  // [1,C']
    Value bias;            // scalar
};

struct LogitStats {
    Value m;  // logit mean, [H,W]
    Value v;  // logit variance, [H,W], >= 0
};

inline std::string head_param_name(const std::string& field) { return "head." + field; }

inline void init_head_params(ParamStore& store, const HeadConfig& cfg, Rng& rng) {
    auto conv_init = [&](int f, int c) {
        return rng.normal_grid({f, c, 3, 3}, std::sqrt(2.0 / (c * 9.0)));
    };
    store.declare("head.trunk.w", conv_init(cfg.c_feat, cfg.c_in));
    store.declare("head.trunk.b", Grid({cfg.c_feat}, 0.0));
    store.declare("head.lam.w", conv_init(cfg.c_feat, cfg.c_feat));
    store.declare("head.lam.b", Grid({cfg.c_feat}, 0.0));
    store.declare("head.kap1.w", conv_init(cfg.c_feat, cfg.c_feat));
    store.declare("head.kap1.b", Grid({cfg.c_feat}, 0.0));
    store.declare("head.kap2.w", conv_init(cfg.c_feat, cfg.c_feat));
    store.declare("head.kap2.b", Grid({cfg.c_feat}, 0.0));
    store.declare("head.tok.w1", rng.normal_grid({cfg.c_feat, cfg.mlp_hidden},
                                                 std::sqrt(2.0 / cfg.c_feat)));
    store.declare("head.tok.b1", Grid({1, cfg.mlp_hidden}, 0.0));
    store.declare("head.tok.w2", rng.normal_grid({cfg.mlp_hidden, 4 * cfg.c_feat},
                                                 std::sqrt(2.0 / cfg.mlp_hidden)));
    store.declare("head.tok.b2", Grid({1, 4 * cfg.c_feat}, 0.0));
    store.declare("head.iou.w", rng.normal_grid({1, cfg.c_feat}, std::sqrt(1.0 / cfg.c_feat)));
    store.declare("head.iou.b", Grid({1}, 0.0));
    for (int k = 0; k < cfg.k_hyp; ++k) {
        std::string sk = std::to_string(k);
        store.declare("head.token" + sk, rng.normal_grid({1, cfg.c_feat}, 1.0));
        store.declare("head.bias" + sk, Grid({1}, 0.0));
    }
}

/// Pixel-path posterior: sparse STE-ReLU trunk, softplus lambda head,
/// softplus + clamp kappa head (smooth tanh between the kappa convolutions).
inline PixelPosterior predict_pixel_posterior(Value features, BoundParams& p) {
    Value trunk = conv3x3(features, p["head.trunk.w"], p["head.trunk.b"]).ste_relu();
    Value lam = conv3x3(trunk, p["head.lam.w"], p["head.lam.b"]).softplus();
    Value kap_hidden = conv3x3(trunk, p["head.kap1.w"], p["head.kap1.b"]).tanh();
    Value kap = clip(conv3x3(kap_hidden, p["head.kap2.w"], p["head.kap2.b"]).softplus(),
                     kKappaMin, kKappaMax);
    return {lam, kap, trunk};
}

/// Mask-token posterior: shared MLP emits 2 x 2 x C' parameters
/// (fg/bg x lambda/kappa) for the given hypothesis token.
inline MaskTokenPosterior predict_mask_posterior(Value token, BoundParams& p,
                                                 const HeadConfig& cfg, int k) {
    Tape& t = *token.tape;
    Value hidden = (matmul(token, p["head.tok.w1"]) + p["head.tok.b1"]).tanh();
    Value out = matmul(hidden, p["head.tok.w2"]) + p["head.tok.b2"];  // [1, 4C']
    int c = cfg.c_feat;
    auto slice = [&](int part) {
        Grid sel({4 * c, c});
        for (int i = 0; i < c; ++i) sel[(part * c + i) * c + i] = 1.0;
        return matmul(out, t.input(std::move(sel)));
    };
    MaskTokenPosterior mk;
    mk.lam_fg = slice(0).softplus();
    mk.kap_fg = clip(slice(1).softplus(), kKappaMin, kKappaMax);
    mk.lam_bg = slice(2).softplus();
    mk.kap_bg = clip(slice(3).softplus(), kKappaMin, kKappaMax);
    mk.bias = p["head.bias" + std::to_string(k)];
    return mk;
}

namespace detail {

/// Channel-weighted spatial map: sum_c w[0,c] * x[c,:,:] -> [H,W].
inline Value channel_mix(Value w_row, Value x_chw) {
    const Grid& gx = x_chw.value();
    int c = gx.extent(0), h = gx.extent(1), wdt = gx.extent(2);
    Value flat = reshape(x_chw, {c, h * wdt});
    return reshape(matmul(w_row, flat), {h, wdt});
}

}  // namespace detail

/// First-order logit statistics (Eq. S4 regime) from raw moments:
/// m = sum_c E[z_c] (E[w_fg,c] - E[w_bg,c]) + b
/// v = sum_c Var[z_c] (Var[w_fg,c] + Var[w_bg,c])
inline LogitStats logit_stats_from_moments(Value ez, Value vz, Value e_fg, Value v_fg,
                                           Value e_bg, Value v_bg, Value bias) {
    Value m = detail::channel_mix(e_fg - e_bg, ez) + bias;
    Value v = detail::channel_mix(v_fg + v_bg, vz);
    return {m, v};
}

/// Full product-variance (Eq. S3 regime) summed over channels and fg/bg:
/// sum_c [ Var_z Var_w + Var_z (E_fg^2 + E_bg^2) + Var_w E_z^2 ].
inline Value full_variance_from_moments(Value ez, Value vz, Value e_fg, Value v_fg,
                                        Value e_bg, Value v_bg) {
    Value v_w = v_fg + v_bg;
    Value e2_w = e_fg * e_fg + e_bg * e_bg;
    return detail::channel_mix(v_w, vz) + detail::channel_mix(e2_w, vz) +
           detail::channel_mix(v_w, ez * ez);
}

/// Simplified statistics computed from the Weibull posteriors' closed-form
/// moments; mean via expectations, variance keeping only Var x Var with fg
/// and bg weight variances adding under independence.
inline LogitStats logits_analytic(const PixelPosterior& px, const MaskTokenPosterior& mk) {
    return logit_stats_from_moments(
        weibull_mean_v(px.lam, px.kap), weibull_variance_v(px.lam, px.kap),
        weibull_mean_v(mk.lam_fg, mk.kap_fg), weibull_variance_v(mk.lam_fg, mk.kap_fg),
        weibull_mean_v(mk.lam_bg, mk.kap_bg), weibull_variance_v(mk.lam_bg, mk.kap_bg),
        mk.bias);
}

/// Non-approximated variance; used only for the rank-preservation check.
inline Value full_variance(const PixelPosterior& px, const MaskTokenPosterior& mk) {
    return full_variance_from_moments(
        weibull_mean_v(px.lam, px.kap), weibull_variance_v(px.lam, px.kap),
        weibull_mean_v(mk.lam_fg, mk.kap_fg), weibull_variance_v(mk.lam_fg, mk.kap_fg),
        weibull_mean_v(mk.lam_bg, mk.kap_bg), weibull_variance_v(mk.lam_bg, mk.kap_bg));
}

inline constexpr double kInvLn2 = 1.4426950408889634;

/// MacKay probit scaling kappa_s = (1 + pi v / 8)^(-1/2), then normalized
/// (base-2) Bernoulli entropy of sigma(kappa_s * m). Numerically stable via
/// softplus: H = p*softplus(-a) + (1-p)*softplus(a) nats.
inline Value uncertainty_analytic(const LogitStats& ls) {
    Value kappa_s = (1.0 + (M_PI / 8.0) * ls.v).pow(-0.5);
    Value a = kappa_s * ls.m;
    Value p = a.sigmoid();
    Value h = p * (-a).softplus() + (1.0 - p) * a.softplus();
    return h * kInvLn2;
}

/// Probability under the same probit approximation.
inline Value expected_prob(const LogitStats& ls) {
    Value kappa_s = (1.0 + (M_PI / 8.0) * ls.v).pow(-0.5);
    return (kappa_s * ls.m).sigmoid();
}

/// Scalar twin of uncertainty_analytic, for property tests and MC paths.
inline double uncertainty_analytic_scalar(double m, double v) {
    double kappa_s = 1.0 / std::sqrt(1.0 + M_PI * v / 8.0);
    double a = kappa_s * m;
    double p = 1.0 / (1.0 + std::exp(-a));
    auto sp = [](double x) {
        return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    };
    return (p * sp(-a) + (1.0 - p) * sp(a)) * kInvLn2;
}

inline double entropy2_of_prob(double p) {
    if (p <= 0.0 || p >= 1.0) return 0.0;
    return -(p * std::log2(p) + (1.0 - p) * std::log2(1.0 - p));
}

/// Monte Carlo forward: S reparameterized draws of pixel evidence and
/// fg/bg weights; mean probability plus disagreement uncertainty, defined
/// as the normalized Bernoulli entropy of the mean probability. The
/// per-sample probability variance is exposed as a secondary output.
struct McOutput {
    Grid mean_prob;  // [H,W]
    Grid unc;        // [H,W], entropy of the mean probability
    Grid prob_var;   // [H,W], predictive variance of per-sample probabilities
};

inline McOutput forward_mc(const Grid& lam_z, const Grid& kap_z, const Grid& lam_fg,
                           const Grid& kap_fg, const Grid& lam_bg, const Grid& kap_bg,
                           double bias, int samples, std::uint64_t seed) {
    if (samples < 1) throw std::invalid_argument("forward_mc: need samples >= 1");
    int c = lam_z.extent(0), h = lam_z.extent(1), w = lam_z.extent(2);
    Rng rng(seed);
    Grid sum_p({h, w}), sum_p2({h, w});
    std::vector<double> wdiff(static_cast<size_t>(c));
    for (int s = 0; s < samples; ++s) {
        for (int i = 0; i < c; ++i) {
            double uf = rng.uniform_open01();
            double ub = rng.uniform_open01();
            double wf = lam_fg[i] * std::pow(-std::log1p(-uf), 1.0 / kap_fg[i]);
            double wb = lam_bg[i] * std::pow(-std::log1p(-ub), 1.0 / kap_bg[i]);
            wdiff[static_cast<size_t>(i)] = wf - wb;
        }
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double logit = bias;
                for (int i = 0; i < c; ++i) {
                    double u = rng.uniform_open01();
                    double z = lam_z.at(i, y, x) *
                               std::pow(-std::log1p(-u), 1.0 / kap_z.at(i, y, x));
                    logit += z * wdiff[static_cast<size_t>(i)];
                }
                double p = 1.0 / (1.0 + std::exp(-logit));
                sum_p.at(y, x) += p;
                sum_p2.at(y, x) += p * p;
            }
    }
    McOutput out{Grid({h, w}), Grid({h, w}), Grid({h, w})};
    for (std::int64_t i = 0; i < sum_p.size(); ++i) {
        double mp = sum_p[i] / samples;
        out.mean_prob[i] = mp;
        out.unc[i] = entropy2_of_prob(mp);
        out.prob_var[i] = std::max(0.0, sum_p2[i] / samples - mp * mp);
    }
    return out;
}

/// Scalar predicted-IoU head: sigmoid(affine(mean-pooled trunk)).
inline Value predict_iou(const PixelPosterior& px, BoundParams& p) {
    Tape& t = *px.trunk.tape;
    const Grid& g = px.trunk.value();
    int c = g.extent(0);
    std::int64_t hw = g.size() / c;
    Value pooled = matmul(reshape(px.trunk, {c, static_cast<int>(hw)}),
                          t.input(Grid({static_cast<int>(hw), 1}, 1.0 / static_cast<double>(hw))));
    return (matmul(p["head.iou.w"], pooled) + p["head.iou.b"]).sigmoid();
}

/// Full head composition for one hypothesis. mc_samples = 0 selects the
/// analytic mode; otherwise the uncertainty comes from MC disagreement.
struct HeadForwardOutput {
    LogitStats stats;
    Grid prob;        // [H,W] analytic expected probability
    Grid uncertainty; // [H,W]
    double iou_pred = 0.0;
    McOutput mc;      // populated when mc_samples > 0
};

inline HeadForwardOutput head_forward(Tape& t, const Grid& features, BoundParams& p,
                                      const HeadConfig& cfg, int k, int mc_samples,
                                      std::uint64_t mc_seed) {
    Value feat = t.input(features, "features");
    PixelPosterior px = predict_pixel_posterior(feat, p);
    MaskTokenPosterior mk = predict_mask_posterior(p["head.token" + std::to_string(k)], p, cfg, k);
    LogitStats ls = logits_analytic(px, mk);
    HeadForwardOutput out;
    out.stats = ls;
    out.prob = expected_prob(ls).value();
    out.iou_pred = predict_iou(px, p).value()[0];
    if (mc_samples > 0) {
        out.mc = forward_mc(px.lam.value(), px.kap.value(), mk.lam_fg.value(), mk.kap_fg.value(),
                            mk.lam_bg.value(), mk.kap_bg.value(), mk.bias.value()[0], mc_samples,
                            mc_seed);
        out.uncertainty = out.mc.unc;
    } else {
        out.uncertainty = uncertainty_analytic(ls).value();
    }
    return out;
}

/// Prompt encoding: two channels holding the distance to the nearest
/// positive and negative click, normalized by the image diagonal. A missing
/// click polarity yields a constant 1 channel.
struct Click {
    int y = 0, x = 0;
    int label = +1;  // +1 foreground, -1 background
};

inline Grid make_prompt_channels(const std::vector<Click>& clicks, int h, int w) {
    Grid out({2, h, w}, 1.0);
    double diag = std::sqrt(static_cast<double>(h) * h + static_cast<double>(w) * w);
    for (int ch = 0; ch < 2; ++ch) {
        int want = ch == 0 ? +1 : -1;
        bool any = false;
        for (const Click& c : clicks) any = any || c.label == want;
        if (!any) continue;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double best = 1e300;
                for (const Click& c : clicks) {
                    if (c.label != want) continue;
                    double dy = y - c.y, dx = x - c.x;
                    best = std::min(best, std::sqrt(dy * dy + dx * dx));
                }
                out.at(ch, y, x) = best / diag;
            }
    }
    return out;
}

/// image [3,H,W] + prompt channels [2,H,W] -> head input features [5,H,W].
inline Grid make_head_features(const Grid& image, const Grid& prompts) {
    int h = image.extent(1), w = image.extent(2);
    Grid out({5, h, w});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at(c, y, x) = image.at(c, y, x);
    for (int c = 0; c < 2; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at(3 + c, y, x) = prompts.at(c, y, x);
    return out;
}

}  // namespace ruackit
