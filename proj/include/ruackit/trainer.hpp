#pragma once

#include <atomic>
#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "ruackit/bayes_head.hpp"
#include "ruackit/deform_attack.hpp"
#include "ruackit/params.hpp"
#include "ruackit/style_attack.hpp"
#include "ruackit/synth_data.hpp"
#include "ruackit/tape.hpp"
#include "ruackit/weibull.hpp"

namespace ruackit {

struct TrainConfig {
    double beta = 0.05;          // KL weight
    double gamma = 0.2;          // adversarial branch weight
    double lambda_cal = 0.1;     // calibration loss weight
    double eps_style = 0.3;
    double eps_style_shift = -1.0;  // < 0 reuses eps_style
    double eps_deform = 0.15;
    // Step-count compression at desk scale (hundreds of steps instead of
    // tens of thousands) rescales the learning rates; the 10:1 attacker:head
    // ratio and the linear attacker decay are kept.
    double lr_head = 8e-3;
    double lr_attack_hi = 1e-2;  // decays linearly to lr_attack_lo
    double lr_attack_lo = 1e-3;
    double weight_decay = 1e-4;
    int epochs = 20;
    double p1 = 0.2, p2 = 0.3;   // curriculum phase boundaries (epoch fractions)
    double kl_element_scale = 1e-6;
    int batch = 4;
    std::uint64_t seed = 1;
    bool cal_to_head = true;     // calibration u-channel updates the decoder
    bool ue_only = false;        // gamma forced to 0 throughout
    bool style_enabled = true;
    StyleVariant style_variant = StyleVariant::kGcn;
    bool deform_enabled = true;
    double grl_scale = 1.0;
    int jobs = 0;                // 0 = hardware concurrency, capped at batch
    HeadConfig head;
    int f_enc = 8;    // frozen encoder channels
    int d_deform = 8; // frozen deform stack channels

    double eps_shift() const { return eps_style_shift > 0 ? eps_style_shift : eps_style; }

    void validate() const {
        if (beta < 0 || gamma < 0 || lambda_cal < 0)
            throw std::invalid_argument("TrainConfig: loss weights must be >= 0");
        if (!(p1 > 0 && p1 < p2 && p2 < 1))
            throw std::invalid_argument("TrainConfig: need 0 < p1 < p2 < 1");
    }
};

// ---- losses (Eq. 1 / Eq. 5 structures) ----

inline double binary_iou(const Grid& pred_prob, const Grid& gt, double thresh = 0.5) {
    double inter = 0.0, uni = 0.0;
    for (std::int64_t i = 0; i < pred_prob.size(); ++i) {
        bool p = pred_prob[i] >= thresh, g = gt[i] >= thresh;
        inter += p && g ? 1.0 : 0.0;
        uni += p || g ? 1.0 : 0.0;
    }
    return uni > 0 ? inter / uni : 1.0;
}

struct SegLossParts {
    Value total;
    double focal = 0, dice = 0, iou_mse = 0;
};

/// focal (alpha 0.25, exponent 2) + soft dice (squared denominator) + MSE of
/// the predicted IoU against the thresholded prediction's actual IoU, which
/// enters as a constant (no gradient through the target).
inline SegLossParts seg_loss(Value logits, Value iou_pred, Value gt) {
    Tape& t = *logits.tape;
    const double alpha = 0.25;
    Value p = logits.sigmoid();
    Value gt_c = gt;
    Value log_p = -(-logits).softplus();    // log sigmoid(x)
    Value log_1mp = -logits.softplus();     // log (1 - sigmoid(x))
    Value one_m_p = 1.0 - p;
    Value focal = (alpha * gt_c * one_m_p * one_m_p * (-1.0 * log_p) +
                   (1.0 - alpha) * (1.0 - gt_c) * p * p * (-1.0 * log_1mp))
                      .mean();
    const double eps = 1e-6;
    Value dice = 1.0 - (2.0 * (p * gt_c).sum() + eps) /
                           ((p * p).sum() + (gt_c * gt_c).sum() + eps);
    double iou_target = binary_iou(p.value(), gt.value());
    Value iou_mse = (iou_pred - t.constant(iou_target)) * (iou_pred - t.constant(iou_target));
    SegLossParts parts;
    parts.focal = focal.value()[0];
    parts.dice = dice.value()[0];
    parts.iou_mse = iou_mse.value()[0];
    parts.total = focal + dice + reshape(iou_mse, {1});
    return parts;
}

struct CalLossChannels {
    Value e_channel;  // terms whose gradient flows through the error map
    Value u_channel;  // terms whose gradient flows through the uncertainty map
    Value total;
};

/// Eq.-5-style exponential calibration penalty with dual stop-gradient
/// routing. Per pixel:
///   e exp(-sg u) + sg e exp(-u) + (1-e) exp(sg u) + (1-sg e) exp(u)
/// so dL/de = exp(-u*) - exp(u*) and dL/du = -e* exp(-u) + (1-e*) exp(u)
/// with the starred variables frozen.
inline CalLossChannels calibration_loss(Value e, Value u) {
    const Grid& ge = e.value();
    const Grid& gu = u.value();
    for (std::int64_t i = 0; i < ge.size(); ++i)
        if (ge[i] < -1e-9 || ge[i] > 1.0 + 1e-9)
            throw std::invalid_argument("calibration_loss: e outside [0,1]");
    for (std::int64_t i = 0; i < gu.size(); ++i)
        if (gu[i] < -1e-9 || gu[i] > 1.0 + 1e-9)
            throw std::invalid_argument("calibration_loss: u outside [0,1]");
    Value sg_u = stop_grad(u);
    Value sg_e = stop_grad(e);
    CalLossChannels out;
    out.e_channel = (e * (-sg_u).exp() + (1.0 - e) * sg_u.exp()).mean();
    out.u_channel = (sg_e * (-u).exp() + (1.0 - sg_e) * u.exp()).mean();
    out.total = out.e_channel + out.u_channel;
    return out;
}

/// Three-phase curriculum over epoch fractions p1 < p2.
inline std::pair<double, double> curriculum(int epoch, const TrainConfig& cfg) {
    if (epoch < 0) throw std::invalid_argument("curriculum: epoch must be >= 0");
    double frac1 = cfg.p1 * cfg.epochs, frac2 = cfg.p2 * cfg.epochs;
    if (epoch < frac1) return {0.0, 0.0};
    if (epoch < frac2) return {cfg.beta, 0.0};
    return {cfg.beta, cfg.ue_only ? 0.0 : cfg.gamma};
}

/// GRL scale schedule; constant by default.
inline double grl_scale_schedule(int /*step*/, const TrainConfig& cfg) { return cfg.grl_scale; }

// ---- optimizer ----

/// Adam with decoupled weight decay. Learning rate resolved per parameter
/// group through the supplied callback.
class AdamW {
public:
    AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8, double wd = 1e-4)
        : beta1_(beta1), beta2_(beta2), eps_(eps), wd_(wd) {}

    void step(ParamStore& params, const std::map<std::string, Grid>& grads,
              const std::function<double(const std::string&)>& lr_for) {
        ++t_;
        double bc1 = 1.0 - std::pow(beta1_, t_);
        double bc2 = 1.0 - std::pow(beta2_, t_);
        for (const auto& [name, g] : grads) {
            Grid& p = params.get(name);
            auto [mit, inserted] = moments_.try_emplace(name, Moments{Grid(p.shape(), 0.0),
                                                                      Grid(p.shape(), 0.0)});
            Moments& mo = mit->second;
            double lr = lr_for(name);
            for (std::int64_t i = 0; i < p.size(); ++i) {
                mo.m[i] = beta1_ * mo.m[i] + (1 - beta1_) * g[i];
                mo.v[i] = beta2_ * mo.v[i] + (1 - beta2_) * g[i] * g[i];
                double mhat = mo.m[i] / bc1;
                double vhat = mo.v[i] / bc2;
                p[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + wd_ * p[i]);
            }
        }
    }

private:
    struct Moments {
        Grid m, v;
    };
    double beta1_, beta2_, eps_, wd_;
    std::int64_t t_ = 0;
    std::map<std::string, Moments> moments_;
};

// ---- training state and loop ----

struct StepRecord {
    int step = 0, epoch = 0, phase = 1;
    double seg_clean = 0, kl_clean = 0;
    double seg_adv = 0, kl_adv = 0, cal = 0;
    double total = 0;
    double grad_norm_head = 0, grad_norm_attack = 0;
};

struct TrainState {
    TrainConfig cfg;
    ParamStore params;
    FrozenEncoder encoder;
    FrozenDeformStack deform_stack;
    AdamW opt;
    int step = 0;
    int total_steps = 0;
    std::vector<StepRecord> log;

    static TrainState create(const TrainConfig& cfg) {
        cfg.validate();
        TrainState s;
        s.cfg = cfg;
        Rng rng(cfg.seed);
        init_head_params(s.params, cfg.head, rng);
        init_style_params(s.params, cfg.f_enc, 16, rng);
        init_deform_params(s.params, cfg.d_deform);
        s.encoder = FrozenEncoder::create(cfg.f_enc, cfg.seed ^ 0xf0f0f0ULL);
        s.deform_stack = FrozenDeformStack::create(cfg.f_enc, cfg.d_deform,
                                                   cfg.seed ^ 0x0e0e0eULL);
        s.opt = AdamW(0.9, 0.999, 1e-8, cfg.weight_decay);
        return s;
    }

    bool is_attacker_param(const std::string& name) const {
        return name.rfind("style.", 0) == 0 || name.rfind("deform.", 0) == 0;
    }

    double lr_for(const std::string& name) const {
        if (!is_attacker_param(name)) return cfg.lr_head;
        double frac = total_steps > 1 ? static_cast<double>(step) / (total_steps - 1) : 0.0;
        return cfg.lr_attack_hi + frac * (cfg.lr_attack_lo - cfg.lr_attack_hi);
    }
};

namespace train_detail {

inline Grid uniform_open_grid(Rng& rng, const std::vector<int>& shape) {
    Grid g(shape);
    for (std::int64_t i = 0; i < g.size(); ++i) g[i] = rng.uniform_open01();
    return g;
}

struct SampledHead {
    Value logits;    // [H,W] from one reparameterized draw
    Value iou_pred;  // scalar in (0,1)
    PixelPosterior px;
    MaskTokenPosterior mk;
    Value kl_sum;    // summed element-wise KL over all posteriors
};

inline SampledHead sampled_head_forward(Tape& t, Value feats, BoundParams& bp,
                                        const HeadConfig& head, Rng& draw_rng,
                                        const GammaPrior& prior, int k) {
    SampledHead out;
    out.px = predict_pixel_posterior(feats, bp);
    out.mk = predict_mask_posterior(bp["head.token" + std::to_string(k)], bp, head, k);
    const Grid& lam_shape = out.px.lam.value();
    Value uz = t.input(uniform_open_grid(draw_rng, lam_shape.shape()));
    Value uf = t.input(uniform_open_grid(draw_rng, {1, head.c_feat}));
    Value ub = t.input(uniform_open_grid(draw_rng, {1, head.c_feat}));
    Value z = weibull_sample(out.px.lam, out.px.kap, uz);
    Value wf = weibull_sample(out.mk.lam_fg, out.mk.kap_fg, uf);
    Value wb = weibull_sample(out.mk.lam_bg, out.mk.kap_bg, ub);
    out.logits = detail::channel_mix(wf - wb, z) + out.mk.bias;
    out.iou_pred = predict_iou(out.px, bp);
    out.kl_sum = kl_weibull_gamma_v(out.px.lam, out.px.kap, prior).sum() +
                 kl_weibull_gamma_v(out.mk.lam_fg, out.mk.kap_fg, prior).sum() +
                 kl_weibull_gamma_v(out.mk.lam_bg, out.mk.kap_bg, prior).sum();
    return out;
}

/// 5-channel feature value for a live (tape-valued) RGB image: the image is
/// embedded into channels 0..2 and constant prompt channels added at 3..4.
inline Value features_from_value(Tape& t, Value rgb, const Grid& prompts) {
    Value emb = embed_channels(rgb, 5, 0);
    int h = prompts.extent(1), w = prompts.extent(2);
    Grid pc({5, h, w}, 0.0);
    for (int c = 0; c < 2; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) pc.at(3 + c, y, x) = prompts.at(c, y, x);
    return emb + t.input(std::move(pc));
}

struct SceneResult {
    std::map<std::string, Grid> grads;
    StepRecord rec;
};

/// rec is filled incrementally so a rejected (non-finite) step can report
/// the components that were computed before the failure.
inline std::map<std::string, Grid> scene_step(const Scene& scene, int object_index,
                                              TrainState& state, double beta_eff,
                                              double gamma_eff, std::uint64_t draw_seed,
                                              StepRecord& rec) {
    const TrainConfig& cfg = state.cfg;
    GammaPrior prior;
    Rng draw_rng(draw_seed);
    Tape t;
    BoundParams bp(t, state.params);

    const Grid& gt_mask = scene.masks.at(static_cast<size_t>(object_index));
    Grid prompts = make_prompt_channels(scene.clicks.at(static_cast<size_t>(object_index)),
                                        gt_mask.extent(0), gt_mask.extent(1));

    // clean branch
    Grid feats_clean = make_head_features(scene.image, prompts);
    SampledHead clean = sampled_head_forward(t, t.input(feats_clean), bp, cfg.head, draw_rng,
                                             prior, 0);
    Value gt_v = t.input(gt_mask);
    SegLossParts seg_c = seg_loss(clean.logits, clean.iou_pred, gt_v);
    Value kl_c = (beta_eff * cfg.kl_element_scale) * clean.kl_sum;
    Value loss = seg_c.total + kl_c;
    rec.seg_clean = seg_c.total.value()[0];
    rec.kl_clean = clean.kl_sum.value()[0] * cfg.kl_element_scale;

    Value cal_e_channel, cal_u_channel;
    bool has_cal = false;

    if (gamma_eff > 0.0) {
        double grl = grl_scale_schedule(state.step, cfg);
        Grid enc_feats = state.encoder.features(scene.image);

        Value adv_rgb;
        if (cfg.style_enabled) {
            StyleAttackResult styled =
                style_attack_apply(t, scene.image, scene.masks, object_index, enc_feats, bp,
                                   cfg.style_variant, cfg.eps_style, cfg.eps_shift(), grl);
            adv_rgb = styled.image_styled;
        } else {
            adv_rgb = t.input(scene.image);
        }

        Value gt_adv;
        if (cfg.deform_enabled) {
            std::vector<Value> deltas;
            for (const Grid& m : scene.masks) {
                Value raw = predict_offsets(t, state.deform_stack, enc_feats, m, bp, grl);
                deltas.push_back(bound_offsets(raw, cfg.eps_deform));
            }
            Value delta = composite_offsets(t, deltas, scene.masks);
            WarpedPair warped = warp_pair(adv_rgb, scene.masks, delta);
            adv_rgb = warped.image;
            int h = gt_mask.extent(0), w = gt_mask.extent(1);
            gt_adv = reshape(warped.masks[static_cast<size_t>(object_index)], {h, w});
        } else {
            gt_adv = gt_v;
        }

        Value feats_adv = features_from_value(t, adv_rgb, prompts);
        SampledHead adv = sampled_head_forward(t, feats_adv, bp, cfg.head, draw_rng, prior, 0);
        SegLossParts seg_a = seg_loss(adv.logits, adv.iou_pred, gt_adv);
        Value kl_a = (beta_eff * cfg.kl_element_scale) * adv.kl_sum;
        rec.seg_adv = seg_a.total.value()[0];
        rec.kl_adv = adv.kl_sum.value()[0] * cfg.kl_element_scale;

        Value adv_branch = seg_a.total + kl_a;
        if (cfg.lambda_cal > 0.0) {
            LogitStats stats = logits_analytic(adv.px, adv.mk);
            Value p_pred = expected_prob(stats);
            Value u_map = uncertainty_analytic(stats);
            Value e_map = p_pred + gt_adv - 2.0 * (p_pred * gt_adv);
            CalLossChannels cal = calibration_loss(e_map, u_map);
            rec.cal = cal.total.value()[0];
            cal_e_channel = cal.e_channel;
            cal_u_channel = cal.u_channel;
            has_cal = true;
            if (cfg.cal_to_head)
                adv_branch = adv_branch + cfg.lambda_cal * cal.u_channel;
        }
        loss = loss + gamma_eff * adv_branch;
    }

    rec.total = loss.value()[0];
    t.backward(loss);
    std::map<std::string, Grid> grads;
    bp.add_grads_into(grads);

    // calibration terms that must reach only the attack networks go through
    // a second backward pass whose head-parameter gradients are discarded
    if (has_cal) {
        Value rest = cfg.cal_to_head ? cal_e_channel : cal_e_channel + cal_u_channel;
        Value scaled = (gamma_eff * cfg.lambda_cal) * rest;
        t.backward(scaled);
        std::map<std::string, Grid> cal_grads;
        bp.add_grads_into(cal_grads);
        for (auto& [name, g] : cal_grads) {
            if (!state.is_attacker_param(name)) continue;
            auto it = grads.find(name);
            if (it == grads.end()) {
                grads.emplace(name, g);
            } else {
                for (std::int64_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
            }
        }
    }
    return grads;
}

}  // namespace train_detail

/// One optimizer step over a batch of (scene, object) pairs: forward both
/// branches, a single joint backward per scene (plus the attacker-only
/// calibration pass), gradient mean across the batch, AdamW update. Scene
/// passes may run on worker threads; gradients are reduced in scene order
/// so the update stays bit-deterministic.
inline StepRecord train_step(const std::vector<std::pair<const Scene*, int>>& batch,
                             TrainState& state, double beta_eff, double gamma_eff) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    std::vector<train_detail::SceneResult> results(batch.size());
    int jobs = state.cfg.jobs > 0 ? state.cfg.jobs
                                  : static_cast<int>(std::thread::hardware_concurrency());
    jobs = std::max(1, std::min<int>(jobs, static_cast<int>(batch.size())));

    auto run_one = [&](size_t i) {
        std::uint64_t draw_seed =
            state.cfg.seed * 0x9e3779b97f4a7c15ULL + 0x51ed2701ULL * state.step + 7919 * i;
        try {
            results[i].grads = train_detail::scene_step(*batch[i].first, batch[i].second, state,
                                                        beta_eff, gamma_eff, draw_seed,
                                                        results[i].rec);
        } catch (const TapeError& e) {
            throw std::runtime_error(
                std::string("train_step: non-finite or invalid op, step rejected (") + e.what() +
                "), components so far: seg_clean=" + std::to_string(results[i].rec.seg_clean) +
                " seg_adv=" + std::to_string(results[i].rec.seg_adv) +
                " cal=" + std::to_string(results[i].rec.cal));
        }
    };

    if (jobs == 1) {
        for (size_t i = 0; i < batch.size(); ++i) run_one(i);
    } else {
        std::vector<std::thread> pool;
        std::atomic<size_t> next{0};
        std::vector<std::exception_ptr> errors(static_cast<size_t>(jobs));
        for (int j = 0; j < jobs; ++j)
            pool.emplace_back([&, j] {
                size_t i;
                while ((i = next.fetch_add(1)) < batch.size()) {
                    try {
                        run_one(i);
                    } catch (...) {
                        errors[static_cast<size_t>(j)] = std::current_exception();
                        return;
                    }
                }
            });
        for (auto& th : pool) th.join();
        for (auto& err : errors)
            if (err) std::rethrow_exception(err);
    }

    std::map<std::string, Grid> total;
    StepRecord rec;
    for (size_t i = 0; i < results.size(); ++i) {
        for (const auto& [name, g] : results[i].grads) {
            auto it = total.find(name);
            if (it == total.end()) {
                total.emplace(name, g);
            } else {
                for (std::int64_t k = 0; k < g.size(); ++k) it->second[k] += g[k];
            }
        }
        rec.seg_clean += results[i].rec.seg_clean;
        rec.kl_clean += results[i].rec.kl_clean;
        rec.seg_adv += results[i].rec.seg_adv;
        rec.kl_adv += results[i].rec.kl_adv;
        rec.cal += results[i].rec.cal;
        rec.total += results[i].rec.total;
    }
    double inv = 1.0 / static_cast<double>(batch.size());
    rec.seg_clean *= inv;
    rec.kl_clean *= inv;
    rec.seg_adv *= inv;
    rec.kl_adv *= inv;
    rec.cal *= inv;
    rec.total *= inv;
    for (auto& [name, g] : total) {
        for (std::int64_t k = 0; k < g.size(); ++k) g[k] *= inv;
        double norm = 0.0;
        for (std::int64_t k = 0; k < g.size(); ++k) norm += g[k] * g[k];
        if (state.is_attacker_param(name))
            rec.grad_norm_attack += norm;
        else
            rec.grad_norm_head += norm;
    }
    rec.grad_norm_head = std::sqrt(rec.grad_norm_head);
    rec.grad_norm_attack = std::sqrt(rec.grad_norm_attack);

    state.opt.step(state.params, total,
                   [&](const std::string& name) { return state.lr_for(name); });
    rec.step = state.step;
    ++state.step;
    return rec;
}

struct TrainCallbacks {
    std::function<void(const StepRecord&)> on_step;
    std::function<void(int epoch, const ParamStore&)> on_epoch_end;
};

/// Full curriculum training loop; deterministic for a fixed config.
inline TrainState train(const TrainConfig& cfg, const std::vector<Scene>& dataset,
                        const TrainCallbacks& callbacks = {}) {
    if (dataset.empty()) throw std::invalid_argument("train: dataset is empty");
    TrainState state = TrainState::create(cfg);
    int steps_per_epoch =
        static_cast<int>((dataset.size() + cfg.batch - 1) / static_cast<size_t>(cfg.batch));
    state.total_steps = steps_per_epoch * cfg.epochs;
    Rng shuffle_rng(cfg.seed ^ 0x5caff01dULL);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto [beta_eff, gamma_eff] = curriculum(epoch, cfg);
        std::vector<size_t> order(dataset.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<size_t>(shuffle_rng.uniform_int(
                                        0, static_cast<int>(i) - 1))]);
        for (size_t b = 0; b < order.size(); b += static_cast<size_t>(cfg.batch)) {
            std::vector<std::pair<const Scene*, int>> batch;
            for (size_t i = b; i < std::min(order.size(), b + static_cast<size_t>(cfg.batch)); ++i) {
                const Scene& s = dataset[order[i]];
                int obj = static_cast<int>((order[i] + static_cast<size_t>(epoch)) % s.masks.size());
                batch.emplace_back(&s, obj);
            }
            StepRecord rec = train_step(batch, state, beta_eff, gamma_eff);
            rec.epoch = epoch;
            rec.phase = gamma_eff > 0 ? 3 : (beta_eff > 0 ? 2 : 1);
            state.log.push_back(rec);
            if (callbacks.on_step) callbacks.on_step(state.log.back());
        }
        if (callbacks.on_epoch_end) callbacks.on_epoch_end(epoch, state.params);
    }
    return state;
}

}  // namespace ruackit
