#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ruackit/bayes_head.hpp"
#include "ruackit/benchmark.hpp"
#include "ruackit/grid_io.hpp"
#include "ruackit/metrics.hpp"
#include "ruackit/postproc.hpp"
#include "ruackit/trainer.hpp"

namespace ruackit {

struct EvalOptions {
    int mc_samples = 20;  // 0 selects analytic uncertainty
    int patch_size = 4;
    std::vector<double> taus = {0.01, 0.05, 0.1};
    int ece_bins = 15;
    double boundary_tol = 1.0;
    bool apply_unc_corr = false;
    int jobs = 1;
    std::uint64_t mc_seed = 123;
};

struct DomainMetrics {
    std::string domain;
    int n_records = 0;
    double j = 0, f = 0, jf = 0;
    PavpuResult pavpu_result;
    double aurc_value = 0, ece_value = 0, auroc = 0, pcc = 0, auroc_mask_value = 0;
    bool auroc_defined = false, pcc_defined = false, auroc_mask_defined = false;
    AurcResult risk_coverage;
};

struct MetricsReport {
    std::vector<DomainMetrics> domains;  // source_val first, then OOD domains
    DomainMetrics ood_aggregate;         // pooled over every OOD record
    double channel_alignment_r = 0;
    double channel_alignment_norm = 0;
    bool channel_alignment_defined = false;
};

namespace eval_detail {

struct RecordBundle {
    EvalRecord record;
    double jf_j = 0, jf_f = 0;
    double iou = 0;
    double mean_mask_unc = 0;
};

inline RecordBundle eval_one(const TrainState& state, const Scene& scene, int object_index,
                             const std::string& domain, const EvalOptions& opts,
                             std::uint64_t mc_seed) {
    const HeadConfig& head = state.cfg.head;
    const Grid& gt = scene.masks.at(static_cast<size_t>(object_index));
    Grid prompts = make_prompt_channels(scene.clicks.at(static_cast<size_t>(object_index)),
                                        gt.extent(0), gt.extent(1));
    Grid feats = make_head_features(scene.image, prompts);

    // evaluate every hypothesis, keep the one with the best predicted IoU
    Tape t;
    BoundParams bp(t, state.params);
    HeadForwardOutput best;
    double best_iou = -1.0;
    for (int k = 0; k < head.k_hyp; ++k) {
        HeadForwardOutput out = head_forward(t, feats, bp, head, k, opts.mc_samples,
                                             mc_seed + static_cast<std::uint64_t>(k));
        if (out.iou_pred > best_iou) {
            best_iou = out.iou_pred;
            best = std::move(out);
        }
    }

    RecordBundle rb;
    rb.record.domain = domain;
    rb.record.pred_prob = best.prob;
    rb.record.gt_mask = gt;
    rb.record.unc = best.uncertainty;
    int h = gt.extent(0), w = gt.extent(1);
    rb.record.pred_mask = Grid({h, w});
    for (std::int64_t i = 0; i < rb.record.pred_mask.size(); ++i)
        rb.record.pred_mask[i] = best.prob[i] >= 0.5 ? 1.0 : 0.0;
    if (opts.apply_unc_corr)
        rb.record.pred_mask = unc_corr(rb.record.pred_mask, rb.record.unc);
    JfResult jf = jf_score(rb.record.pred_mask, gt, opts.boundary_tol);
    rb.jf_j = jf.j;
    rb.jf_f = jf.f;
    rb.iou = binary_iou(rb.record.pred_mask, gt);
    double us = 0, n = 0;
    for (std::int64_t i = 0; i < rb.record.pred_mask.size(); ++i)
        if (rb.record.pred_mask[i] > 0.5) {
            us += rb.record.unc[i];
            n += 1;
        }
    rb.mean_mask_unc = n > 0 ? us / n : rb.record.unc.mean();
    return rb;
}

inline DomainMetrics summarize(const std::string& name, const std::vector<RecordBundle>& bundles,
                               const EvalOptions& opts) {
    DomainMetrics dm;
    dm.domain = name;
    dm.n_records = static_cast<int>(bundles.size());
    if (bundles.empty()) return dm;
    std::vector<EvalRecord> records;
    std::vector<double> err, unc, prob, gt, mask_unc, mask_iou;
    for (const RecordBundle& rb : bundles) {
        dm.j += rb.jf_j;
        dm.f += rb.jf_f;
        records.push_back(rb.record);
        mask_unc.push_back(rb.mean_mask_unc);
        mask_iou.push_back(rb.iou);
        for (std::int64_t i = 0; i < rb.record.pred_mask.size(); ++i) {
            bool p = rb.record.pred_mask[i] > 0.5, g = rb.record.gt_mask[i] > 0.5;
            err.push_back(p != g ? 1.0 : 0.0);
            unc.push_back(rb.record.unc[i]);
            prob.push_back(rb.record.pred_prob[i]);
            gt.push_back(g ? 1.0 : 0.0);
        }
    }
    dm.j /= dm.n_records;
    dm.f /= dm.n_records;
    dm.jf = 0.5 * (dm.j + dm.f);
    dm.pavpu_result = pavpu(records, opts.patch_size, opts.taus);
    dm.risk_coverage = aurc(err, unc);
    dm.aurc_value = dm.risk_coverage.aurc;
    dm.ece_value = ece(prob, gt, opts.ece_bins);
    try {
        dm.auroc = auroc_pixel(unc, err);
        dm.auroc_defined = true;
    } catch (const std::invalid_argument&) {
    }
    try {
        dm.pcc = pearson(unc, err);
        dm.pcc_defined = true;
    } catch (const std::invalid_argument&) {
    }
    try {
        dm.auroc_mask_value = auroc_mask(mask_unc, mask_iou);
        dm.auroc_mask_defined = true;
    } catch (const std::invalid_argument&) {
    }
    return dm;
}

inline std::vector<RecordBundle> eval_scenes(const TrainState& state,
                                             const std::vector<Scene>& scenes,
                                             const std::string& domain,
                                             const EvalOptions& opts) {
    std::vector<std::pair<size_t, int>> work;  // (scene index, object)
    for (size_t i = 0; i < scenes.size(); ++i)
        for (size_t k = 0; k < scenes[i].masks.size(); ++k)
            work.emplace_back(i, static_cast<int>(k));
    std::vector<RecordBundle> out(work.size());
    int jobs = opts.jobs > 0 ? opts.jobs : static_cast<int>(std::thread::hardware_concurrency());
    jobs = std::max(1, std::min<int>(jobs, static_cast<int>(work.size())));
    auto run_one = [&](size_t wi) {
        auto [si, obj] = work[wi];
        std::uint64_t seed = opts.mc_seed ^ (scenes[si].seed * 131071ULL) ^
                             (static_cast<std::uint64_t>(obj) << 32);
        out[wi] = eval_one(state, scenes[si], obj, domain, opts, seed);
    };
    if (jobs == 1) {
        for (size_t wi = 0; wi < work.size(); ++wi) run_one(wi);
    } else {
        std::atomic<size_t> next{0};
        std::vector<std::thread> pool;
        for (int j = 0; j < jobs; ++j)
            pool.emplace_back([&] {
                size_t wi;
                while ((wi = next.fetch_add(1)) < work.size()) run_one(wi);
            });
        for (auto& th : pool) th.join();
    }
    return out;
}

}  // namespace eval_detail

/// Head trunk activations for a clean scene/object; backs the channel
/// alignment analysis.
inline std::vector<double> trunk_pooled_features(const TrainState& state, const Scene& scene,
                                                 int object_index, const Grid& image) {
    const Grid& gt = scene.masks.at(static_cast<size_t>(object_index));
    Grid prompts = make_prompt_channels(scene.clicks.at(static_cast<size_t>(object_index)),
                                        gt.extent(0), gt.extent(1));
    Tape t;
    BoundParams bp(t, state.params);
    PixelPosterior px =
        predict_pixel_posterior(t.input(make_head_features(image, prompts)), bp);
    return pooled_foreground_features(px.trunk.value(), gt);
}

/// Adversarial image for a scene under the trained attackers (forward only).
inline Grid adversarial_image(const TrainState& state, const Scene& scene, int object_index) {
    const TrainConfig& cfg = state.cfg;
    Tape t;
    BoundParams bp(t, state.params);
    Grid enc_feats = state.encoder.features(scene.image);
    Value adv_rgb;
    if (cfg.style_enabled) {
        StyleAttackResult styled =
            style_attack_apply(t, scene.image, scene.masks, object_index, enc_feats, bp,
                               cfg.style_variant, cfg.eps_style, cfg.eps_shift(), cfg.grl_scale);
        adv_rgb = styled.image_styled;
    } else {
        adv_rgb = t.input(scene.image);
    }
    if (cfg.deform_enabled) {
        std::vector<Value> deltas;
        for (const Grid& m : scene.masks) {
            Value raw = predict_offsets(t, state.deform_stack, enc_feats, m, bp, cfg.grl_scale);
            deltas.push_back(bound_offsets(raw, cfg.eps_deform));
        }
        Value delta = composite_offsets(t, deltas, scene.masks);
        adv_rgb = grid_sample(adv_rgb, delta, BorderMode::kClamp);
    }
    return adv_rgb.value();
}

/// Per-channel mean trunk-feature difference between perturbed and clean
/// versions of the same scenes, pooled inside dilated ground-truth masks.
inline std::vector<double> feature_shift_vector(
    const TrainState& state, const std::vector<Scene>& clean,
    const std::function<Grid(const Scene&, int)>& perturbed_image) {
    std::vector<double> shift(static_cast<size_t>(state.cfg.head.c_feat), 0.0);
    double count = 0;
    for (const Scene& scene : clean) {
        for (size_t k = 0; k < scene.masks.size(); ++k) {
            auto base = trunk_pooled_features(state, scene, static_cast<int>(k), scene.image);
            auto pert = trunk_pooled_features(state, scene, static_cast<int>(k),
                                              perturbed_image(scene, static_cast<int>(k)));
            for (size_t c = 0; c < shift.size(); ++c) shift[c] += pert[c] - base[c];
            count += 1;
        }
    }
    if (count > 0)
        for (double& v : shift) v /= count;
    return shift;
}

/// Full benchmark evaluation: source validation split plus every OOD
/// domain, with a pooled OOD aggregate.
inline MetricsReport evaluate_benchmark(const TrainState& state, const Benchmark& bench,
                                        const EvalOptions& opts) {
    MetricsReport report;
    std::vector<eval_detail::RecordBundle> all_ood;
    report.domains.push_back(eval_detail::summarize(
        "source_val", eval_detail::eval_scenes(state, bench.val, "source_val", opts), opts));
    for (const auto& dom : bench.domains) {
        auto bundles = eval_detail::eval_scenes(state, dom.scenes, dom.spec.name, opts);
        report.domains.push_back(eval_detail::summarize(dom.spec.name, bundles, opts));
        all_ood.insert(all_ood.end(), bundles.begin(), bundles.end());
    }
    report.ood_aggregate = eval_detail::summarize("ood_aggregate", all_ood, opts);
    return report;
}

// ---- report serialization ----

inline nlohmann::json domain_to_json(const DomainMetrics& dm) {
    nlohmann::json j;
    j["domain"] = dm.domain;
    j["n_records"] = dm.n_records;
    j["J"] = dm.j;
    j["F"] = dm.f;
    j["JF"] = dm.jf;
    j["PAvPU"] = dm.pavpu_result.mean;
    j["PAvPU_per_tau"] = dm.pavpu_result.per_tau;
    j["AURC"] = dm.aurc_value;
    j["ECE"] = dm.ece_value;
    if (dm.auroc_defined) j["AUROC_pixel"] = dm.auroc;
    if (dm.pcc_defined) j["PCC"] = dm.pcc;
    if (dm.auroc_mask_defined) j["AUROC_mask"] = dm.auroc_mask_value;
    return j;
}

inline void write_report_json(const std::filesystem::path& path, const MetricsReport& report,
                              const std::string& method) {
    nlohmann::json j;
    j["method"] = method;
    for (const DomainMetrics& dm : report.domains) j["domains"].push_back(domain_to_json(dm));
    j["ood_aggregate"] = domain_to_json(report.ood_aggregate);
    if (report.channel_alignment_defined) {
        j["channel_alignment_r"] = report.channel_alignment_r;
        j["channel_alignment_norm"] = report.channel_alignment_norm;
    }
    std::ofstream f(path);
    f << j.dump(2) << "\n";
}

inline void write_report_csv(const std::filesystem::path& path, const MetricsReport& report,
                             const std::string& method) {
    std::ofstream f(path);
    f << "method,domain,n_records,J,F,JF,PAvPU,AURC,ECE,AUROC_pixel,PCC,AUROC_mask\n";
    auto row = [&](const DomainMetrics& dm) {
        f << method << ',' << dm.domain << ',' << dm.n_records << ',' << dm.j << ',' << dm.f
          << ',' << dm.jf << ',' << dm.pavpu_result.mean << ',' << dm.aurc_value << ','
          << dm.ece_value << ',';
        if (dm.auroc_defined) f << dm.auroc;
        f << ',';
        if (dm.pcc_defined) f << dm.pcc;
        f << ',';
        if (dm.auroc_mask_defined) f << dm.auroc_mask_value;
        f << '\n';
    };
    for (const DomainMetrics& dm : report.domains) row(dm);
    row(report.ood_aggregate);
}

inline void write_risk_coverage_csv(const std::filesystem::path& path,
                                    const MetricsReport& report) {
    std::ofstream f(path);
    f << "domain,coverage,risk\n";
    for (const DomainMetrics& dm : report.domains)
        for (auto [cov, risk] : dm.risk_coverage.curve)
            f << dm.domain << ',' << cov << ',' << risk << '\n';
}

}  // namespace ruackit
