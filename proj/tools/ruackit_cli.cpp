// Command-line front end: dataset generation, training, evaluation, attack
// previews, uncertainty-guided mask correction and paired run comparison.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ruackit/benchmark.hpp"
#include "ruackit/config.hpp"
#include "ruackit/eval.hpp"
#include "ruackit/grid_io.hpp"
#include "ruackit/postproc.hpp"
#include "ruackit/trainer.hpp"

namespace fs = std::filesystem;
using namespace ruackit;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

RunConfig load_run_config(const std::string& config_path,
                          const std::map<std::string, std::string>& overrides) {
    return parse_config(config_path.empty() ? fs::path{} : fs::path(config_path), overrides);
}

void write_effective_config(const fs::path& dir, RunConfig& cfg) {
    fs::create_directories(dir);
    std::ofstream f(dir / "config.txt");
    f << echo_config(cfg);
}

TrainState load_trained_state(const fs::path& run_dir) {
    fs::path cfg_path = run_dir / "config.txt";
    if (!fs::exists(cfg_path))
        throw std::runtime_error("missing artifact: " + cfg_path.string() +
                                 " (run `ruackit train` first)");
    RunConfig cfg = parse_config(cfg_path);
    TrainState state = TrainState::create(cfg.train);
    fs::path ckpt = run_dir / "checkpoints" / "final";
    if (!fs::exists(ckpt / "manifest.json"))
        throw std::runtime_error("missing artifact: " + (ckpt / "manifest.json").string());
    state.params = ParamStore::load(ckpt);
    return state;
}

Benchmark load_bench_or_die(const std::string& dir) {
    if (!fs::exists(fs::path(dir) / "manifest.json"))
        throw std::runtime_error("missing artifact: " + dir +
                                 "/manifest.json (run `ruackit gen` first)");
    return load_benchmark(dir);
}

int cmd_gen(const std::string& config_path,
            const std::map<std::string, std::string>& overrides, const std::string& out,
            bool previews) {
    RunConfig cfg = load_run_config(config_path, overrides);
    Benchmark bench = build_benchmark(cfg.bench);
    save_benchmark(out, bench, previews);
    write_effective_config(out, cfg);
    std::cout << "benchmark written to " << out << ": " << bench.train.size() << " train, "
              << bench.val.size() << " val, " << bench.domains.size() << " OOD domains x "
              << cfg.bench.n_ood << " scenes\n";
    return kExitOk;
}

int cmd_train(const std::string& config_path, std::map<std::string, std::string> overrides,
              const std::string& bench_dir, const std::string& out, bool ue_only) {
    if (ue_only) overrides["ue_only"] = "true";
    RunConfig cfg = load_run_config(config_path, overrides);
    Benchmark bench = load_bench_or_die(bench_dir);
    fs::create_directories(fs::path(out) / "checkpoints");
    write_effective_config(out, cfg);
    std::ofstream log(fs::path(out) / "log.jsonl");
    TrainCallbacks callbacks;
    callbacks.on_step = [&](const StepRecord& r) {
        nlohmann::json j{{"step", r.step},       {"epoch", r.epoch},
                         {"phase", r.phase},     {"seg_clean", r.seg_clean},
                         {"kl_clean", r.kl_clean}, {"seg_adv", r.seg_adv},
                         {"kl_adv", r.kl_adv},   {"cal", r.cal},
                         {"total", r.total},     {"grad_norm_head", r.grad_norm_head},
                         {"grad_norm_attack", r.grad_norm_attack}};
        log << j.dump() << "\n";
    };
    callbacks.on_epoch_end = [&](int epoch, const ParamStore& params) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "epoch_%02d", epoch);
        params.save(fs::path(out) / "checkpoints" / buf);
        std::cout << "epoch " << epoch << " done\n";
    };
    TrainState state = train(cfg.train, bench.train, callbacks);
    state.params.save(fs::path(out) / "checkpoints" / "final");
    std::cout << "training finished: " << state.log.size() << " steps, final loss "
              << state.log.back().total << "\n";
    return kExitOk;
}

void write_eval_pngs(const fs::path& dir, const TrainState& state, const Benchmark& bench,
                     const EvalOptions& opts) {
    fs::create_directories(dir);
    for (const auto& dom : bench.domains) {
        if (dom.scenes.empty()) continue;
        const Scene& scene = dom.scenes.front();
        Grid prompts = make_prompt_channels(scene.clicks[0], scene.image.extent(1),
                                            scene.image.extent(2));
        Tape t;
        BoundParams bp(t, state.params);
        HeadForwardOutput out = head_forward(t, make_head_features(scene.image, prompts), bp,
                                             state.cfg.head, 0, opts.mc_samples, opts.mc_seed);
        Grid conf(out.prob.shape());
        for (std::int64_t i = 0; i < conf.size(); ++i)
            conf[i] = std::max(out.prob[i], 1.0 - out.prob[i]);
        save_png(dir / (dom.spec.name + "_image.png"), scene.image);
        save_png(dir / (dom.spec.name + "_uncertainty.png"), out.uncertainty);
        save_png(dir / (dom.spec.name + "_confidence.png"), conf);
    }
}

int cmd_eval(const std::string& run_dir, const std::string& bench_dir, const std::string& out,
             const std::string& mc_samples_list, bool uncorr, int jobs) {
    TrainState state = load_trained_state(run_dir);
    Benchmark bench = load_bench_or_die(bench_dir);
    RunConfig run_cfg = parse_config(fs::path(run_dir) / "config.txt");
    EvalOptions opts = run_cfg.eval;
    opts.apply_unc_corr = uncorr;
    if (jobs > 0) opts.jobs = jobs;

    std::vector<int> sweep;
    {
        std::stringstream ss(mc_samples_list);
        std::string item;
        while (std::getline(ss, item, ',')) sweep.push_back(std::stoi(item));
    }
    fs::create_directories(out);

    MetricsReport report;
    for (size_t i = 0; i < sweep.size(); ++i) {
        opts.mc_samples = sweep[i];
        MetricsReport r = evaluate_benchmark(state, bench, opts);
        if (i == 0) report = r;
        if (sweep.size() > 1) {
            std::ofstream f(fs::path(out) / "mc_sweep.csv", i == 0 ? std::ios::trunc
                                                                   : std::ios::app);
            if (i == 0) f << "S,JF,PAvPU,AURC,ECE\n";
            f << sweep[i] << ',' << r.ood_aggregate.jf << ',' << r.ood_aggregate.pavpu_result.mean
              << ',' << r.ood_aggregate.aurc_value << ',' << r.ood_aggregate.ece_value << "\n";
        }
    }

    // channel alignment: trained attack shift vs the elastic+color OOD shift
    {
        std::vector<Scene> source(bench.val.begin(),
                                  bench.val.begin() + std::min<size_t>(8, bench.val.size()));
        auto aug = feature_shift_vector(state, source, [&](const Scene& s, int obj) {
            return adversarial_image(state, s, obj);
        });
        std::vector<double> ood_shift(aug.size(), 0.0);
        double count = 0;
        for (const auto& dom : bench.domains) {
            if (dom.spec.kind != ShiftKind::kElastic && dom.spec.kind != ShiftKind::kColorTransfer)
                continue;
            for (const Scene& s : source) {
                ShiftSpec shift{dom.spec.kind, dom.spec.magnitude, s.seed ^ 0xd0a1ULL};
                Scene shifted = apply_shift(s, shift);
                for (size_t k = 0; k < s.masks.size(); ++k) {
                    auto base = trunk_pooled_features(state, s, static_cast<int>(k), s.image);
                    auto pert = trunk_pooled_features(state, s, static_cast<int>(k),
                                                      shifted.image);
                    for (size_t c = 0; c < ood_shift.size(); ++c)
                        ood_shift[c] += pert[c] - base[c];
                    count += 1;
                }
            }
        }
        if (count > 0) {
            for (double& v : ood_shift) v /= count;
            try {
                ChannelAlignment ca = channel_alignment(aug, ood_shift);
                report.channel_alignment_r = ca.r;
                report.channel_alignment_norm = ca.norm_aug;
                report.channel_alignment_defined = true;
            } catch (const std::invalid_argument&) {
            }
        }
    }

    std::string method = state.cfg.ue_only ? "ue_only" : "ruac";
    write_report_json(fs::path(out) / "metrics.json", report, method);
    write_report_csv(fs::path(out) / "metrics.csv", report, method);
    write_risk_coverage_csv(fs::path(out) / "risk_coverage.csv", report);
    write_eval_pngs(fs::path(out) / "maps", state, bench, opts);
    {
        RunConfig echo_cfg = run_cfg;
        echo_cfg.eval = opts;
        write_effective_config(out, echo_cfg);
    }
    std::cout << "eval written to " << out << "; OOD aggregate JF=" << report.ood_aggregate.jf
              << " PAvPU=" << report.ood_aggregate.pavpu_result.mean
              << " AURC=" << report.ood_aggregate.aurc_value << "\n";
    return kExitOk;
}

Grid divergence_visualization(const Grid& delta) {
    int h = delta.extent(1), w = delta.extent(2);
    Grid div({h, w});
    double peak = 1e-12;
    for (int y = 1; y < h - 1; ++y)
        for (int x = 1; x < w - 1; ++x) {
            double d = 0.5 * (delta.at(0, y + 1, x) - delta.at(0, y - 1, x)) +
                       0.5 * (delta.at(1, y, x + 1) - delta.at(1, y, x - 1));
            div.at(y, x) = d;
            peak = std::max(peak, std::abs(d));
        }
    Grid vis({3, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double d = div.at(y, x) / peak;
            vis.at(0, y, x) = d < 0 ? -d : 0.0;  // red: reduced regions
            vis.at(1, y, x) = d > 0 ? d : 0.0;   // green: expanded regions
        }
    return vis;
}

int cmd_attack_preview(const std::string& run_dir, const std::string& bench_dir,
                       const std::string& out, int scene_index) {
    TrainState state = load_trained_state(run_dir);
    Benchmark bench = load_bench_or_die(bench_dir);
    if (scene_index < 0 || static_cast<size_t>(scene_index) >= bench.train.size())
        throw std::runtime_error("scene index out of range (train split has " +
                                 std::to_string(bench.train.size()) + " scenes)");
    const Scene& scene = bench.train[static_cast<size_t>(scene_index)];
    fs::create_directories(out);

    Tape t;
    BoundParams bp(t, state.params);
    Grid enc_feats = state.encoder.features(scene.image);
    nlohmann::json record;
    Value adv_rgb = t.input(scene.image);
    if (state.cfg.style_enabled) {
        StyleAttackResult styled = style_attack_apply(
            t, scene.image, scene.masks, 0, enc_feats, bp, state.cfg.style_variant,
            state.cfg.eps_style, state.cfg.eps_shift(), state.cfg.grl_scale);
        adv_rgb = styled.image_styled;
        for (size_t k = 0; k < styled.styles.size(); ++k) {
            nlohmann::json obj;
            obj["mu"] = styled.styles[k].mu;
            obj["sigma"] = styled.styles[k].sigma;
            obj["mu_adv"] = styled.bounded[k].mu_adv.value().vec();
            obj["sigma_adv"] = styled.bounded[k].sigma_adv.value().vec();
            record["objects"].push_back(obj);
        }
        save_png(fs::path(out) / "styled.png", adv_rgb.value());
    }
    if (state.cfg.deform_enabled) {
        std::vector<Value> deltas;
        for (const Grid& m : scene.masks) {
            Value raw = predict_offsets(t, state.deform_stack, enc_feats, m, bp,
                                        state.cfg.grl_scale);
            deltas.push_back(bound_offsets(raw, state.cfg.eps_deform));
        }
        Value delta = composite_offsets(t, deltas, scene.masks);
        save_grid(fs::path(out) / "offsets.rgrd", delta.value());
        save_png(fs::path(out) / "deform_divergence.png", divergence_visualization(delta.value()));
        adv_rgb = grid_sample(adv_rgb, delta, BorderMode::kClamp);
    }
    save_png(fs::path(out) / "before.png", scene.image);
    save_png(fs::path(out) / "after.png", adv_rgb.value());
    std::ofstream jf(fs::path(out) / "styles.json");
    jf << record.dump(2) << "\n";
    std::cout << "attack preview written to " << out << "\n";
    return kExitOk;
}

int cmd_correct(const std::string& mask_path, const std::string& unc_path,
                const std::string& out) {
    if (!fs::exists(mask_path)) throw std::runtime_error("missing artifact: " + mask_path);
    if (!fs::exists(unc_path)) throw std::runtime_error("missing artifact: " + unc_path);
    Grid mask = load_grid(mask_path);
    Grid unc = load_grid(unc_path);
    UncCorrAudit audit;
    Grid corrected = unc_corr(mask, unc, &audit);
    fs::create_directories(out);
    save_grid(fs::path(out) / "corrected.rgrd", corrected);
    save_png(fs::path(out) / "corrected.png", corrected);
    nlohmann::json j;
    j["threshold"] = audit.threshold;
    for (size_t c = 0; c < audit.component_sizes.size(); ++c) {
        nlohmann::json comp;
        comp["label"] = c + 1;
        comp["pixels"] = audit.component_sizes[c];
        comp["mean_uncertainty"] = audit.component_mean_unc[c];
        comp["kept"] = static_cast<bool>(audit.kept[c]);
        j["components"].push_back(comp);
    }
    std::ofstream f(fs::path(out) / "audit.json");
    f << j.dump(2) << "\n";
    std::cout << "corrected mask written to " << out << " (threshold " << audit.threshold
              << ", " << audit.component_sizes.size() << " components)\n";
    return kExitOk;
}

int cmd_report(const std::string& dir_a, const std::string& dir_b, const std::string& out) {
    auto load = [](const std::string& dir) {
        fs::path p = fs::path(dir) / "metrics.json";
        if (!fs::exists(p)) throw std::runtime_error("missing artifact: " + p.string());
        std::ifstream f(p);
        return nlohmann::json::parse(f);
    };
    nlohmann::json a = load(dir_a), b = load(dir_b);
    fs::create_directories(out);

    // paired per-domain values for each metric
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> paired;
    nlohmann::json deltas = nlohmann::json::array();
    for (const auto& da : a.at("domains")) {
        std::string name = da.at("domain");
        if (name == "source_val") continue;
        for (const auto& db : b.at("domains")) {
            if (db.at("domain") != name) continue;
            nlohmann::json row{{"domain", name}};
            for (const std::string metric : {"JF", "PAvPU", "AURC", "ECE"}) {
                double va = da.at(metric), vb = db.at(metric);
                row[metric + "_a"] = va;
                row[metric + "_b"] = vb;
                row[metric + "_delta"] = va - vb;
                paired[metric].first.push_back(va);
                paired[metric].second.push_back(vb);
            }
            deltas.push_back(row);
        }
    }
    nlohmann::json j;
    j["method_a"] = a.value("method", "a");
    j["method_b"] = b.value("method", "b");
    j["per_domain"] = deltas;
    for (const auto& [metric, values] : paired) {
        bool higher_better = metric == "JF" || metric == "PAvPU";
        try {
            WilcoxonResult w = wilcoxon_signed_rank(
                values.first, values.second,
                higher_better ? TestSide::kGreater : TestSide::kLess);
            j["wilcoxon"][metric] = {{"statistic", w.statistic},
                                     {"p_one_sided", w.p},
                                     {"n", w.n},
                                     {"direction", higher_better ? "a>b" : "a<b"}};
        } catch (const std::invalid_argument& e) {
            j["wilcoxon"][metric] = {{"undefined", e.what()}};
        }
    }
    std::ofstream f(fs::path(out) / "report.json");
    f << j.dump(2) << "\n";
    std::ofstream csv(fs::path(out) / "report.csv");
    csv << "domain,metric,a,b,delta\n";
    for (const auto& row : deltas)
        for (const std::string metric : {"JF", "PAvPU", "AURC", "ECE"})
            csv << row.at("domain").get<std::string>() << ',' << metric << ','
                << row.at(metric + "_a") << ',' << row.at(metric + "_b") << ','
                << row.at(metric + "_delta") << "\n";
    std::cout << "paired report written to " << out << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"RUAC desk-scale toolkit: Bayesian uncertainty heads with adversarial "
                 "style/deformation calibration on synthetic segmentation"};
    app.require_subcommand(1);

    std::string config_path, bench_dir, run_dir, out_dir, mask_path, unc_path;
    std::string mc_samples = "20";
    std::vector<std::string> set_overrides;
    std::string dir_a, dir_b;
    bool no_previews = false, ue_only = false, uncorr = false;
    int scene_index = 0, jobs = 0;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "flat key=value config file");
        sub->add_option("--set", set_overrides, "override: key=value (repeatable)");
    };

    CLI::App* gen = app.add_subcommand("gen", "generate the synthetic benchmark");
    add_common(gen);
    gen->add_option("--out", out_dir, "output directory")->required();
    gen->add_flag("--no-previews", no_previews, "skip PNG previews");

    CLI::App* tr = app.add_subcommand("train", "train a model on the benchmark");
    add_common(tr);
    tr->add_option("--bench", bench_dir, "benchmark directory")->required();
    tr->add_option("--out", out_dir, "run directory")->required();
    tr->add_flag("--ue-only", ue_only, "disable the adversarial branch (gamma = 0)");

    CLI::App* ev = app.add_subcommand("eval", "evaluate a trained run on the benchmark");
    ev->add_option("--run", run_dir, "run directory with checkpoints")->required();
    ev->add_option("--bench", bench_dir, "benchmark directory")->required();
    ev->add_option("--out", out_dir, "output directory")->required();
    ev->add_option("--mc-samples", mc_samples,
                   "comma list of MC sample counts; more than one emits mc_sweep.csv");
    ev->add_flag("--uncorr", uncorr, "apply uncertainty-guided mask correction");
    ev->add_option("--jobs", jobs, "worker threads for evaluation");

    CLI::App* ap = app.add_subcommand("attack-preview", "visualize the learned perturbations");
    ap->add_option("--run", run_dir, "run directory")->required();
    ap->add_option("--bench", bench_dir, "benchmark directory")->required();
    ap->add_option("--out", out_dir, "output directory")->required();
    ap->add_option("--scene", scene_index, "train-split scene index");

    CLI::App* co = app.add_subcommand("correct", "uncertainty-guided mask correction");
    co->add_option("--mask", mask_path, "binary mask grid (.rgrd)")->required();
    co->add_option("--unc", unc_path, "uncertainty grid (.rgrd)")->required();
    co->add_option("--out", out_dir, "output directory")->required();

    CLI::App* rp = app.add_subcommand("report", "paired comparison of two eval directories");
    rp->add_option("dir_a", dir_a, "first eval directory")->required();
    rp->add_option("dir_b", dir_b, "second eval directory")->required();
    rp->add_option("--out", out_dir, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    std::map<std::string, std::string> overrides;
    for (const std::string& kv : set_overrides) {
        size_t eq = kv.find('=');
        if (eq == std::string::npos) {
            std::cerr << "--set expects key=value, got: " << kv << "\n";
            return kExitUsage;
        }
        overrides[kv.substr(0, eq)] = kv.substr(eq + 1);
    }

    try {
        if (gen->parsed()) return cmd_gen(config_path, overrides, out_dir, !no_previews);
        if (tr->parsed()) return cmd_train(config_path, overrides, bench_dir, out_dir, ue_only);
        if (ev->parsed()) return cmd_eval(run_dir, bench_dir, out_dir, mc_samples, uncorr, jobs);
        if (ap->parsed()) return cmd_attack_preview(run_dir, bench_dir, out_dir, scene_index);
        if (co->parsed()) return cmd_correct(mask_path, unc_path, out_dir);
        if (rp->parsed()) return cmd_report(dir_a, dir_b, out_dir);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
