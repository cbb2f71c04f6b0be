// Acceptance suite: runs every release criterion at its stated tolerance
// and prints one PASS/FAIL line per criterion. Exit status is nonzero if
// any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "ruackit/bayes_head.hpp"
#include "ruackit/benchmark.hpp"
#include "ruackit/deform_attack.hpp"
#include "ruackit/eval.hpp"
#include "ruackit/metrics.hpp"
#include "ruackit/postproc.hpp"
#include "ruackit/style_attack.hpp"
#include "ruackit/trainer.hpp"
#include "ruackit/weibull.hpp"

#include "../metric_oracles.hpp"

using namespace ruackit;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& what, const std::string& detail) {
    std::printf("[%s] criterion %2d: %s (%s)\n", pass ? "PASS" : "FAIL", criterion, what.c_str(),
                detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

double elapsed_s(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

double pearson_vec(const std::vector<double>& a, const std::vector<double>& b) {
    return pearson(a, b);
}

// ---- criterion 1: Weibull moment oracle ----

void criterion_1() {
    auto t0 = std::chrono::steady_clock::now();
    bool pass = true;
    std::string worst;
    Rng rng(4242);
    for (double lam : {0.5, 1.0, 2.0})
        for (double kap : {0.7, 1.0, 2.0, 5.0}) {
            WeibullParams p{lam, kap};
            const int n = 1000000;
            double s = 0, s2 = 0;
            for (int i = 0; i < n; ++i) {
                double w = weibull_sample(p, rng.uniform_open01());
                s += w;
                s2 += w * w;
            }
            double mean = s / n, var = s2 / n - mean * mean;
            double mean_err = std::abs(mean - weibull_mean(p)) / weibull_mean(p);
            double var_err = std::abs(var - weibull_variance(p)) / weibull_variance(p);
            if (mean_err > 0.005 || var_err > 0.02) {
                pass = false;
                worst = "lam=" + std::to_string(lam) + " kap=" + std::to_string(kap);
            }
        }
    double dt = elapsed_s(t0);
    pass = pass && dt < 30.0;
    char buf[128];
    std::snprintf(buf, sizeof(buf), "12 combos x 1e6 samples, %.1f s%s", dt,
                  worst.empty() ? "" : (", worst " + worst).c_str());
    report(1, pass, "Weibull moments match 1e6-sample empirical estimates", buf);
}

// ---- criterion 2: KL oracle ----

void criterion_2() {
    GammaPrior prior{1.0, 3.0};
    bool pass = true;
    double worst_rel = 0;
    int combo = 0;
    for (double lam : {0.4, 1.0, 2.0})
        for (double kap : {0.7, 1.5, 3.0}) {
            WeibullParams p{lam, kap};
            Rng rng(777 + combo++);
            double mc = 0;
            const int n = 1000000;
            for (int i = 0; i < n; ++i) {
                double w = weibull_sample(p, rng.uniform_open01());
                mc += weibull_log_pdf(p, w) - gamma_log_pdf(prior, w);
            }
            mc /= n;
            double closed = kl_weibull_gamma(p, prior);
            double rel = std::abs(closed - mc) / std::max(1e-12, std::abs(mc));
            worst_rel = std::max(worst_rel, rel);
            pass = pass && rel < 0.01;
        }
    double matched = kl_weibull_gamma({1.0 / 3.0, 1.0}, prior);
    pass = pass && std::abs(matched) < 1e-9;
    char buf[128];
    std::snprintf(buf, sizeof(buf), "worst MC relative gap %.4f, matched-exponential KL %.2e",
                  worst_rel, matched);
    report(2, pass, "closed-form Weibull-Gamma KL matches the MC estimate", buf);
}

// ---- criterion 3: entropy monotone in logit variance ----

void criterion_3() {
    bool pass = true;
    for (double m : {-3.0, -1.0, -0.5, 0.5, 1.0, 3.0}) {
        double prev = -1;
        for (int i = 0; i < 50; ++i) {
            double v = std::pow(10.0, -4.0 + 7.0 * i / 49.0);
            double u = uncertainty_analytic_scalar(m, v);
            if (i > 0 && !(u > prev)) pass = false;
            prev = u;
        }
    }
    double worst_dev = 0;
    for (int i = 0; i < 50; ++i) {
        double v = std::pow(10.0, -4.0 + 7.0 * i / 49.0);
        worst_dev = std::max(worst_dev, std::abs(uncertainty_analytic_scalar(0.0, v) - 1.0));
    }
    pass = pass && worst_dev < 1e-12;
    char buf[96];
    std::snprintf(buf, sizeof(buf), "strict increase on 50-pt grid; |u(0,v)-1| <= %.1e", worst_dev);
    report(3, pass, "analytic uncertainty strictly increases with variance", buf);
}

// ---- criterion 4: variance approximation checks ----

struct PosteriorBatch {
    Grid lam_z, kap_z, lam_f, kap_f, lam_b, kap_b;
};

PosteriorBatch random_posterior_batch(std::uint64_t seed, int c, int h, int w) {
    // trained-model regime: pixel evidence ramps from near zero to strong,
    // foreground weights above background, so logits span the full
    // confident-to-uncertain range
    Rng rng(seed);
    PosteriorBatch r;
    r.lam_z = Grid({c, h, w});
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                r.lam_z.at(ci, y, x) =
                    0.05 + 2.0 * (y / static_cast<double>(h - 1)) * rng.uniform(0.7, 1.3);
    r.kap_z = rng.uniform_grid({c, h, w}, 1.7, 2.3);
    r.lam_f = rng.uniform_grid({1, c}, 1.0, 2.0);
    r.kap_f = rng.uniform_grid({1, c}, 1.5, 3.0);
    r.lam_b = rng.uniform_grid({1, c}, 0.2, 0.7);
    r.kap_b = rng.uniform_grid({1, c}, 1.5, 3.0);
    return r;
}

void criterion_4() {
    auto t0 = std::chrono::steady_clock::now();
    double worst_rank = 1.0, worst_mc = 1.0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        PosteriorBatch r = random_posterior_batch(9000 + seed, 8, 8, 8);
        Tape t;
        PixelPosterior px{t.input(r.lam_z), t.input(r.kap_z), {}};
        MaskTokenPosterior mk{t.input(r.lam_f), t.input(r.kap_f), t.input(r.lam_b),
                              t.input(r.kap_b), t.constant(0.0)};
        Grid full = full_variance(px, mk).value();
        Grid simp = logits_analytic(px, mk).v.value();
        worst_rank = std::min(worst_rank,
                              pearson_vec({full.vec().begin(), full.vec().end()},
                                          {simp.vec().begin(), simp.vec().end()}));
        Grid ua = uncertainty_analytic(logits_analytic(px, mk)).value();
        McOutput mc = forward_mc(r.lam_z, r.kap_z, r.lam_f, r.kap_f, r.lam_b, r.kap_b, 0.0, 100,
                                 31 * seed + 5);
        worst_mc = std::min(worst_mc, pearson_vec({ua.vec().begin(), ua.vec().end()},
                                                  {mc.unc.vec().begin(), mc.unc.vec().end()}));
    }
    double dt = elapsed_s(t0);
    bool pass = worst_rank >= 0.95 && worst_mc >= 0.90 && dt < 120.0;
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "min Pearson(full,simplified)=%.4f, min analytic-vs-MC(100)=%.4f, %.1f s",
                  worst_rank, worst_mc, dt);
    report(4, pass, "variance approximation preserves ranking and MC agreement", buf);
}

// ---- criterion 5: autodiff checks ----

void criterion_5() {
    double worst = 0, worst_gs = 0;
    Rng rng(505);
    auto check = [&](const std::function<Value(Tape&, const std::vector<Value>&)>& fn,
                     const std::vector<Grid>& point) {
        worst = std::max(worst, grad_check(fn, point, 1e-5));
    };
    for (int trial = 0; trial < 10; ++trial) {
        Grid a = rng.uniform_grid({2, 3}, 0.4, 2.0);
        Grid b = rng.uniform_grid({2, 3}, 0.4, 2.0);
        Grid s = rng.uniform_grid({2, 3}, -2.0, 2.0);
        check([](Tape&, const std::vector<Value>& p) { return (p[0] + p[1]).sum(); }, {a, b});
        check([](Tape&, const std::vector<Value>& p) { return (p[0] - p[1]).sum(); }, {a, b});
        check([](Tape&, const std::vector<Value>& p) { return (p[0] * p[1]).sum(); }, {a, b});
        check([](Tape&, const std::vector<Value>& p) { return (p[0] / p[1]).sum(); }, {a, b});
        check([](Tape&, const std::vector<Value>& p) { return (-p[0]).sum(); }, {s});
        check([](Tape&, const std::vector<Value>& p) { return p[0].exp().sum(); }, {s});
        check([](Tape&, const std::vector<Value>& p) { return p[0].log().sum(); }, {a});
        check([](Tape&, const std::vector<Value>& p) { return p[0].pow(1.7).sum(); }, {a});
        check([](Tape&, const std::vector<Value>& p) { return p[0].sigmoid().sum(); }, {s});
        check([](Tape&, const std::vector<Value>& p) { return p[0].tanh().sum(); }, {s});
        check([](Tape&, const std::vector<Value>& p) { return p[0].softplus().sum(); }, {s});
        check([](Tape&, const std::vector<Value>& p) { return p[0].ste_relu().sum(); }, {a});
        check([](Tape&, const std::vector<Value>& p) { return p[0].lgamma().sum(); }, {a});
        check([](Tape&, const std::vector<Value>& p) { return p[0].mean(); }, {s});
        Grid mask = rng.uniform_grid({2, 3}, 0.1, 1.0);
        check([](Tape&, const std::vector<Value>& p) { return masked_mean(p[0], p[1]); },
              {s, mask});
        Grid m1 = rng.uniform_grid({2, 4}, -1, 1), m2 = rng.uniform_grid({4, 3}, -1, 1);
        check([](Tape&, const std::vector<Value>& p) { return matmul(p[0], p[1]).tanh().sum(); },
              {m1, m2});
        Grid cx = rng.uniform_grid({2, 5, 5}, -1, 1);
        Grid cw = rng.uniform_grid({3, 2, 3, 3}, -0.5, 0.5);
        Grid cb = rng.uniform_grid({3}, -0.3, 0.3);
        check([](Tape&, const std::vector<Value>& p) {
            return conv3x3(p[0], p[1], p[2]).sigmoid().sum();
        }, {cx, cw, cb});
        Grid lam = rng.uniform_grid({3}, 0.3, 3.0);
        Grid kap = rng.uniform_grid({3}, 0.6, 6.0);
        Grid u = rng.uniform_grid({3}, 0.05, 0.95);
        check([&](Tape& t, const std::vector<Value>& p) {
            return weibull_sample(p[0], p[1], t.input(u)).sum();
        }, {lam, kap});
        // grid sample away from integer-coordinate kinks
        Grid img({1, 6, 6});
        for (int y = 0; y < 6; ++y)
            for (int x = 0; x < 6; ++x) img.at(0, y, x) = 0.3 * y + 0.2 * x + 0.04 * y * x;
        Grid off = rng.uniform_grid({2, 6, 6}, 0.1, 0.4);
        worst_gs = std::max(worst_gs, grad_check(
            [](Tape&, const std::vector<Value>& p) { return grid_sample(p[0], p[1]).sum(); },
            {img, off}, 1e-5));
    }

    // sg / GRL sign tests, element-wise exact
    bool sign_exact = true;
    {
        Grid x0 = rng.uniform_grid({3, 4}, -2, 2);
        Tape t;
        Value x = t.param(x0);
        t.backward(stop_grad(x.sigmoid()).sum());
        for (std::int64_t i = 0; i < x0.size(); ++i) sign_exact &= t.grad(x)[i] == 0.0;
        for (double scale : {0.5, 1.0, 2.0}) {
            Grid g_grl, g_id;
            {
                Tape tt;
                Value xx = tt.param(x0);
                tt.backward(grad_reverse(xx.tanh(), scale).exp().sum());
                g_grl = tt.grad(xx);
            }
            {
                Tape tt;
                Value xx = tt.param(x0);
                tt.backward(xx.tanh().exp().sum());
                g_id = tt.grad(xx);
            }
            for (std::int64_t i = 0; i < x0.size(); ++i)
                sign_exact &= g_grl[i] == -scale * g_id[i];
        }
    }

    // calibration-loss routed gradients vs frozen-variable finite differences
    double worst_cal = 0;
    for (int trial = 0; trial < 20; ++trial) {
        double e0 = rng.uniform(0.02, 0.98), u0 = rng.uniform(0.02, 0.98);
        Tape t;
        Value e = t.param(Grid::scalar(e0));
        Value u = t.param(Grid::scalar(u0));
        t.backward(calibration_loss(e, u).total);
        auto frozen = [&](double ef, double uf) {
            return ef * std::exp(-u0) + e0 * std::exp(-uf) + (1 - ef) * std::exp(u0) +
                   (1 - e0) * std::exp(uf);
        };
        double h = 1e-6;
        double fd_e = (frozen(e0 + h, u0) - frozen(e0 - h, u0)) / (2 * h);
        double fd_u = (frozen(e0, u0 + h) - frozen(e0, u0 - h)) / (2 * h);
        worst_cal = std::max(worst_cal, std::abs(t.grad(e)[0] - fd_e));
        worst_cal = std::max(worst_cal, std::abs(t.grad(u)[0] - fd_u));
    }

    bool pass = worst < 1e-4 && worst_gs < 1e-3 && sign_exact && worst_cal < 1e-5;
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "max op err %.2e, grid-sample %.2e, sg/GRL exact=%d, cal routing %.2e", worst,
                  worst_gs, sign_exact ? 1 : 0, worst_cal);
    report(5, pass, "every primitive passes gradient checks; routing exact", buf);
}

// ---- criterion 6: metric oracles ----

void criterion_6() {
    Rng rng(606);
    double worst = 0;
    bool wilcoxon_ok = true;
    for (int trial = 0; trial < 200; ++trial) {
        int h = rng.uniform_int(1, 4), w = rng.uniform_int(1, 4);
        Grid pred({h, w}), gt({h, w}), unc_g({h, w}), prob_g({h, w});
        std::vector<double> err, unc, prob, gtf;
        bool has_pos = false, has_neg = false;
        for (std::int64_t i = 0; i < pred.size(); ++i) {
            prob_g[i] = rng.uniform01();
            pred[i] = prob_g[i] >= 0.5 ? 1.0 : 0.0;
            gt[i] = rng.uniform01() < 0.5 ? 1.0 : 0.0;
            unc_g[i] = rng.uniform_int(0, 4) / 4.0;
            err.push_back(pred[i] != gt[i] ? 1.0 : 0.0);
            (err.back() > 0.5 ? has_pos : has_neg) = true;
            unc.push_back(unc_g[i]);
            prob.push_back(prob_g[i]);
            gtf.push_back(gt[i]);
        }
        JfResult jf = jf_score(pred, gt, 1.0);
        worst = std::max(worst, std::abs(jf.j - oracle::jaccard(pred, gt)));
        worst = std::max(worst, std::abs(jf.f - oracle::boundary_f(pred, gt, 1.0)));
        EvalRecord rec{prob_g, pred, gt, unc_g, "t"};
        int patch = rng.uniform_int(1, 3);
        double tau = rng.uniform(0.0, 0.5);
        worst = std::max(worst, std::abs(pavpu({rec}, patch, {tau}).per_tau[0] -
                                         oracle::pavpu_single(rec, patch, tau)));
        worst = std::max(worst, std::abs(aurc(err, unc).aurc - oracle::aurc_direct(err, unc)));
        int bins = rng.uniform_int(1, 15);
        worst = std::max(worst,
                         std::abs(ece(prob, gtf, bins) - oracle::ece_direct(prob, gtf, bins)));
        if (has_pos && has_neg)
            worst = std::max(worst, std::abs(auroc_pixel(unc, err) -
                                             oracle::auroc_pairwise(unc, err)));
        if (prob.size() >= 2) {
            bool cu = std::all_of(unc.begin(), unc.end(), [&](double v) { return v == unc[0]; });
            bool ce = std::all_of(err.begin(), err.end(), [&](double v) { return v == err[0]; });
            if (!cu && !ce)
                worst = std::max(worst, std::abs(pearson(unc, err) -
                                                 oracle::pearson_direct(unc, err)));
        }
    }
    for (int trial = 0; trial < 60; ++trial) {
        int n = rng.uniform_int(2, 10);
        std::vector<double> a, b;
        for (int i = 0; i < n; ++i) {
            a.push_back(rng.uniform_int(0, 4));
            b.push_back(rng.uniform_int(0, 4));
        }
        bool any = false;
        for (int i = 0; i < n; ++i) any = any || a[static_cast<size_t>(i)] != b[static_cast<size_t>(i)];
        if (!any) continue;
        for (TestSide side : {TestSide::kGreater, TestSide::kLess, TestSide::kTwoSided})
            wilcoxon_ok = wilcoxon_ok && std::abs(wilcoxon_signed_rank(a, b, side).p -
                                                  oracle::wilcoxon_p(a, b, side)) < 1e-12;
    }
    bool pass = worst < 1e-12 && wilcoxon_ok;
    char buf[96];
    std::snprintf(buf, sizeof(buf), "max deviation %.2e over 200 cases, wilcoxon exact=%d", worst,
                  wilcoxon_ok ? 1 : 0);
    report(6, pass, "all metrics match brute-force oracles exactly", buf);
}

// ---- criterion 7: chance-level AUROC ----

void criterion_7() {
    Rng rng(707);
    const int n = 100000;
    std::vector<double> unc(n), err(n);
    for (int i = 0; i < n; ++i) {
        unc[static_cast<size_t>(i)] = rng.uniform01();
        err[static_cast<size_t>(i)] = rng.uniform01() < 0.25 ? 1.0 : 0.0;
    }
    double auroc = auroc_pixel(unc, err);
    bool pass = std::abs(auroc - 0.5) <= 0.01;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "AUROC = %.4f on 1e5 pixels", auroc);
    report(7, pass, "uninformative uncertainty scores at chance level", buf);
}

// ---- criterion 8: perturbation contracts ----

void criterion_8() {
    Rng rng(808);
    bool style_ok = true, offset_ok = true, identity_ok = true, corr_ok = true;
    Tape t;
    for (int trial = 0; trial < 1000; ++trial) {
        ObjectStyle s{{rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1)},
                      {rng.uniform(0, 0.5), rng.uniform(0, 0.5), rng.uniform(0, 0.5)}};
        double em = rng.uniform(0.05, 1.0), es = rng.uniform(0.05, 0.9),
               esh = rng.uniform(0.05, 0.5);
        BoundedStyle b =
            bound_style(s, t.input(rng.uniform_grid({1, 9}, -1e4, 1e4)), em, es, esh);
        for (int c = 0; c < 3; ++c) {
            double mu = s.mu[static_cast<size_t>(c)], sg = s.sigma[static_cast<size_t>(c)];
            style_ok &= std::abs(b.mu_adv.value()[c] - mu) <= std::abs(mu) * em + esh + 1e-12;
            style_ok &= b.sigma_adv.value()[c] >= 0.0;
            if (sg > 0) style_ok &= std::abs(b.sigma_adv.value()[c] / sg - 1.0) <= es + 1e-12;
        }
    }
    for (int trial = 0; trial < 300; ++trial) {
        int h = rng.uniform_int(2, 10), w = rng.uniform_int(2, 10);
        double eps = rng.uniform(0.05, 3.0);
        Grid raw({2, h, w});
        for (std::int64_t i = 0; i < raw.size(); ++i)
            raw[i] = rng.uniform01() < 0.3 ? rng.uniform(-500, 500) : rng.normal() * 2.0;
        Grid d = bound_offsets(t.input(raw), eps).value();
        std::int64_t half = d.size() / 2;
        double my = 0, mx = 0;
        for (std::int64_t i = 0; i < half; ++i) {
            offset_ok &= std::abs(d[i]) <= eps + 1e-12 && std::abs(d[half + i]) <= eps + 1e-12;
            my += d[i];
            mx += d[half + i];
        }
        offset_ok &= std::abs(my / half) < 1e-9 && std::abs(mx / half) < 1e-9;
    }
    {
        Grid img = rng.uniform_grid({3, 12, 12}, 0, 1);
        Grid mask({12, 12});
        for (int y = 3; y < 9; ++y)
            for (int x = 3; x < 9; ++x) mask.at(y, x) = 1.0;
        WarpedPair wp = warp_pair(t.input(img), {mask}, t.input(Grid({2, 12, 12}, 0.0)));
        for (std::int64_t i = 0; i < img.size(); ++i)
            identity_ok &= wp.image.value()[i] == img[i];
        for (std::int64_t i = 0; i < mask.size(); ++i)
            identity_ok &= wp.masks[0].value()[i] == mask[i];
    }
    // correspondence bound at the attack's operating magnitude (eps_deform)
    double worst_corr = 0;
    for (double eps : {0.15}) {
        for (int trial = 0; trial < 10; ++trial) {
            int h = 24, w = 24;
            Grid mask({h, w});
            for (int y = 5; y < 18; ++y)
                for (int x = 5; x < 18; ++x) mask.at(y, x) = 1.0;
            Grid img({3, h, w});
            double fg[3] = {rng.uniform(0.5, 0.9), rng.uniform(0.1, 0.4), rng.uniform(0.3, 0.7)};
            double bg[3] = {rng.uniform(0.0, 0.3), rng.uniform(0.5, 0.9), rng.uniform(0.0, 0.4)};
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x)
                        img.at(c, y, x) = mask.at(y, x) > 0.5 ? fg[c] : bg[c];
            Value delta = bound_offsets(t.input(rng.normal_grid({2, h, w}, 1.0)), eps);
            WarpedPair wp = warp_pair(t.input(img), {mask}, delta);
            for (int c = 0; c < 3; ++c) {
                double num = 0, den = 0;
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x)
                        if (wp.masks[0].value().at(0, y, x) > 0.5) {
                            num += wp.image.value().at(c, y, x);
                            den += 1;
                        }
                worst_corr = std::max(worst_corr, std::abs(num / den - fg[c]));
            }
        }
    }
    corr_ok = worst_corr < 0.02;
    bool pass = style_ok && offset_ok && identity_ok && corr_ok;
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "style bounds=%d, offset invariants=%d, identity warp=%d, corr err %.4f",
                  style_ok ? 1 : 0, offset_ok ? 1 : 0, identity_ok ? 1 : 0, worst_corr);
    report(8, pass, "perturbation contracts hold under fuzzing", buf);
}

// ---- criterion 9: uncertainty-guided correction ----

void criterion_9() {
    bool constructed_ok = true, fuzz_ok = true;
    {
        // spec hand case: big blob u=0.1 plus tiny fragment u=0.95; the 0.3
        // floor governs and the fragment is removed
        Grid m({16, 16}), u({16, 16});
        for (int y = 1; y < 11; ++y)
            for (int x = 1; x < 11; ++x) {
                m.at(y, x) = 1.0;
                u.at(y, x) = 0.1;
            }
        for (int y = 13; y < 15; ++y)
            for (int x = 13; x < 15; ++x) {
                m.at(y, x) = 1.0;
                u.at(y, x) = 0.95;
            }
        UncCorrAudit audit;
        Grid out = unc_corr(m, u, &audit);
        constructed_ok &= std::abs(audit.threshold - 0.3) < 1e-12;
        for (int y = 13; y < 15; ++y)
            for (int x = 13; x < 15; ++x) constructed_ok &= out.at(y, x) == 0.0;
        for (int y = 1; y < 11; ++y)
            for (int x = 1; x < 11; ++x) constructed_ok &= out.at(y, x) == 1.0;
    }
    Rng rng(909);
    for (int trial = 0; trial < 1000; ++trial) {
        int h = rng.uniform_int(4, 16), w = rng.uniform_int(4, 16);
        Grid m({h, w}), u({h, w});
        double density = rng.uniform(0.1, 0.7);
        for (std::int64_t i = 0; i < m.size(); ++i) {
            m[i] = rng.uniform01() < density ? 1.0 : 0.0;
            u[i] = rng.uniform01();
        }
        Grid out = unc_corr(m, u);
        for (std::int64_t i = 0; i < m.size(); ++i)
            if (out[i] > 0.5) fuzz_ok &= m[i] > 0.5;
        if (m.sum() > 0) fuzz_ok &= out.sum() > 0;
        ComponentSet cs = connected_components(m);
        if (cs.count > 0) {
            int largest = 0;
            for (int c = 1; c < cs.count; ++c)
                if (cs.pixel_count[static_cast<size_t>(c)] >
                    cs.pixel_count[static_cast<size_t>(largest)])
                    largest = c;
            for (std::int64_t i = 0; i < m.size(); ++i)
                if (static_cast<int>(cs.labels[i]) == largest + 1) fuzz_ok &= out[i] == 1.0;
        }
        Grid twice = unc_corr(out, u);
        for (std::int64_t i = 0; i < out.size(); ++i) fuzz_ok &= twice[i] == out[i];
    }
    bool pass = constructed_ok && fuzz_ok;
    char buf[96];
    std::snprintf(buf, sizeof(buf), "constructed cases=%d, 1000-case fuzz=%d",
                  constructed_ok ? 1 : 0, fuzz_ok ? 1 : 0);
    report(9, pass, "uncertainty-guided correction follows the threshold rule", buf);
}

// ---- criteria 10-12: end-to-end experiment ----

struct RunOutcome {
    std::map<std::string, double> pavpu, aurc, jf;  // per OOD domain
    double source_jf = 0;
    double ood_jf = 0;
    double ood_jf_uncorr = 0;  // RUAC only
    double source_jf_uncorr = 0;
};

void criteria_10_to_12() {
    auto t0 = std::chrono::steady_clock::now();
    Benchmark bench = build_benchmark(BenchmarkConfig{});
    const int n_seeds = 5;
    int jobs = std::max(2u, std::thread::hardware_concurrency());

    std::vector<RunOutcome> ue(n_seeds), ruac(n_seeds);
    TrainState last_ruac_state = TrainState::create(TrainConfig{});
    for (int s = 0; s < n_seeds; ++s) {
        for (bool ue_only : {true, false}) {
            TrainConfig cfg;
            cfg.ue_only = ue_only;
            cfg.seed = 1 + static_cast<std::uint64_t>(s);
            cfg.jobs = jobs;
            TrainState state = train(cfg, bench.train);
            EvalOptions opts;
            opts.jobs = jobs;
            MetricsReport rep = evaluate_benchmark(state, bench, opts);
            RunOutcome& out = ue_only ? ue[static_cast<size_t>(s)] : ruac[static_cast<size_t>(s)];
            for (const DomainMetrics& dm : rep.domains) {
                if (dm.domain == "source_val") {
                    out.source_jf = dm.jf;
                    continue;
                }
                out.pavpu[dm.domain] = dm.pavpu_result.mean;
                out.aurc[dm.domain] = dm.aurc_value;
                out.jf[dm.domain] = dm.jf;
            }
            out.ood_jf = rep.ood_aggregate.jf;
            if (!ue_only) {
                EvalOptions corr = opts;
                corr.apply_unc_corr = true;
                MetricsReport rep_c = evaluate_benchmark(state, bench, corr);
                out.ood_jf_uncorr = rep_c.ood_aggregate.jf;
                out.source_jf_uncorr = rep_c.domains.front().jf;
                last_ruac_state = std::move(state);
            }
            std::printf("  [e2e] seed %d %s: OOD JF=%.3f PAvPU=%.3f AURC=%.4f\n", s,
                        ue_only ? "ue-only" : "ruac   ", out.ood_jf,
                        median({out.pavpu.begin()->second}),
                        median({out.aurc.begin()->second}));
            std::fflush(stdout);
        }
    }

    // criterion 10: per-domain medians over seeds
    int domains_won = 0;
    std::string detail;
    for (const auto& dom : bench.domains) {
        std::vector<double> pu_ue, pu_ru, au_ue, au_ru;
        for (int s = 0; s < n_seeds; ++s) {
            pu_ue.push_back(ue[static_cast<size_t>(s)].pavpu.at(dom.spec.name));
            pu_ru.push_back(ruac[static_cast<size_t>(s)].pavpu.at(dom.spec.name));
            au_ue.push_back(ue[static_cast<size_t>(s)].aurc.at(dom.spec.name));
            au_ru.push_back(ruac[static_cast<size_t>(s)].aurc.at(dom.spec.name));
        }
        bool win = median(pu_ru) >= median(pu_ue) && median(au_ru) <= median(au_ue);
        domains_won += win ? 1 : 0;
        detail += dom.spec.name + (win ? "+" : "-") + " ";
    }
    std::vector<double> ruac_ood_jf, ruac_ood_jf_corr, ruac_src_corr, ue_src;
    for (int s = 0; s < n_seeds; ++s) {
        ruac_ood_jf.push_back(ruac[static_cast<size_t>(s)].ood_jf);
        ruac_ood_jf_corr.push_back(ruac[static_cast<size_t>(s)].ood_jf_uncorr);
        ruac_src_corr.push_back(ruac[static_cast<size_t>(s)].source_jf_uncorr);
        ue_src.push_back(ue[static_cast<size_t>(s)].source_jf);
    }
    bool corr_no_harm = median(ruac_ood_jf_corr) >= median(ruac_ood_jf) - 1e-9;
    bool source_within = median(ruac_src_corr) >= median(ue_src) - 0.02;
    double dt = elapsed_s(t0);
    bool pass10 = domains_won >= 4 && corr_no_harm && source_within && dt < 7200.0;
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "%d/6 domains (%s), UncCorr OOD JF %.3f->%.3f, source JF ruac+corr %.3f vs "
                  "ue %.3f, %.0f s",
                  domains_won, detail.c_str(), median(ruac_ood_jf), median(ruac_ood_jf_corr),
                  median(ruac_src_corr), median(ue_src), dt);
    report(10, pass10, "adversarial calibration wins the directional OOD comparison", buf);

    // criterion 11: MC sample-count stability on the last trained checkpoint
    {
        double lo = 1e300, hi = -1e300;
        std::string sweep;
        for (int s_count : {1, 5, 20, 50, 100}) {
            EvalOptions opts;
            opts.jobs = jobs;
            opts.mc_samples = s_count;
            MetricsReport rep = evaluate_benchmark(last_ruac_state, bench, opts);
            double v = rep.ood_aggregate.pavpu_result.mean;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
            char item[48];
            std::snprintf(item, sizeof(item), "S=%d:%.4f ", s_count, v);
            sweep += item;
        }
        bool pass11 = hi - lo < 0.02;
        char b2[192];
        std::snprintf(b2, sizeof(b2), "%sspread %.4f", sweep.c_str(), (hi - lo));
        report(11, pass11, "PAvPU stable across MC sample counts", b2);
    }

    // criterion 12: channel alignment between the learned augmentation shift
    // and the elastic+color OOD shift (value logged, sign asserted)
    {
        std::vector<Scene> source(bench.val.begin(),
                                  bench.val.begin() + std::min<size_t>(8, bench.val.size()));
        auto aug = feature_shift_vector(last_ruac_state, source, [&](const Scene& s, int obj) {
            return adversarial_image(last_ruac_state, s, obj);
        });
        std::vector<double> ood_shift(aug.size(), 0.0);
        double count = 0;
        for (const auto& dom : bench.domains) {
            if (dom.spec.kind != ShiftKind::kElastic &&
                dom.spec.kind != ShiftKind::kColorTransfer)
                continue;
            for (const Scene& sc : source) {
                Scene shifted =
                    apply_shift(sc, {dom.spec.kind, dom.spec.magnitude, sc.seed ^ 0xd0a1ULL});
                for (size_t k = 0; k < sc.masks.size(); ++k) {
                    auto base = trunk_pooled_features(last_ruac_state, sc, static_cast<int>(k),
                                                      sc.image);
                    auto pert = trunk_pooled_features(last_ruac_state, sc, static_cast<int>(k),
                                                      shifted.image);
                    for (size_t c = 0; c < ood_shift.size(); ++c) ood_shift[c] += pert[c] - base[c];
                    count += 1;
                }
            }
        }
        for (double& v : ood_shift) v /= count;
        ChannelAlignment ca = channel_alignment(aug, ood_shift);
        bool pass12 = ca.r > 0.0;
        char b3[96];
        std::snprintf(b3, sizeof(b3), "r = %.3f, |aug shift| = %.4f", ca.r, ca.norm_aug);
        report(12, pass12, "augmentation shift aligns with the OOD feature shift", b3);
    }
}

}  // namespace

int main() {
    std::printf("ruackit acceptance suite\n");
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();
    criterion_6();
    criterion_7();
    criterion_8();
    criterion_9();
    criteria_10_to_12();
    if (g_failures == 0) {
        std::printf("all criteria passed\n");
        return 0;
    }
    std::printf("%d criterion(s) failed\n", g_failures);
    return 1;
}
