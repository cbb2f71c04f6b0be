#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "ruackit/grid.hpp"

namespace ruackit {

/// One evaluated (scene, object) pair.
struct EvalRecord {
    Grid pred_prob;  // [H,W] in [0,1]
    Grid pred_mask;  // binary [H,W], pred_prob >= 0.5
    Grid gt_mask;    // binary [H,W]
    Grid unc;        // [H,W] in [0,1]
    std::string domain;
};

struct JfResult {
    double j = 0, f = 0, jf = 0;
};

namespace metric_detail {

inline bool fg(const Grid& m, int y, int x) {
    return y >= 0 && y < m.extent(0) && x >= 0 && x < m.extent(1) && m.at(y, x) > 0.5;
}

/// Boundary = foreground pixels 4-adjacent to background (image border
/// counts as background).
inline std::vector<std::pair<int, int>> boundary(const Grid& m) {
    std::vector<std::pair<int, int>> out;
    for (int y = 0; y < m.extent(0); ++y)
        for (int x = 0; x < m.extent(1); ++x)
            if (fg(m, y, x) && (!fg(m, y - 1, x) || !fg(m, y + 1, x) || !fg(m, y, x - 1) ||
                                !fg(m, y, x + 1)))
                out.emplace_back(y, x);
    return out;
}

inline double matched_fraction(const std::vector<std::pair<int, int>>& from,
                               const std::vector<std::pair<int, int>>& to, double tol) {
    if (from.empty()) return 0.0;
    int hit = 0;
    for (auto [y, x] : from) {
        double best = 1e300;
        for (auto [ty, tx] : to) {
            double dy = y - ty, dx = x - tx;
            best = std::min(best, dy * dy + dx * dx);
        }
        if (best <= tol * tol + 1e-12) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(from.size());
}

}  // namespace metric_detail

/// Region Jaccard and boundary F-measure (dilation-style matching within a
/// pixel tolerance). Two empty masks count as a perfect match.
inline JfResult jf_score(const Grid& pred, const Grid& gt, double boundary_tol = 1.0) {
    if (!pred.same_shape(gt)) throw std::invalid_argument("jf_score: shape mismatch");
    double inter = 0, uni = 0;
    for (std::int64_t i = 0; i < pred.size(); ++i) {
        bool p = pred[i] > 0.5, g = gt[i] > 0.5;
        inter += p && g ? 1 : 0;
        uni += p || g ? 1 : 0;
    }
    JfResult r;
    r.j = uni > 0 ? inter / uni : 1.0;
    auto bp = metric_detail::boundary(pred);
    auto bg = metric_detail::boundary(gt);
    if (bp.empty() && bg.empty()) {
        r.f = 1.0;
    } else if (bp.empty() || bg.empty()) {
        r.f = 0.0;
    } else {
        double precision = metric_detail::matched_fraction(bp, bg, boundary_tol);
        double recall = metric_detail::matched_fraction(bg, bp, boundary_tol);
        r.f = precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
    }
    r.jf = 0.5 * (r.j + r.f);
    return r;
}

struct PavpuResult {
    std::vector<double> per_tau;
    double mean = 0;
};

/// Patch accuracy vs patch uncertainty. A patch is accurate when its pixel
/// accuracy reaches 0.5, uncertain when its mean uncertainty exceeds tau;
/// PAvPU = (n_ac + n_iu) / n_total, averaged over the tau list. Partial
/// patches at the edges participate.
inline PavpuResult pavpu(const std::vector<EvalRecord>& records, int patch_size,
                         const std::vector<double>& taus) {
    if (patch_size < 1) throw std::invalid_argument("pavpu: patch_size must be >= 1");
    std::vector<std::pair<double, double>> patches;  // (accuracy, mean uncertainty)
    for (const EvalRecord& r : records) {
        int h = r.gt_mask.extent(0), w = r.gt_mask.extent(1);
        for (int py = 0; py < h; py += patch_size)
            for (int px = 0; px < w; px += patch_size) {
                double correct = 0, total = 0, us = 0;
                for (int y = py; y < std::min(h, py + patch_size); ++y)
                    for (int x = px; x < std::min(w, px + patch_size); ++x) {
                        bool p = r.pred_mask.at(y, x) > 0.5, g = r.gt_mask.at(y, x) > 0.5;
                        correct += p == g ? 1 : 0;
                        us += r.unc.at(y, x);
                        total += 1;
                    }
                patches.emplace_back(correct / total, us / total);
            }
    }
    PavpuResult out;
    for (double tau : taus) {
        double good = 0;
        for (auto [acc, u] : patches) {
            bool accurate = acc >= 0.5;
            bool uncertain = u > tau;
            if ((accurate && !uncertain) || (!accurate && uncertain)) good += 1;
        }
        out.per_tau.push_back(patches.empty() ? 0.0 : good / patches.size());
    }
    out.mean = out.per_tau.empty()
                   ? 0.0
                   : std::accumulate(out.per_tau.begin(), out.per_tau.end(), 0.0) /
                         out.per_tau.size();
    return out;
}

struct AurcResult {
    double aurc = 0;
    std::vector<std::pair<double, double>> curve;  // (coverage, risk)
};

/// Selective-prediction risk-coverage: pixels sorted ascending by
/// uncertainty (stable, index ties), risk at coverage k/N is the error rate
/// of the k most certain pixels, AURC the mean risk over all k.
inline AurcResult aurc(const std::vector<double>& err, const std::vector<double>& unc,
                       int curve_points = 20) {
    if (err.empty() || err.size() != unc.size())
        throw std::invalid_argument("aurc: need matching nonempty inputs");
    size_t n = err.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return unc[a] < unc[b]; });
    AurcResult out;
    double cum_err = 0, sum_risk = 0;
    std::vector<double> risks(n);
    for (size_t k = 0; k < n; ++k) {
        cum_err += err[order[k]];
        risks[k] = cum_err / static_cast<double>(k + 1);
        sum_risk += risks[k];
    }
    out.aurc = sum_risk / static_cast<double>(n);
    for (int i = 1; i <= curve_points; ++i) {
        size_t k = std::max<size_t>(1, static_cast<size_t>(std::llround(
                                           static_cast<double>(i) * n / curve_points)));
        out.curve.emplace_back(static_cast<double>(k) / n, risks[k - 1]);
    }
    return out;
}

/// Expected calibration error with equal-width confidence bins over
/// [0.5, 1]; confidence is max(p, 1-p), the predicted label p >= 0.5.
inline double ece(const std::vector<double>& prob, const std::vector<double>& gt, int bins = 15) {
    if (bins < 1) throw std::invalid_argument("ece: bins must be >= 1");
    if (prob.empty() || prob.size() != gt.size())
        throw std::invalid_argument("ece: need matching nonempty inputs");
    std::vector<double> conf_sum(static_cast<size_t>(bins)), acc_sum(static_cast<size_t>(bins));
    std::vector<double> count(static_cast<size_t>(bins));
    for (size_t i = 0; i < prob.size(); ++i) {
        double conf = std::max(prob[i], 1.0 - prob[i]);
        int b = std::min(bins - 1, static_cast<int>((conf - 0.5) * 2.0 * bins));
        b = std::max(0, b);
        bool label = prob[i] >= 0.5;
        bool correct = label == (gt[i] > 0.5);
        conf_sum[static_cast<size_t>(b)] += conf;
        acc_sum[static_cast<size_t>(b)] += correct ? 1 : 0;
        count[static_cast<size_t>(b)] += 1;
    }
    double total = static_cast<double>(prob.size());
    double e = 0;
    for (int b = 0; b < bins; ++b)
        if (count[static_cast<size_t>(b)] > 0)
            e += count[static_cast<size_t>(b)] / total *
                 std::abs(acc_sum[static_cast<size_t>(b)] / count[static_cast<size_t>(b)] -
                          conf_sum[static_cast<size_t>(b)] / count[static_cast<size_t>(b)]);
    return e;
}

/// Rank-based Mann-Whitney AUROC with midrank tie handling; positives are
/// erroneous pixels.
inline double auroc_pixel(const std::vector<double>& unc, const std::vector<double>& err) {
    if (unc.size() != err.size() || unc.empty())
        throw std::invalid_argument("auroc_pixel: need matching nonempty inputs");
    size_t n = unc.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return unc[a] < unc[b]; });
    std::vector<double> rank(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && unc[order[j + 1]] == unc[order[i]]) ++j;
        double mid = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (size_t k = i; k <= j; ++k) rank[order[k]] = mid;
        i = j + 1;
    }
    double n_pos = 0, n_neg = 0, rank_pos = 0;
    for (size_t k = 0; k < n; ++k) {
        if (err[k] > 0.5) {
            n_pos += 1;
            rank_pos += rank[k];
        } else {
            n_neg += 1;
        }
    }
    if (n_pos == 0 || n_neg == 0)
        throw std::invalid_argument("auroc_pixel: undefined for single-class input");
    return (rank_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg);
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw std::invalid_argument("pearson: need two vectors of length >= 2");
    double mx = std::accumulate(x.begin(), x.end(), 0.0) / x.size();
    double my = std::accumulate(y.begin(), y.end(), 0.0) / y.size();
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0 || syy == 0)
        throw std::invalid_argument("pearson: undefined for constant input");
    return sxy / std::sqrt(sxx * syy);
}

enum class TestSide { kGreater, kLess, kTwoSided };

struct WilcoxonResult {
    double statistic = 0;  // W+ (rank sum of positive differences)
    double p = 1.0;
    int n = 0;  // pairs after dropping zero differences
};

/// Exact signed-rank test: zero differences dropped, midranks on tied
/// magnitudes, p from the exact distribution of W+ over all 2^n sign
/// assignments (rank-sum DP; doubled ranks keep sums integral).
inline WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a,
                                           const std::vector<double>& b,
                                           TestSide side = TestSide::kTwoSided) {
    if (a.size() != b.size()) throw std::invalid_argument("wilcoxon: length mismatch");
    std::vector<double> d;
    for (size_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) d.push_back(a[i] - b[i]);
    if (d.empty()) throw std::invalid_argument("wilcoxon: all differences are zero");
    if (d.size() > 25) throw std::invalid_argument("wilcoxon: exact enumeration supports n <= 25");
    size_t n = d.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t i1, size_t i2) { return std::abs(d[i1]) < std::abs(d[i2]); });
    std::vector<double> rank(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
        double mid = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (size_t k = i; k <= j; ++k) rank[order[k]] = mid;
        i = j + 1;
    }
    double w_plus = 0;
    std::vector<int> ranks2;  // doubled ranks are integers even with midranks
    for (size_t k = 0; k < n; ++k) {
        if (d[k] > 0) w_plus += rank[k];
        ranks2.push_back(static_cast<int>(std::llround(2.0 * rank[k])));
    }
    int total2 = std::accumulate(ranks2.begin(), ranks2.end(), 0);
    std::vector<double> counts(static_cast<size_t>(total2) + 1, 0.0);
    counts[0] = 1.0;
    for (int r2 : ranks2)
        for (int s = total2; s >= r2; --s) counts[static_cast<size_t>(s)] += counts[static_cast<size_t>(s - r2)];
    double denom = std::pow(2.0, static_cast<double>(n));
    int obs2 = static_cast<int>(std::llround(2.0 * w_plus));
    double p_ge = 0, p_le = 0;
    for (int s = 0; s <= total2; ++s) {
        if (s >= obs2) p_ge += counts[static_cast<size_t>(s)];
        if (s <= obs2) p_le += counts[static_cast<size_t>(s)];
    }
    p_ge /= denom;
    p_le /= denom;
    WilcoxonResult out;
    out.statistic = w_plus;
    out.n = static_cast<int>(n);
    switch (side) {
        case TestSide::kGreater: out.p = p_ge; break;
        case TestSide::kLess: out.p = p_le; break;
        case TestSide::kTwoSided: out.p = std::min(1.0, 2.0 * std::min(p_ge, p_le)); break;
    }
    return out;
}

struct ChannelAlignment {
    double r = 0;         // Pearson correlation across channels
    double norm_aug = 0;  // Euclidean norm of the augmentation shift
};

inline ChannelAlignment channel_alignment(const std::vector<double>& shift_aug,
                                          const std::vector<double>& shift_ood) {
    if (shift_aug.size() < 2 || shift_aug.size() != shift_ood.size())
        throw std::invalid_argument("channel_alignment: need matching vectors, length >= 2");
    ChannelAlignment out;
    out.r = pearson(shift_aug, shift_ood);
    double s = 0;
    for (double v : shift_aug) s += v * v;
    out.norm_aug = std::sqrt(s);
    return out;
}

/// Chebyshev dilation of a binary mask.
inline Grid dilate_mask(const Grid& mask, int radius) {
    int h = mask.extent(0), w = mask.extent(1);
    Grid out({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            bool hit = false;
            for (int dy = -radius; dy <= radius && !hit; ++dy)
                for (int dx = -radius; dx <= radius && !hit; ++dx)
                    hit = metric_detail::fg(mask, y + dy, x + dx);
            if (hit) out.at(y, x) = 1.0;
        }
    return out;
}

/// Mean feature vector over the dilated foreground region: the per-channel
/// pooling both shift vectors (augmentation and OOD) are computed from.
inline std::vector<double> pooled_foreground_features(const Grid& feats, const Grid& mask,
                                                      int dilate_radius = 2) {
    Grid region = dilate_mask(mask, dilate_radius);
    int c = feats.extent(0), h = feats.extent(1), w = feats.extent(2);
    std::vector<double> out(static_cast<size_t>(c), 0.0);
    double n = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (region.at(y, x) > 0.5) n += 1;
    if (n == 0) return out;
    for (int ci = 0; ci < c; ++ci) {
        double acc = 0;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (region.at(y, x) > 0.5) acc += feats.at(ci, y, x);
        out[static_cast<size_t>(ci)] = acc / n;
    }
    return out;
}

/// Mask-granularity AUROC variant: mean in-mask uncertainty against a
/// median split of the per-mask IoU.
inline double auroc_mask(const std::vector<double>& mean_unc, const std::vector<double>& ious) {
    if (mean_unc.size() != ious.size() || mean_unc.size() < 2)
        throw std::invalid_argument("auroc_mask: need >= 2 masks");
    std::vector<double> sorted = ious;
    std::sort(sorted.begin(), sorted.end());
    double median = sorted[sorted.size() / 2];
    std::vector<double> label;
    for (double v : ious) label.push_back(v < median ? 1.0 : 0.0);  // low IoU = failure
    return auroc_pixel(mean_unc, label);
}

}  // namespace ruackit
