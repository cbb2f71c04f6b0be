#pragma once

#include <algorithm>
#include <stdexcept>
#include <vector>

#include "ruackit/grid.hpp"

namespace ruackit {

/// Connected components of a binary mask. Labels are assigned in
/// raster-scan first-pixel order starting at 1; 0 is background.
struct ComponentSet {
    Grid labels;                     // [H,W] of component ids
    std::vector<double> pixel_count; // per component, index = label - 1
    std::vector<double> mean_unc;    // filled by unc_corr paths
    int count = 0;
};

inline ComponentSet connected_components(const Grid& mask, int connectivity = 8) {
    if (connectivity != 4 && connectivity != 8)
        throw std::invalid_argument("connected_components: connectivity must be 4 or 8");
    int h = mask.extent(0), w = mask.extent(1);
    ComponentSet out;
    out.labels = Grid({h, w});
    std::vector<std::pair<int, int>> stack;
    const int dy4[] = {-1, 1, 0, 0}, dx4[] = {0, 0, -1, 1};
    const int dy8[] = {-1, -1, -1, 0, 0, 1, 1, 1}, dx8[] = {-1, 0, 1, -1, 1, -1, 0, 1};
    const int* dy = connectivity == 4 ? dy4 : dy8;
    const int* dx = connectivity == 4 ? dx4 : dx8;
    int nn = connectivity;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (mask.at(y, x) <= 0.5 || out.labels.at(y, x) != 0) continue;
            ++out.count;
            double label = out.count;
            double pixels = 0;
            stack.push_back({y, x});
            out.labels.at(y, x) = label;
            while (!stack.empty()) {
                auto [cy, cx] = stack.back();
                stack.pop_back();
                pixels += 1;
                for (int k = 0; k < nn; ++k) {
                    int ny = cy + dy[k], nx = cx + dx[k];
                    if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                    if (mask.at(ny, nx) > 0.5 && out.labels.at(ny, nx) == 0) {
                        out.labels.at(ny, nx) = label;
                        stack.push_back({ny, nx});
                    }
                }
            }
            out.pixel_count.push_back(pixels);
        }
    return out;
}

struct UncCorrAudit {
    double threshold = 0.0;
    std::vector<double> component_sizes;
    std::vector<double> component_mean_unc;
    std::vector<bool> kept;
};

namespace postproc_detail {

inline Grid unc_corr_pass(const Grid& mask, const Grid& unc, double* threshold_out,
                          int connectivity) {
    ComponentSet cs = connected_components(mask, connectivity);
    if (cs.count == 0) {
        if (threshold_out) *threshold_out = 0.3;
        return mask;
    }
    // nearest-rank P95 of foreground uncertainty, floored at 0.3
    std::vector<double> fg_unc;
    for (std::int64_t i = 0; i < mask.size(); ++i)
        if (mask[i] > 0.5) fg_unc.push_back(unc[i]);
    std::sort(fg_unc.begin(), fg_unc.end());
    size_t rank = static_cast<size_t>(std::ceil(0.95 * static_cast<double>(fg_unc.size())));
    rank = std::min(std::max<size_t>(rank, 1), fg_unc.size());
    double threshold = std::max(0.3, fg_unc[rank - 1]);
    if (threshold_out) *threshold_out = threshold;

    std::vector<double> mean_unc(static_cast<size_t>(cs.count), 0.0);
    for (std::int64_t i = 0; i < mask.size(); ++i) {
        int label = static_cast<int>(cs.labels[i]);
        if (label > 0) mean_unc[static_cast<size_t>(label - 1)] += unc[i];
    }
    for (int c = 0; c < cs.count; ++c)
        mean_unc[static_cast<size_t>(c)] /= cs.pixel_count[static_cast<size_t>(c)];

    int largest = 0;
    for (int c = 1; c < cs.count; ++c)
        if (cs.pixel_count[static_cast<size_t>(c)] > cs.pixel_count[static_cast<size_t>(largest)])
            largest = c;  // strict comparison keeps the lowest label on ties

    Grid out(mask.shape());
    for (std::int64_t i = 0; i < mask.size(); ++i) {
        int label = static_cast<int>(cs.labels[i]);
        if (label > 0 &&
            (label - 1 == largest || mean_unc[static_cast<size_t>(label - 1)] <= threshold))
            out[i] = 1.0;
    }
    return out;
}

}  // namespace postproc_detail

/// Uncertainty-guided connected-component filter: drop fragments whose mean
/// uncertainty exceeds max(0.3, P95 of foreground uncertainty), always
/// keeping the largest component (ties keep the lowest label). Removing a
/// fragment lowers the foreground P95, so the pass is repeated until the
/// mask is stable; the fixpoint makes the filter idempotent.
inline Grid unc_corr(const Grid& mask, const Grid& unc, UncCorrAudit* audit = nullptr,
                     int connectivity = 8) {
    if (!mask.same_shape(unc)) throw std::invalid_argument("unc_corr: shape mismatch");
    for (std::int64_t i = 0; i < unc.size(); ++i)
        if (unc[i] < -1e-9 || unc[i] > 1.0 + 1e-9)
            throw std::invalid_argument("unc_corr: uncertainty outside [0,1]");

    ComponentSet initial = connected_components(mask, connectivity);
    Grid current = mask;
    double threshold = 0.3;
    for (int pass = 0; pass <= initial.count; ++pass) {
        Grid next = postproc_detail::unc_corr_pass(current, unc, &threshold, connectivity);
        bool changed = false;
        for (std::int64_t i = 0; i < next.size(); ++i) changed = changed || next[i] != current[i];
        current = std::move(next);
        if (!changed) break;
    }

    if (audit) {
        audit->threshold = threshold;
        audit->component_sizes = initial.pixel_count;
        audit->component_mean_unc.assign(static_cast<size_t>(initial.count), 0.0);
        for (std::int64_t i = 0; i < mask.size(); ++i) {
            int label = static_cast<int>(initial.labels[i]);
            if (label > 0) audit->component_mean_unc[static_cast<size_t>(label - 1)] += unc[i];
        }
        audit->kept.assign(static_cast<size_t>(initial.count), false);
        for (int c = 0; c < initial.count; ++c) {
            audit->component_mean_unc[static_cast<size_t>(c)] /=
                initial.pixel_count[static_cast<size_t>(c)];
            for (std::int64_t i = 0; i < mask.size() && !audit->kept[static_cast<size_t>(c)]; ++i)
                if (static_cast<int>(initial.labels[i]) == c + 1 && current[i] > 0.5)
                    audit->kept[static_cast<size_t>(c)] = true;
        }
    }
    return current;
}

}  // namespace ruackit
