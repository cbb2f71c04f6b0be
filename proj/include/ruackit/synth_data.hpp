#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ruackit/bayes_head.hpp"
#include "ruackit/grid.hpp"
#include "ruackit/grid_ops.hpp"
#include "ruackit/rng.hpp"

namespace ruackit {

struct SceneSpec {
    int h = 64, w = 64;
    int n_objects = 2;   // 1..3
    double min_area_frac = 0.01;
    int max_retries = 80;
    int clicks_per_object = 3;
    double min_click_sep = 4.0;
};

struct Scene {
    Grid image;                             // [3,H,W] in [0,1]
    std::vector<Grid> masks;                // disjoint binary [H,W]
    std::vector<std::vector<Click>> clicks; // per object
    std::uint64_t seed = 0;
};

enum class ShiftKind { kColorTransfer, kBlur, kTextureSwap, kElastic };

inline const char* shift_kind_name(ShiftKind k) {
    switch (k) {
        case ShiftKind::kColorTransfer: return "color_transfer";
        case ShiftKind::kBlur: return "blur";
        case ShiftKind::kTextureSwap: return "texture_swap";
        case ShiftKind::kElastic: return "elastic";
    }
    return "?";
}

inline ShiftKind shift_kind_from_string(const std::string& s) {
    if (s == "color_transfer") return ShiftKind::kColorTransfer;
    if (s == "blur") return ShiftKind::kBlur;
    if (s == "texture_swap") return ShiftKind::kTextureSwap;
    if (s == "elastic") return ShiftKind::kElastic;
    throw std::invalid_argument("unknown shift kind: " + s);
}

struct ShiftSpec {
    ShiftKind kind = ShiftKind::kColorTransfer;
    double magnitude = 0.0;  // 0 is the identity
    std::uint64_t seed = 0;
};

namespace synth_detail {

inline void paint_texture(Grid& image, const Grid* mask, Rng& rng) {
    int h = image.extent(1), w = image.extent(2);
    int kind = rng.uniform_int(0, 2);
    double base[3] = {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
    double alt[3] = {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
    double theta = rng.uniform(0, M_PI);
    double freq = rng.uniform(0.15, 0.7);
    double amp = rng.uniform(0.05, 0.2);
    double cy = rng.uniform(0, h), cx = rng.uniform(0, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (mask && mask->at(y, x) < 0.5) continue;
            double t;
            switch (kind) {
                case 0: t = 0.5;  break;                             // noise around base
                case 1: {                                            // linear gradient
                    double proj = ((y - cy) * std::sin(theta) + (x - cx) * std::cos(theta));
                    t = 0.5 + proj / std::sqrt(static_cast<double>(h * h + w * w));
                    break;
                }
                default: {                                           // stripes
                    double proj = y * std::sin(theta) + x * std::cos(theta);
                    t = 0.5 + 0.5 * std::sin(freq * proj);
                    break;
                }
            }
            t = std::clamp(t, 0.0, 1.0);
            for (int c = 0; c < 3; ++c) {
                double v = base[c] * (1 - t) + alt[c] * t + amp * (rng.uniform01() - 0.5);
                image.at(c, y, x) = std::clamp(v, 0.02, 0.98);
            }
        }
}

inline Grid rasterize_shape(int h, int w, Rng& rng) {
    Grid mask({h, w});
    int kind = rng.uniform_int(0, 2);
    double cy = rng.uniform(0.2 * h, 0.8 * h), cx = rng.uniform(0.2 * w, 0.8 * w);
    double theta = rng.uniform(0, M_PI);
    double ct = std::cos(theta), st = std::sin(theta);
    if (kind == 0 || kind == 1) {  // ellipse / rectangle
        double ry = rng.uniform(0.08 * h, 0.22 * h);
        double rx = rng.uniform(0.08 * w, 0.22 * w);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double dy = y - cy, dx = x - cx;
                double u = dx * ct + dy * st, v = -dx * st + dy * ct;
                bool inside = kind == 0 ? (u * u) / (rx * rx) + (v * v) / (ry * ry) <= 1.0
                                        : std::abs(u) <= rx && std::abs(v) <= ry;
                if (inside) mask.at(y, x) = 1.0;
            }
    } else {  // convex polygon
        int nv = rng.uniform_int(5, 7);
        double r0 = rng.uniform(0.1 * std::min(h, w), 0.22 * std::min(h, w));
        std::vector<double> px(nv), py(nv);
        for (int i = 0; i < nv; ++i) {
            double ang = 2 * M_PI * i / nv + rng.uniform(-0.25, 0.25);
            double r = r0 * rng.uniform(0.7, 1.3);
            py[i] = cy + r * std::sin(ang);
            px[i] = cx + r * std::cos(ang);
        }
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                bool inside = true;
                for (int i = 0; i < nv && inside; ++i) {
                    int j = (i + 1) % nv;
                    double cross = (px[j] - px[i]) * (y - py[i]) - (py[j] - py[i]) * (x - px[i]);
                    inside = cross >= 0;
                }
                if (inside) mask.at(y, x) = 1.0;
            }
    }
    return mask;
}

/// Exact Euclidean distance from each mask pixel to the nearest outside
/// pixel (image border counts as outside).
inline Grid interior_distance(const Grid& mask) {
    int h = mask.extent(0), w = mask.extent(1);
    std::vector<std::pair<int, int>> outside;
    auto fg = [&](int y, int x) {
        return y >= 0 && y < h && x >= 0 && x < w && mask.at(y, x) > 0.5;
    };
    for (int y = -1; y <= h; ++y)
        for (int x = -1; x <= w; ++x)
            if (!fg(y, x) && (fg(y - 1, x) || fg(y + 1, x) || fg(y, x - 1) || fg(y, x + 1)))
                outside.emplace_back(y, x);
    Grid dist({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!fg(y, x)) continue;
            double best = 1e300;
            for (auto [oy, ox] : outside) {
                double dy = y - oy, dx = x - ox;
                best = std::min(best, dy * dy + dx * dx);
            }
            dist.at(y, x) = std::sqrt(best);
        }
    return dist;
}

}  // namespace synth_detail

/// Deterministic click protocol: the first positive click lands on the
/// interior point of maximum boundary distance, later clicks greedily
/// maximize separation from prior clicks subject to a minimum separation
/// (halved with a warning when infeasible). With n >= 2 the final click is
/// negative, placed in the background just outside the object.
inline std::vector<Click> sample_clicks(const Grid& mask, const std::vector<Grid>& others,
                                        int n, double min_sep, std::uint64_t /*seed*/) {
    if (n < 1) throw std::invalid_argument("sample_clicks: n must be >= 1");
    int h = mask.extent(0), w = mask.extent(1);
    Grid dist = synth_detail::interior_distance(mask);
    int best_y = -1, best_x = -1;
    double best = -1.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (mask.at(y, x) > 0.5 && dist.at(y, x) > best) {
                best = dist.at(y, x);
                best_y = y;
                best_x = x;
            }
    if (best_y < 0) throw std::invalid_argument("sample_clicks: empty mask");
    std::vector<Click> clicks{{best_y, best_x, +1}};

    auto min_dist_to_clicks = [&](int y, int x) {
        double m = 1e300;
        for (const Click& c : clicks) {
            double dy = y - c.y, dx = x - c.x;
            m = std::min(m, std::sqrt(dy * dy + dx * dx));
        }
        return m;
    };

    int n_pos = n >= 2 ? n - 1 : n;
    double sep = min_sep;
    for (int i = 1; i < n_pos; ++i) {
        int py = -1, px = -1;
        double sep_eff = sep;
        while (py < 0) {
            double best_d = -1.0;
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    if (mask.at(y, x) < 0.5) continue;
                    double d = min_dist_to_clicks(y, x);
                    if (d >= sep_eff && d > best_d) {
                        best_d = d;
                        py = y;
                        px = x;
                    }
                }
            if (py < 0) {
                sep_eff /= 2.0;
                std::cerr << "sample_clicks: relaxing min separation to " << sep_eff << "\n";
                if (sep_eff < 0.25) {  // degenerate target, reuse the peak
                    py = best_y;
                    px = best_x;
                }
            }
        }
        clicks.push_back({py, px, +1});
    }

    if (n >= 2) {
        auto inside_any = [&](int y, int x) {
            if (mask.at(y, x) > 0.5) return true;
            for (const Grid& m : others)
                if (m.at(y, x) > 0.5) return true;
            return false;
        };
        // background pixel just outside the object (>= 2 px from its mask)
        double sep_eff = sep;
        int ny = -1, nx = -1;
        while (ny < 0) {
            double best_d = 1e300;
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    if (inside_any(y, x)) continue;
                    double dmask = 1e300;
                    for (int yy = 0; yy < h; ++yy)
                        for (int xx = 0; xx < w; ++xx)
                            if (mask.at(yy, xx) > 0.5) {
                                double dy = y - yy, dx = x - xx;
                                dmask = std::min(dmask, dy * dy + dx * dx);
                            }
                    dmask = std::sqrt(dmask);
                    if (dmask < 2.0 || min_dist_to_clicks(y, x) < sep_eff) continue;
                    if (dmask < best_d) {
                        best_d = dmask;
                        ny = y;
                        nx = x;
                    }
                }
            if (ny < 0) {
                sep_eff /= 2.0;
                std::cerr << "sample_clicks: relaxing min separation to " << sep_eff << "\n";
                if (sep_eff < 0.25) break;
            }
        }
        if (ny >= 0) clicks.push_back({ny, nx, -1});
    }
    return clicks;
}

/// Fully seed-determined scene: textured background, 1..3 disjoint textured
/// shapes with area >= 1% of the image, deterministic clicks per object.
inline Scene gen_scene(std::uint64_t seed, const SceneSpec& spec) {
    if (spec.h < 16 || spec.w < 16) throw std::invalid_argument("gen_scene: H, W must be >= 16");
    if (spec.n_objects < 1 || spec.n_objects > 3)
        throw std::invalid_argument("gen_scene: 1..3 objects supported");
    Rng rng(seed ^ 0x5eed5eedULL);
    Scene scene;
    scene.seed = seed;
    scene.image = Grid({3, spec.h, spec.w});
    synth_detail::paint_texture(scene.image, nullptr, rng);

    double min_area = spec.min_area_frac * spec.h * spec.w;
    for (int k = 0; k < spec.n_objects; ++k) {
        bool placed = false;
        for (int attempt = 0; attempt < spec.max_retries && !placed; ++attempt) {
            Grid cand = synth_detail::rasterize_shape(spec.h, spec.w, rng);
            double area = cand.sum();
            if (area < min_area) continue;
            bool overlap = false;
            for (const Grid& m : scene.masks)
                for (std::int64_t i = 0; i < m.size() && !overlap; ++i)
                    overlap = m[i] > 0.5 && cand[i] > 0.5;
            if (overlap) continue;
            synth_detail::paint_texture(scene.image, &cand, rng);
            scene.masks.push_back(std::move(cand));
            placed = true;
        }
        if (!placed)
            throw std::runtime_error("gen_scene: could not place object " + std::to_string(k) +
                                     " after bounded retries");
    }
    for (size_t k = 0; k < scene.masks.size(); ++k) {
        std::vector<Grid> others;
        for (size_t j = 0; j < scene.masks.size(); ++j)
            if (j != k) others.push_back(scene.masks[j]);
        scene.clicks.push_back(sample_clicks(scene.masks[k], others, spec.clicks_per_object,
                                             spec.min_click_sep, seed + k));
    }
    return scene;
}

namespace synth_detail {

inline Grid gaussian_blur(const Grid& image, double sigma) {
    int h = image.extent(1), w = image.extent(2);
    int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
    double norm = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[static_cast<size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
        norm += kernel[static_cast<size_t>(i + radius)];
    }
    for (double& k : kernel) k /= norm;
    Grid tmp(image.shape()), out(image.shape());
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i)
                    acc += kernel[static_cast<size_t>(i + radius)] *
                           image.at(c, y, gridops::reflect(x + i, w));
                tmp.at(c, y, x) = acc;
            }
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i)
                    acc += kernel[static_cast<size_t>(i + radius)] *
                           tmp.at(c, gridops::reflect(y + i, h), x);
                out.at(c, y, x) = acc;
            }
    return out;
}

/// Smooth random displacement field with max component magnitude exactly m.
inline Grid elastic_field(int h, int w, double m, Rng& rng) {
    const int ch = 4, cw = 4;
    Grid coarse({2, ch, cw});
    for (std::int64_t i = 0; i < coarse.size(); ++i) coarse[i] = rng.normal();
    Grid field({2, h, w});
    double peak = 0.0;
    for (int c = 0; c < 2; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double fy = y * (ch - 1.0) / (h - 1.0), fx = x * (cw - 1.0) / (w - 1.0);
                int y0 = std::min(static_cast<int>(fy), ch - 2);
                int x0 = std::min(static_cast<int>(fx), cw - 2);
                double ay = fy - y0, ax = fx - x0;
                double v = (1 - ay) * ((1 - ax) * coarse.at(c, y0, x0) + ax * coarse.at(c, y0, x0 + 1)) +
                           ay * ((1 - ax) * coarse.at(c, y0 + 1, x0) + ax * coarse.at(c, y0 + 1, x0 + 1));
                field.at(c, y, x) = v;
                peak = std::max(peak, std::abs(v));
            }
    if (peak > 0)
        for (std::int64_t i = 0; i < field.size(); ++i) field[i] *= m / peak;
    return field;
}

}  // namespace synth_detail

/// Parametric domain shift. Appearance-only shifts keep masks bit-exact;
/// the elastic shift warps image and masks jointly (clicks re-derived from
/// the warped masks so the prompt protocol invariants keep holding).
inline Scene apply_shift(const Scene& scene, const ShiftSpec& shift) {
    if (shift.magnitude < 0) throw std::invalid_argument("apply_shift: magnitude must be >= 0");
    if (shift.magnitude == 0.0) return scene;
    Rng rng(shift.seed ^ 0x0ddba11ULL);
    Scene out = scene;
    int h = scene.image.extent(1), w = scene.image.extent(2);
    switch (shift.kind) {
        case ShiftKind::kColorTransfer: {
            double m = std::min(1.0, shift.magnitude);
            double mix[3][3], off[3];
            for (int i = 0; i < 3; ++i) {
                off[i] = rng.uniform(-0.3, 0.3);
                for (int j = 0; j < 3; ++j)
                    mix[i][j] = (i == j ? 1.0 : 0.0) + rng.uniform(-0.5, 0.5);
            }
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    double px[3] = {scene.image.at(0, y, x), scene.image.at(1, y, x),
                                    scene.image.at(2, y, x)};
                    for (int c = 0; c < 3; ++c) {
                        double v = off[c];
                        for (int j = 0; j < 3; ++j) v += mix[c][j] * px[j];
                        out.image.at(c, y, x) =
                            std::clamp((1 - m) * px[c] + m * v, 0.0, 1.0);
                    }
                }
            break;
        }
        case ShiftKind::kBlur: {
            out.image = synth_detail::gaussian_blur(scene.image, shift.magnitude);
            break;
        }
        case ShiftKind::kTextureSwap: {
            double m = std::min(1.0, shift.magnitude);
            Grid tex({3, h, w});
            synth_detail::paint_texture(tex, nullptr, rng);
            for (const Grid& mask : scene.masks)
                for (int c = 0; c < 3; ++c)
                    for (int y = 0; y < h; ++y)
                        for (int x = 0; x < w; ++x)
                            if (mask.at(y, x) > 0.5)
                                out.image.at(c, y, x) = std::clamp(
                                    (1 - m) * scene.image.at(c, y, x) + m * tex.at(c, y, x), 0.0,
                                    1.0);
            break;
        }
        case ShiftKind::kElastic: {
            Grid field = synth_detail::elastic_field(h, w, shift.magnitude, rng);
            out.image = gridops::grid_sample(scene.image, field, GridBorder::kClamp);
            std::vector<Grid> soft;
            for (const Grid& mask : scene.masks) {
                Grid chw({1, h, w}, mask.vec());
                soft.push_back(gridops::grid_sample(chw, field, GridBorder::kClamp));
            }
            // binarize at 0.5; overlaps resolved to the strongest soft value
            for (size_t k = 0; k < soft.size(); ++k) out.masks[k] = Grid({h, w});
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    int winner = -1;
                    double best = 0.5;
                    for (size_t k = 0; k < soft.size(); ++k)
                        if (soft[k].at(0, y, x) > best) {
                            best = soft[k].at(0, y, x);
                            winner = static_cast<int>(k);
                        }
                    if (winner >= 0) out.masks[static_cast<size_t>(winner)].at(y, x) = 1.0;
                }
            for (size_t k = 0; k < out.masks.size(); ++k) {
                if (out.masks[k].sum() < 1.0) out.masks[k] = scene.masks[k];  // warp pushed it out
                std::vector<Grid> others;
                for (size_t j = 0; j < out.masks.size(); ++j)
                    if (j != k) others.push_back(out.masks[j]);
                out.clicks[k] = sample_clicks(out.masks[k], others, 3, 4.0, scene.seed + k);
            }
            break;
        }
    }
    return out;
}

}  // namespace ruackit
