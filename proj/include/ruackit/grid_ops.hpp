#pragma once

#include <cmath>
#include <cstdint>

#include "ruackit/grid.hpp"

namespace ruackit {

enum class GridBorder : std::uint8_t { kClamp, kZero };

namespace gridops {

// reflect-101 index (PyTorch-style reflect padding)
inline int reflect(int i, int n) {
    if (n == 1) return 0;
    if (i < 0) return -i;
    if (i >= n) return 2 * n - 2 - i;
    return i;
}

/// 3x3 convolution, stride 1, reflect padding. x:[C,H,W] w:[F,C,3,3] b:[F].
inline Grid conv3x3(const Grid& x, const Grid& w, const Grid& b) {
    int C = x.extent(0), H = x.extent(1), W = x.extent(2), F = w.extent(0);
    Grid out({F, H, W});
    for (int f = 0; f < F; ++f)
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx) {
                double acc = b[f];
                for (int c = 0; c < C; ++c)
                    for (int ky = 0; ky < 3; ++ky) {
                        int sy = reflect(y + ky - 1, H);
                        for (int kx = 0; kx < 3; ++kx) {
                            int sx = reflect(xx + kx - 1, W);
                            acc += w[((static_cast<std::int64_t>(f) * C + c) * 3 + ky) * 3 + kx] *
                                   x.at(c, sy, sx);
                        }
                    }
                out.at(f, y, xx) = acc;
            }
    return out;
}

inline double tap(const Grid& img, int c, int y, int x, GridBorder mode) {
    int H = img.extent(1), W = img.extent(2);
    if (mode == GridBorder::kClamp) {
        y = std::min(std::max(y, 0), H - 1);
        x = std::min(std::max(x, 0), W - 1);
        return img.at(c, y, x);
    }
    if (y < 0 || y >= H || x < 0 || x >= W) return 0.0;
    return img.at(c, y, x);
}

/// Bilinear warp of img:[C,H,W] by offsets:[2,H,W] holding (dy, dx).
inline Grid grid_sample(const Grid& img, const Grid& off, GridBorder mode) {
    int C = img.extent(0), H = img.extent(1), W = img.extent(2);
    Grid out({C, H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double sy = y + off.at(0, y, x);
            double sx = x + off.at(1, y, x);
            int y0 = static_cast<int>(std::floor(sy));
            int x0 = static_cast<int>(std::floor(sx));
            double fy = sy - y0, fx = sx - x0;
            for (int c = 0; c < C; ++c) {
                double v00 = tap(img, c, y0, x0, mode);
                double v01 = tap(img, c, y0, x0 + 1, mode);
                double v10 = tap(img, c, y0 + 1, x0, mode);
                double v11 = tap(img, c, y0 + 1, x0 + 1, mode);
                out.at(c, y, x) =
                    (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
            }
        }
    return out;
}

inline Grid map_unary(const Grid& x, double (*f)(double)) {
    Grid out(x.shape());
    for (std::int64_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
    return out;
}

inline Grid tanh(const Grid& x) { return map_unary(x, [](double v) { return std::tanh(v); }); }

inline Grid sigmoid(const Grid& x) {
    return map_unary(x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

inline Grid add(const Grid& a, const Grid& b) {
    Grid out(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

}  // namespace gridops
}  // namespace ruackit
