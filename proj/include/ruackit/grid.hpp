#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace ruackit {

/// Dense rectangular array of doubles with shape metadata (up to 4 axes).
/// Used for images (3xHxW), feature maps (CxHxW), masks (HxW), parameter
/// matrices (MxN) and scalars (shape {1}).
class Grid {
public:
    Grid() = default;

    explicit Grid(std::vector<int> shape, double fill = 0.0)
        : shape_(std::move(shape)) {
        check_shape(shape_);
        data_.assign(static_cast<size_t>(count(shape_)), fill);
    }

    Grid(std::vector<int> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        check_shape(shape_);
        if (static_cast<std::int64_t>(data_.size()) != count(shape_))
            throw std::invalid_argument("Grid: data length does not match shape");
    }

    static Grid scalar(double v) { return Grid({1}, std::vector<double>{v}); }

    static Grid full_like(const Grid& g, double v) { return Grid(g.shape(), v); }

    int rank() const { return static_cast<int>(shape_.size()); }
    int extent(int axis) const { return shape_.at(static_cast<size_t>(axis)); }
    const std::vector<int>& shape() const { return shape_; }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    bool is_scalar() const { return data_.size() == 1; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // Rank-2 (h, w) and rank-3 (c, h, w) accessors used all over the image code.
    double& at(int y, int x) { return data_[static_cast<size_t>(y) * shape_[1] + x]; }
    double at(int y, int x) const { return data_[static_cast<size_t>(y) * shape_[1] + x]; }
    double& at(int c, int y, int x) {
        return data_[(static_cast<size_t>(c) * shape_[1] + y) * shape_[2] + x];
    }
    double at(int c, int y, int x) const {
        return data_[(static_cast<size_t>(c) * shape_[1] + y) * shape_[2] + x];
    }

    bool same_shape(const Grid& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    double min() const { return *std::min_element(data_.begin(), data_.end()); }
    double max() const { return *std::max_element(data_.begin(), data_.end()); }
    double sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }
    double mean() const { return data_.empty() ? 0.0 : sum() / static_cast<double>(data_.size()); }

    static std::string shape_str(const std::vector<int>& s) {
        std::string out = "[";
        for (size_t i = 0; i < s.size(); ++i) {
            if (i) out += "x";
            out += std::to_string(s[i]);
        }
        return out + "]";
    }

private:
    static std::int64_t count(const std::vector<int>& s) {
        std::int64_t n = 1;
        for (int e : s) n *= e;
        return n;
    }
    static void check_shape(const std::vector<int>& s) {
        if (s.empty() || s.size() > 4)
            throw std::invalid_argument("Grid: rank must be 1..4");
        for (int e : s)
            if (e <= 0) throw std::invalid_argument("Grid: extents must be positive");
    }

    std::vector<int> shape_;
    std::vector<double> data_;
};

}  // namespace ruackit
