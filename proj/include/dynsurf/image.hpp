#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "dynsurf/common.hpp"

namespace dynsurf {

// Dense row-major H x W x C buffer. Channel count is dynamic so the same type
// backs color (3), depth/opacity/masks (1), normals (3) and flow (2).
template <typename T>
class Image {
public:
    Image() = default;
    Image(int height, int width, int channels, T fill = T(0))
        : h_(height), w_(width), c_(channels), data_(static_cast<std::size_t>(height) * width * channels, fill) {}

    int height() const { return h_; }
    int width() const { return w_; }
    int channels() const { return c_; }
    bool empty() const { return data_.empty(); }
    std::size_t size() const { return data_.size(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& at(int y, int x, int c = 0) { return data_[(static_cast<std::size_t>(y) * w_ + x) * c_ + c]; }
    const T& at(int y, int x, int c = 0) const { return data_[(static_cast<std::size_t>(y) * w_ + x) * c_ + c]; }

    T* row(int y) { return data_.data() + static_cast<std::size_t>(y) * w_ * c_; }
    const T* row(int y) const { return data_.data() + static_cast<std::size_t>(y) * w_ * c_; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Image& o) const { return h_ == o.h_ && w_ == o.w_ && c_ == o.c_; }

    std::vector<T>& raw() { return data_; }
    const std::vector<T>& raw() const { return data_; }

private:
    int h_ = 0, w_ = 0, c_ = 0;
    std::vector<T> data_;
};

using ImageD = Image<double>;
using ImageU8 = Image<std::uint8_t>;
using ImageB = Image<std::uint8_t>;  // 0/1 masks

inline void require_same_shape(const ImageD& a, const ImageD& b, const char* what) {
    if (!a.same_shape(b)) throw ShapeMismatch(std::string(what) + ": image shapes differ");
}

// Bilinear sample of all channels at (x, y) in pixel-center coordinates:
// integer (x, y) hits the center of pixel column x, row y. Returns false when
// (x, y) lies outside [0, W-1] x [0, H-1]; points exactly on the border are
// in-bounds, and integer sample positions reproduce the stored value bitwise.
template <typename T>
inline bool bilinear_sample(const Image<T>& img, double x, double y, double* out) {
    const int W = img.width(), H = img.height();
    if (!(x >= 0.0 && y >= 0.0 && x <= W - 1 && y <= H - 1)) return false;
    int x0 = static_cast<int>(std::floor(x));
    int y0 = static_cast<int>(std::floor(y));
    if (x0 > W - 2) x0 = W - 2;  // x == W-1: weight shifts fully to the right tap
    if (y0 > H - 2) y0 = H - 2;
    if (W == 1) x0 = 0;
    if (H == 1) y0 = 0;
    const double fx = W == 1 ? 0.0 : x - x0;
    const double fy = H == 1 ? 0.0 : y - y0;
    const int x1 = W == 1 ? x0 : x0 + 1;
    const int y1 = H == 1 ? y0 : y0 + 1;
    for (int c = 0; c < img.channels(); ++c) {
        const double top = (1 - fx) * img.at(y0, x0, c) + fx * img.at(y0, x1, c);
        const double bot = (1 - fx) * img.at(y1, x0, c) + fx * img.at(y1, x1, c);
        out[c] = (1 - fy) * top + fy * bot;
    }
    return true;
}

}  // namespace dynsurf
