#include "dynsurf/temporal.hpp"

#include <atomic>

namespace dynsurf {

namespace {
std::atomic<std::int64_t> g_empty_mask_count{0};

inline double signum(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }
}  // namespace

std::int64_t temporal_empty_mask_count() { return g_empty_mask_count.load(); }
void reset_temporal_empty_mask_count() { g_empty_mask_count.store(0); }

ImageD curvature_map(const ImageD& n) {
    if (n.channels() != 3) throw ShapeMismatch("curvature_map: expected a 3-channel normal map");
    const int H = n.height(), W = n.width();
    ImageD c(H, W, 1, 0.0);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            double sq = 0.0;
            for (int ch = 0; ch < 3; ++ch) {
                const double gx = x + 1 < W ? n.at(y, x + 1, ch) - n.at(y, x, ch) : 0.0;
                const double gy = y + 1 < H ? n.at(y + 1, x, ch) - n.at(y, x, ch) : 0.0;
                const double v = std::abs(gx) + std::abs(gy);
                sq += v * v;
            }
            c.at(y, x) = std::sqrt(sq);
        }
    }
    return c;
}

double temporal_loss(const ImageD& n_warped, const ImageD& n_cur, const ImageB& mask) {
    if (!n_warped.same_shape(n_cur)) throw ShapeMismatch("temporal_loss: normal map shapes differ");
    if (mask.height() != n_cur.height() || mask.width() != n_cur.width())
        throw ShapeMismatch("temporal_loss: mask shape differs");
    const ImageD c_hat = curvature_map(n_warped);
    const ImageD c_cur = curvature_map(n_cur);
    double total = 0.0;
    std::int64_t count = 0;
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x) {
            if (!mask.at(y, x)) continue;
            const double d = c_hat.at(y, x) - c_cur.at(y, x);
            total += d * d;
            ++count;
        }
    if (count == 0) {  // EmptyMask
        ++g_empty_mask_count;
        return 0.0;
    }
    return total / static_cast<double>(count);
}

void temporal_loss_backward(const ImageD& n_warped, const ImageD& n_cur, const ImageB& mask, double upstream,
                            ImageD& g_normal_cur) {
    if (!n_warped.same_shape(n_cur) || !n_cur.same_shape(g_normal_cur))
        throw ShapeMismatch("temporal_loss_backward: shapes differ");
    const ImageD c_hat = curvature_map(n_warped);
    const ImageD c_cur = curvature_map(n_cur);
    std::int64_t count = 0;
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x) count += mask.at(y, x) ? 1 : 0;
    if (count == 0) return;
    const int H = n_cur.height(), W = n_cur.width();
    const double scale = 2.0 * upstream / static_cast<double>(count);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            if (!mask.at(y, x)) continue;
            const double c = c_cur.at(y, x);
            if (c <= 0.0) continue;  // subgradient at the curvature kink
            const double g_c = scale * (c - c_hat.at(y, x));
            for (int ch = 0; ch < 3; ++ch) {
                const double gx = x + 1 < W ? n_cur.at(y, x + 1, ch) - n_cur.at(y, x, ch) : 0.0;
                const double gy = y + 1 < H ? n_cur.at(y + 1, x, ch) - n_cur.at(y, x, ch) : 0.0;
                const double v = std::abs(gx) + std::abs(gy);
                const double g_v = g_c * v / c;
                if (x + 1 < W) {
                    const double s = signum(gx) * g_v;
                    g_normal_cur.at(y, x + 1, ch) += s;
                    g_normal_cur.at(y, x, ch) -= s;
                }
                if (y + 1 < H) {
                    const double s = signum(gy) * g_v;
                    g_normal_cur.at(y + 1, x, ch) += s;
                    g_normal_cur.at(y, x, ch) -= s;
                }
            }
        }
    }
}

}  // namespace dynsurf
