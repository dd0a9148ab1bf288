#include "dynsurf/losses.hpp"

#include <array>

namespace dynsurf {

void TrainSchedule::validate() const {
    if (coarse_iters < 0 || fine_iters <= 0 || static_iters <= 0) throw InvalidSpec("iteration counts must be positive");
    if (densify_interval <= 0 || static_densify_interval <= 0 || opacity_reset_interval <= 0)
        throw InvalidSpec("intervals must be positive");
    if (!(densify_start >= 0 && densify_end <= fine_iters && densify_start <= densify_end))
        throw InvalidSpec("densify window must lie inside the fine stage");
}

LossWeights TrainSchedule::fine_weights(int iter) const {
    const double t = std::clamp(static_cast<double>(iter) / fine_iters, 0.0, 1.0);
    LossWeights w;
    w.temporal = lerp(lambda_t_start, lambda_t_end, t);
    w.mask = lerp(lambda_m_start, lambda_m_end, t);
    w.opacity = lambda_o;
    w.depth_normal = lambda_c;
    return w;
}

LossWeights TrainSchedule::coarse_weights() const {
    LossWeights w;
    w.mask = lambda_m_coarse;
    return w;
}

double TrainSchedule::position_lr(int iter, int total_iters, double scene_extent) const {
    const double t = std::clamp(static_cast<double>(iter) / std::max(1, total_iters), 0.0, 1.0);
    return scene_extent * std::exp(std::log(lr_position) * (1.0 - t) + std::log(lr_position_final) * t);
}

bool TrainSchedule::is_densify_iter(int iter) const {
    return iter >= densify_start && iter <= densify_end && (iter - densify_start) % densify_interval == 0;
}

bool TrainSchedule::is_static_densify_iter(int iter) const {
    return iter >= static_densify_start && iter <= static_densify_end &&
           (iter - static_densify_start) % static_densify_interval == 0;
}

bool TrainSchedule::is_opacity_reset_iter(int iter) const {
    return iter > 0 && iter < densify_end && iter % opacity_reset_interval == 0;
}

// ---------------------------------------------------------------------------
// SSIM
// ---------------------------------------------------------------------------

namespace {

constexpr int kWin = 11;
constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

const std::array<double, kWin>& gaussian_kernel() {
    static const std::array<double, kWin> k = [] {
        std::array<double, kWin> w{};
        const double sigma = 1.5;
        double sum = 0.0;
        for (int i = 0; i < kWin; ++i) {
            const double d = i - (kWin - 1) / 2.0;
            w[i] = std::exp(-d * d / (2.0 * sigma * sigma));
            sum += w[i];
        }
        for (auto& v : w) v /= sum;
        return w;
    }();
    return k;
}

// Separable zero-padded Gaussian filter over each channel.
ImageD gauss_filter(const ImageD& img) {
    const auto& k = gaussian_kernel();
    const int H = img.height(), W = img.width(), C = img.channels();
    const int r = kWin / 2;
    ImageD tmp(H, W, C), out(H, W, C);
    parallel_for(H, [&](std::int64_t y) {
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c) {
                double acc = 0.0;
                for (int i = -r; i <= r; ++i) {
                    const int xx = x + i;
                    if (xx < 0 || xx >= W) continue;
                    acc += k[i + r] * img.at(static_cast<int>(y), xx, c);
                }
                tmp.at(static_cast<int>(y), x, c) = acc;
            }
    });
    parallel_for(H, [&](std::int64_t y) {
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c) {
                double acc = 0.0;
                for (int i = -r; i <= r; ++i) {
                    const int yy = static_cast<int>(y) + i;
                    if (yy < 0 || yy >= H) continue;
                    acc += k[i + r] * tmp.at(yy, x, c);
                }
                out.at(static_cast<int>(y), x, c) = acc;
            }
    });
    return out;
}

ImageD elementwise_mul(const ImageD& a, const ImageD& b) {
    ImageD out(a.height(), a.width(), a.channels());
    for (std::size_t i = 0; i < out.size(); ++i) out.raw()[i] = a.raw()[i] * b.raw()[i];
    return out;
}

struct SsimMoments {
    ImageD mu_a, mu_b, a2, b2, ab;
};

SsimMoments ssim_moments(const ImageD& a, const ImageD& b) {
    return {gauss_filter(a), gauss_filter(b), gauss_filter(elementwise_mul(a, a)),
            gauss_filter(elementwise_mul(b, b)), gauss_filter(elementwise_mul(a, b))};
}

}  // namespace

double ssim(const ImageD& a, const ImageD& b) {
    require_same_shape(a, b, "ssim");
    const SsimMoments m = ssim_moments(a, b);
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double mu_a = m.mu_a.raw()[i], mu_b = m.mu_b.raw()[i];
        const double var_a = m.a2.raw()[i] - mu_a * mu_a;
        const double var_b = m.b2.raw()[i] - mu_b * mu_b;
        const double cov = m.ab.raw()[i] - mu_a * mu_b;
        const double num = (2 * mu_a * mu_b + kSsimC1) * (2 * cov + kSsimC2);
        const double den = (mu_a * mu_a + mu_b * mu_b + kSsimC1) * (var_a + var_b + kSsimC2);
        total += num / den;
    }
    return total / static_cast<double>(a.size());
}

void ssim_backward(const ImageD& a, const ImageD& b, double upstream, ImageD& g_a) {
    require_same_shape(a, b, "ssim_backward");
    require_same_shape(a, g_a, "ssim_backward");
    const SsimMoments m = ssim_moments(a, b);
    const int H = a.height(), W = a.width(), C = a.channels();
    ImageD d_mu(H, W, C), d_a2(H, W, C), d_ab(H, W, C);
    const double scale = upstream / static_cast<double>(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double mu_a = m.mu_a.raw()[i], mu_b = m.mu_b.raw()[i];
        const double var_a = m.a2.raw()[i] - mu_a * mu_a;
        const double var_b = m.b2.raw()[i] - mu_b * mu_b;
        const double cov = m.ab.raw()[i] - mu_a * mu_b;
        const double a1t = 2 * mu_a * mu_b + kSsimC1;
        const double a2t = 2 * cov + kSsimC2;
        const double b1t = mu_a * mu_a + mu_b * mu_b + kSsimC1;
        const double b2t = var_a + var_b + kSsimC2;
        const double inv_den = 1.0 / (b1t * b2t);
        const double s = a1t * a2t * inv_den;
        const double d_a1 = a2t * inv_den;
        const double d_a2t = a1t * inv_den;
        const double d_b1 = -s / b1t;
        const double d_b2 = -s / b2t;
        // Chain through mu_a, filtered a^2 and filtered ab:
        //   a1 = 2 mu_a mu_b + C1, a2 = 2 (ab_f - mu_a mu_b) + C2,
        //   b1 = mu_a^2 + mu_b^2 + C1, b2 = a2_f - mu_a^2 + var_b + C2.
        d_mu.raw()[i] = scale * (d_a1 * 2 * mu_b + d_a2t * (-2.0 * mu_b) + d_b1 * 2 * mu_a + d_b2 * (-2.0 * mu_a));
        d_a2.raw()[i] = scale * d_b2;
        d_ab.raw()[i] = scale * d_a2t * 2.0;
    }
    const ImageD f_mu = gauss_filter(d_mu);
    const ImageD f_a2 = gauss_filter(d_a2);
    const ImageD f_ab = gauss_filter(d_ab);
    for (std::size_t i = 0; i < a.size(); ++i)
        g_a.raw()[i] += f_mu.raw()[i] + 2.0 * a.raw()[i] * f_a2.raw()[i] + b.raw()[i] * f_ab.raw()[i];
}

// ---------------------------------------------------------------------------
// Photometric
// ---------------------------------------------------------------------------

double photometric_loss(const ImageD& rendered, const ImageD& target) {
    require_same_shape(rendered, target, "photometric_loss");
    double l1 = 0.0;
    for (std::size_t i = 0; i < rendered.size(); ++i) l1 += std::abs(rendered.raw()[i] - target.raw()[i]);
    l1 /= static_cast<double>(rendered.size());
    return 0.8 * l1 + 0.2 * (1.0 - ssim(rendered, target));
}

void photometric_loss_backward(const ImageD& rendered, const ImageD& target, double upstream, ImageD& g_rendered) {
    require_same_shape(rendered, target, "photometric_loss_backward");
    const double s = 0.8 * upstream / static_cast<double>(rendered.size());
    for (std::size_t i = 0; i < rendered.size(); ++i) {
        const double d = rendered.raw()[i] - target.raw()[i];
        g_rendered.raw()[i] += d > 0 ? s : (d < 0 ? -s : 0.0);
    }
    ssim_backward(rendered, target, -0.2 * upstream, g_rendered);
}

// ---------------------------------------------------------------------------
// Depth-normal consistency
// ---------------------------------------------------------------------------

namespace {

inline Vec3 backproject(const CameraModel& cam, int x, int y, double depth) {
    return depth * cam.ray_dir(x + 0.5, y + 0.5);
}

}  // namespace

double depth_normal_loss(const ImageD& depth, const ImageD& normal, const ImageD& opacity, const CameraModel& cam) {
    const int H = depth.height(), W = depth.width();
    double total = 0.0;
    std::int64_t count = 0;
    for (int y = 0; y + 1 < H; ++y) {
        for (int x = 0; x + 1 < W; ++x) {
            if (!(opacity.at(y, x) > 0.5 && opacity.at(y, x + 1) > 0.5 && opacity.at(y + 1, x) > 0.5)) continue;
            const Vec3 p = backproject(cam, x, y, depth.at(y, x));
            const Vec3 tx = backproject(cam, x + 1, y, depth.at(y, x + 1)) - p;
            const Vec3 ty = backproject(cam, x, y + 1, depth.at(y + 1, x)) - p;
            const Vec3 c = tx.cross(ty);
            const double n = c.norm();
            if (n < 1e-14) continue;
            const Vec3 nd = c / n;
            const Vec3 nr(normal.at(y, x, 0), normal.at(y, x, 1), normal.at(y, x, 2));
            total += 1.0 - nd.dot(nr);
            ++count;
        }
    }
    return count == 0 ? 0.0 : total / static_cast<double>(count);
}

void depth_normal_loss_backward(const ImageD& depth, const ImageD& normal, const ImageD& opacity,
                                const CameraModel& cam, double upstream, ImageD& g_depth, ImageD& g_normal) {
    const int H = depth.height(), W = depth.width();
    // Two passes: count first so the mean scale is known.
    std::int64_t count = 0;
    for (int y = 0; y + 1 < H; ++y)
        for (int x = 0; x + 1 < W; ++x) {
            if (!(opacity.at(y, x) > 0.5 && opacity.at(y, x + 1) > 0.5 && opacity.at(y + 1, x) > 0.5)) continue;
            const Vec3 p = backproject(cam, x, y, depth.at(y, x));
            const Vec3 tx = backproject(cam, x + 1, y, depth.at(y, x + 1)) - p;
            const Vec3 ty = backproject(cam, x, y + 1, depth.at(y + 1, x)) - p;
            if (tx.cross(ty).norm() < 1e-14) continue;
            ++count;
        }
    if (count == 0) return;
    const double s = upstream / static_cast<double>(count);
    for (int y = 0; y + 1 < H; ++y) {
        for (int x = 0; x + 1 < W; ++x) {
            if (!(opacity.at(y, x) > 0.5 && opacity.at(y, x + 1) > 0.5 && opacity.at(y + 1, x) > 0.5)) continue;
            const Vec3 p = backproject(cam, x, y, depth.at(y, x));
            const Vec3 px1 = backproject(cam, x + 1, y, depth.at(y, x + 1));
            const Vec3 py1 = backproject(cam, x, y + 1, depth.at(y + 1, x));
            const Vec3 tx = px1 - p;
            const Vec3 ty = py1 - p;
            const Vec3 c = tx.cross(ty);
            const double n = c.norm();
            if (n < 1e-14) continue;
            const Vec3 nd = c / n;
            const Vec3 nr(normal.at(y, x, 0), normal.at(y, x, 1), normal.at(y, x, 2));
            // d/dN: -nd
            for (int ch = 0; ch < 3; ++ch) g_normal.at(y, x, ch) += -s * nd[ch];
            // d/dc through the normalization, then the cross product.
            const Vec3 g_c = -s * (nr - nd * nd.dot(nr)) / n;
            const Vec3 g_tx = ty.cross(g_c);
            const Vec3 g_ty = g_c.cross(tx);
            // P(r) = depth(r) * ray(r): dP/ddepth = ray.
            g_depth.at(y, x + 1) += g_tx.dot(cam.ray_dir(x + 1.5, y + 0.5));
            g_depth.at(y + 1, x) += g_ty.dot(cam.ray_dir(x + 0.5, y + 1.5));
            g_depth.at(y, x) += -(g_tx + g_ty).dot(cam.ray_dir(x + 0.5, y + 0.5));
        }
    }
}

// ---------------------------------------------------------------------------
// Opacity / mask / total
// ---------------------------------------------------------------------------

double opacity_loss(std::span<const double> opacity_logits) {
    if (opacity_logits.empty()) return 0.0;
    double total = 0.0;
    for (const double l : opacity_logits) {
        const double o = sigmoid(l);
        total += std::min(o, 1.0 - o);
    }
    return total / static_cast<double>(opacity_logits.size());
}

void opacity_loss_backward(std::span<const double> opacity_logits, double upstream, std::span<double> g_logits) {
    if (opacity_logits.empty()) return;
    if (g_logits.size() != opacity_logits.size()) throw LengthMismatch("opacity_loss_backward");
    const double s = upstream / static_cast<double>(opacity_logits.size());
    for (std::size_t i = 0; i < opacity_logits.size(); ++i) {
        const double o = sigmoid(opacity_logits[i]);
        g_logits[i] += (o < 0.5 ? s : -s) * o * (1.0 - o);
    }
}

double mask_loss(const ImageD& opacity_map, const ImageD& gt_mask) {
    require_same_shape(opacity_map, gt_mask, "mask_loss");
    double total = 0.0;
    for (std::size_t i = 0; i < opacity_map.size(); ++i) total += std::abs(opacity_map.raw()[i] - gt_mask.raw()[i]);
    return total / static_cast<double>(opacity_map.size());
}

void mask_loss_backward(const ImageD& opacity_map, const ImageD& gt_mask, double upstream, ImageD& g_opacity) {
    require_same_shape(opacity_map, gt_mask, "mask_loss_backward");
    const double s = upstream / static_cast<double>(opacity_map.size());
    for (std::size_t i = 0; i < opacity_map.size(); ++i) {
        const double d = opacity_map.raw()[i] - gt_mask.raw()[i];
        g_opacity.raw()[i] += d > 0 ? s : (d < 0 ? -s : 0.0);
    }
}

double total_loss(const LossTerms& t, const LossWeights& w, bool coarse_stage) {
    double total;
    if (coarse_stage) {
        total = t.photometric + w.mask * t.mask;
    } else {
        total = t.photometric + w.temporal * t.temporal + w.depth_normal * t.depth_normal + w.opacity * t.opacity +
                w.mask * t.mask;
    }
    if (!std::isfinite(total)) throw NonFiniteLoss("total_loss: non-finite loss value");
    return total;
}

double psnr(const ImageD& a, const ImageD& b) {
    require_same_shape(a, b, "psnr");
    double mse = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.raw()[i] - b.raw()[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.size());
    if (mse <= 0.0) return 100.0;
    return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

}  // namespace dynsurf
