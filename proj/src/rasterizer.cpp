#include "dynsurf/rasterizer.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>

namespace dynsurf {

void CloudGrads::resize_like(const SurfelCloud& cloud) {
    const std::size_t n = cloud.size();
    center.assign(n, Vec3::Zero());
    rotation.assign(n, Vec4::Zero());
    log_scale.assign(n, Vec2::Zero());
    opacity_logit.assign(n, 0.0);
    sh.assign(cloud.sh.size(), 0.0);
    mean2d.assign(n, Vec2::Zero());
    visible.assign(n, 0);
}

void CloudGrads::set_zero() {
    std::fill(center.begin(), center.end(), Vec3::Zero());
    std::fill(rotation.begin(), rotation.end(), Vec4::Zero());
    std::fill(log_scale.begin(), log_scale.end(), Vec2::Zero());
    std::fill(opacity_logit.begin(), opacity_logit.end(), 0.0);
    std::fill(sh.begin(), sh.end(), 0.0);
    std::fill(mean2d.begin(), mean2d.end(), Vec2::Zero());
    std::fill(visible.begin(), visible.end(), 0);
}

void CloudGrads::add_scaled(const CloudGrads& o, double s) {
    for (std::size_t i = 0; i < center.size(); ++i) {
        center[i] += s * o.center[i];
        rotation[i] += s * o.rotation[i];
        log_scale[i] += s * o.log_scale[i];
        opacity_logit[i] += s * o.opacity_logit[i];
        mean2d[i] += s * o.mean2d[i];
        visible[i] = visible[i] || o.visible[i];
    }
    for (std::size_t i = 0; i < sh.size(); ++i) sh[i] += s * o.sh[i];
}

namespace {

// Per-surfel, per-view projection record shared by forward and backward.
struct Splat {
    int idx = -1;
    Vec2 mean;
    Mat2 inv_cov;
    Mat2 cov;
    Vec3 pc;       // camera-space center
    Vec3 nc;       // camera-space unit normal (unflipped)
    double flip = 1.0;  // sign making the rendered normal point away from the camera
    double z = 0;  // camera-space center depth (sort key)
    double opacity = 0;
    Vec3 color;
    double rx = 0, ry = 0;  // 3-sigma screen bounding half-widths
};

struct Prepared {
    std::vector<Splat> splats;            // culled, sorted front-to-back by (z, idx)
    std::vector<std::uint8_t> visible;    // per original index
};

Prepared prepare_splats(const SurfelCloud& cloud, const CameraModel& cam, const RenderConfig& cfg) {
    Prepared out;
    const std::size_t n = cloud.size();
    out.visible.assign(n, 0);
    out.splats.reserve(n);
    const Vec3 cam_center = cam.center();
    const int deg = cloud.sh_degree();
    const int k3 = cloud.sh_coeffs() * 3;
    for (std::size_t i = 0; i < n; ++i) {
        const Vec4 q = cloud.rotation[i].normalized();
        const Vec2 scale = cloud.log_scale[i].array().exp().matrix();
        auto proj = project_to_screen(cloud.center[i], q, scale, cam);
        if (!proj) continue;
        const double det = proj->cov2d.determinant();
        if (!(det > cfg.det_cull)) continue;
        Splat s;
        s.idx = static_cast<int>(i);
        s.mean = proj->mean2d;
        s.cov = proj->cov2d;
        const double inv_det = 1.0 / det;
        s.inv_cov << proj->cov2d(1, 1) * inv_det, -proj->cov2d(0, 1) * inv_det,
            -proj->cov2d(1, 0) * inv_det, proj->cov2d(0, 0) * inv_det;
        s.pc = cam.to_camera(cloud.center[i]);
        s.nc = cam.R * surfel_normal(q);
        s.flip = s.pc.dot(s.nc) >= 0.0 ? 1.0 : -1.0;
        s.z = proj->depth_at_center;
        s.opacity = sigmoid(cloud.opacity_logit[i]);
        const Vec3 dir = (cloud.center[i] - cam_center).normalized();
        s.color = sh_eval(deg, std::span<const double>(cloud.sh.data() + i * k3, k3), dir);
        s.rx = 3.0 * std::sqrt(proj->cov2d(0, 0));
        s.ry = 3.0 * std::sqrt(proj->cov2d(1, 1));
        out.visible[i] = 1;
        out.splats.push_back(std::move(s));
    }
    std::sort(out.splats.begin(), out.splats.end(), [](const Splat& a, const Splat& b) {
        return a.z != b.z ? a.z < b.z : a.idx < b.idx;
    });
    return out;
}

// Tile lists preserve the global front-to-back order.
std::vector<std::vector<int>> bin_tiles(const std::vector<Splat>& splats, int tiles_x, int tiles_y, int tile,
                                        int width, int height) {
    std::vector<std::vector<int>> lists(static_cast<std::size_t>(tiles_x) * tiles_y);
    for (std::size_t s = 0; s < splats.size(); ++s) {
        const Splat& sp = splats[s];
        // Pixel centers are at integer + 0.5; pixel col j intersects the box
        // when j + 0.5 lies within [mean - r, mean + r].
        int x0 = static_cast<int>(std::floor(sp.mean.x() - sp.rx - 0.5));
        int x1 = static_cast<int>(std::floor(sp.mean.x() + sp.rx - 0.5)) + 1;
        int y0 = static_cast<int>(std::floor(sp.mean.y() - sp.ry - 0.5));
        int y1 = static_cast<int>(std::floor(sp.mean.y() + sp.ry - 0.5)) + 1;
        x0 = std::max(x0, 0);
        y0 = std::max(y0, 0);
        x1 = std::min(x1, width - 1);
        y1 = std::min(y1, height - 1);
        if (x0 > x1 || y0 > y1) continue;
        const int tx0 = x0 / tile, tx1 = x1 / tile, ty0 = y0 / tile, ty1 = y1 / tile;
        for (int ty = ty0; ty <= ty1; ++ty)
            for (int tx = tx0; tx <= tx1; ++tx) lists[static_cast<std::size_t>(ty) * tiles_x + tx].push_back(static_cast<int>(s));
    }
    return lists;
}

// Ray-disk intersection depth (camera-space z). Falls back to the center
// depth when the ray is near-parallel to the disk plane.
inline double disk_depth(const Splat& sp, const Vec3& dir, const RenderConfig& cfg, bool* fallback) {
    const double denom = dir.dot(sp.nc);
    if (std::abs(denom) < cfg.parallel_eps * dir.norm()) {
        *fallback = true;
        return sp.pc.z();
    }
    *fallback = false;
    return sp.pc.dot(sp.nc) / denom;
}

struct PixelContrib {
    int list_pos;   // position within the tile list
    double alpha;
    double gauss;
    double transmittance;  // T before this contribution
    double z;
    bool clamped;
    bool fallback;
};

}  // namespace

std::uint64_t render_token(const SurfelCloud& cloud, const CameraModel& cam, const Vec3& background,
                           const RenderConfig& cfg) {
    auto mix = [](std::uint64_t h, std::uint64_t v) { return splitmix64(h ^ splitmix64(v)); };
    auto mixd = [&](std::uint64_t h, double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        return mix(h, bits);
    };
    std::uint64_t h = mix(0x2f6e2b1ULL, cloud.size());
    h = mix(h, cloud.revision);
    h = mix(h, static_cast<std::uint64_t>(cam.width) << 32 | static_cast<std::uint64_t>(cam.height));
    h = mixd(h, cam.fx);
    h = mixd(h, cam.fy);
    h = mixd(h, cam.cx);
    h = mixd(h, cam.cy);
    for (int r = 0; r < 3; ++r) {
        h = mixd(h, cam.t[r]);
        for (int c = 0; c < 3; ++c) h = mixd(h, cam.R(r, c));
    }
    for (int c = 0; c < 3; ++c) h = mixd(h, background[c]);
    h = mixd(h, cfg.alpha_clamp);
    h = mixd(h, cfg.power_cutoff);
    h = mix(h, static_cast<std::uint64_t>(cfg.tile_size));
    if (!cloud.empty()) {
        h = mixd(h, cloud.center.front().x());
        h = mixd(h, cloud.center.back().z());
        h = mixd(h, cloud.opacity_logit.front());
    }
    return h;
}

RenderMaps render(const SurfelCloud& cloud, const CameraModel& cam, const Vec3& background,
                  const RenderConfig& cfg) {
    cloud.check_consistent();
    const int W = cam.width, H = cam.height;
    RenderMaps maps{ImageD(H, W, 3), ImageD(H, W, 1), ImageD(H, W, 3), ImageD(H, W, 1),
                    render_token(cloud, cam, background, cfg)};
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c) maps.color.at(y, x, c) = background[c];
    if (cloud.empty()) return maps;

    const Prepared prep = prepare_splats(cloud, cam, cfg);
    const int tile = cfg.tile_size;
    const int tiles_x = (W + tile - 1) / tile;
    const int tiles_y = (H + tile - 1) / tile;
    const auto lists = bin_tiles(prep.splats, tiles_x, tiles_y, tile, W, H);

    parallel_for(static_cast<std::int64_t>(tiles_x) * tiles_y, [&](std::int64_t t) {
        const int ty = static_cast<int>(t) / tiles_x;
        const int tx = static_cast<int>(t) % tiles_x;
        const auto& list = lists[t];
        const int y1 = std::min((ty + 1) * tile, H);
        const int x1 = std::min((tx + 1) * tile, W);
        for (int y = ty * tile; y < y1; ++y) {
            for (int x = tx * tile; x < x1; ++x) {
                const double px = x + 0.5, py = y + 0.5;
                const Vec3 dir = cam.ray_dir(px, py);
                double transmittance = 1.0;
                double w_acc = 0.0, depth_acc = 0.0;
                Vec3 color_acc = Vec3::Zero(), normal_acc = Vec3::Zero();
                for (const int s : list) {
                    const Splat& sp = prep.splats[s];
                    const Vec2 d(px - sp.mean.x(), py - sp.mean.y());
                    const double power =
                        0.5 * (sp.inv_cov(0, 0) * d.x() * d.x() + sp.inv_cov(1, 1) * d.y() * d.y()) +
                        sp.inv_cov(0, 1) * d.x() * d.y();
                    if (!(power <= cfg.power_cutoff) || power < 0.0) continue;
                    const double gauss = std::exp(-power);
                    const double alpha = std::min(cfg.alpha_clamp, sp.opacity * gauss);
                    bool fallback = false;
                    const double z = disk_depth(sp, dir, cfg, &fallback);
                    const double w = alpha * transmittance;
                    color_acc += sp.color * w;
                    depth_acc += z * w;
                    normal_acc += (sp.flip * w) * sp.nc;
                    w_acc += w;
                    transmittance *= 1.0 - alpha;
                    if (transmittance < cfg.transmittance_floor) break;
                }
                for (int c = 0; c < 3; ++c) maps.color.at(y, x, c) = color_acc[c] + background[c] * transmittance;
                maps.opacity.at(y, x) = w_acc;
                if (w_acc >= cfg.opacity_floor) {
                    maps.depth.at(y, x) = depth_acc / w_acc;
                    const double nn = normal_acc.norm();
                    if (nn > 1e-12)
                        for (int c = 0; c < 3; ++c) maps.normal.at(y, x, c) = normal_acc[c] / nn;
                }
            }
        }
    });
    return maps;
}

CloudGrads render_backward(const SurfelCloud& cloud, const CameraModel& cam, const Vec3& background,
                           const RenderMaps& maps, const MapGrads& d_maps, const RenderConfig& cfg) {
    cloud.check_consistent();
    if (maps.token != render_token(cloud, cam, background, cfg))
        throw StaleForward("render_backward: maps do not match the cloud/camera/config they were rendered from");
    const int W = cam.width, H = cam.height;
    if (d_maps.d_color.height() != H || d_maps.d_color.width() != W)
        throw ShapeMismatch("render_backward: gradient maps have wrong shape");

    CloudGrads grads;
    grads.resize_like(cloud);
    if (cloud.empty()) return grads;

    const Prepared prep = prepare_splats(cloud, cam, cfg);
    for (std::size_t i = 0; i < prep.visible.size(); ++i) grads.visible[i] = prep.visible[i];
    const int tile = cfg.tile_size;
    const int tiles_x = (W + tile - 1) / tile;
    const int tiles_y = (H + tile - 1) / tile;
    const auto lists = bin_tiles(prep.splats, tiles_x, tiles_y, tile, W, H);
    const std::size_t m = prep.splats.size();

    // Per-splat pixel-space accumulators: g_mean(2), g_invcov(3), g_pc(3),
    // g_nc(3), g_color(3), g_opacity(1) = 15 doubles.
    constexpr int kAcc = 15;
    const int workers = std::min<std::int64_t>(worker_count(), std::max<std::int64_t>(1, tiles_x * tiles_y));
    std::vector<std::vector<double>> partial(workers);
    for (auto& p : partial) p.assign(m * kAcc, 0.0);

    parallel_chunks(static_cast<std::int64_t>(tiles_x) * tiles_y, [&](int worker, std::int64_t tb, std::int64_t te) {
        std::vector<double>& acc = partial[worker];
        std::vector<PixelContrib> contribs;
        for (std::int64_t t = tb; t < te; ++t) {
            const int ty = static_cast<int>(t) / tiles_x;
            const int tx = static_cast<int>(t) % tiles_x;
            const auto& list = lists[t];
            if (list.empty()) continue;
            const int y1 = std::min((ty + 1) * tile, H);
            const int x1 = std::min((tx + 1) * tile, W);
            for (int y = ty * tile; y < y1; ++y) {
                for (int x = tx * tile; x < x1; ++x) {
                    const double px = x + 0.5, py = y + 0.5;
                    const Vec3 dir = cam.ray_dir(px, py);

                    // Re-run the forward compositing for this pixel, recording
                    // every contribution.
                    contribs.clear();
                    double transmittance = 1.0;
                    double w_acc = 0.0, depth_acc = 0.0;
                    Vec3 normal_acc = Vec3::Zero();
                    for (const int s : list) {
                        const Splat& sp = prep.splats[s];
                        const Vec2 d(px - sp.mean.x(), py - sp.mean.y());
                        const double power =
                            0.5 * (sp.inv_cov(0, 0) * d.x() * d.x() + sp.inv_cov(1, 1) * d.y() * d.y()) +
                            sp.inv_cov(0, 1) * d.x() * d.y();
                        if (!(power <= cfg.power_cutoff) || power < 0.0) continue;
                        const double gauss = std::exp(-power);
                        const double raw_alpha = sp.opacity * gauss;
                        const double alpha = std::min(cfg.alpha_clamp, raw_alpha);
                        bool fallback = false;
                        const double z = disk_depth(sp, dir, cfg, &fallback);
                        contribs.push_back({s, alpha, gauss, transmittance, z, raw_alpha > cfg.alpha_clamp, fallback});
                        const double w = alpha * transmittance;
                        depth_acc += z * w;
                        normal_acc += (sp.flip * w) * sp.nc;
                        w_acc += w;
                        transmittance *= 1.0 - alpha;
                        if (transmittance < cfg.transmittance_floor) break;
                    }
                    if (contribs.empty()) continue;
                    const double t_end = transmittance;

                    // Upstream gradients for this pixel.
                    const Vec3 gc(d_maps.d_color.at(y, x, 0), d_maps.d_color.at(y, x, 1), d_maps.d_color.at(y, x, 2));
                    const double go = d_maps.d_opacity.at(y, x);
                    double g_w = go;
                    double g_premul_depth = 0.0;
                    Vec3 g_premul_normal = Vec3::Zero();
                    if (w_acc >= cfg.opacity_floor) {
                        const double gd = d_maps.d_depth.at(y, x);
                        g_premul_depth = gd / w_acc;
                        g_w -= gd * depth_acc / (w_acc * w_acc);
                        const double nn = normal_acc.norm();
                        if (nn > 1e-12) {
                            const Vec3 gn(d_maps.d_normal.at(y, x, 0), d_maps.d_normal.at(y, x, 1),
                                          d_maps.d_normal.at(y, x, 2));
                            const Vec3 unit = normal_acc / nn;
                            g_premul_normal = (gn - unit * unit.dot(gn)) / nn;
                        }
                    }
                    const double g_t_end = gc.dot(background);

                    // Reverse sweep with suffix sums of premultiplied payloads.
                    Vec3 suffix_color = Vec3::Zero(), suffix_normal = Vec3::Zero();
                    double suffix_depth = 0.0, suffix_w = 0.0;
                    for (int k = static_cast<int>(contribs.size()) - 1; k >= 0; --k) {
                        const PixelContrib& pc = contribs[k];
                        const Splat& sp = prep.splats[pc.list_pos];
                        const double w = pc.alpha * pc.transmittance;
                        const double one_minus = 1.0 - pc.alpha;
                        const Vec3 n_used = sp.flip * sp.nc;

                        double g_alpha = gc.dot(sp.color * pc.transmittance - suffix_color / one_minus);
                        g_alpha += g_premul_depth * (pc.z * pc.transmittance - suffix_depth / one_minus);
                        g_alpha += g_premul_normal.dot(n_used * pc.transmittance - suffix_normal / one_minus);
                        g_alpha += g_w * (pc.transmittance - suffix_w / one_minus);
                        g_alpha -= g_t_end * t_end / one_minus;

                        double* a = acc.data() + static_cast<std::size_t>(pc.list_pos) * kAcc;
                        // color
                        a[9] += gc.x() * w;
                        a[10] += gc.y() * w;
                        a[11] += gc.z() * w;
                        // depth -> (pc, nc)
                        const double g_z = g_premul_depth * w;
                        if (g_z != 0.0) {
                            if (pc.fallback) {
                                a[7] += g_z;  // g_pc.z
                            } else {
                                const double denom = dir.dot(sp.nc);
                                const double num = sp.pc.dot(sp.nc);
                                const double g_num = g_z / denom;
                                const double g_den = -g_z * num / (denom * denom);
                                a[5] += g_num * sp.nc.x();
                                a[6] += g_num * sp.nc.y();
                                a[7] += g_num * sp.nc.z();
                                a[12] += g_num * sp.pc.x() + g_den * dir.x();
                                a[13] += g_num * sp.pc.y() + g_den * dir.y();
                                a[14] += g_num * sp.pc.z() + g_den * dir.z();
                            }
                        }
                        // normal payload -> g_nc
                        const Vec3 g_n_used = g_premul_normal * w;
                        a[12] += sp.flip * g_n_used.x();
                        a[13] += sp.flip * g_n_used.y();
                        a[14] += sp.flip * g_n_used.z();

                        // alpha -> opacity & Gaussian
                        if (!pc.clamped) {
                            a[8] += g_alpha * pc.gauss;  // dL/d(opacity before sigmoid chain)
                            const double g_gauss = g_alpha * sp.opacity;
                            const double g_power = -pc.gauss * g_gauss;
                            const Vec2 d(px - sp.mean.x(), py - sp.mean.y());
                            const Vec2 ad(sp.inv_cov(0, 0) * d.x() + sp.inv_cov(0, 1) * d.y(),
                                          sp.inv_cov(1, 0) * d.x() + sp.inv_cov(1, 1) * d.y());
                            // d(power)/d(mean) = -A d
                            a[0] += -g_power * ad.x();
                            a[1] += -g_power * ad.y();
                            // d(power)/dA = 0.5 d d^T
                            a[2] += g_power * 0.5 * d.x() * d.x();
                            a[3] += g_power * d.x() * d.y();  // combined off-diagonals
                            a[4] += g_power * 0.5 * d.y() * d.y();
                        }

                        suffix_color += sp.color * w;
                        suffix_depth += pc.z * w;
                        suffix_normal += n_used * w;
                        suffix_w += w;
                    }
                }
            }
        }
    });

    // Reduce worker partials in worker order.
    std::vector<double> acc(m * kAcc, 0.0);
    for (int w = 0; w < workers; ++w)
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += partial[w][i];

    // Unproject per-splat pixel-space gradients to the parameters.
    const Vec3 cam_center = cam.center();
    const int deg = cloud.sh_degree();
    const int k3 = cloud.sh_coeffs() * 3;
    parallel_for(static_cast<std::int64_t>(m), [&](std::int64_t s) {
        const Splat& sp = prep.splats[s];
        const double* a = acc.data() + static_cast<std::size_t>(s) * kAcc;
        const int i = sp.idx;
        const Vec2 g_mean(a[0], a[1]);
        Mat2 g_inv_cov;
        g_inv_cov << a[2], 0.5 * a[3], 0.5 * a[3], a[4];
        Vec3 g_pc(a[5], a[6], a[7]);
        const double g_opacity = a[8];
        const Vec3 g_color(a[9], a[10], a[11]);
        Vec3 g_nc(a[12], a[13], a[14]);

        grads.mean2d[i] = g_mean;

        // inv(cov) -> cov
        const Mat2 g_cov = -(sp.inv_cov * g_inv_cov * sp.inv_cov);

        // cov2d = J Sigma_c J^T + dilation
        const double z_inv = 1.0 / sp.pc.z();
        Eigen::Matrix<double, 2, 3> J;
        J << cam.fx * z_inv, 0, -cam.fx * sp.pc.x() * z_inv * z_inv,
            0, cam.fy * z_inv, -cam.fy * sp.pc.y() * z_inv * z_inv;

        const Vec4 q = cloud.rotation[i].normalized();
        const Mat3 rot = quat_to_rotmat(q);
        const Vec2 scale = cloud.log_scale[i].array().exp().matrix();
        const Vec3 a0 = rot.col(0) * scale[0];
        const Vec3 a1 = rot.col(1) * scale[1];
        const Mat3 cov_w = a0 * a0.transpose() + a1 * a1.transpose();
        const Mat3 cov_c = cam.R * cov_w * cam.R.transpose();

        const Mat3 g_cov_c = J.transpose() * g_cov * J;
        const Eigen::Matrix<double, 2, 3> g_J = 2.0 * (g_cov * J * cov_c);
        // J depends on the camera-space center.
        g_pc.x() += g_J(0, 2) * (-cam.fx * z_inv * z_inv);
        g_pc.y() += g_J(1, 2) * (-cam.fy * z_inv * z_inv);
        g_pc.z() += g_J(0, 0) * (-cam.fx * z_inv * z_inv) + g_J(1, 1) * (-cam.fy * z_inv * z_inv) +
                    g_J(0, 2) * (2.0 * cam.fx * sp.pc.x() * z_inv * z_inv * z_inv) +
                    g_J(1, 2) * (2.0 * cam.fy * sp.pc.y() * z_inv * z_inv * z_inv);

        // mean2d = (fx x / z + cx, fy y / z + cy): same Jacobian J.
        g_pc += J.transpose() * g_mean;

        const Mat3 g_cov_w = cam.R.transpose() * g_cov_c * cam.R;
        const Mat3 g_cov_w_sym = g_cov_w + g_cov_w.transpose();

        // Sigma_w = sum_k s_k^2 r_k r_k^T
        Mat3 g_rot = Mat3::Zero();
        Vec2 g_log_scale;
        for (int k = 0; k < 2; ++k) {
            const Vec3 rk = rot.col(k);
            const double s2 = scale[k] * scale[k];
            const double g_s2 = rk.dot(g_cov_w * rk);
            g_log_scale[k] = g_s2 * 2.0 * s2;  // d s^2 / d log s = 2 s^2
            g_rot.col(k) += s2 * (g_cov_w_sym * rk);
        }

        // nc = camR * (rot * e_z)
        g_rot.col(2) += cam.R.transpose() * g_nc;

        // color = sh(coeffs, normalize(center - cam_center))
        const Vec3 rel = cloud.center[i] - cam_center;
        const Vec3 dir = rel.normalized();
        const Vec3 g_dir = sh_eval_backward(deg, std::span<const double>(cloud.sh.data() + i * k3, k3), dir,
                                            g_color, grads.sh.data() + i * k3);
        Vec3 g_center = normalize_backward(rel, g_dir);

        // pc = camR * center + t
        g_center += cam.R.transpose() * g_pc;
        grads.center[i] = g_center;

        const Vec4 g_qhat = rotmat_grad_to_quat(g_rot, q);
        grads.rotation[i] = normalize_backward(cloud.rotation[i], g_qhat);
        grads.log_scale[i] = g_log_scale;
        const double o = sp.opacity;
        grads.opacity_logit[i] = g_opacity * o * (1.0 - o);
    });
    return grads;
}

}  // namespace dynsurf
