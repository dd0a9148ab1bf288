#include "dynsurf/surfel.hpp"

namespace dynsurf {

void SurfelCloud::push_back(const Surfel& s) {
    if (s.sh.size() != static_cast<std::size_t>(sh_coeffs()) * 3)
        throw DegreeMismatch("surfel sh coefficient count does not match cloud degree");
    center.push_back(s.center);
    rotation.push_back(s.rotation);
    log_scale.push_back(s.log_scale);
    opacity_logit.push_back(s.opacity_logit);
    sh.insert(sh.end(), s.sh.begin(), s.sh.end());
    ++revision;
}

Surfel SurfelCloud::get(std::size_t i) const {
    Surfel s;
    s.center = center[i];
    s.rotation = rotation[i];
    s.log_scale = log_scale[i];
    s.opacity_logit = opacity_logit[i];
    s.sh.assign(sh_ptr(i), sh_ptr(i) + sh_coeffs() * 3);
    return s;
}

void SurfelCloud::normalize_rotations() {
    for (auto& q : rotation) q.normalize();
    ++revision;
}

void SurfelCloud::check_consistent() const {
    const std::size_t n = center.size();
    if (rotation.size() != n || log_scale.size() != n || opacity_logit.size() != n ||
        sh.size() != n * sh_coeffs() * 3)
        throw LengthMismatch("surfel cloud parallel arrays disagree in length");
}

void SurfelCloud::filter(const std::vector<std::uint8_t>& keep) {
    if (keep.size() != size()) throw LengthMismatch("filter mask length mismatch");
    std::size_t w = 0;
    const int k3 = sh_coeffs() * 3;
    for (std::size_t i = 0; i < keep.size(); ++i) {
        if (!keep[i]) continue;
        if (w != i) {
            center[w] = center[i];
            rotation[w] = rotation[i];
            log_scale[w] = log_scale[i];
            opacity_logit[w] = opacity_logit[i];
            std::copy(sh.begin() + i * k3, sh.begin() + (i + 1) * k3, sh.begin() + w * k3);
        }
        ++w;
    }
    center.resize(w);
    rotation.resize(w);
    log_scale.resize(w);
    opacity_logit.resize(w);
    sh.resize(w * k3);
    ++revision;
}

namespace {
constexpr double kC0 = 0.28209479177387814;
constexpr double kC1 = 0.48860251190291992;
constexpr double kC2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                           -1.0925484305920792, 0.5462742152960396};
}  // namespace

void sh_basis(int degree, const Vec3& d, double* b) {
    b[0] = kC0;
    if (degree < 1) return;
    const double x = d[0], y = d[1], z = d[2];
    b[1] = -kC1 * y;
    b[2] = kC1 * z;
    b[3] = -kC1 * x;
    if (degree < 2) return;
    b[4] = kC2[0] * x * y;
    b[5] = kC2[1] * y * z;
    b[6] = kC2[2] * (2.0 * z * z - x * x - y * y);
    b[7] = kC2[3] * x * z;
    b[8] = kC2[4] * (x * x - y * y);
}

void sh_basis_grad(int degree, const Vec3& d, Vec3* g) {
    g[0] = Vec3::Zero();
    if (degree < 1) return;
    const double x = d[0], y = d[1], z = d[2];
    g[1] = Vec3(0, -kC1, 0);
    g[2] = Vec3(0, 0, kC1);
    g[3] = Vec3(-kC1, 0, 0);
    if (degree < 2) return;
    g[4] = kC2[0] * Vec3(y, x, 0);
    g[5] = kC2[1] * Vec3(0, z, y);
    g[6] = kC2[2] * Vec3(-2 * x, -2 * y, 4 * z);
    g[7] = kC2[3] * Vec3(z, 0, x);
    g[8] = kC2[4] * Vec3(2 * x, -2 * y, 0);
}

Vec3 sh_eval(int degree, std::span<const double> coeffs, const Vec3& view_dir) {
    const int n = sh_coeff_count(degree);
    if (coeffs.size() != static_cast<std::size_t>(n) * 3)
        throw DegreeMismatch("sh_eval: coefficient count does not match degree");
    double b[9];
    sh_basis(degree, view_dir, b);
    Vec3 rgb = Vec3::Zero();
    for (int k = 0; k < n; ++k)
        for (int c = 0; c < 3; ++c) rgb[c] += b[k] * coeffs[k * 3 + c];
    return rgb.cwiseMax(0.0);
}

Vec3 sh_eval_backward(int degree, std::span<const double> coeffs, const Vec3& view_dir, const Vec3& g_rgb,
                      double* g_coeffs) {
    const int n = sh_coeff_count(degree);
    if (coeffs.size() != static_cast<std::size_t>(n) * 3)
        throw DegreeMismatch("sh_eval_backward: coefficient count does not match degree");
    double b[9];
    Vec3 bg[9];
    sh_basis(degree, view_dir, b);
    sh_basis_grad(degree, view_dir, bg);
    Vec3 raw = Vec3::Zero();
    for (int k = 0; k < n; ++k)
        for (int c = 0; c < 3; ++c) raw[c] += b[k] * coeffs[k * 3 + c];
    Vec3 g_dir = Vec3::Zero();
    for (int c = 0; c < 3; ++c) {
        if (raw[c] < 0.0) continue;  // clamped channel
        for (int k = 0; k < n; ++k) {
            g_coeffs[k * 3 + c] += b[k] * g_rgb[c];
            g_dir += bg[k] * coeffs[k * 3 + c] * g_rgb[c];
        }
    }
    return g_dir;
}

std::optional<ScreenProjection> project_to_screen(const Vec3& center, const Vec4& q, const Vec2& scale,
                                                  const CameraModel& cam) {
    const Vec3 pc = cam.to_camera(center);
    if (!(pc.z() > kNearPlane)) return std::nullopt;  // BehindCamera

    ScreenProjection out;
    const double inv_z = 1.0 / pc.z();
    out.mean2d = Vec2(cam.fx * pc.x() * inv_z + cam.cx, cam.fy * pc.y() * inv_z + cam.cy);
    out.depth_at_center = pc.z();

    // World covariance of the flattened Gaussian: R diag(s1^2, s2^2, 0) R^T.
    const Mat3 rot = quat_to_rotmat(q);
    const Vec3 a0 = rot.col(0) * scale[0];
    const Vec3 a1 = rot.col(1) * scale[1];
    const Mat3 cov_w = a0 * a0.transpose() + a1 * a1.transpose();
    const Mat3 cov_c = cam.R * cov_w * cam.R.transpose();

    Eigen::Matrix<double, 2, 3> J;
    J << cam.fx * inv_z, 0, -cam.fx * pc.x() * inv_z * inv_z,
        0, cam.fy * inv_z, -cam.fy * pc.y() * inv_z * inv_z;
    out.cov2d = J * cov_c * J.transpose();
    out.cov2d(0, 0) += kCovDilation;
    out.cov2d(1, 1) += kCovDilation;
    return out;
}

}  // namespace dynsurf
