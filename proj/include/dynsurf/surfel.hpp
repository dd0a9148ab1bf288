#pragma once

#include <optional>
#include <span>

#include "dynsurf/camera.hpp"
#include "dynsurf/common.hpp"

namespace dynsurf {

// A surfel is a 3D Gaussian whose third scale axis is identically zero: a
// planar elliptical disk with orientation, opacity and view-dependent color.
// Storage is unconstrained: scales as logs, opacity as a logit. Quaternions
// are kept unit-norm by the optimizer step hook and re-normalized at use.
struct Surfel {
    Vec3 center = Vec3::Zero();
    Vec4 rotation = Vec4(1, 0, 0, 0);  // (w, x, y, z)
    Vec2 log_scale = Vec2::Zero();     // two in-plane axes, world units
    double opacity_logit = 0.0;
    std::vector<double> sh;            // [coeff][rgb], (deg+1)^2 * 3
};

inline int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

// Flattened structure-of-arrays scene state. All arrays share one length.
class SurfelCloud {
public:
    SurfelCloud() = default;
    explicit SurfelCloud(int sh_degree) : sh_degree_(sh_degree) {}

    int sh_degree() const { return sh_degree_; }
    int sh_coeffs() const { return sh_coeff_count(sh_degree_); }
    std::size_t size() const { return center.size(); }
    bool empty() const { return center.empty(); }

    std::vector<Vec3> center;
    std::vector<Vec4> rotation;
    std::vector<Vec2> log_scale;
    std::vector<double> opacity_logit;
    std::vector<double> sh;  // size * sh_coeffs * 3, coefficient-major per surfel

    double* sh_ptr(std::size_t i) { return sh.data() + i * sh_coeffs() * 3; }
    const double* sh_ptr(std::size_t i) const { return sh.data() + i * sh_coeffs() * 3; }

    void push_back(const Surfel& s);
    Surfel get(std::size_t i) const;
    void normalize_rotations();
    void check_consistent() const;  // throws LengthMismatch

    // Keeps entries where keep[i] is true, preserving order.
    void filter(const std::vector<std::uint8_t>& keep);

    // Monotone revision counter; bumped by mutating pipeline stages so stale
    // forward/backward pairs can be detected.
    std::uint64_t revision = 0;

private:
    int sh_degree_ = 1;
};

// Disk normal: the rotated local z axis.
inline Vec3 surfel_normal(const Vec4& unit_quat) {
    const double w = unit_quat[0], x = unit_quat[1], y = unit_quat[2], z = unit_quat[3];
    return Vec3(2 * (x * z + w * y), 2 * (y * z - w * x), 1 - 2 * (x * x + y * y));
}

inline Vec3 surfel_normal(const Surfel& s) { return surfel_normal(s.rotation.normalized()); }

// ---------------------------------------------------------------------------
// Spherical harmonics (real basis, 3DGS ordering, no DC offset). Colors are
// clamped to >= 0 after evaluation.
// ---------------------------------------------------------------------------

// Fills basis[0..n) for a unit direction; n = sh_coeff_count(degree) <= 9.
void sh_basis(int degree, const Vec3& dir, double* basis);

// d(basis[k])/d(dir) for the same ordering.
void sh_basis_grad(int degree, const Vec3& dir, Vec3* grad);

// coeffs: coefficient-major [k][rgb]. Throws DegreeMismatch when the span
// size disagrees with the configured degree.
Vec3 sh_eval(int degree, std::span<const double> coeffs, const Vec3& view_dir);

// Backward of sh_eval. Accumulates into g_coeffs (same layout) and returns
// the gradient w.r.t. the (unit) view direction. Channels clamped at zero
// propagate no gradient.
Vec3 sh_eval_backward(int degree, std::span<const double> coeffs, const Vec3& view_dir, const Vec3& g_rgb,
                      double* g_coeffs);

// ---------------------------------------------------------------------------
// Perspective projection of the degenerate 3D covariance (EWA style).
// ---------------------------------------------------------------------------

struct ScreenProjection {
    Vec2 mean2d;          // pixels
    Mat2 cov2d;           // px^2, includes the low-pass dilation term
    double depth_at_center;  // camera-space z of the center
};

inline constexpr double kCovDilation = 0.3;   // px^2 added to the diagonal
inline constexpr double kNearPlane = 0.01;

// Returns nullopt when the center is behind the near plane (surfel culled).
std::optional<ScreenProjection> project_to_screen(const Vec3& center, const Vec4& unit_quat, const Vec2& scale,
                                                  const CameraModel& cam);

inline std::optional<ScreenProjection> project_to_screen(const Surfel& s, const CameraModel& cam) {
    return project_to_screen(s.center, s.rotation.normalized(), s.log_scale.array().exp().matrix(), cam);
}

}  // namespace dynsurf
