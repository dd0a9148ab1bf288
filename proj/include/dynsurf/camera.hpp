#pragma once

#include "dynsurf/common.hpp"

namespace dynsurf {

// Calibrated pinhole view. Pose is world-to-camera: X_cam = R * X_world + t.
// Pixel (col, row) covers [col, col+1) x [row, row+1); rays are cast through
// pixel centers at (col + 0.5, row + 0.5).
struct CameraModel {
    int width = 0;
    int height = 0;
    double fx = 0, fy = 0, cx = 0, cy = 0;
    Mat3 R = Mat3::Identity();
    Vec3 t = Vec3::Zero();

    Vec3 to_camera(const Vec3& x_world) const { return R * x_world + t; }
    Vec3 to_world(const Vec3& x_cam) const { return R.transpose() * (x_cam - t); }
    Vec3 center() const { return -(R.transpose() * t); }

    // Unnormalized camera-space ray through a pixel-space point, z = 1.
    Vec3 ray_dir(double px, double py) const { return Vec3((px - cx) / fx, (py - cy) / fy, 1.0); }

    void validate() const;
};

CameraModel make_lookat_camera(const Vec3& eye, const Vec3& target, const Vec3& up, double focal_px, int width,
                               int height);

// Throws CalibrationParse when the rotation part deviates from orthonormal
// by more than tol (Frobenius norm of R^T R - I).
void check_orthonormal(const Mat3& R, double tol = 1e-3);

}  // namespace dynsurf
