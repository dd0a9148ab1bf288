#include "dynsurf/camera.hpp"

namespace dynsurf {

void CameraModel::validate() const {
    if (width <= 0 || height <= 0) throw CalibrationParse("camera resolution must be positive");
    if (!(fx > 0.0) || !(fy > 0.0)) throw CalibrationParse("focal lengths must be positive");
    check_orthonormal(R);
}

void check_orthonormal(const Mat3& R, double tol) {
    const double dev = (R.transpose() * R - Mat3::Identity()).norm();
    if (!(dev <= tol))
        throw CalibrationParse("rotation deviates from orthonormal by " + std::to_string(dev));
}

CameraModel make_lookat_camera(const Vec3& eye, const Vec3& target, const Vec3& up, double focal_px, int width,
                               int height) {
    CameraModel cam;
    cam.width = width;
    cam.height = height;
    cam.fx = cam.fy = focal_px;
    cam.cx = width * 0.5;
    cam.cy = height * 0.5;
    const Vec3 fwd = (target - eye).normalized();           // camera +z
    Vec3 right = fwd.cross(up).normalized();                 // camera +x
    if (!right.allFinite() || right.norm() < 0.5) right = fwd.cross(Vec3(0, 0, 1)).normalized();
    const Vec3 down = fwd.cross(right).normalized();         // camera +y (image rows grow down)
    Mat3 r_cw;
    r_cw.row(0) = right.transpose();
    r_cw.row(1) = down.transpose();
    r_cw.row(2) = fwd.transpose();
    cam.R = r_cw;
    cam.t = -(r_cw * eye);
    return cam;
}

}  // namespace dynsurf
