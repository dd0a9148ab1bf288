#pragma once

#include "dynsurf/image.hpp"
#include "dynsurf/surfel.hpp"

namespace dynsurf {

struct RenderConfig {
    int tile_size = 16;
    double alpha_clamp = 0.99;          // alpha ceiling before compositing
    double power_cutoff = 4.5;          // Gaussian evaluated inside the 3-sigma ellipse only
    double transmittance_floor = 1e-6;  // early termination
    double opacity_floor = 1e-3;        // below: depth and normal are zeroed
    double det_cull = 1e-12;            // cull degenerate footprints after dilation
    double parallel_eps = 1e-4;         // |ray_hat . n_hat| below -> center-depth fallback
};

struct RenderMaps {
    ImageD color;    // H x W x 3
    ImageD depth;    // H x W, camera-space z of the ray-disk intersection, alpha-normalized
    ImageD normal;   // H x W x 3, camera space, unit where opacity >= floor, else zero
    ImageD opacity;  // H x W, sum of compositing weights in [0, 1]
    std::uint64_t token = 0;  // forward/backward pairing guard
};

struct MapGrads {
    ImageD d_color;    // H x W x 3
    ImageD d_depth;    // H x W
    ImageD d_normal;   // H x W x 3
    ImageD d_opacity;  // H x W

    static MapGrads zeros(int h, int w) {
        return MapGrads{ImageD(h, w, 3), ImageD(h, w, 1), ImageD(h, w, 3), ImageD(h, w, 1)};
    }
};

// Parameter gradients plus per-view screen-space positional gradients.
struct CloudGrads {
    std::vector<Vec3> center;
    std::vector<Vec4> rotation;
    std::vector<Vec2> log_scale;
    std::vector<double> opacity_logit;
    std::vector<double> sh;                // same layout as SurfelCloud::sh
    std::vector<Vec2> mean2d;              // dL/d(projected center), pixel units
    std::vector<std::uint8_t> visible;     // surfel survived culling in this view

    void resize_like(const SurfelCloud& cloud);
    void set_zero();
    void add_scaled(const CloudGrads& other, double s);
};

RenderMaps render(const SurfelCloud& cloud, const CameraModel& cam, const Vec3& background,
                  const RenderConfig& cfg = {});

// Exact reverse-mode pass. `maps` must come from render() with identical
// inputs (guarded by the token); throws StaleForward otherwise.
CloudGrads render_backward(const SurfelCloud& cloud, const CameraModel& cam, const Vec3& background,
                           const RenderMaps& maps, const MapGrads& d_maps, const RenderConfig& cfg = {});

std::uint64_t render_token(const SurfelCloud& cloud, const CameraModel& cam, const Vec3& background,
                           const RenderConfig& cfg);

}  // namespace dynsurf
