#pragma once

// Test-only oracles, independent of the implementation paths they check.

#include "dynsurf/rasterizer.hpp"

namespace dynsurf::test {

// All-pairs per-pixel compositor: no tiles, no binning, no shared traversal
// with the production rasterizer. Contributions are gathered per pixel from
// the unsorted surfel list and depth-sorted locally.
RenderMaps brute_force_render(const SurfelCloud& cloud, const CameraModel& cam, const Vec3& background,
                              const RenderConfig& cfg = {});

// Direct windowed-loop SSIM (11x11 Gaussian, sigma 1.5, zero padding), kept
// free of any code shared with the production implementation.
double reference_ssim(const ImageD& a, const ImageD& b);

// Pixels where the forward map is smooth under parameter perturbations of
// size eps: no surfel's 3-sigma cutoff, transmittance floor or parallel-ray
// fallback boundary is close enough to flip. Computed from an independent
// all-pairs sweep.
ImageB fd_safe_pixels(const SurfelCloud& cloud, const CameraModel& cam, const RenderConfig& cfg = {});

// Quadratic map-matching loss with frozen targets and validity masks, used to
// drive finite-difference checks of the rasterizer backward pass.
struct MapLoss {
    ImageD tgt_color, tgt_depth, tgt_normal, tgt_opacity;
    ImageB use_pixel;  // smooth pixels: all terms restricted to these
    ImageB use_geom;   // subset where depth/normal terms apply

    static MapLoss from_reference(const RenderMaps& base, const ImageB& safe, std::uint64_t seed);
    double eval(const RenderMaps& maps) const;
    MapGrads backward(const RenderMaps& maps) const;
};

// Random scene with bounded opacity, separated depths and on-screen centers,
// sized for finite-difference probing.
SurfelCloud random_gradcheck_cloud(int count, int sh_degree, std::uint64_t seed);
CameraModel gradcheck_camera();

struct GradCheckStats {
    double max_rel_err = 0.0;
    int checked = 0;
    std::string worst;
};

// Central finite differences (eps) on every parameter of every surfel versus
// the analytic backward pass. rel err uses an absolute floor.
GradCheckStats run_gradient_check(const SurfelCloud& cloud, const CameraModel& cam, const Vec3& background,
                                  std::uint64_t seed, double eps = 1e-4);

}  // namespace dynsurf::test
