#pragma once

#include <memory>

#include "dynsurf/dataset.hpp"
#include "dynsurf/mesh.hpp"

namespace dynsurf {

// Desk-scale synthetic multi-view video generator. Ground truth is produced
// by an analytic ray tracer (independent of the surfel rasterizer): images,
// masks, exact optical flow from the known 3D motion, per-frame surface
// meshes, and a sparse seed point cloud for frame 0.
struct SynthSpec {
    std::string scene;  // translating-sphere | static-sphere | rotating-cube |
                        // deforming-blob | emerging-object
    int frames = 10;
    int views = 9;       // total cameras, including held-out ones
    int heldout = 1;     // number of held-out views (the last ones)
    int resolution = 64;
    std::uint64_t seed = 1;
    std::string out_dir;
};

// Scene interface used by the generator and by tests that need analytic
// ground truth (true motion, true surfaces).
class AnalyticScene {
public:
    virtual ~AnalyticScene() = default;
    // First intersection along origin + t * dir at `frame`; returns false on
    // miss. obj identifies the hit object for correspondence queries.
    virtual bool raycast(const Vec3& origin, const Vec3& dir, int frame, double* t_hit, int* obj) const = 0;
    virtual Vec3 surface_color(const Vec3& p, int obj, int frame) const = 0;
    // Maps a surface point between frames; false when the object does not
    // exist in the target frame.
    virtual bool correspond(const Vec3& p, int obj, int frame_from, int frame_to, Vec3* p_to) const = 0;
    virtual TriMesh ground_truth_mesh(int frame) const = 0;
    virtual void scene_box(int frames, Vec3* lo, Vec3* hi) const = 0;
    // Uniform-ish surface samples with colors, for seeding frame-0 training.
    virtual SeedPoints sample_surface(int frame, int count, Rng& rng) const = 0;
};

std::unique_ptr<AnalyticScene> make_scene(const std::string& name, std::uint64_t seed);

// Ring of cameras looking at the origin.
std::vector<CameraModel> make_camera_ring(int count, int resolution, double radius, double focal_px);

// Renders one view with 2x2 supersampling over a black background.
ImageD raytrace_image(const AnalyticScene& scene, const CameraModel& cam, int frame);
ImageD raytrace_mask(const AnalyticScene& scene, const CameraModel& cam, int frame);

// Exact flow pair for (frame_t-1, frame_t) in one view; invalid where the
// correspondence does not exist or is occluded.
std::pair<FlowField, FlowField> raytrace_flow(const AnalyticScene& scene, const CameraModel& cam, int frame_t);

// Writes the full dataset under spec.out_dir and returns its config.
SequenceConfig synth_scene(const SynthSpec& spec);  // throws InvalidSpec

}  // namespace dynsurf
