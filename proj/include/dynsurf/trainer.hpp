#pragma once

#include "dynsurf/dataset.hpp"
#include "dynsurf/densify.hpp"
#include "dynsurf/mesh.hpp"
#include "dynsurf/metrics.hpp"
#include "dynsurf/optimizer.hpp"
#include "dynsurf/transform_field.hpp"

namespace dynsurf {

struct TrainOptions {
    bool gradient_aware_densify = true;  // false = conventional clone/split ("no-gd")
    bool temporal_consistency = true;    // false = "no-tc"
    bool resume = false;
    int max_frames = -1;  // < 0: all frames
    bool write_train_view_maps = false;
    std::string flow_provider_override;
    Vec3 background = Vec3::Zero();
    TrainSchedule schedule;
    RenderConfig render;
    PoissonParams poisson;
    bool continue_on_frame_error = false;
};

// Binary cloud checkpoint, bit-exact doubles.
void save_cloud(const SurfelCloud& cloud, const std::string& path);
SurfelCloud load_cloud(const std::string& path);

// Frame-0 static reconstruction: seeded from the dataset's sparse points when
// available (else 5k random points in the scene box), conventional
// densification on the static schedule. Throws DivergenceDetected.
SurfelCloud train_frame0(const DatasetLoader& loader, const FrameBundle& frame0, const TrainOptions& opt);

struct FrameOutputs {
    SurfelCloud cloud;
    std::vector<RenderMaps> train_renders;    // per training view, final state
    std::vector<RenderMaps> heldout_renders;  // per held-out view
    MetricsRecord metrics;
    CoarseFitReport coarse_report;
    std::vector<DensifyReport> densify_reports;
};

// One incremental step: coarse SE(3) alignment of the previous cloud, then
// fine optimization with densification, pruning and the temporal loss wired
// to the previous frame's rendered normals through the flow provider.
FrameOutputs train_frame_t(const SurfelCloud& cloud_prev, const std::vector<RenderMaps>& prev_train_renders,
                           const FrameBundle& frame_prev, const FrameBundle& frame, const DatasetLoader& loader,
                           FlowProvider& flow, const TrainOptions& opt);

// Full pipeline: ingests the dataset, trains frame by frame, and writes per
// frame a cloud checkpoint, held-out renders (PNG) with depth/normal maps,
// the fused point cloud, a Poisson mesh, and a metrics row.
void run_sequence(const SequenceConfig& cfg, const TrainOptions& opt);

std::string frame_dir(const std::string& out_dir, int frame);

}  // namespace dynsurf
