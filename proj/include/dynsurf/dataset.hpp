#pragma once

#include <map>

#include "dynsurf/camera.hpp"
#include "dynsurf/flow.hpp"
#include "dynsurf/image.hpp"

namespace dynsurf {

// One frame's worth of multi-view inputs. Flow fields are present for
// frames >= 1 when the dataset ships ground-truth flow.
struct FrameBundle {
    int frame_index = 0;
    std::vector<ImageD> images;  // linear RGB, one per view
    std::vector<ImageD> masks;   // H x W x 1, values in {0, 1}
};

struct SequenceConfig {
    int frames = 0;
    int views = 0;
    int width = 0, height = 0;
    int sh_degree = 1;
    std::string flow_provider = "synthetic-gt";
    std::uint64_t seed = 1;
    std::string dataset_dir;   // where images/masks/cameras live
    std::string output_dir;
    std::vector<int> heldout_views;    // excluded from training, used for eval
    Vec3 scene_box_lo = Vec3(-1, -1, -1);
    Vec3 scene_box_hi = Vec3(1, 1, 1);
    std::string init_points_file;      // optional sparse frame-0 points

    int static_iters = 7000;
    bool keep_last_k_enabled = false;
    int keep_last_k = 0;

    double scene_extent() const { return 0.5 * (scene_box_hi - scene_box_lo).norm(); }
    double scene_diag() const { return (scene_box_hi - scene_box_lo).norm(); }
    std::vector<int> training_views() const;
    void validate() const;
};

// key = value config file; '#' starts a comment. Unknown keys throw.
SequenceConfig load_sequence_config(const std::string& dataset_dir);
void apply_config_override(SequenceConfig& cfg, const std::string& key, const std::string& value);
void write_sequence_config(const SequenceConfig& cfg, const std::string& path);

// cameras.txt: one line per view:
//   view_id width height fx fy cx cy r00 r01 r02 tx r10 r11 r12 ty r20 r21 r22 tz
// (world-to-camera 3x4, row-major). Throws CalibrationParse on malformed
// lines or non-orthonormal rotations.
std::vector<CameraModel> load_cameras(const std::string& path);
void write_cameras(const std::vector<CameraModel>& cams, const std::string& path);

// Streaming loader: only frame t's files are ever touched by load_frame(t),
// preserving incremental causality.
class DatasetLoader {
public:
    explicit DatasetLoader(const SequenceConfig& cfg);
    const std::vector<CameraModel>& cameras() const { return cameras_; }
    const SequenceConfig& config() const { return cfg_; }
    FrameBundle load_frame(int t) const;  // throws MissingFile / ResolutionMismatch

    static std::string image_path(const std::string& dir, int frame, int view);
    static std::string mask_path(const std::string& dir, int frame, int view);

private:
    SequenceConfig cfg_;
    std::vector<CameraModel> cameras_;
};

// Sparse init points: "x y z r g b" per line (linear color in [0,1]).
struct SeedPoints {
    std::vector<Vec3> positions;
    std::vector<Vec3> colors;
};
SeedPoints load_seed_points(const std::string& path);
void write_seed_points(const SeedPoints& pts, const std::string& path);

}  // namespace dynsurf
