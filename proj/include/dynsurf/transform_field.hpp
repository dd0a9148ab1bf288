#pragma once

#include <Eigen/Dense>

#include "dynsurf/losses.hpp"
#include "dynsurf/rasterizer.hpp"
#include "dynsurf/surfel.hpp"

namespace dynsurf {

struct FieldConfig {
    int levels = 8;
    int base_resolution = 16;
    double growth = 1.5;
    int table_size = 1 << 14;  // entries per level
    int features = 2;          // per entry
    int hidden = 64;
    int hidden_layers = 2;
};

struct Se3Delta {
    Vec3 translation = Vec3::Zero();
    Vec4 rotation = Vec4(1, 0, 0, 0);  // unit quaternion delta, world frame
};

// Position -> SE(3) update field: multi-resolution hash encoding feeding a
// shallow MLP with a zero-initialized output layer, so a fresh field is the
// identity transform everywhere.
class TransformField {
public:
    TransformField(const Vec3& box_lo, const Vec3& box_hi, const FieldConfig& cfg, std::uint64_t seed);

    // Builds the field box from cloud centers expanded by 10% per side.
    static TransformField for_cloud(const SurfelCloud& cloud, const FieldConfig& cfg, std::uint64_t seed);

    Se3Delta predict(const Vec3& p) const;

    // Batched forward; keeps intermediates so the backward pass can reuse
    // them.
    struct BatchResult {
        Eigen::MatrixXd encoded;  // N x (levels * features)
        Eigen::MatrixXd h1, h2;   // N x hidden (post-ReLU)
        Eigen::MatrixXd raw;      // N x 7 (3 translation + 4 quaternion delta)
    };
    BatchResult forward_batch(const std::vector<Vec3>& points) const;

    // Accumulates parameter gradients for a batch given gradients w.r.t. the
    // raw 7-vector outputs.
    struct Gradients {
        std::vector<double> table;
        Eigen::MatrixXd w1, w2, w3;
        Eigen::VectorXd b1, b2, b3;
    };
    Gradients zero_gradients() const;
    void backward_batch(const std::vector<Vec3>& points, const BatchResult& fwd, const Eigen::MatrixXd& g_raw,
                        Gradients& grads) const;

    void adam_step(const Gradients& grads, double lr);

    const FieldConfig& config() const { return cfg_; }
    Vec3 box_lo() const { return lo_; }
    Vec3 box_hi() const { return hi_; }

    static Se3Delta delta_from_raw(const Eigen::Matrix<double, 7, 1>& raw);

private:
    friend struct FieldTestAccess;
    FieldConfig cfg_;
    Vec3 lo_, hi_;
    std::vector<int> level_res_;
    std::vector<double> table_;  // levels * table_size * features
    Eigen::MatrixXd w1_, w2_, w3_;
    Eigen::VectorXd b1_, b2_, b3_;

    // Adam state (flattened per block).
    struct Moments {
        std::vector<double> m, v;
    };
    Moments mt_table_, mt_w1_, mt_w2_, mt_w3_, mt_b1_, mt_b2_, mt_b3_;
    std::int64_t adam_t_ = 0;

    void encode_point(const Vec3& p, double* features, int* corner_idx, double* corner_w) const;
};

// cloud' = apply(field, cloud): centers translated and rotations composed
// with the world-frame delta; scales, opacities and SH are copied untouched.
SurfelCloud ntc_apply(const TransformField& field, const SurfelCloud& cloud);

struct CoarseFitReport {
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::vector<double> loss_history;
};

// Coarse stage: optimizes the field for schedule.coarse_iters steps on the
// photometric + mask loss of the transformed previous-frame cloud, sampling
// one shuffled training view per step. Throws DivergenceDetected on a
// non-finite loss.
CoarseFitReport fit_coarse(TransformField& field, const SurfelCloud& cloud_prev,
                           const std::vector<ImageD>& images, const std::vector<ImageD>& masks,
                           const std::vector<CameraModel>& cams, const TrainSchedule& schedule,
                           const Vec3& background, std::uint64_t seed, const RenderConfig& rc = {});

}  // namespace dynsurf
