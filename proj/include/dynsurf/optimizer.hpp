#pragma once

#include "dynsurf/losses.hpp"
#include "dynsurf/rasterizer.hpp"
#include "dynsurf/surfel.hpp"

namespace dynsurf {

struct AdamParams {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-15;
};

// Flat-array Adam with structural edit support (prune / append rows).
class AdamState {
public:
    void init(std::size_t n) {
        m_.assign(n, 0.0);
        v_.assign(n, 0.0);
        t_ = 0;
    }
    std::size_t size() const { return m_.size(); }
    void begin_step() { ++t_; }

    // Single-element update; begin_step() must have been called this step.
    inline void update(std::size_t i, double* param, double grad, double lr, const AdamParams& p) {
        m_[i] = p.beta1 * m_[i] + (1.0 - p.beta1) * grad;
        v_[i] = p.beta2 * v_[i] + (1.0 - p.beta2) * grad * grad;
        const double mhat = m_[i] / (1.0 - std::pow(p.beta1, static_cast<double>(t_)));
        const double vhat = v_[i] / (1.0 - std::pow(p.beta2, static_cast<double>(t_)));
        *param -= lr * mhat / (std::sqrt(vhat) + p.eps);
    }

    void step(double* params, const double* grads, std::size_t n, double lr, const AdamParams& p) {
        begin_step();
        const double bc1 = 1.0 - std::pow(p.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(p.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < n; ++i) {
            m_[i] = p.beta1 * m_[i] + (1.0 - p.beta1) * grads[i];
            v_[i] = p.beta2 * v_[i] + (1.0 - p.beta2) * grads[i] * grads[i];
            params[i] -= lr * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + p.eps);
        }
    }

    void filter_rows(const std::vector<std::uint8_t>& keep, int stride);
    void append_rows(std::size_t count, int stride) {
        m_.resize(m_.size() + count * stride, 0.0);
        v_.resize(v_.size() + count * stride, 0.0);
    }
    void zero_row(std::size_t row, int stride) {
        for (int k = 0; k < stride; ++k) m_[row * stride + k] = v_[row * stride + k] = 0.0;
    }
    std::int64_t step_count() const { return t_; }
    double moment1(std::size_t i) const { return m_[i]; }
    double moment2(std::size_t i) const { return v_[i]; }

private:
    std::vector<double> m_, v_;
    std::int64_t t_ = 0;
};

// Per-parameter-group Adam over a surfel cloud. Owns the optimizer moments so
// densification and pruning can keep them aligned with the cloud arrays.
class CloudOptimizer {
public:
    CloudOptimizer(SurfelCloud& cloud, const TrainSchedule& sched, double scene_extent);

    // Applies one step with the schedule's learning rates (position lr decays
    // over total_iters) and renormalizes quaternions afterwards.
    void step(const CloudGrads& grads, int iter, int total_iters);

    void prune(const std::vector<std::uint8_t>& keep);
    void append(std::size_t n_new);
    void zero_position_state(std::size_t i) { position_.zero_row(i, 3); }

    // Clamps every opacity so sigmoid <= cap and clears the opacity moments.
    void reset_opacities(double cap = 0.01);

    SurfelCloud& cloud() { return *cloud_; }
    double scene_extent() const { return scene_extent_; }

private:
    SurfelCloud* cloud_;
    const TrainSchedule* sched_;
    double scene_extent_;
    AdamParams params_;
    AdamState position_, rotation_, log_scale_, opacity_, sh_dc_, sh_rest_;
};

}  // namespace dynsurf
