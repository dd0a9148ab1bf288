#include "dynsurf/optimizer.hpp"

namespace dynsurf {

void AdamState::filter_rows(const std::vector<std::uint8_t>& keep, int stride) {
    std::size_t w = 0;
    for (std::size_t i = 0; i < keep.size(); ++i) {
        if (!keep[i]) continue;
        if (w != i)
            for (int k = 0; k < stride; ++k) {
                m_[w * stride + k] = m_[i * stride + k];
                v_[w * stride + k] = v_[i * stride + k];
            }
        ++w;
    }
    m_.resize(w * stride);
    v_.resize(w * stride);
}

CloudOptimizer::CloudOptimizer(SurfelCloud& cloud, const TrainSchedule& sched, double scene_extent)
    : cloud_(&cloud), sched_(&sched), scene_extent_(scene_extent) {
    const std::size_t n = cloud.size();
    position_.init(n * 3);
    rotation_.init(n * 4);
    log_scale_.init(n * 2);
    opacity_.init(n);
    sh_dc_.init(n * 3);
    sh_rest_.init(n * (cloud.sh_coeffs() - 1) * 3);
}

void CloudOptimizer::step(const CloudGrads& grads, int iter, int total_iters) {
    SurfelCloud& c = *cloud_;
    const std::size_t n = c.size();
    if (grads.center.size() != n) throw LengthMismatch("optimizer step: gradient size mismatch");

    const double lr_pos = sched_->position_lr(iter, total_iters, scene_extent_);
    const double lr_rot = sched_->lr_rotation;
    const double lr_scale = sched_->lr_log_scale;
    const double lr_op = sched_->lr_opacity;
    const double lr_dc = sched_->lr_sh_dc;
    const double lr_rest = sched_->lr_sh_dc / sched_->lr_sh_rest_div;

    position_.begin_step();
    rotation_.begin_step();
    log_scale_.begin_step();
    opacity_.begin_step();
    sh_dc_.begin_step();
    sh_rest_.begin_step();

    const int kc = c.sh_coeffs();
    for (std::size_t i = 0; i < n; ++i) {
        for (int k = 0; k < 3; ++k) position_.update(i * 3 + k, &c.center[i][k], grads.center[i][k], lr_pos, params_);
        for (int k = 0; k < 4; ++k)
            rotation_.update(i * 4 + k, &c.rotation[i][k], grads.rotation[i][k], lr_rot, params_);
        for (int k = 0; k < 2; ++k)
            log_scale_.update(i * 2 + k, &c.log_scale[i][k], grads.log_scale[i][k], lr_scale, params_);
        opacity_.update(i, &c.opacity_logit[i], grads.opacity_logit[i], lr_op, params_);
        double* shp = c.sh_ptr(i);
        const double* shg = grads.sh.data() + i * kc * 3;
        for (int k = 0; k < 3; ++k) sh_dc_.update(i * 3 + k, shp + k, shg[k], lr_dc, params_);
        for (int k = 3; k < kc * 3; ++k)
            sh_rest_.update(i * (kc - 1) * 3 + (k - 3), shp + k, shg[k], lr_rest, params_);
    }
    c.normalize_rotations();  // also bumps the revision
}

void CloudOptimizer::prune(const std::vector<std::uint8_t>& keep) {
    const int kc = cloud_->sh_coeffs();
    position_.filter_rows(keep, 3);
    rotation_.filter_rows(keep, 4);
    log_scale_.filter_rows(keep, 2);
    opacity_.filter_rows(keep, 1);
    sh_dc_.filter_rows(keep, 3);
    sh_rest_.filter_rows(keep, (kc - 1) * 3);
    cloud_->filter(keep);
}

void CloudOptimizer::append(std::size_t n_new) {
    const int kc = cloud_->sh_coeffs();
    position_.append_rows(n_new, 3);
    rotation_.append_rows(n_new, 4);
    log_scale_.append_rows(n_new, 2);
    opacity_.append_rows(n_new, 1);
    sh_dc_.append_rows(n_new, 3);
    sh_rest_.append_rows(n_new, (kc - 1) * 3);
}

void CloudOptimizer::reset_opacities(double cap) {
    const double max_logit = logit(cap);
    for (auto& l : cloud_->opacity_logit) l = std::min(l, max_logit);
    opacity_.init(cloud_->size());
    ++cloud_->revision;
}

}  // namespace dynsurf
