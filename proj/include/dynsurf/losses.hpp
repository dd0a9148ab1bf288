#pragma once

#include <span>

#include "dynsurf/camera.hpp"
#include "dynsurf/image.hpp"

namespace dynsurf {

struct LossWeights {
    double temporal = 0.0;      // lambda_t
    double depth_normal = 0.0;  // lambda_c
    double opacity = 0.0;       // lambda_o
    double mask = 0.0;          // lambda_m
};

// Iteration counts, densification window and weight ramps for both stages.
struct TrainSchedule {
    int coarse_iters = 200;
    int fine_iters = 800;
    int densify_start = 230;
    int densify_end = 600;
    int densify_interval = 30;
    int opacity_reset_interval = 200;

    // Frame-0 static stage.
    int static_iters = 7000;
    int static_densify_start = 500;
    int static_densify_end = 5000;
    int static_densify_interval = 100;

    double ntc_lr = 0.002;

    // Per-group learning rates; position is scaled by the scene extent and
    // decays exponentially to lr_position_final over the stage.
    double lr_position = 1.6e-4;
    double lr_position_final = 1.6e-6;
    double lr_sh_dc = 2.5e-3;
    double lr_sh_rest_div = 20.0;
    double lr_opacity = 0.05;
    double lr_log_scale = 5e-3;
    double lr_rotation = 1e-3;

    double lambda_o = 0.01;
    double lambda_c = 0.02;
    double lambda_m_start = 0.01;
    double lambda_m_end = 0.11;
    double lambda_m_coarse = 0.1;
    double lambda_t_start = 0.04;
    double lambda_t_end = 0.02;

    double densify_grad_threshold = 2e-4;  // view-space units
    double prune_opacity = 0.005;
    double prune_scale_frac = 0.1;  // of the scene bounding-box diagonal
    double cycle_tau_px = 1.0;

    void validate() const;

    // Piecewise-linear, continuous in iter over [0, fine_iters].
    LossWeights fine_weights(int iter) const;
    LossWeights coarse_weights() const;
    double position_lr(int iter, int total_iters, double scene_extent) const;
    bool is_densify_iter(int iter) const;
    bool is_static_densify_iter(int iter) const;
    bool is_opacity_reset_iter(int iter) const;
};

// ---------------------------------------------------------------------------
// SSIM (11x11 Gaussian window, sigma 1.5, standard constants, zero padding,
// averaged over pixels and channels).
// ---------------------------------------------------------------------------

double ssim(const ImageD& a, const ImageD& b);

// d(mean SSIM)/d(a), accumulated into g_a scaled by upstream.
void ssim_backward(const ImageD& a, const ImageD& b, double upstream, ImageD& g_a);

// ---------------------------------------------------------------------------
// Loss terms. Each *_backward accumulates upstream-scaled gradients.
// ---------------------------------------------------------------------------

// 0.8 L1 + 0.2 (1 - SSIM).
double photometric_loss(const ImageD& rendered, const ImageD& target);
void photometric_loss_backward(const ImageD& rendered, const ImageD& target, double upstream, ImageD& g_rendered);

// Mean (1 - N_d . N) over pixels whose full forward-difference stencil has
// opacity > 0.5, with N_d the normal of the back-projected depth surface.
double depth_normal_loss(const ImageD& depth, const ImageD& normal, const ImageD& opacity, const CameraModel& cam);
void depth_normal_loss_backward(const ImageD& depth, const ImageD& normal, const ImageD& opacity,
                                const CameraModel& cam, double upstream, ImageD& g_depth, ImageD& g_normal);

// Binary-encouraging regularizer: mean(min(o, 1 - o)) over surfels.
double opacity_loss(std::span<const double> opacity_logits);
void opacity_loss_backward(std::span<const double> opacity_logits, double upstream, std::span<double> g_logits);

// Mean |opacity_map - gt_mask|.
double mask_loss(const ImageD& opacity_map, const ImageD& gt_mask);
void mask_loss_backward(const ImageD& opacity_map, const ImageD& gt_mask, double upstream, ImageD& g_opacity);

struct LossTerms {
    double photometric = 0;
    double temporal = 0;
    double depth_normal = 0;
    double opacity = 0;
    double mask = 0;
};

// L = L_p + l_t L_t + l_c L_c + l_o L_o + l_m L_m. The coarse stage keeps
// only L_p and the mask term. Throws NonFiniteLoss on non-finite inputs.
double total_loss(const LossTerms& terms, const LossWeights& w, bool coarse_stage);

// ---------------------------------------------------------------------------
// Image quality metrics.
// ---------------------------------------------------------------------------

// 10 log10(1 / MSE) on [0,1] images, capped at 100 dB.
double psnr(const ImageD& a, const ImageD& b);

}  // namespace dynsurf
