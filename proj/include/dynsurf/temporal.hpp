#pragma once

#include "dynsurf/flow.hpp"
#include "dynsurf/image.hpp"

namespace dynsurf {

// Curvature proxy from a normal map: per pixel the Euclidean norm (over the
// three spatial channels) of |forward difference in x| + |forward difference
// in y|, with the last row/column replicated (zero difference there).
ImageD curvature_map(const ImageD& normal_map);

// Mean squared error between the curvature maps of the warped previous-frame
// normals and the current rendered normals over valid pixels. The warped
// branch is a constant target; gradients flow into normal_cur only. An
// all-false mask yields 0 and bumps the warning counter.
double temporal_loss(const ImageD& normal_warped_prev, const ImageD& normal_cur, const ImageB& valid_mask);

void temporal_loss_backward(const ImageD& normal_warped_prev, const ImageD& normal_cur, const ImageB& valid_mask,
                            double upstream, ImageD& g_normal_cur);

std::int64_t temporal_empty_mask_count();
void reset_temporal_empty_mask_count();

}  // namespace dynsurf
