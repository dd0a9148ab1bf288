#pragma once

#include "dynsurf/losses.hpp"

namespace dynsurf {

// PSNR (capped at 100 dB) and SSIM for a rendered/ground-truth pair.
struct QualityScore {
    double psnr = 0.0;
    double ssim = 0.0;
};
QualityScore eval_metrics(const ImageD& rendered, const ImageD& gt);  // throws ShapeMismatch

struct MetricsRecord {
    int frame = 0;
    std::size_t surfels = 0;
    double coarse_s = 0.0, fine_s = 0.0, total_s = 0.0;
    std::vector<double> view_psnr, view_ssim;  // one per held-out view
    double consec_psnr = -1.0;                 // -1 when no previous frame exists
    double consec_ssim = -1.0;
    double consec_normal_mse = -1.0;
};

// CSV layout (one row per frame, %.17g numbers):
//   frame,surfels,coarse_s,fine_s,total_s,
//   psnr_v<id>...,ssim_v<id>...,consec_psnr,consec_ssim,consec_normal_mse
void write_metrics_csv(const std::vector<MetricsRecord>& rows, const std::vector<int>& heldout_ids,
                       const std::string& path);
std::vector<MetricsRecord> read_metrics_csv(const std::string& path, std::size_t* n_heldout = nullptr);

void write_metrics_summary(const std::vector<MetricsRecord>& rows, const std::string& path);

}  // namespace dynsurf
