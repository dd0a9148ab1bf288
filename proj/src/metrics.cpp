#include "dynsurf/metrics.hpp"

#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace dynsurf {

QualityScore eval_metrics(const ImageD& rendered, const ImageD& gt) {
    require_same_shape(rendered, gt, "eval_metrics");
    return {psnr(rendered, gt), ssim(rendered, gt)};
}

void write_metrics_csv(const std::vector<MetricsRecord>& rows, const std::vector<int>& heldout_ids,
                       const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("write_metrics_csv: cannot open " + path);
    std::fprintf(f, "frame,surfels,coarse_s,fine_s,total_s");
    for (const int v : heldout_ids) std::fprintf(f, ",psnr_v%d", v);
    for (const int v : heldout_ids) std::fprintf(f, ",ssim_v%d", v);
    std::fprintf(f, ",consec_psnr,consec_ssim,consec_normal_mse\n");
    for (const auto& r : rows) {
        std::fprintf(f, "%d,%zu,%.17g,%.17g,%.17g", r.frame, r.surfels, r.coarse_s, r.fine_s, r.total_s);
        for (const double v : r.view_psnr) std::fprintf(f, ",%.17g", v);
        for (const double v : r.view_ssim) std::fprintf(f, ",%.17g", v);
        std::fprintf(f, ",%.17g,%.17g,%.17g\n", r.consec_psnr, r.consec_ssim, r.consec_normal_mse);
    }
    if (std::fclose(f) != 0) throw IoError("write_metrics_csv: write failure on " + path);
}

std::vector<MetricsRecord> read_metrics_csv(const std::string& path, std::size_t* n_heldout) {
    std::ifstream in(path);
    if (!in) throw MissingFile("read_metrics_csv: cannot open " + path);
    std::string header;
    if (!std::getline(in, header)) throw IoError("read_metrics_csv: empty file " + path);
    std::size_t heldout = 0;
    {
        std::istringstream hs(header);
        std::string col;
        while (std::getline(hs, col, ','))
            if (col.rfind("psnr_v", 0) == 0) ++heldout;
    }
    if (n_heldout) *n_heldout = heldout;
    std::vector<MetricsRecord> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (cells.size() != 5 + 2 * heldout + 3) throw IoError("read_metrics_csv: malformed row in " + path);
        MetricsRecord r;
        std::size_t k = 0;
        r.frame = std::stoi(cells[k++]);
        r.surfels = std::stoull(cells[k++]);
        r.coarse_s = std::stod(cells[k++]);
        r.fine_s = std::stod(cells[k++]);
        r.total_s = std::stod(cells[k++]);
        for (std::size_t v = 0; v < heldout; ++v) r.view_psnr.push_back(std::stod(cells[k++]));
        for (std::size_t v = 0; v < heldout; ++v) r.view_ssim.push_back(std::stod(cells[k++]));
        r.consec_psnr = std::stod(cells[k++]);
        r.consec_ssim = std::stod(cells[k++]);
        r.consec_normal_mse = std::stod(cells[k++]);
        rows.push_back(std::move(r));
    }
    return rows;
}

void write_metrics_summary(const std::vector<MetricsRecord>& rows, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("write_metrics_summary: cannot open " + path);
    if (rows.empty()) {
        std::fprintf(f, "no frames\n");
        std::fclose(f);
        return;
    }
    double psnr_sum = 0, ssim_sum = 0, time_sum = 0;
    std::size_t psnr_n = 0;
    for (const auto& r : rows) {
        for (const double v : r.view_psnr) {
            psnr_sum += v;
            ++psnr_n;
        }
        for (const double v : r.view_ssim) ssim_sum += v;
        time_sum += r.total_s;
    }
    std::fprintf(f, "frames: %zu\n", rows.size());
    std::fprintf(f, "mean_heldout_psnr_db: %.4f\n", psnr_n ? psnr_sum / psnr_n : 0.0);
    std::fprintf(f, "mean_heldout_ssim: %.5f\n", psnr_n ? ssim_sum / psnr_n : 0.0);
    std::fprintf(f, "mean_frame_seconds: %.2f\n", time_sum / rows.size());
    std::fprintf(f, "final_surfels: %zu\n", rows.back().surfels);
    std::fclose(f);
}

}  // namespace dynsurf
