#include "dynsurf/flow.hpp"

#include "dynsurf/image_io.hpp"

namespace dynsurf {

std::pair<FlowField, FlowField> flow_forward_backward(FlowProvider& provider, int view, const ImageD& img_prev,
                                                      const ImageD& img_cur, int frame_t) {
    if (img_prev.height() != img_cur.height() || img_prev.width() != img_cur.width())
        throw ResolutionMismatch("flow_forward_backward: image resolutions differ");
    auto [fwd, bwd] = provider.compute(img_prev, img_cur, frame_t, view);
    fwd.sanitize();
    bwd.sanitize();
    return {std::move(fwd), std::move(bwd)};
}

namespace {

ImageD to_gray(const ImageD& img) {
    ImageD g(img.height(), img.width(), 1);
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) {
            double acc = 0.0;
            for (int c = 0; c < img.channels(); ++c) acc += img.at(y, x, c);
            g.at(y, x) = acc / img.channels();
        }
    return g;
}

class BlockMatchingProvider final : public FlowProvider {
public:
    static constexpr int kPatch = 8;
    static constexpr int kRadius = 8;
    static constexpr double kConfidenceFloor = 0.6;

    std::string name() const override { return "block-matching"; }

    std::pair<FlowField, FlowField> compute(const ImageD& img_prev, const ImageD& img_cur, int, int) override {
        const ImageD prev = to_gray(img_prev), cur = to_gray(img_cur);
        FlowField bwd = match(cur, prev);   // t grid -> position in t-1
        FlowField fwd = match(prev, cur);   // t-1 grid -> position in t
        return {std::move(fwd), std::move(bwd)};
    }

private:
    // For each pixel of `from`, the best NCC match in `to`.
    static FlowField match(const ImageD& from, const ImageD& to) {
        const int H = from.height(), W = from.width();
        FlowField field(H, W);
        field.valid.fill(0);
        constexpr int r0 = kPatch / 2;  // patch spans [-r0, r0-1] around the pixel
        parallel_for(H, [&](std::int64_t yy) {
            const int y = static_cast<int>(yy);
            for (int x = 0; x < W; ++x) {
                double best = -2.0;
                int best_dx = 0, best_dy = 0;
                bool textured = false;
                for (int dy = -kRadius; dy <= kRadius; ++dy) {
                    for (int dx = -kRadius; dx <= kRadius; ++dx) {
                        double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
                        int count = 0;
                        for (int py = -r0; py < r0; ++py) {
                            for (int px = -r0; px < r0; ++px) {
                                const int ay = y + py, ax = x + px;
                                const int by = ay + dy, bx = ax + dx;
                                if (ay < 0 || ax < 0 || ay >= H || ax >= W) continue;
                                if (by < 0 || bx < 0 || by >= H || bx >= W) continue;
                                const double a = from.at(ay, ax), b = to.at(by, bx);
                                sa += a;
                                sb += b;
                                saa += a * a;
                                sbb += b * b;
                                sab += a * b;
                                ++count;
                            }
                        }
                        if (count < kPatch * kPatch / 2) continue;
                        const double va = saa - sa * sa / count;
                        const double vb = sbb - sb * sb / count;
                        if (va < 1e-8 || vb < 1e-8) continue;  // no matchable structure
                        textured = true;
                        const double ncc = (sab - sa * sb / count) / std::sqrt(va * vb);
                        if (ncc > best) {
                            best = ncc;
                            best_dx = dx;
                            best_dy = dy;
                        }
                    }
                }
                if (textured && best >= kConfidenceFloor) {
                    field.vectors.at(y, x, 0) = best_dx;
                    field.vectors.at(y, x, 1) = best_dy;
                    field.valid.at(y, x) = 1;
                }
            }
        });
        return field;
    }
};

class SyntheticGtProvider final : public FlowProvider {
public:
    explicit SyntheticGtProvider(std::string dir) : dir_(std::move(dir)) {}
    std::string name() const override { return "synthetic-gt"; }

    std::pair<FlowField, FlowField> compute(const ImageD& img_prev, const ImageD&, int frame_t, int view) override {
        if (frame_t <= 0) {
            FlowField zero(img_prev.height(), img_prev.width());
            return {zero, zero};
        }
        FlowField fwd = read_flow(flow_path(dir_, frame_t, view, /*forward=*/true));
        FlowField bwd = read_flow(flow_path(dir_, frame_t, view, /*forward=*/false));
        return {std::move(fwd), std::move(bwd)};
    }

private:
    std::string dir_;
};

}  // namespace

std::unique_ptr<FlowProvider> make_block_matching_provider() { return std::make_unique<BlockMatchingProvider>(); }

std::unique_ptr<FlowProvider> make_synthetic_gt_provider(const std::string& dataset_dir) {
    return std::make_unique<SyntheticGtProvider>(dataset_dir);
}

std::unique_ptr<FlowProvider> make_flow_provider(const std::string& id, const std::string& dataset_dir) {
    if (id == "synthetic-gt") return make_synthetic_gt_provider(dataset_dir);
    if (id == "block-matching") return make_block_matching_provider();
    throw InvalidSpec("unknown flow provider: " + id);
}

ImageB cycle_confidence_mask(const FlowField& fwd, const FlowField& bwd, double tau_px) {
    if (fwd.height() != bwd.height() || fwd.width() != bwd.width())
        throw ResolutionMismatch("cycle_confidence_mask: flow resolutions differ");
    const int H = bwd.height(), W = bwd.width();
    ImageB mask(H, W, 1, 0);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            if (!bwd.valid.at(y, x)) continue;
            const double bx = bwd.vectors.at(y, x, 0), by = bwd.vectors.at(y, x, 1);
            const double sx = x + bx, sy = y + by;
            double fv[2];
            if (!bilinear_sample(fwd.vectors, sx, sy, fv)) continue;
            // All four forward taps must be valid.
            const int x0 = std::min(std::max(static_cast<int>(std::floor(sx)), 0), W - 1);
            const int y0 = std::min(std::max(static_cast<int>(std::floor(sy)), 0), H - 1);
            const int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
            if (!(fwd.valid.at(y0, x0) && fwd.valid.at(y0, x1) && fwd.valid.at(y1, x0) && fwd.valid.at(y1, x1)))
                continue;
            const double rx = bx + fv[0], ry = by + fv[1];
            if (std::sqrt(rx * rx + ry * ry) <= tau_px) mask.at(y, x) = 1;
        }
    }
    return mask;
}

std::pair<ImageD, ImageB> warp_by_flow(const ImageD& map_prev, const FlowField& bwd, const ImageB& mask,
                                       bool renormalize_vectors) {
    if (map_prev.height() != bwd.height() || map_prev.width() != bwd.width())
        throw ResolutionMismatch("warp_by_flow: map/flow resolutions differ");
    if (mask.height() != bwd.height() || mask.width() != bwd.width())
        throw ResolutionMismatch("warp_by_flow: mask resolution differs");
    const int H = map_prev.height(), W = map_prev.width(), C = map_prev.channels();
    ImageD out(H, W, C, 0.0);
    ImageB out_mask(H, W, 1, 0);
    std::vector<double> sample(C);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            if (!mask.at(y, x) || !bwd.valid.at(y, x)) continue;
            const double sx = x + bwd.vectors.at(y, x, 0);
            const double sy = y + bwd.vectors.at(y, x, 1);
            if (!bilinear_sample(map_prev, sx, sy, sample.data())) continue;
            if (renormalize_vectors && C == 3) {
                const double n = std::sqrt(sample[0] * sample[0] + sample[1] * sample[1] + sample[2] * sample[2]);
                if (n > 1e-6)
                    for (int c = 0; c < C; ++c) sample[c] /= n;
            }
            for (int c = 0; c < C; ++c) out.at(y, x, c) = sample[c];
            out_mask.at(y, x) = 1;
        }
    }
    return {std::move(out), std::move(out_mask)};
}

}  // namespace dynsurf
