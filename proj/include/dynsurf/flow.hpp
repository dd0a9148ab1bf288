#pragma once

#include <memory>

#include "dynsurf/image.hpp"

namespace dynsurf {

// Dense correspondence field between two frames of one view. The vector at a
// pixel points to the matching position in the other frame:
//   position_in_other_frame = pixel + vectors(pixel).
// The backward field lives on frame t's grid and points into frame t-1; the
// forward field lives on frame t-1's grid and points into frame t.
struct FlowField {
    ImageD vectors;  // H x W x 2 (dx, dy), pixels
    ImageB valid;    // H x W, {0, 1}

    FlowField() = default;
    FlowField(int h, int w) : vectors(h, w, 2), valid(h, w, 1, 1) {}

    int height() const { return vectors.height(); }
    int width() const { return vectors.width(); }

    // Non-finite vectors are invalidated.
    void sanitize() {
        for (int y = 0; y < height(); ++y)
            for (int x = 0; x < width(); ++x)
                if (!std::isfinite(vectors.at(y, x, 0)) || !std::isfinite(vectors.at(y, x, 1))) valid.at(y, x) = 0;
    }
};

// Sealed provider interface: "synthetic-gt" reads analytic flow computed from
// known scene motion, "block-matching" estimates it from the image pair.
class FlowProvider {
public:
    virtual ~FlowProvider() = default;
    virtual std::string name() const = 0;
    // Returns (forward: t-1 -> t on the t-1 grid, backward: t -> t-1 on the
    // t grid) for one view.
    virtual std::pair<FlowField, FlowField> compute(const ImageD& img_prev, const ImageD& img_cur, int frame_t,
                                                    int view) = 0;
};

// Validates resolutions and delegates to the provider.
std::pair<FlowField, FlowField> flow_forward_backward(FlowProvider& provider, int view, const ImageD& img_prev,
                                                      const ImageD& img_cur, int frame_t);

// Block matching with normalized cross-correlation: 8x8 patches, +-8 px
// search, confidence floor 0.6. Integer displacements; unmatched or
// low-texture pixels come back invalid.
std::unique_ptr<FlowProvider> make_block_matching_provider();

// Reads precomputed ground-truth flow files from a dataset directory (written
// by the synthetic scene generator).
std::unique_ptr<FlowProvider> make_synthetic_gt_provider(const std::string& dataset_dir);

std::unique_ptr<FlowProvider> make_flow_provider(const std::string& id, const std::string& dataset_dir);

// Confidence mask for the backward flow: pixel p is confident iff
// || bwd(p) + fwd(p + bwd(p)) || <= tau_px with a bilinear forward lookup and
// both lookups valid.
ImageB cycle_confidence_mask(const FlowField& fwd, const FlowField& bwd, double tau_px);

// out(p) = bilinear(map_prev, p + bwd(p)) where mask(p), bwd valid and the
// sample stays in bounds; the output mask is false elsewhere. 3-channel maps
// are renormalized where the warped norm exceeds 1e-6 when renormalize is set.
std::pair<ImageD, ImageB> warp_by_flow(const ImageD& map_prev, const FlowField& bwd, const ImageB& mask,
                                       bool renormalize_vectors = false);

}  // namespace dynsurf
