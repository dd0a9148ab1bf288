#pragma once

#include "dynsurf/optimizer.hpp"
#include "dynsurf/surfel.hpp"

namespace dynsurf {

// Per-surfel positional-gradient statistics accumulated between
// densification events. Norms are in view-space units (pixel gradients scaled
// by 0.5 * max(W, H)).
struct GradStats {
    std::vector<double> accum_norm;
    std::vector<int> accum_count;
    std::vector<Vec3> last_dir;  // most recent world-space positional gradient

    void resize(std::size_t n) {
        accum_norm.assign(n, 0.0);
        accum_count.assign(n, 0);
        last_dir.assign(n, Vec3::Zero());
    }
    void reset() { resize(accum_norm.size()); }
    std::size_t size() const { return accum_norm.size(); }
    void filter(const std::vector<std::uint8_t>& keep);
    void append(std::size_t n_new);

    double average(std::size_t i) const { return accum_norm[i] / std::max(accum_count[i], 1); }
};

// One rendered view's worth of statistics. view_space_grads must already be
// scaled to view-space units; count increments for every visible surfel.
void accumulate_grad_stats(GradStats& stats, std::span<const Vec2> view_space_grads,
                           std::span<const std::uint8_t> visible, std::span<const Vec3> world_grads);

struct DensifyReport {
    int candidates = 0;
    double mean_factor = 0.0;
    double min_factor = 0.0;
    double max_factor = 0.0;
    std::string to_string() const;
};

// Gradient-aware densification: every candidate (avg grad >= tau, any size)
// spawns one same-size surfel sampled in its tangent plane with standard
// deviations scale * min(g, 2 gbar) / (2 gbar), and the original takes one
// explicit step of length lr_pos against its world-space gradient (its
// positional moments are cleared so momentum cannot pull it back). Stats are
// reset afterwards. `opt` may be null when no optimizer state exists.
DensifyReport unified_densify(SurfelCloud& cloud, GradStats& stats, double tau, double lr_pos, Rng& rng,
                              CloudOptimizer* opt);

// Conventional clone/split (the "w/o GD" ablation and frame-0 behavior):
// small candidates are cloned in place, large ones are split into two
// samples with scales shrunk by 1.6 and the original removed.
DensifyReport conventional_densify(SurfelCloud& cloud, GradStats& stats, double tau, double percent_dense,
                                   double scene_extent, Rng& rng, CloudOptimizer* opt);

// Removes surfels with sigmoid(opacity) < prune_opacity or max world scale >
// prune_scale; at reset iterations clamps all opacities to <= 1%. Returns the
// number pruned. Throws AllPruned when nothing survives.
int prune_and_reset(SurfelCloud& cloud, GradStats& stats, bool reset_opacity_now, double prune_opacity,
                    double prune_scale, CloudOptimizer* opt);

}  // namespace dynsurf
