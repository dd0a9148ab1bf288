#include "dynsurf/densify.hpp"

#include <sstream>

namespace dynsurf {

void GradStats::filter(const std::vector<std::uint8_t>& keep) {
    std::size_t w = 0;
    for (std::size_t i = 0; i < keep.size(); ++i) {
        if (!keep[i]) continue;
        accum_norm[w] = accum_norm[i];
        accum_count[w] = accum_count[i];
        last_dir[w] = last_dir[i];
        ++w;
    }
    accum_norm.resize(w);
    accum_count.resize(w);
    last_dir.resize(w);
}

void GradStats::append(std::size_t n_new) {
    accum_norm.resize(accum_norm.size() + n_new, 0.0);
    accum_count.resize(accum_count.size() + n_new, 0);
    last_dir.resize(last_dir.size() + n_new, Vec3::Zero());
}

void accumulate_grad_stats(GradStats& stats, std::span<const Vec2> view_space_grads,
                           std::span<const std::uint8_t> visible, std::span<const Vec3> world_grads) {
    if (view_space_grads.size() != stats.size() || visible.size() != stats.size() ||
        world_grads.size() != stats.size())
        throw LengthMismatch("accumulate_grad_stats: per-view arrays do not match the stats length");
    for (std::size_t i = 0; i < stats.size(); ++i) {
        if (!visible[i]) continue;
        stats.accum_norm[i] += view_space_grads[i].norm();
        stats.accum_count[i] += 1;
        if (world_grads[i].squaredNorm() > 0.0) stats.last_dir[i] = world_grads[i];
    }
}

std::string DensifyReport::to_string() const {
    std::ostringstream os;
    os << "densify: candidates=" << candidates << " mean_factor=" << mean_factor << " min_factor=" << min_factor
       << " max_factor=" << max_factor;
    return os.str();
}

DensifyReport unified_densify(SurfelCloud& cloud, GradStats& stats, double tau, double lr_pos, Rng& rng,
                              CloudOptimizer* opt) {
    if (stats.size() != cloud.size()) throw LengthMismatch("unified_densify: stats size mismatch");
    DensifyReport report;
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < cloud.size(); ++i)
        if (stats.accum_count[i] > 0 && stats.average(i) >= tau) candidates.push_back(i);
    if (candidates.empty()) {  // NoCandidates: cloud unchanged, empty report
        stats.reset();
        return report;
    }

    double grad_mean = 0.0;
    for (const std::size_t i : candidates) grad_mean += stats.average(i);
    grad_mean /= static_cast<double>(candidates.size());
    const double clamp_ceiling = 2.0 * grad_mean;

    report.candidates = static_cast<int>(candidates.size());
    report.min_factor = 1.0;
    report.max_factor = 0.0;

    const std::size_t old_size = cloud.size();
    for (const std::size_t i : candidates) {
        const double factor = std::min(stats.average(i), clamp_ceiling) / clamp_ceiling;
        report.mean_factor += factor;
        report.min_factor = std::min(report.min_factor, factor);
        report.max_factor = std::max(report.max_factor, factor);

        Surfel child = cloud.get(i);
        const Vec2 scale = cloud.log_scale[i].array().exp().matrix();
        const Vec2 sampling_std = scale * factor;
        const Mat3 rot = quat_to_rotmat(cloud.rotation[i].normalized());
        const double e0 = rng.normal(), e1 = rng.normal();
        // In-plane offset only: zero standard deviation along the disk normal.
        child.center += rot.col(0) * (e0 * sampling_std[0]) + rot.col(1) * (e1 * sampling_std[1]);
        cloud.push_back(child);  // same size, rotation, opacity, SH

        // The original moves one explicit step against its positional
        // gradient; its momentum is cleared so it cannot be dragged back.
        const Vec3 dir = stats.last_dir[i];
        const double norm = dir.norm();
        if (norm > 0.0 && lr_pos > 0.0) {
            cloud.center[i] -= (lr_pos / norm) * dir;
            if (opt) opt->zero_position_state(i);
        }
    }
    report.mean_factor /= static_cast<double>(candidates.size());
    if (opt) opt->append(cloud.size() - old_size);
    stats.resize(cloud.size());
    return report;
}

DensifyReport conventional_densify(SurfelCloud& cloud, GradStats& stats, double tau, double percent_dense,
                                   double scene_extent, Rng& rng, CloudOptimizer* opt) {
    if (stats.size() != cloud.size()) throw LengthMismatch("conventional_densify: stats size mismatch");
    DensifyReport report;
    const std::size_t old_size = cloud.size();
    std::vector<std::uint8_t> keep(old_size, 1);
    bool any_split = false;
    for (std::size_t i = 0; i < old_size; ++i) {
        if (stats.accum_count[i] == 0 || stats.average(i) < tau) continue;
        ++report.candidates;
        const Vec2 scale = cloud.log_scale[i].array().exp().matrix();
        if (scale.maxCoeff() <= percent_dense * scene_extent) {
            cloud.push_back(cloud.get(i));  // clone in place
        } else {
            const Mat3 rot = quat_to_rotmat(cloud.rotation[i].normalized());
            for (int c = 0; c < 2; ++c) {
                Surfel child = cloud.get(i);
                const double e0 = rng.normal(), e1 = rng.normal();
                child.center += rot.col(0) * (e0 * scale[0]) + rot.col(1) * (e1 * scale[1]);
                child.log_scale = (cloud.log_scale[i].array() - std::log(1.6)).matrix();
                cloud.push_back(child);
            }
            keep[i] = 0;  // split removes the original
            any_split = true;
        }
    }
    if (opt) opt->append(cloud.size() - old_size);
    stats.append(cloud.size() - old_size);
    if (any_split) {
        keep.resize(cloud.size(), 1);
        if (opt)
            opt->prune(keep);
        else
            cloud.filter(keep);
        stats.filter(keep);
    }
    stats.reset();
    return report;
}

int prune_and_reset(SurfelCloud& cloud, GradStats& stats, bool reset_opacity_now, double prune_opacity,
                    double prune_scale, CloudOptimizer* opt) {
    std::vector<std::uint8_t> keep(cloud.size(), 1);
    int pruned = 0;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const double o = sigmoid(cloud.opacity_logit[i]);
        const double max_scale = cloud.log_scale[i].array().exp().maxCoeff();
        if (o < prune_opacity || max_scale > prune_scale) {
            keep[i] = 0;
            ++pruned;
        }
    }
    if (pruned == static_cast<int>(cloud.size()) && !cloud.empty())
        throw AllPruned("prune_and_reset: every surfel fell below the pruning thresholds");
    if (pruned > 0) {
        if (opt)
            opt->prune(keep);
        else
            cloud.filter(keep);
        if (stats.size() == keep.size()) stats.filter(keep);
    }
    if (reset_opacity_now) {
        if (opt) {
            opt->reset_opacities(0.01);
        } else {
            const double cap = logit(0.01);
            for (auto& l : cloud.opacity_logit) l = std::min(l, cap);
            ++cloud.revision;
        }
    }
    return pruned;
}

}  // namespace dynsurf
