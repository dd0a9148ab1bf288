#include "dynsurf/trainer.hpp"

#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "dynsurf/image_io.hpp"
#include "dynsurf/temporal.hpp"

namespace dynsurf {

namespace fs = std::filesystem;

namespace {

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

constexpr char kCloudMagic[4] = {'D', 'S', 'C', '1'};

}  // namespace

void save_cloud(const SurfelCloud& cloud, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("save_cloud: cannot open " + path);
    std::fwrite(kCloudMagic, 1, 4, f);
    const std::uint32_t deg = static_cast<std::uint32_t>(cloud.sh_degree());
    const std::uint64_t n = cloud.size();
    std::fwrite(&deg, sizeof(deg), 1, f);
    std::fwrite(&n, sizeof(n), 1, f);
    for (const auto& v : cloud.center) std::fwrite(v.data(), sizeof(double), 3, f);
    for (const auto& v : cloud.rotation) std::fwrite(v.data(), sizeof(double), 4, f);
    for (const auto& v : cloud.log_scale) std::fwrite(v.data(), sizeof(double), 2, f);
    std::fwrite(cloud.opacity_logit.data(), sizeof(double), cloud.opacity_logit.size(), f);
    std::fwrite(cloud.sh.data(), sizeof(double), cloud.sh.size(), f);
    if (std::fclose(f) != 0) throw IoError("save_cloud: write failure on " + path);
}

SurfelCloud load_cloud(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw MissingFile("load_cloud: cannot open " + path);
    char magic[4];
    std::uint32_t deg = 0;
    std::uint64_t n = 0;
    if (std::fread(magic, 1, 4, f) != 4 || std::memcmp(magic, kCloudMagic, 4) != 0) {
        std::fclose(f);
        throw IoError("load_cloud: bad magic in " + path);
    }
    if (std::fread(&deg, sizeof(deg), 1, f) != 1 || std::fread(&n, sizeof(n), 1, f) != 1) {
        std::fclose(f);
        throw IoError("load_cloud: truncated header in " + path);
    }
    SurfelCloud cloud(static_cast<int>(deg));
    cloud.center.resize(n);
    cloud.rotation.resize(n);
    cloud.log_scale.resize(n);
    cloud.opacity_logit.resize(n);
    cloud.sh.resize(n * cloud.sh_coeffs() * 3);
    bool ok = true;
    for (auto& v : cloud.center) ok &= std::fread(v.data(), sizeof(double), 3, f) == 3;
    for (auto& v : cloud.rotation) ok &= std::fread(v.data(), sizeof(double), 4, f) == 4;
    for (auto& v : cloud.log_scale) ok &= std::fread(v.data(), sizeof(double), 2, f) == 2;
    ok &= std::fread(cloud.opacity_logit.data(), sizeof(double), n, f) == n;
    ok &= std::fread(cloud.sh.data(), sizeof(double), cloud.sh.size(), f) == cloud.sh.size();
    std::fclose(f);
    if (!ok) throw IoError("load_cloud: truncated data in " + path);
    cloud.check_consistent();
    return cloud;
}

namespace {

// ---------------------------------------------------------------------------
// Shared per-iteration core for the static and fine stages.
// ---------------------------------------------------------------------------

struct ViewTarget {
    const ImageD* image = nullptr;
    const ImageD* mask = nullptr;
    const CameraModel* cam = nullptr;
    const ImageD* warped_normal = nullptr;  // temporal target, may be null
    const ImageB* warp_mask = nullptr;
};

struct IterationOutcome {
    LossTerms terms;
    double total = 0.0;
};

IterationOutcome train_iteration(SurfelCloud& cloud, CloudOptimizer& optimizer, GradStats& stats,
                                 const ViewTarget& view, const LossWeights& weights, int iter, int total_iters,
                                 const TrainOptions& opt) {
    const CameraModel& cam = *view.cam;
    const RenderMaps maps = render(cloud, cam, opt.background, opt.render);

    IterationOutcome out;
    out.terms.photometric = photometric_loss(maps.color, *view.image);
    if (view.warped_normal) out.terms.temporal = temporal_loss(*view.warped_normal, maps.normal, *view.warp_mask);
    out.terms.depth_normal = depth_normal_loss(maps.depth, maps.normal, maps.opacity, cam);
    out.terms.opacity = opacity_loss(cloud.opacity_logit);
    out.terms.mask = mask_loss(maps.opacity, *view.mask);
    out.total = total_loss(out.terms, weights, /*coarse_stage=*/false);

    MapGrads d_maps = MapGrads::zeros(cam.height, cam.width);
    photometric_loss_backward(maps.color, *view.image, 1.0, d_maps.d_color);
    if (view.warped_normal && weights.temporal > 0.0)
        temporal_loss_backward(*view.warped_normal, maps.normal, *view.warp_mask, weights.temporal, d_maps.d_normal);
    if (weights.depth_normal > 0.0)
        depth_normal_loss_backward(maps.depth, maps.normal, maps.opacity, cam, weights.depth_normal, d_maps.d_depth,
                                   d_maps.d_normal);
    if (weights.mask > 0.0) mask_loss_backward(maps.opacity, *view.mask, weights.mask, d_maps.d_opacity);

    CloudGrads grads = render_backward(cloud, cam, opt.background, maps, d_maps, opt.render);
    if (weights.opacity > 0.0)
        opacity_loss_backward(cloud.opacity_logit, weights.opacity,
                              std::span<double>(grads.opacity_logit.data(), grads.opacity_logit.size()));

    // View-space positional gradient statistics for densification.
    const double vs_scale = 0.5 * std::max(cam.width, cam.height);
    std::vector<Vec2> vs(grads.mean2d.size());
    for (std::size_t i = 0; i < vs.size(); ++i) vs[i] = vs_scale * grads.mean2d[i];
    accumulate_grad_stats(stats, vs, grads.visible, grads.center);

    optimizer.step(grads, iter, total_iters);
    return out;
}

SurfelCloud init_frame0_cloud(const DatasetLoader& loader, Rng& rng) {
    const SequenceConfig& cfg = loader.config();
    SurfelCloud cloud(cfg.sh_degree);
    const int k3 = cloud.sh_coeffs() * 3;
    const double y00 = 0.28209479177387814;

    std::vector<Vec3> positions;
    std::vector<Vec3> colors;
    const std::string pts_path = cfg.dataset_dir + "/" + cfg.init_points_file;
    if (!cfg.init_points_file.empty() && file_exists(pts_path)) {
        const SeedPoints seeds = load_seed_points(pts_path);
        positions = seeds.positions;
        colors = seeds.colors;
    } else {
        for (int i = 0; i < 5000; ++i) {
            Vec3 p;
            for (int k = 0; k < 3; ++k) p[k] = rng.uniform(cfg.scene_box_lo[k], cfg.scene_box_hi[k]);
            positions.push_back(p);
            colors.push_back(Vec3(0.5, 0.5, 0.5));
        }
    }

    // Per-point scale from the mean distance to the 3 nearest neighbors.
    const std::size_t n = positions.size();
    std::vector<double> scale(n, cfg.scene_diag() / std::cbrt(static_cast<double>(n)));
    if (n > 4) {
        parallel_for(static_cast<std::int64_t>(n), [&](std::int64_t i) {
            double d0 = 1e30, d1 = 1e30, d2 = 1e30;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == static_cast<std::size_t>(i)) continue;
                const double d = (positions[j] - positions[i]).squaredNorm();
                if (d < d0) {
                    d2 = d1;
                    d1 = d0;
                    d0 = d;
                } else if (d < d1) {
                    d2 = d1;
                    d1 = d;
                } else if (d < d2) {
                    d2 = d;
                }
            }
            scale[i] = std::clamp((std::sqrt(d0) + std::sqrt(d1) + std::sqrt(d2)) / 3.0, 1e-4 * cfg.scene_diag(),
                                  0.1 * cfg.scene_diag());
        });
    }

    for (std::size_t i = 0; i < n; ++i) {
        Surfel s;
        s.center = positions[i];
        s.rotation = Vec4(1, 0, 0, 0);
        s.log_scale = Vec2::Constant(std::log(scale[i]));
        s.opacity_logit = logit(0.1);
        s.sh.assign(k3, 0.0);
        for (int c = 0; c < 3; ++c) s.sh[c] = colors[i][c] / y00;
        cloud.push_back(s);
    }
    return cloud;
}

}  // namespace

SurfelCloud train_frame0(const DatasetLoader& loader, const FrameBundle& frame0, const TrainOptions& opt) {
    const SequenceConfig& cfg = loader.config();
    const TrainSchedule& sched = opt.schedule;
    Rng init_rng(seed_stream(cfg.seed, 0, 0x10));
    SurfelCloud cloud = init_frame0_cloud(loader, init_rng);

    CloudOptimizer optimizer(cloud, sched, cfg.scene_extent());
    GradStats stats;
    stats.resize(cloud.size());
    Rng shuffle_rng(seed_stream(cfg.seed, 0, 0x20));
    Rng densify_rng(seed_stream(cfg.seed, 0, 0x30));

    const std::vector<int> train_views = cfg.training_views();
    std::vector<int> order;

    LossWeights weights;
    weights.mask = sched.lambda_m_coarse;
    weights.opacity = sched.lambda_o;
    weights.depth_normal = sched.lambda_c;

    const double prune_scale = sched.prune_scale_frac * cfg.scene_diag();
    const int iters = cfg.static_iters;
    for (int iter = 0; iter < iters; ++iter) {
        if (order.empty()) {
            order = train_views;
            shuffle_rng.shuffle(order);
        }
        const int v = order.back();
        order.pop_back();
        ViewTarget view{&frame0.images[v], &frame0.masks[v], &loader.cameras()[v], nullptr, nullptr};
        IterationOutcome res;
        try {
            res = train_iteration(cloud, optimizer, stats, view, weights, iter, iters, opt);
        } catch (const NonFiniteLoss& e) {
            throw DivergenceDetected(std::string("train_frame0: ") + e.what());
        }
        if (sched.is_static_densify_iter(iter) && iter > 0) {
            conventional_densify(cloud, stats, sched.densify_grad_threshold, 0.01, cfg.scene_extent(), densify_rng,
                                 &optimizer);
            prune_and_reset(cloud, stats, /*reset=*/false, sched.prune_opacity, prune_scale, &optimizer);
        }
    }
    return cloud;
}

FrameOutputs train_frame_t(const SurfelCloud& cloud_prev, const std::vector<RenderMaps>& prev_train_renders,
                           const FrameBundle& frame_prev, const FrameBundle& frame, const DatasetLoader& loader,
                           FlowProvider& flow, const TrainOptions& opt) {
    const SequenceConfig& cfg = loader.config();
    const TrainSchedule& sched = opt.schedule;
    const std::vector<int> train_views = cfg.training_views();
    const int t = frame.frame_index;
    const auto t0 = std::chrono::steady_clock::now();

    FrameOutputs out;
    out.metrics.frame = t;

    // ---- Coarse stage: SE(3) field on the previous cloud. ----
    std::vector<ImageD> train_images, train_masks;
    std::vector<CameraModel> train_cams;
    for (const int v : train_views) {
        train_images.push_back(frame.images[v]);
        train_masks.push_back(frame.masks[v]);
        train_cams.push_back(loader.cameras()[v]);
    }
    TransformField field =
        TransformField::for_cloud(cloud_prev, FieldConfig{}, seed_stream(cfg.seed, t, 0x40));
    out.coarse_report = fit_coarse(field, cloud_prev, train_images, train_masks, train_cams, sched, opt.background,
                                   seed_stream(cfg.seed, t, 0x50), opt.render);
    SurfelCloud cloud = ntc_apply(field, cloud_prev);
    out.metrics.coarse_s = seconds_since(t0);

    // ---- Temporal targets from the previous frame's rendered normals. ----
    const auto t_fine0 = std::chrono::steady_clock::now();
    std::vector<ImageD> warped_normals(train_views.size());
    std::vector<ImageB> warp_masks(train_views.size());
    std::vector<bool> has_warp(train_views.size(), false);
    if (opt.temporal_consistency && !prev_train_renders.empty()) {
        for (std::size_t k = 0; k < train_views.size(); ++k) {
            const int v = train_views[k];
            auto [fwd, bwd] =
                flow_forward_backward(flow, v, frame_prev.images[v], frame.images[v], t);
            const ImageB confident = cycle_confidence_mask(fwd, bwd, sched.cycle_tau_px);
            auto [warped, wmask] =
                warp_by_flow(prev_train_renders[k].normal, bwd, confident, /*renormalize=*/true);
            warped_normals[k] = std::move(warped);
            warp_masks[k] = std::move(wmask);
            has_warp[k] = true;
        }
    }

    // ---- Fine stage. ----
    CloudOptimizer optimizer(cloud, sched, cfg.scene_extent());
    GradStats stats;
    stats.resize(cloud.size());
    Rng shuffle_rng(seed_stream(cfg.seed, t, 0x60));
    Rng densify_rng(seed_stream(cfg.seed, t, 0x70));
    std::vector<int> order;
    const double prune_scale = sched.prune_scale_frac * cfg.scene_diag();

    for (int iter = 0; iter < sched.fine_iters; ++iter) {
        if (order.empty()) {
            order.resize(train_views.size());
            for (std::size_t k = 0; k < train_views.size(); ++k) order[k] = static_cast<int>(k);
            shuffle_rng.shuffle(order);
        }
        const int k = order.back();
        order.pop_back();
        const int v = train_views[k];

        LossWeights weights = sched.fine_weights(iter);
        if (!opt.temporal_consistency) weights.temporal = 0.0;
        ViewTarget view{&frame.images[v], &frame.masks[v], &loader.cameras()[v],
                        has_warp[k] ? &warped_normals[k] : nullptr, has_warp[k] ? &warp_masks[k] : nullptr};
        try {
            train_iteration(cloud, optimizer, stats, view, weights, iter, sched.fine_iters, opt);
        } catch (const NonFiniteLoss& e) {
            throw DivergenceDetected("train_frame_t: frame " + std::to_string(t) + ": " + e.what());
        }

        if (sched.is_densify_iter(iter)) {
            const double lr_pos = sched.position_lr(iter, sched.fine_iters, cfg.scene_extent());
            DensifyReport rep;
            if (opt.gradient_aware_densify) {
                rep = unified_densify(cloud, stats, sched.densify_grad_threshold, lr_pos, densify_rng, &optimizer);
            } else {
                rep = conventional_densify(cloud, stats, sched.densify_grad_threshold, 0.01, cfg.scene_extent(),
                                           densify_rng, &optimizer);
            }
            out.densify_reports.push_back(rep);
            prune_and_reset(cloud, stats, /*reset=*/false, sched.prune_opacity, prune_scale, &optimizer);
        }
        if (sched.is_opacity_reset_iter(iter)) {
            prune_and_reset(cloud, stats, /*reset=*/true, sched.prune_opacity, prune_scale, &optimizer);
        }
    }
    out.metrics.fine_s = seconds_since(t_fine0);

    // ---- Final renders and metrics. ----
    for (const int v : train_views)
        out.train_renders.push_back(render(cloud, loader.cameras()[v], opt.background, opt.render));
    for (const int v : cfg.heldout_views) {
        RenderMaps maps = render(cloud, loader.cameras()[v], opt.background, opt.render);
        const QualityScore q = eval_metrics(maps.color, frame.images[v]);
        out.metrics.view_psnr.push_back(q.psnr);
        out.metrics.view_ssim.push_back(q.ssim);
        out.heldout_renders.push_back(std::move(maps));
    }
    out.metrics.surfels = cloud.size();
    out.metrics.total_s = seconds_since(t0);
    out.cloud = std::move(cloud);
    return out;
}

std::string frame_dir(const std::string& out_dir, int frame) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "/frames/f%04d", frame);
    return out_dir + buf;
}

namespace {

void write_frame_artifacts(const std::string& out_dir, int t, const SurfelCloud& cloud,
                           const std::vector<RenderMaps>& train_renders,
                           const std::vector<RenderMaps>& heldout_renders, const SequenceConfig& cfg,
                           const std::vector<CameraModel>& cams, const TrainOptions& opt) {
    const std::string dir = frame_dir(out_dir, t);
    fs::create_directories(dir);
    save_cloud(cloud, dir + "/cloud.bin");
    const auto& heldout = cfg.heldout_views;
    for (std::size_t k = 0; k < heldout.size(); ++k) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "/render_v%02d.png", heldout[k]);
        write_png_srgb(heldout_renders[k].color, dir + buf);
        std::snprintf(buf, sizeof(buf), "/depth_v%02d.fmap", heldout[k]);
        write_fmap(heldout_renders[k].depth, dir + buf);
        std::snprintf(buf, sizeof(buf), "/normal_v%02d.fmap", heldout[k]);
        write_fmap(heldout_renders[k].normal, dir + buf);
    }
    if (opt.write_train_view_maps) {
        const auto train_views = cfg.training_views();
        for (std::size_t k = 0; k < train_views.size(); ++k) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "/normal_train_v%02d.fmap", train_views[k]);
            write_fmap(train_renders[k].normal, dir + buf);
        }
    }

    // Fused point cloud and Poisson mesh from the training views.
    std::vector<CameraModel> train_cams;
    for (const int v : cfg.training_views()) train_cams.push_back(cams[v]);
    try {
        const OrientedPoints fused =
            fuse_depth_normal(train_renders, train_cams, 0.5, cfg.scene_diag() / 256.0);
        write_points_ply(fused, dir + "/points.ply");
        const TriMesh mesh = screened_poisson(fused, opt.poisson);
        if (!mesh.empty()) write_mesh_ply(mesh, dir + "/mesh.ply");
    } catch (const Error& e) {
        std::ofstream(dir + "/mesh_error.txt") << e.what() << "\n";
    }
}

double consec_normal_mse(const RenderMaps& prev, const RenderMaps& cur) {
    double acc = 0.0;
    for (std::size_t i = 0; i < cur.normal.size(); ++i) {
        const double d = cur.normal.raw()[i] - prev.normal.raw()[i];
        acc += d * d;
    }
    return acc / static_cast<double>(cur.normal.size());
}

}  // namespace

void run_sequence(const SequenceConfig& cfg, const TrainOptions& opt) {
    cfg.validate();
    opt.schedule.validate();
    DatasetLoader loader(cfg);
    auto provider = make_flow_provider(
        opt.flow_provider_override.empty() ? cfg.flow_provider : opt.flow_provider_override, cfg.dataset_dir);

    const std::string out_dir = cfg.output_dir.empty() ? cfg.dataset_dir + "/run" : cfg.output_dir;
    fs::create_directories(out_dir);
    fs::create_directories(out_dir + "/frames");

    const int n_frames = opt.max_frames > 0 ? std::min(opt.max_frames, cfg.frames) : cfg.frames;

    std::vector<MetricsRecord> rows;
    int start_frame = 0;
    if (opt.resume) {
        // Resume after the last frame with a checkpoint and a metrics row.
        std::vector<MetricsRecord> old_rows;
        try {
            old_rows = read_metrics_csv(out_dir + "/metrics.csv");
        } catch (const Error&) {
        }
        for (int t = 0; t < n_frames; ++t) {
            const bool has_ckpt = file_exists(frame_dir(out_dir, t) + "/cloud.bin");
            const bool has_row = static_cast<int>(old_rows.size()) > t && old_rows[t].frame == t;
            if (has_ckpt && has_row)
                start_frame = t + 1;
            else
                break;
        }
        rows.assign(old_rows.begin(), old_rows.begin() + std::min<std::size_t>(start_frame, old_rows.size()));
    }

    SurfelCloud cloud;
    std::vector<RenderMaps> train_renders, heldout_renders;
    FrameBundle prev_bundle;
    auto render_all = [&](const SurfelCloud& c) {
        train_renders.clear();
        heldout_renders.clear();
        for (const int v : cfg.training_views())
            train_renders.push_back(render(c, loader.cameras()[v], opt.background, opt.render));
        for (const int v : cfg.heldout_views)
            heldout_renders.push_back(render(c, loader.cameras()[v], opt.background, opt.render));
    };

    if (start_frame > 0) {
        cloud = load_cloud(frame_dir(out_dir, start_frame - 1) + "/cloud.bin");
        render_all(cloud);
        prev_bundle = loader.load_frame(start_frame - 1);
    }

    for (int t = start_frame; t < n_frames; ++t) {
        const auto t0 = std::chrono::steady_clock::now();
        FrameBundle bundle = loader.load_frame(t);
        MetricsRecord row;
        row.frame = t;
        try {
            if (t == 0) {
                cloud = train_frame0(loader, bundle, opt);
                std::vector<RenderMaps> prev_heldout = std::move(heldout_renders);
                render_all(cloud);
                row.fine_s = seconds_since(t0);
                row.total_s = row.fine_s;
                row.surfels = cloud.size();
                for (std::size_t k = 0; k < cfg.heldout_views.size(); ++k) {
                    const QualityScore q =
                        eval_metrics(heldout_renders[k].color, bundle.images[cfg.heldout_views[k]]);
                    row.view_psnr.push_back(q.psnr);
                    row.view_ssim.push_back(q.ssim);
                }
            } else {
                std::vector<RenderMaps> prev_heldout = heldout_renders;
                FrameOutputs fo =
                    train_frame_t(cloud, train_renders, prev_bundle, bundle, loader, *provider, opt);
                row = fo.metrics;
                if (!prev_heldout.empty() && !fo.heldout_renders.empty()) {
                    const QualityScore q = eval_metrics(fo.heldout_renders[0].color, prev_heldout[0].color);
                    row.consec_psnr = q.psnr;
                    row.consec_ssim = q.ssim;
                    row.consec_normal_mse = consec_normal_mse(prev_heldout[0], fo.heldout_renders[0]);
                }
                cloud = std::move(fo.cloud);
                train_renders = std::move(fo.train_renders);
                heldout_renders = std::move(fo.heldout_renders);
            }
        } catch (const Error& e) {
            if (!opt.continue_on_frame_error) throw;
            std::ofstream(out_dir + "/errors.log", std::ios::app)
                << "frame " << t << ": " << e.what() << "\n";
            row.surfels = cloud.size();
        }
        write_frame_artifacts(out_dir, t, cloud, train_renders, heldout_renders, cfg, loader.cameras(), opt);
        rows.push_back(row);
        write_metrics_csv(rows, cfg.heldout_views, out_dir + "/metrics.csv");
        write_metrics_summary(rows, out_dir + "/summary.txt");

        if (cfg.keep_last_k_enabled && cfg.keep_last_k > 0) {
            const int drop = t - cfg.keep_last_k;
            if (drop >= 0) fs::remove(frame_dir(out_dir, drop) + "/cloud.bin");
        }
        prev_bundle = std::move(bundle);
        std::cout << "[frame " << t << "] surfels=" << row.surfels;
        if (!row.view_psnr.empty()) std::cout << " heldout_psnr=" << row.view_psnr[0];
        std::cout << " time_s=" << row.total_s << std::endl;
    }
}

}  // namespace dynsurf
