#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "dynsurf/image_io.hpp"
#include "dynsurf/synth.hpp"
#include "dynsurf/trainer.hpp"

using namespace dynsurf;

namespace {

SequenceConfig load_config_with_overrides(const std::string& data_dir, const std::vector<std::string>& overrides) {
    SequenceConfig cfg = load_sequence_config(data_dir);
    for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw InvalidSpec("--set expects key=value, got '" + kv + "'");
        apply_config_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
}

int run_train(const std::string& data_dir, const std::string& out_dir, const std::vector<std::string>& overrides,
              TrainOptions opt, std::uint64_t seed_override, bool has_seed) {
    SequenceConfig cfg = load_config_with_overrides(data_dir, overrides);
    cfg.output_dir = out_dir;
    if (has_seed) cfg.seed = seed_override;
    run_sequence(cfg, opt);
    std::cout << "done: " << out_dir << "/metrics.csv" << std::endl;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dynsurf: incremental multi-view dynamic surface reconstruction with Gaussian surfels"};
    app.require_subcommand(1);

    // ---- synth ----
    auto* synth = app.add_subcommand("synth", "generate a synthetic multi-view dataset with exact ground truth");
    SynthSpec spec;
    synth->add_option("--scene", spec.scene,
                      "scene family: translating-sphere | static-sphere | rotating-cube | deforming-blob | "
                      "emerging-object")
        ->required();
    synth->add_option("--out", spec.out_dir, "output dataset directory")->required();
    synth->add_option("--frames", spec.frames, "number of frames");
    synth->add_option("--views", spec.views, "total cameras (training + held-out)");
    synth->add_option("--heldout", spec.heldout, "number of held-out views");
    synth->add_option("--res", spec.resolution, "image resolution (square)");
    synth->add_option("--seed", spec.seed, "RNG seed");

    // ---- train ----
    auto* train = app.add_subcommand("train", "run the incremental reconstruction pipeline");
    std::string train_data, train_out;
    std::vector<std::string> overrides;
    std::uint64_t seed_override = 0;
    TrainOptions opt;
    bool no_gd = false, no_tc = false;
    train->add_option("--data", train_data, "dataset directory")->required();
    train->add_option("--out", train_out, "output directory")->required();
    train->add_option("--set", overrides, "config override key=value (repeatable)");
    auto* seed_opt = train->add_option("--seed", seed_override, "override the config seed");
    train->add_flag("--no-gd", no_gd, "use conventional clone/split densification");
    train->add_flag("--no-tc", no_tc, "disable the temporal consistency loss");
    train->add_flag("--resume", opt.resume, "continue after the last completed frame");
    train->add_option("--max-frames", opt.max_frames, "train only the first K frames");
    train->add_option("--flow", opt.flow_provider_override, "flow provider: synthetic-gt | block-matching");
    train->add_flag("--dump-train-maps", opt.write_train_view_maps, "also write training-view normal maps");
    train->add_flag("--continue-on-error", opt.continue_on_frame_error, "record frame failures and keep going");
    train->add_option("--poisson-depth", opt.poisson.grid_depth, "poisson grid depth (side 2^depth)");
    train->add_option("--static-iters", opt.schedule.static_iters, "frame-0 iterations");

    // ---- mesh ----
    auto* mesh_cmd = app.add_subcommand("mesh", "extract a Poisson mesh from a cloud checkpoint");
    std::string mesh_ckpt, mesh_data, mesh_out;
    PoissonParams poisson;
    mesh_cmd->add_option("--checkpoint", mesh_ckpt, "cloud.bin checkpoint")->required();
    mesh_cmd->add_option("--data", mesh_data, "dataset directory (cameras + config)")->required();
    mesh_cmd->add_option("--out", mesh_out, "output .ply path")->required();
    mesh_cmd->add_option("--depth", poisson.grid_depth, "grid depth");
    mesh_cmd->add_option("--screening", poisson.screening, "screening weight");

    // ---- eval ----
    auto* eval_cmd = app.add_subcommand("eval", "PSNR/SSIM of stored held-out renders against the dataset");
    std::string eval_data, eval_run;
    eval_cmd->add_option("--data", eval_data, "dataset directory")->required();
    eval_cmd->add_option("--run", eval_run, "training output directory")->required();

    // ---- ablate ----
    auto* ablate = app.add_subcommand("ablate", "run the four densification/temporal variants");
    std::string ab_data, ab_out;
    std::vector<std::string> ab_overrides;
    int ab_max_frames = -1;
    ablate->add_option("--data", ab_data, "dataset directory")->required();
    ablate->add_option("--out", ab_out, "output root; one subdirectory per variant")->required();
    ablate->add_option("--set", ab_overrides, "config override key=value (repeatable)");
    ablate->add_option("--max-frames", ab_max_frames, "limit frames");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) {
            const SequenceConfig cfg = synth_scene(spec);
            std::cout << "dataset written to " << spec.out_dir << " (" << cfg.frames << " frames, " << cfg.views
                      << " views)" << std::endl;
            return 0;
        }
        if (*train) {
            opt.gradient_aware_densify = !no_gd;
            opt.temporal_consistency = !no_tc;
            return run_train(train_data, train_out, overrides, opt, seed_override, seed_opt->count() > 0);
        }
        if (*mesh_cmd) {
            const SequenceConfig cfg = load_sequence_config(mesh_data);
            DatasetLoader loader(cfg);
            const SurfelCloud cloud = load_cloud(mesh_ckpt);
            std::vector<RenderMaps> renders;
            std::vector<CameraModel> cams;
            for (const int v : cfg.training_views()) {
                renders.push_back(render(cloud, loader.cameras()[v], Vec3::Zero()));
                cams.push_back(loader.cameras()[v]);
            }
            const OrientedPoints fused = fuse_depth_normal(renders, cams, 0.5, cfg.scene_diag() / 256.0);
            const TriMesh mesh = screened_poisson(fused, poisson);
            write_mesh_ply(mesh, mesh_out);
            std::cout << "mesh: " << mesh.vertices.size() << " vertices, " << mesh.faces.size() << " faces -> "
                      << mesh_out << std::endl;
            return 0;
        }
        if (*eval_cmd) {
            const SequenceConfig cfg = load_sequence_config(eval_data);
            DatasetLoader loader(cfg);
            double psnr_sum = 0, ssim_sum = 0;
            int count = 0;
            for (int t = 0; t < cfg.frames; ++t) {
                const std::string dir = frame_dir(eval_run, t);
                if (!file_exists(dir + "/cloud.bin") && !file_exists(dir)) break;
                for (const int v : cfg.heldout_views) {
                    char buf[64];
                    std::snprintf(buf, sizeof(buf), "/render_v%02d.png", v);
                    if (!file_exists(dir + buf)) continue;
                    const ImageD rendered = read_png_linear(dir + buf);
                    const ImageD gt = read_png_linear(DatasetLoader::image_path(cfg.dataset_dir, t, v));
                    const QualityScore q = eval_metrics(rendered, gt);
                    std::printf("frame %d view %d: psnr=%.3f ssim=%.5f\n", t, v, q.psnr, q.ssim);
                    psnr_sum += q.psnr;
                    ssim_sum += q.ssim;
                    ++count;
                }
            }
            if (count == 0) throw MissingFile("eval: no stored renders found under " + eval_run);
            std::printf("mean: psnr=%.3f ssim=%.5f over %d renders\n", psnr_sum / count, ssim_sum / count, count);
            return 0;
        }
        if (*ablate) {
            struct Variant {
                const char* name;
                bool gd, tc;
            };
            const Variant variants[] = {{"full", true, true},
                                        {"no-gd", false, true},
                                        {"no-tc", true, false},
                                        {"no-gd-no-tc", false, false}};
            for (const auto& var : variants) {
                TrainOptions vopt;
                vopt.gradient_aware_densify = var.gd;
                vopt.temporal_consistency = var.tc;
                vopt.max_frames = ab_max_frames;
                SequenceConfig cfg = load_config_with_overrides(ab_data, ab_overrides);
                cfg.output_dir = ab_out + "/" + var.name;
                std::cout << "== variant " << var.name << " ==" << std::endl;
                run_sequence(cfg, vopt);
            }
            return 0;
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    }
    return 0;
}
