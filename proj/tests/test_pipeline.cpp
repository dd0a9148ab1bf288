#include <doctest.h>

#include <filesystem>

#include "dynsurf/image_io.hpp"
#include "dynsurf/synth.hpp"
#include "dynsurf/trainer.hpp"

using namespace dynsurf;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const char* tag) {
        path = fs::temp_directory_path() / (std::string("dynsurf_pl_") + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

int count_files(const fs::path& dir, const std::string& ext) {
    if (!fs::exists(dir)) return 0;
    int n = 0;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ext) ++n;
    return n;
}

// Schedule scaled down for smoke runs; keeps the densify window inside the
// fine stage.
TrainSchedule micro_schedule() {
    TrainSchedule sched;
    sched.coarse_iters = 60;
    sched.fine_iters = 220;
    sched.densify_start = 60;
    sched.densify_end = 160;
    sched.densify_interval = 25;
    sched.opacity_reset_interval = 1000;  // no resets in the micro run
    return sched;
}

}  // namespace

TEST_CASE("synth: artifact counts for a small sphere sequence") {
    TempDir tmp("synth");
    SynthSpec spec;
    spec.scene = "translating-sphere";
    spec.frames = 3;
    spec.views = 5;
    spec.heldout = 1;
    spec.resolution = 32;
    spec.out_dir = tmp.path.string();
    const SequenceConfig cfg = synth_scene(spec);
    CHECK(count_files(tmp.path / "images", ".png") == 15);
    CHECK(count_files(tmp.path / "masks", ".png") == 15);
    CHECK(count_files(tmp.path / "flow", ".flo1") == 2 * 2 * 5);  // frames 1..2, fwd+bwd, per view
    CHECK(count_files(tmp.path / "gt_meshes", ".ply") == 3);
    CHECK(fs::exists(tmp.path / "cameras.txt"));
    CHECK(fs::exists(tmp.path / "sequence.cfg"));
    CHECK(fs::exists(tmp.path / "points_frame0.txt"));
    CHECK(cfg.heldout_views == std::vector<int>{4});

    SUBCASE("dataset loads bit-exact against its own config") {
        const SequenceConfig loaded = load_sequence_config(tmp.path.string());
        DatasetLoader loader(loaded);
        const FrameBundle fb = loader.load_frame(0);
        CHECK(fb.images.size() == 5);
        CHECK(fb.masks.size() == 5);
        for (const auto& m : fb.masks)
            for (const double v : m.raw()) CHECK((v == 0.0 || v == 1.0));
    }
    SUBCASE("missing mask file raises MissingFile with the path") {
        fs::remove(tmp.path / "masks" / "f0001_v02.png");
        const SequenceConfig loaded = load_sequence_config(tmp.path.string());
        DatasetLoader loader(loaded);
        CHECK_THROWS_WITH_AS(loader.load_frame(1), doctest::Contains("f0001_v02"), MissingFile);
    }
}

TEST_CASE("synth: static scene has identically zero flow; translation matches the pinhole rate") {
    TempDir tmp("flow");
    SynthSpec spec;
    spec.scene = "static-sphere";
    spec.frames = 2;
    spec.views = 3;
    spec.heldout = 0;
    spec.resolution = 32;
    spec.out_dir = tmp.path.string();
    synth_scene(spec);
    const FlowField bwd = read_flow(flow_path(tmp.path.string(), 1, 0, false));
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
            if (bwd.valid.at(y, x)) {
                CHECK(bwd.vectors.at(y, x, 0) == 0.0);
                CHECK(bwd.vectors.at(y, x, 1) == 0.0);
            }

    TempDir tmp2("flow2");
    SynthSpec spec2 = spec;
    spec2.scene = "translating-sphere";
    spec2.out_dir = tmp2.path.string();
    const SequenceConfig cfg2 = synth_scene(spec2);
    DatasetLoader loader(cfg2);
    // Pixels on the sphere should move by about f * v / z between frames;
    // the backward field points to the position in the previous frame.
    // Pick the view with the most lateral motion and compare the mean flow
    // against the projected displacement of the sphere center.
    auto project = [](const CameraModel& cam, const Vec3& p) {
        const Vec3 pc = cam.to_camera(p);
        return Vec2(cam.fx * pc.x() / pc.z() + cam.cx, cam.fy * pc.y() / pc.z() + cam.cy);
    };
    const Vec3 c0(-0.225, 0, 0), c1(-0.175, 0, 0);
    int best_view = 0;
    double best_lat = -1;
    for (int v = 0; v < 3; ++v) {
        const double lat = (project(loader.cameras()[v], c1) - project(loader.cameras()[v], c0)).norm();
        if (lat > best_lat) {
            best_lat = lat;
            best_view = v;
        }
    }
    const CameraModel& cam = loader.cameras()[best_view];
    const Vec2 expected = project(cam, c0) - project(cam, c1);  // bwd points into frame 0
    REQUIRE(expected.norm() > 0.5);
    const FlowField b2 = read_flow(flow_path(tmp2.path.string(), 1, best_view, false));
    int checked = 0;
    Vec2 mean = Vec2::Zero();
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
            if (b2.valid.at(y, x)) {
                mean += Vec2(b2.vectors.at(y, x, 0), b2.vectors.at(y, x, 1));
                ++checked;
            }
    REQUIRE(checked > 10);
    mean /= checked;
    CHECK((mean - expected).norm() <= 0.35 * expected.norm());
}

TEST_CASE("fit_coarse recovers a rigid translation from a surface-sampled cloud") {
    // Ground-truth-built surfel cloud for the sphere at frame 0; images of
    // frame 1 after a 0.05-unit translation; the field must move the cloud.
    TempDir tmp("coarse");
    SynthSpec spec;
    spec.scene = "translating-sphere";
    spec.frames = 2;
    spec.views = 6;
    spec.heldout = 0;
    spec.resolution = 48;
    spec.out_dir = tmp.path.string();
    const SequenceConfig cfg = synth_scene(spec);
    DatasetLoader loader(cfg);
    const FrameBundle f1 = loader.load_frame(1);

    const SeedPoints seeds = load_seed_points(tmp.path.string() + "/points_frame0.txt");
    SurfelCloud cloud(1);
    for (std::size_t i = 0; i < seeds.positions.size(); ++i) {
        Surfel s;
        s.center = seeds.positions[i];
        const Vec3 n = (seeds.positions[i] - Vec3(-0.225, 0, 0)).normalized();
        // Orient the disk to the sphere surface: rotate z onto n.
        const Vec3 axis = Vec3(0, 0, 1).cross(n);
        const double angle = std::acos(std::clamp(n.z(), -1.0, 1.0));
        Vec4 q(1, 0, 0, 0);
        if (axis.norm() > 1e-12) {
            const Vec3 a = axis.normalized();
            q = Vec4(std::cos(angle / 2), a.x() * std::sin(angle / 2), a.y() * std::sin(angle / 2),
                     a.z() * std::sin(angle / 2));
        }
        s.rotation = q;
        s.log_scale = Vec2::Constant(std::log(0.035));
        s.opacity_logit = logit(0.95);
        s.sh.assign(cloud.sh_coeffs() * 3, 0.0);
        for (int c = 0; c < 3; ++c) s.sh[c] = seeds.colors[i][c] / 0.28209479177387814;
        cloud.push_back(s);
    }

    TrainSchedule sched;
    sched.coarse_iters = 150;
    TransformField field = TransformField::for_cloud(cloud, FieldConfig{}, 5);
    std::vector<ImageD> images = f1.images, masks;
    for (const auto& m : f1.masks) masks.push_back(m);
    const CoarseFitReport rep =
        fit_coarse(field, cloud, images, masks, loader.cameras(), sched, Vec3::Zero(), 17);
    CHECK(rep.final_loss < rep.initial_loss);

    const SurfelCloud moved = ntc_apply(field, cloud);
    Vec3 mean_shift = Vec3::Zero();
    for (std::size_t i = 0; i < cloud.size(); ++i) mean_shift += moved.center[i] - cloud.center[i];
    mean_shift /= static_cast<double>(cloud.size());
    CHECK((mean_shift - Vec3(0.05, 0, 0)).norm() <= 0.02);

    SUBCASE("apply preserves counts and untouched attributes") {
        CHECK(moved.size() == cloud.size());
        CHECK(std::memcmp(moved.log_scale.data(), cloud.log_scale.data(), cloud.size() * sizeof(Vec2)) == 0);
        CHECK(std::memcmp(moved.opacity_logit.data(), cloud.opacity_logit.data(),
                          cloud.size() * sizeof(double)) == 0);
        CHECK(std::memcmp(moved.sh.data(), cloud.sh.data(), cloud.sh.size() * sizeof(double)) == 0);
    }
}

TEST_CASE("run_sequence: micro end-to-end with resume reproducibility") {
    TempDir data("e2e_data");
    SynthSpec spec;
    spec.scene = "translating-sphere";
    spec.frames = 3;
    spec.views = 5;
    spec.heldout = 1;
    spec.resolution = 32;
    spec.seed = 3;
    spec.out_dir = data.path.string();
    SequenceConfig cfg = synth_scene(spec);
    cfg.static_iters = 500;

    TrainOptions opt;
    opt.schedule = micro_schedule();
    opt.poisson.grid_depth = 5;

    TempDir runA("e2e_runA");
    cfg.output_dir = runA.path.string();
    run_sequence(cfg, opt);
    CHECK(fs::exists(runA.path / "metrics.csv"));
    for (int t = 0; t < 3; ++t) {
        CHECK(fs::exists(frame_dir(runA.path.string(), t) + "/cloud.bin"));
        CHECK(fs::exists(frame_dir(runA.path.string(), t) + "/render_v04.png"));
        CHECK(fs::exists(frame_dir(runA.path.string(), t) + "/mesh.ply"));
        CHECK(fs::exists(frame_dir(runA.path.string(), t) + "/points.ply"));
    }
    const auto rows_a = read_metrics_csv((runA.path / "metrics.csv").string());
    REQUIRE(rows_a.size() == 3);
    // The sphere is trainable even in the micro budget; keep a loose floor.
    CHECK(rows_a[2].view_psnr[0] > 18.0);

    // Interrupted run: first two frames, then resume.
    TempDir runB("e2e_runB");
    cfg.output_dir = runB.path.string();
    TrainOptions opt_b = opt;
    opt_b.max_frames = 2;
    run_sequence(cfg, opt_b);
    TrainOptions opt_resume = opt;
    opt_resume.resume = true;
    run_sequence(cfg, opt_resume);
    const auto rows_b = read_metrics_csv((runB.path / "metrics.csv").string());
    REQUIRE(rows_b.size() == 3);
    for (int t = 0; t < 3; ++t) {
        CHECK(rows_b[t].surfels == rows_a[t].surfels);
        for (std::size_t v = 0; v < rows_a[t].view_psnr.size(); ++v) {
            CHECK(rows_b[t].view_psnr[v] == doctest::Approx(rows_a[t].view_psnr[v]).epsilon(1e-9));
            CHECK(rows_b[t].view_ssim[v] == doctest::Approx(rows_a[t].view_ssim[v]).epsilon(1e-9));
        }
    }
}

TEST_CASE("invalid synth specs are rejected") {
    SynthSpec spec;
    spec.scene = "no-such-scene";
    spec.out_dir = "/tmp/unused_dynsurf";
    CHECK_THROWS_AS(synth_scene(spec), InvalidSpec);
    spec.scene = "translating-sphere";
    spec.views = 2;
    CHECK_THROWS_AS(synth_scene(spec), InvalidSpec);
}
