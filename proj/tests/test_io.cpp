#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "dynsurf/dataset.hpp"
#include "dynsurf/image_io.hpp"
#include "dynsurf/trainer.hpp"

using namespace dynsurf;
namespace fs = std::filesystem;

namespace {
struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("dynsurf_io_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};
}  // namespace

TEST_CASE("png: linear color survives the 8-bit sRGB round trip") {
    TempDir tmp;
    Rng rng(1);
    ImageD img(13, 17, 3);
    for (double& v : img.raw()) v = rng.uniform();
    const std::string p = (tmp.path / "x.png").string();
    write_png_srgb(img, p);
    const ImageD back = read_png_linear(p);
    REQUIRE(back.height() == 13);
    REQUIRE(back.width() == 17);
    double worst = 0;
    for (std::size_t i = 0; i < img.size(); ++i) worst = std::max(worst, std::abs(back.raw()[i] - img.raw()[i]));
    CHECK(worst <= 0.005);  // 8-bit quantization in sRGB space
}

TEST_CASE("png masks binarize at one half") {
    TempDir tmp;
    ImageD mask(6, 6, 1, 0.0);
    mask.at(2, 2) = 1.0;
    mask.at(3, 3) = 1.0;
    const std::string p = (tmp.path / "m.png").string();
    write_png_mask(mask, p);
    const ImageD back = read_png_mask(p);
    for (std::size_t i = 0; i < mask.size(); ++i) {
        CHECK((back.raw()[i] == 0.0 || back.raw()[i] == 1.0));
        CHECK(back.raw()[i] == mask.raw()[i]);
    }
}

TEST_CASE("fmap round trip preserves float32 payload") {
    TempDir tmp;
    Rng rng(2);
    ImageD img(9, 5, 3);
    for (double& v : img.raw()) v = static_cast<float>(rng.normal());
    const std::string p = (tmp.path / "d.fmap").string();
    write_fmap(img, p);
    const ImageD back = read_fmap(p);
    REQUIRE(back.channels() == 3);
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(back.raw()[i] == img.raw()[i]);
}

TEST_CASE("sequence config: parse, overrides, validation") {
    TempDir tmp;
    {
        std::ofstream f(tmp.path / "sequence.cfg");
        f << "frames = 4\nviews = 5\nwidth = 32\nheight = 32\n# comment line\n";
        f << "scene_box = -1 -1 -1 1 1 1\nheldout_views = 4\nseed = 9\n";
    }
    SequenceConfig cfg = load_sequence_config(tmp.path.string());
    CHECK(cfg.frames == 4);
    CHECK(cfg.views == 5);
    CHECK(cfg.seed == 9);
    CHECK(cfg.heldout_views == std::vector<int>{4});
    CHECK(cfg.training_views() == std::vector<int>{0, 1, 2, 3});
    cfg.validate();

    SUBCASE("unknown keys are rejected") {
        CHECK_THROWS_AS(apply_config_override(cfg, "bogus", "1"), InvalidSpec);
    }
    SUBCASE("single-view configs are rejected") {
        cfg.views = 1;
        cfg.heldout_views.clear();
        CHECK_THROWS_AS(cfg.validate(), InvalidSpec);
    }
    SUBCASE("write/read round trip") {
        write_sequence_config(cfg, (tmp.path / "sequence.cfg").string());
        const SequenceConfig cfg2 = load_sequence_config(tmp.path.string());
        CHECK(cfg2.frames == cfg.frames);
        CHECK(cfg2.scene_box_lo == cfg.scene_box_lo);
        CHECK(cfg2.heldout_views == cfg.heldout_views);
    }
}

TEST_CASE("cameras: round trip and non-orthonormal rejection") {
    TempDir tmp;
    std::vector<CameraModel> cams;
    cams.push_back(make_lookat_camera(Vec3(2, 1, 0.5), Vec3::Zero(), Vec3(0, 0, 1), 50, 32, 24));
    cams.push_back(make_lookat_camera(Vec3(-1, 2, -0.5), Vec3::Zero(), Vec3(0, 0, 1), 50, 32, 24));
    const std::string p = (tmp.path / "cameras.txt").string();
    write_cameras(cams, p);
    const auto back = load_cameras(p);
    REQUIRE(back.size() == 2);
    CHECK(back[0].R.isApprox(cams[0].R, 1e-15));
    CHECK(back[1].t.isApprox(cams[1].t, 1e-15));
    CHECK(back[0].fx == cams[0].fx);

    SUBCASE("rotation with > 1e-3 orthonormality deviation throws CalibrationParse") {
        std::ofstream f(p);
        f << "0 32 24 50 50 16 12  1.01 0 0 0  0 1 0 0  0 0 1 0\n";
        f.close();
        CHECK_THROWS_AS(load_cameras(p), CalibrationParse);
    }
    SUBCASE("malformed line throws CalibrationParse") {
        std::ofstream f(p);
        f << "0 32 24 50 50\n";
        f.close();
        CHECK_THROWS_AS(load_cameras(p), CalibrationParse);
    }
}

TEST_CASE("cloud checkpoints restore bitwise") {
    TempDir tmp;
    Rng rng(3);
    SurfelCloud cloud(2);
    for (int i = 0; i < 20; ++i) {
        Surfel s;
        s.center = Vec3(rng.normal(), rng.normal(), rng.normal());
        Vec4 q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
        s.rotation = q.normalized();
        s.log_scale = Vec2(rng.normal(), rng.normal());
        s.opacity_logit = rng.normal();
        s.sh.assign(cloud.sh_coeffs() * 3, 0.0);
        for (auto& v : s.sh) v = rng.normal();
        cloud.push_back(s);
    }
    const std::string p = (tmp.path / "cloud.bin").string();
    save_cloud(cloud, p);
    const SurfelCloud back = load_cloud(p);
    REQUIRE(back.size() == cloud.size());
    REQUIRE(back.sh_degree() == 2);
    CHECK(std::memcmp(back.center.data(), cloud.center.data(), cloud.size() * sizeof(Vec3)) == 0);
    CHECK(std::memcmp(back.rotation.data(), cloud.rotation.data(), cloud.size() * sizeof(Vec4)) == 0);
    CHECK(std::memcmp(back.sh.data(), cloud.sh.data(), cloud.sh.size() * sizeof(double)) == 0);
}

TEST_CASE("metrics csv round trip") {
    TempDir tmp;
    std::vector<MetricsRecord> rows(2);
    rows[0].frame = 0;
    rows[0].surfels = 123;
    rows[0].view_psnr = {31.25};
    rows[0].view_ssim = {0.97};
    rows[1].frame = 1;
    rows[1].surfels = 130;
    rows[1].view_psnr = {30.5};
    rows[1].view_ssim = {0.96};
    rows[1].consec_psnr = 33.0;
    rows[1].consec_ssim = 0.99;
    rows[1].consec_normal_mse = 1e-3;
    const std::string p = (tmp.path / "metrics.csv").string();
    write_metrics_csv(rows, {4}, p);
    std::size_t heldout = 0;
    const auto back = read_metrics_csv(p, &heldout);
    REQUIRE(heldout == 1);
    REQUIRE(back.size() == 2);
    CHECK(back[0].view_psnr[0] == rows[0].view_psnr[0]);
    CHECK(back[1].consec_normal_mse == rows[1].consec_normal_mse);
    CHECK(back[1].surfels == 130);
}
