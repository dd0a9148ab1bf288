#include <doctest.h>

#include "dynsurf/losses.hpp"
#include "support/oracles.hpp"

using namespace dynsurf;

namespace {

ImageD random_image(int h, int w, int c, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    Rng rng(seed);
    ImageD img(h, w, c);
    for (double& v : img.raw()) v = rng.uniform(lo, hi);
    return img;
}

}  // namespace

TEST_CASE("photometric: identical images give zero") {
    const ImageD img = random_image(24, 24, 3, 7);
    CHECK(photometric_loss(img, img) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("photometric: constant offset produces the expected L1 term and a reference SSIM term") {
    const ImageD target = random_image(32, 32, 3, 13, 0.2, 0.7);
    ImageD rendered = target;
    for (double& v : rendered.raw()) v += 0.1;  // no clipping
    const double ref = dynsurf::test::reference_ssim(rendered, target);
    const double expected = 0.8 * 0.1 + 0.2 * (1.0 - ref);
    CHECK(photometric_loss(rendered, target) == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("photometric: all-black vs all-white L1 term is 0.8") {
    const ImageD black(16, 16, 3, 0.0);
    const ImageD white(16, 16, 3, 1.0);
    const double l = photometric_loss(black, white);
    const double ssim_part = 0.2 * (1.0 - ssim(black, white));
    CHECK(l - ssim_part == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("ssim: production and independent reference implementations agree") {
    for (const std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
        const ImageD a = random_image(28, 22, 3, seed);
        ImageD b = random_image(28, 22, 3, seed + 100);
        for (std::size_t i = 0; i < b.size(); ++i) b.raw()[i] = 0.5 * (a.raw()[i] + b.raw()[i]);
        CHECK(std::abs(ssim(a, b) - dynsurf::test::reference_ssim(a, b)) <= 1e-4);
    }
    const ImageD a = random_image(20, 20, 3, 42);
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("ssim backward matches finite differences") {
    const ImageD a0 = random_image(12, 10, 3, 21, 0.1, 0.9);
    const ImageD b = random_image(12, 10, 3, 22, 0.1, 0.9);
    ImageD g(12, 10, 3, 0.0);
    ssim_backward(a0, b, 1.0, g);
    ImageD a = a0;
    Rng rng(5);
    for (int probe = 0; probe < 40; ++probe) {
        const std::size_t i = rng.index(a.size());
        const double eps = 1e-6, saved = a.raw()[i];
        a.raw()[i] = saved + eps;
        const double up = ssim(a, b);
        a.raw()[i] = saved - eps;
        const double down = ssim(a, b);
        a.raw()[i] = saved;
        const double fd = (up - down) / (2 * eps);
        CHECK(std::abs(fd - g.raw()[i]) <= 1e-3 * std::max({std::abs(fd), std::abs(g.raw()[i]), 1e-6}));
    }
}

TEST_CASE("photometric backward matches finite differences") {
    const ImageD target = random_image(12, 10, 3, 31, 0.1, 0.9);
    ImageD rendered = random_image(12, 10, 3, 32, 0.1, 0.9);
    ImageD g(12, 10, 3, 0.0);
    photometric_loss_backward(rendered, target, 1.0, g);
    Rng rng(6);
    for (int probe = 0; probe < 40; ++probe) {
        const std::size_t i = rng.index(rendered.size());
        const double eps = 1e-6, saved = rendered.raw()[i];
        rendered.raw()[i] = saved + eps;
        const double up = photometric_loss(rendered, target);
        rendered.raw()[i] = saved - eps;
        const double down = photometric_loss(rendered, target);
        rendered.raw()[i] = saved;
        const double fd = (up - down) / (2 * eps);
        CHECK(std::abs(fd - g.raw()[i]) <= 1e-3 * std::max({std::abs(fd), std::abs(g.raw()[i]), 1e-6}));
    }
}

namespace {
CameraModel dn_camera() {
    CameraModel cam;
    cam.width = cam.height = 16;
    cam.fx = cam.fy = 24;
    cam.cx = cam.cy = 8;
    return cam;
}
}  // namespace

TEST_CASE("depth-normal: fronto-parallel plane with view-axis normals scores near zero") {
    const CameraModel cam = dn_camera();
    ImageD depth(16, 16, 1, 2.0), normal(16, 16, 3, 0.0), opacity(16, 16, 1, 1.0);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) normal.at(y, x, 2) = 1.0;
    CHECK(depth_normal_loss(depth, normal, opacity, cam) <= 1e-4);
    SUBCASE("flipped normals score near two") {
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) normal.at(y, x, 2) = -1.0;
        CHECK(depth_normal_loss(depth, normal, opacity, cam) == doctest::Approx(2.0).epsilon(1e-4));
    }
    SUBCASE("opacity below threshold everywhere gives zero") {
        opacity.fill(0.3);
        CHECK(depth_normal_loss(depth, normal, opacity, cam) == 0.0);
    }
}

TEST_CASE("depth-normal backward matches finite differences") {
    const CameraModel cam = dn_camera();
    Rng rng(3);
    ImageD depth(16, 16, 1), normal(16, 16, 3), opacity(16, 16, 1, 1.0);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            depth.at(y, x) = 2.0 + 0.05 * rng.normal();
            Vec3 n(0.2 * rng.normal(), 0.2 * rng.normal(), 1.0);
            n.normalize();
            for (int c = 0; c < 3; ++c) normal.at(y, x, c) = n[c];
        }
    ImageD g_depth(16, 16, 1, 0.0), g_normal(16, 16, 3, 0.0);
    depth_normal_loss_backward(depth, normal, opacity, cam, 1.0, g_depth, g_normal);
    for (int probe = 0; probe < 30; ++probe) {
        const std::size_t i = rng.index(depth.size());
        const double eps = 1e-6, saved = depth.raw()[i];
        depth.raw()[i] = saved + eps;
        const double up = depth_normal_loss(depth, normal, opacity, cam);
        depth.raw()[i] = saved - eps;
        const double down = depth_normal_loss(depth, normal, opacity, cam);
        depth.raw()[i] = saved;
        const double fd = (up - down) / (2 * eps);
        CHECK(std::abs(fd - g_depth.raw()[i]) <= 1e-3 * std::max({std::abs(fd), std::abs(g_depth.raw()[i]), 1e-6}));
    }
    for (int probe = 0; probe < 30; ++probe) {
        const std::size_t i = rng.index(normal.size());
        const double eps = 1e-6, saved = normal.raw()[i];
        normal.raw()[i] = saved + eps;
        const double up = depth_normal_loss(depth, normal, opacity, cam);
        normal.raw()[i] = saved - eps;
        const double down = depth_normal_loss(depth, normal, opacity, cam);
        normal.raw()[i] = saved;
        const double fd = (up - down) / (2 * eps);
        CHECK(std::abs(fd - g_normal.raw()[i]) <= 1e-3 * std::max({std::abs(fd), std::abs(g_normal.raw()[i]), 1e-6}));
    }
}

TEST_CASE("opacity loss: near-binary opacities score near zero, 0.5 scores the maximum") {
    std::vector<double> logits = {logit(0.001), logit(0.999), logit(0.999)};
    CHECK(opacity_loss(logits) <= 0.001 + 1e-12);
    std::vector<double> half = {0.0, 0.0};
    CHECK(opacity_loss(half) == doctest::Approx(0.5));
    CHECK(opacity_loss(std::span<const double>()) == 0.0);
}

TEST_CASE("mask loss examples") {
    ImageD mask(8, 8, 1, 0.0);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 4; ++x) mask.at(y, x) = 1.0;
    ImageD op(8, 8, 1, 0.5);
    CHECK(mask_loss(op, mask) == doctest::Approx(0.5));

    // opacity 1 inside the mask, 0.2 outside -> (1 - f) * 0.2
    ImageD op2(8, 8, 1, 0.2);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 4; ++x) op2.at(y, x) = 1.0;
    CHECK(mask_loss(op2, mask) == doctest::Approx(0.5 * 0.2));
    CHECK(mask_loss(mask, mask) == 0.0);
}

TEST_CASE("total loss: weighted sum per the composition rule") {
    LossTerms t;
    t.photometric = 1.0;
    t.temporal = 2.0;
    LossWeights w;
    w.temporal = 0.04;
    CHECK(total_loss(t, w, false) == doctest::Approx(1.08));
    SUBCASE("all weights zero leaves the photometric term") {
        CHECK(total_loss(t, LossWeights{}, false) == doctest::Approx(1.0));
    }
    SUBCASE("coarse stage ignores temporal, depth-normal and opacity terms") {
        t.depth_normal = 5.0;
        t.opacity = 7.0;
        t.mask = 3.0;
        LossWeights wc;
        wc.temporal = wc.depth_normal = wc.opacity = 1.0;
        wc.mask = 0.1;
        CHECK(total_loss(t, wc, true) == doctest::Approx(1.0 + 0.3));
    }
    SUBCASE("non-finite input throws") {
        t.photometric = std::numeric_limits<double>::quiet_NaN();
        CHECK_THROWS_AS(total_loss(t, w, false), NonFiniteLoss);
    }
}

TEST_CASE("schedule: ramp endpoints and midpoint") {
    TrainSchedule sched;
    sched.validate();
    const LossWeights w0 = sched.fine_weights(0);
    CHECK(w0.temporal == doctest::Approx(0.04));
    CHECK(w0.mask == doctest::Approx(0.01));
    const LossWeights w800 = sched.fine_weights(800);
    CHECK(w800.temporal == doctest::Approx(0.02));
    CHECK(w800.mask == doctest::Approx(0.11));
    const LossWeights w400 = sched.fine_weights(400);
    CHECK(w400.temporal == doctest::Approx(0.03));
    CHECK(w400.mask == doctest::Approx(0.06));
    CHECK(w400.opacity == doctest::Approx(0.01));

    SUBCASE("piecewise linear and continuous") {
        for (int i = 0; i < 800; i += 7) {
            const LossWeights a = sched.fine_weights(i);
            const LossWeights b = sched.fine_weights(i + 1);
            CHECK(std::abs(b.temporal - a.temporal) <= 0.03 / 800 + 1e-12);
            CHECK(std::abs(b.mask - a.mask) <= 0.11 / 800 + 1e-12);
        }
    }
    SUBCASE("densify window and reset iterations") {
        CHECK(sched.is_densify_iter(230));
        CHECK(sched.is_densify_iter(590));
        CHECK_FALSE(sched.is_densify_iter(229));
        CHECK_FALSE(sched.is_densify_iter(620));
        CHECK(sched.is_opacity_reset_iter(200));
        CHECK(sched.is_opacity_reset_iter(400));
        CHECK_FALSE(sched.is_opacity_reset_iter(600));  // densify window end
        CHECK_FALSE(sched.is_opacity_reset_iter(0));
    }
    SUBCASE("position lr decays exponentially between its endpoints") {
        const double lr0 = sched.position_lr(0, 800, 2.0);
        const double lr800 = sched.position_lr(800, 800, 2.0);
        CHECK(lr0 == doctest::Approx(2.0 * 1.6e-4));
        CHECK(lr800 == doctest::Approx(2.0 * 1.6e-6));
        CHECK(sched.position_lr(400, 800, 2.0) == doctest::Approx(std::sqrt(lr0 * lr800)));
    }
}

TEST_CASE("psnr: identity capped at 100, mse 0.01 gives 20 dB") {
    const ImageD a = random_image(8, 8, 3, 77);
    CHECK(psnr(a, a) == 100.0);
    ImageD b = a;
    for (double& v : b.raw()) v += 0.1;  // mse = 0.01
    CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-9));
}
