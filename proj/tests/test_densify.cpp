#include <doctest.h>

#include "dynsurf/densify.hpp"

using namespace dynsurf;

namespace {

SurfelCloud small_cloud(int n, std::uint64_t seed = 1) {
    Rng rng(seed);
    SurfelCloud cloud(1);
    for (int i = 0; i < n; ++i) {
        Surfel s;
        s.center = Vec3(rng.normal(), rng.normal(), rng.normal());
        Vec4 q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
        s.rotation = q.normalized();
        s.log_scale = Vec2(std::log(0.1), std::log(0.05));
        s.opacity_logit = 1.0;
        s.sh.assign(cloud.sh_coeffs() * 3, 0.3);
        cloud.push_back(s);
    }
    return cloud;
}

GradStats stats_with_avgs(const std::vector<double>& avgs) {
    GradStats st;
    st.resize(avgs.size());
    for (std::size_t i = 0; i < avgs.size(); ++i) {
        st.accum_norm[i] = avgs[i];
        st.accum_count[i] = 1;
        st.last_dir[i] = Vec3(1, 0, 0);
    }
    return st;
}

}  // namespace

TEST_CASE("accumulate: zero views leaves stats unchanged") {
    GradStats st;
    st.resize(3);
    const GradStats before = st;
    // no call: stats untouched by construction
    CHECK(st.accum_norm == before.accum_norm);
    CHECK(st.accum_count == before.accum_count);
}

TEST_CASE("accumulate: (3,4) then (0,0) adds 5.0 and counts both visible views") {
    GradStats st;
    st.resize(1);
    std::vector<Vec2> g1 = {Vec2(3, 4)};
    std::vector<Vec3> w1 = {Vec3(0.1, 0, 0)};
    std::vector<std::uint8_t> vis = {1};
    accumulate_grad_stats(st, g1, vis, w1);
    std::vector<Vec2> g2 = {Vec2(0, 0)};
    std::vector<Vec3> w2 = {Vec3::Zero()};
    accumulate_grad_stats(st, g2, vis, w2);
    CHECK(st.accum_norm[0] == doctest::Approx(5.0));
    CHECK(st.accum_count[0] == 2);
    CHECK(st.average(0) == doctest::Approx(2.5));
    SUBCASE("invisible views do not count") {
        std::vector<std::uint8_t> invis = {0};
        accumulate_grad_stats(st, g1, invis, w1);
        CHECK(st.accum_count[0] == 2);
    }
    SUBCASE("length mismatch throws") {
        std::vector<Vec2> wrong = {Vec2(1, 1), Vec2(2, 2)};
        std::vector<std::uint8_t> vw = {1, 1};
        std::vector<Vec3> ww = {Vec3::Zero(), Vec3::Zero()};
        CHECK_THROWS_AS(accumulate_grad_stats(st, wrong, vw, ww), LengthMismatch);
    }
}

TEST_CASE("unified densify: factors follow the clamped-normalized rule") {
    // Candidate grads {2, 6}: mean 4, ceiling 8 -> factors {0.25, 0.75}.
    SurfelCloud cloud = small_cloud(2);
    GradStats st = stats_with_avgs({2.0, 6.0});
    Rng rng(1);
    const DensifyReport rep = unified_densify(cloud, st, 1.0, 0.0, rng, nullptr);
    CHECK(rep.candidates == 2);
    CHECK(rep.min_factor == doctest::Approx(0.25));
    CHECK(rep.max_factor == doctest::Approx(0.75));
    CHECK(rep.mean_factor == doctest::Approx(0.5));
    CHECK(cloud.size() == 4);  // grows by exactly |candidates|
}

TEST_CASE("unified densify: outlier gradients saturate the clamp at factor one") {
    SurfelCloud cloud = small_cloud(3);
    GradStats st = stats_with_avgs({2.0, 6.0, 100.0});  // mean 36, ceiling 72
    Rng rng(2);
    const DensifyReport rep = unified_densify(cloud, st, 1.0, 0.0, rng, nullptr);
    CHECK(rep.max_factor == doctest::Approx(1.0));
    SUBCASE("single candidate always gets factor one half") {
        SurfelCloud c2 = small_cloud(1);
        GradStats st2 = stats_with_avgs({7.7});
        Rng rng2(3);
        const DensifyReport r2 = unified_densify(c2, st2, 1.0, 0.0, rng2, nullptr);
        CHECK(r2.candidates == 1);
        CHECK(r2.min_factor == doctest::Approx(0.5));
        CHECK(r2.max_factor == doctest::Approx(0.5));
    }
}

TEST_CASE("unified densify: no candidates returns the cloud unchanged with an empty report") {
    SurfelCloud cloud = small_cloud(3);
    const std::vector<Vec3> centers = cloud.center;
    GradStats st = stats_with_avgs({0.1, 0.2, 0.3});
    Rng rng(4);
    const DensifyReport rep = unified_densify(cloud, st, 1.0, 0.0, rng, nullptr);
    CHECK(rep.candidates == 0);
    CHECK(cloud.size() == 3);
    for (int i = 0; i < 3; ++i) CHECK(cloud.center[i] == centers[i]);
}

TEST_CASE("unified densify: children stay in the disk plane and inherit everything but position") {
    SurfelCloud cloud = small_cloud(1, 77);
    GradStats st = stats_with_avgs({5.0});
    st.last_dir[0] = Vec3(0, 0, 2.0);
    Rng rng(5);
    const Vec3 parent_center = cloud.center[0];
    const Vec3 normal = surfel_normal(cloud.rotation[0].normalized());
    const double lr_pos = 0.01;
    unified_densify(cloud, st, 1.0, lr_pos, rng, nullptr);
    REQUIRE(cloud.size() == 2);
    // Child offset is orthogonal to the parent normal.
    const Vec3 offset = cloud.center[1] - parent_center;
    CHECK(std::abs(offset.dot(normal)) <= 1e-9 * std::max(1.0, offset.norm()));
    // Attributes inherited; the original moved by lr_pos against its gradient.
    CHECK(cloud.rotation[1] == cloud.rotation[0]);
    CHECK(cloud.log_scale[1] == cloud.log_scale[0]);
    CHECK(cloud.opacity_logit[1] == cloud.opacity_logit[0]);
    CHECK((cloud.center[0] - (parent_center - Vec3(0, 0, lr_pos))).norm() <= 1e-12);
    // Stats were reset to the new size.
    CHECK(st.size() == 2);
    CHECK(st.accum_count[0] == 0);
}

TEST_CASE("unified densify: bit-for-bit reproducible under a fixed seed") {
    for (int round = 0; round < 2; ++round) {
        SurfelCloud cloud = small_cloud(6, 9);
        GradStats st = stats_with_avgs({1, 2, 3, 4, 5, 6});
        Rng rng(1234);
        unified_densify(cloud, st, 2.5, 1e-3, rng, nullptr);
        static std::vector<Vec3> reference;
        if (round == 0)
            reference = cloud.center;
        else
            for (std::size_t i = 0; i < cloud.size(); ++i) CHECK(cloud.center[i] == reference[i]);
    }
}

TEST_CASE("unified densify: sampled offsets have the advertised covariance") {
    // Single candidate with factor 0.5: sampling stds are 0.5 * scale.
    const int draws = 100000;
    SurfelCloud base = small_cloud(1, 42);
    const Mat3 rot = quat_to_rotmat(base.rotation[0].normalized());
    const Vec2 scale = base.log_scale[0].array().exp().matrix();
    const Vec2 expect_std = 0.5 * scale;
    Rng rng(4242);
    double s00 = 0, s11 = 0, s01 = 0;
    for (int k = 0; k < draws; ++k) {
        SurfelCloud cloud = base;
        GradStats st = stats_with_avgs({5.0});
        unified_densify(cloud, st, 1.0, 0.0, rng, nullptr);
        const Vec3 offset = cloud.center[1] - base.center[0];
        const double u = offset.dot(rot.col(0));
        const double v = offset.dot(rot.col(1));
        s00 += u * u;
        s11 += v * v;
        s01 += u * v;
    }
    s00 /= draws;
    s11 /= draws;
    s01 /= draws;
    CHECK(std::abs(s00 - expect_std[0] * expect_std[0]) <= 0.03 * expect_std[0] * expect_std[0]);
    CHECK(std::abs(s11 - expect_std[1] * expect_std[1]) <= 0.03 * expect_std[1] * expect_std[1]);
    CHECK(std::abs(s01) <= 0.03 * expect_std[0] * expect_std[1]);
}

TEST_CASE("prune: low opacity disappears, oversized disappears, reset clamps") {
    SurfelCloud cloud = small_cloud(3);
    cloud.opacity_logit[0] = logit(0.001);
    cloud.log_scale[1] = Vec2::Constant(std::log(50.0));
    GradStats st;
    st.resize(3);
    const int pruned = prune_and_reset(cloud, st, false, 0.005, 10.0, nullptr);
    CHECK(pruned == 2);
    CHECK(cloud.size() == 1);

    SUBCASE("reset clamps every opacity at or below 1%") {
        prune_and_reset(cloud, st, true, 0.005, 10.0, nullptr);
        for (const double l : cloud.opacity_logit) CHECK(sigmoid(l) <= 0.01 + 1e-12);
    }
}

TEST_CASE("prune: nothing to do leaves the cloud bytewise unchanged") {
    SurfelCloud cloud = small_cloud(4);
    const SurfelCloud before = cloud;
    GradStats st;
    st.resize(4);
    const int pruned = prune_and_reset(cloud, st, false, 0.005, 10.0, nullptr);
    CHECK(pruned == 0);
    CHECK(cloud.revision == before.revision);
    CHECK(std::memcmp(cloud.center.data(), before.center.data(), cloud.size() * sizeof(Vec3)) == 0);
    CHECK(std::memcmp(cloud.sh.data(), before.sh.data(), cloud.sh.size() * sizeof(double)) == 0);
}

TEST_CASE("prune: removing everything raises AllPruned") {
    SurfelCloud cloud = small_cloud(2);
    cloud.opacity_logit[0] = cloud.opacity_logit[1] = logit(0.0001);
    GradStats st;
    st.resize(2);
    CHECK_THROWS_AS(prune_and_reset(cloud, st, false, 0.005, 10.0, nullptr), AllPruned);
}

TEST_CASE("conventional densify: clones small candidates, splits large ones") {
    SurfelCloud cloud = small_cloud(2);
    cloud.log_scale[1] = Vec2::Constant(std::log(0.5));  // above percent_dense * extent
    GradStats st = stats_with_avgs({5.0, 5.0});
    Rng rng(6);
    const DensifyReport rep = conventional_densify(cloud, st, 1.0, 0.01, 2.0, rng, nullptr);
    CHECK(rep.candidates == 2);
    // clone adds 1; split adds 2 and removes the original: 2 + 1 + 2 - 1 = 4
    CHECK(cloud.size() == 4);
    // Split children carry shrunken scales.
    int shrunk = 0;
    for (std::size_t i = 0; i < cloud.size(); ++i)
        if (std::abs(cloud.log_scale[i][0] - (std::log(0.5) - std::log(1.6))) < 1e-12) ++shrunk;
    CHECK(shrunk == 2);
}

TEST_CASE("optimizer moments follow structural edits") {
    SurfelCloud cloud = small_cloud(3);
    TrainSchedule sched;
    CloudOptimizer opt(cloud, sched, 1.0);
    CloudGrads grads;
    grads.resize_like(cloud);
    for (std::size_t i = 0; i < cloud.size(); ++i) grads.center[i] = Vec3(1, 0, 0);
    opt.step(grads, 0, 100);
    GradStats st = stats_with_avgs({5.0, 0.0, 5.0});
    Rng rng(7);
    unified_densify(cloud, st, 1.0, 1e-3, rng, &opt);
    CHECK(cloud.size() == 5);
    // A further step must not throw and keeps arrays aligned.
    grads.resize_like(cloud);
    opt.step(grads, 1, 100);
    cloud.check_consistent();
    for (const auto& q : cloud.rotation) CHECK(std::abs(q.norm() - 1.0) <= 1e-6);
}
