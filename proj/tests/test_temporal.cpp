#include <doctest.h>

#include <filesystem>

#include "dynsurf/image_io.hpp"
#include "dynsurf/temporal.hpp"

using namespace dynsurf;

TEST_CASE("cycle mask: zero flows are confident everywhere") {
    FlowField fwd(8, 8), bwd(8, 8);
    fwd.vectors.fill(0);
    bwd.vectors.fill(0);
    const ImageB mask = cycle_confidence_mask(fwd, bwd, 1.0);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) CHECK(mask.at(y, x) == 1);
}

TEST_CASE("cycle mask: consistent opposite constants pass, same-sign constants fail") {
    FlowField fwd(8, 12), bwd(8, 12);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 12; ++x) {
            bwd.vectors.at(y, x, 0) = 2.0;
            fwd.vectors.at(y, x, 0) = -2.0;
        }
    const ImageB ok = cycle_confidence_mask(fwd, bwd, 1.0);
    // Lookup at x+2 must stay in bounds for the forward sample.
    CHECK(ok.at(4, 5) == 1);

    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 12; ++x) fwd.vectors.at(y, x, 0) = 2.0;  // residual 4 px
    const ImageB bad = cycle_confidence_mask(fwd, bwd, 1.0);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 9; ++x) CHECK(bad.at(y, x) == 0);
}

TEST_CASE("warp: zero flow is a bitwise identity at integer centers") {
    Rng rng(9);
    ImageD map(9, 7, 3);
    for (double& v : map.raw()) v = rng.uniform();
    FlowField bwd(9, 7);
    bwd.vectors.fill(0);
    ImageB mask(9, 7, 1, 1);
    const auto [out, out_mask] = warp_by_flow(map, bwd, mask);
    for (int y = 0; y < 9; ++y)
        for (int x = 0; x < 7; ++x) {
            CHECK(out_mask.at(y, x) == 1);
            for (int c = 0; c < 3; ++c) CHECK(out.at(y, x, c) == map.at(y, x, c));
        }
}

TEST_CASE("warp: constant +1 px backward flow shifts a vertical edge one pixel left") {
    ImageD map(6, 10, 1, 0.0);
    for (int y = 0; y < 6; ++y)
        for (int x = 5; x < 10; ++x) map.at(y, x) = 1.0;  // edge between columns 4 and 5
    FlowField bwd(6, 10);
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 10; ++x) bwd.vectors.at(y, x, 0) = 1.0;
    ImageB mask(6, 10, 1, 1);
    const auto [out, out_mask] = warp_by_flow(map, bwd, mask);
    for (int y = 0; y < 6; ++y) {
        CHECK(out.at(y, 4) == 1.0);  // previously 0: the edge moved left
        CHECK(out.at(y, 3) == 0.0);
        CHECK(out_mask.at(y, 9) == 0);  // out-of-bounds lookup
        CHECK(out.at(y, 9) == 0.0);
    }
}

TEST_CASE("warp: invalid flow or mask pixels are masked out") {
    ImageD map(4, 4, 1, 1.0);
    FlowField bwd(4, 4);
    bwd.vectors.fill(0);
    bwd.valid.at(1, 1) = 0;
    ImageB mask(4, 4, 1, 1);
    mask.at(2, 2) = 0;
    const auto [out, out_mask] = warp_by_flow(map, bwd, mask);
    CHECK(out_mask.at(1, 1) == 0);
    CHECK(out_mask.at(2, 2) == 0);
    CHECK(out_mask.at(0, 0) == 1);
}

TEST_CASE("curvature: constant normal maps give zero for any constant") {
    Rng rng(4);
    for (int trial = 0; trial < 5; ++trial) {
        Vec3 n(rng.normal(), rng.normal(), rng.normal());
        n.normalize();
        ImageD map(7, 9, 3);
        for (int y = 0; y < 7; ++y)
            for (int x = 0; x < 9; ++x)
                for (int c = 0; c < 3; ++c) map.at(y, x, c) = n[c];
        const ImageD c = curvature_map(map);
        for (const double v : c.raw()) CHECK(v == 0.0);
    }
}

TEST_CASE("curvature: hand-evaluated 1x2 case gives sqrt(2)") {
    ImageD map(1, 2, 3, 0.0);
    map.at(0, 0, 0) = 1.0;  // (1,0,0)
    map.at(0, 1, 1) = 1.0;  // (0,1,0)
    const ImageD c = curvature_map(map);
    CHECK(c.at(0, 0) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
    CHECK(c.at(0, 1) == 0.0);  // replicated edge
}

TEST_CASE("curvature: linear-in-x field has |slope| at interior pixels") {
    const double a = 0.37;
    ImageD map(6, 8, 3, 0.0);
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 8; ++x) map.at(y, x, 0) = a * x;
    const ImageD c = curvature_map(map);
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x + 1 < 8; ++x) CHECK(c.at(y, x) == doctest::Approx(a).epsilon(1e-12));
}

TEST_CASE("temporal loss: identical maps give zero; constant-vs-sqrt2 gives two") {
    ImageD n(5, 5, 3, 0.0);
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 5; ++x) n.at(y, x, 2) = 1.0;
    ImageB mask(5, 5, 1, 1);
    CHECK(temporal_loss(n, n, mask) == 0.0);

    // Curvature of the warped branch is 0; build a current map whose
    // curvature is sqrt(2) at every masked pixel.
    ImageD cur(1, 2, 3, 0.0);
    cur.at(0, 0, 0) = 1.0;
    cur.at(0, 1, 1) = 1.0;
    ImageD warped(1, 2, 3, 0.0);
    warped.at(0, 0, 2) = warped.at(0, 1, 2) = 1.0;
    ImageB m2(1, 2, 1, 0);
    m2.at(0, 0) = 1;  // only the sqrt(2) pixel
    CHECK(temporal_loss(warped, cur, m2) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("temporal loss: all-false mask returns zero and counts a warning") {
    reset_temporal_empty_mask_count();
    ImageD n(4, 4, 3, 0.0);
    ImageB mask(4, 4, 1, 0);
    CHECK(temporal_loss(n, n, mask) == 0.0);
    CHECK(temporal_empty_mask_count() == 1);
}

TEST_CASE("temporal loss gradient matches finite differences on 8x8 random maps") {
    Rng rng(12);
    ImageD warped(8, 8, 3), cur(8, 8, 3);
    for (double& v : warped.raw()) v = rng.normal();
    for (double& v : cur.raw()) v = rng.normal();
    ImageB mask(8, 8, 1, 1);
    for (int i = 0; i < 6; ++i) mask.at(static_cast<int>(rng.index(8)), static_cast<int>(rng.index(8))) = 0;
    ImageD g(8, 8, 3, 0.0);
    temporal_loss_backward(warped, cur, mask, 1.0, g);
    for (int probe = 0; probe < 60; ++probe) {
        const std::size_t i = rng.index(cur.size());
        const double eps = 1e-6, saved = cur.raw()[i];
        cur.raw()[i] = saved + eps;
        const double up = temporal_loss(warped, cur, mask);
        cur.raw()[i] = saved - eps;
        const double down = temporal_loss(warped, cur, mask);
        cur.raw()[i] = saved;
        const double fd = (up - down) / (2 * eps);
        CHECK(std::abs(fd - g.raw()[i]) <= 1e-3 * std::max({std::abs(fd), std::abs(g.raw()[i]), 1e-6}));
    }
}

TEST_CASE("block matching: uniform images yield no valid flow") {
    ImageD flat(24, 24, 3, 0.5);
    auto provider = make_block_matching_provider();
    auto [fwd, bwd] = flow_forward_backward(*provider, 0, flat, flat, 1);
    for (int y = 0; y < 24; ++y)
        for (int x = 0; x < 24; ++x) {
            CHECK(fwd.valid.at(y, x) == 0);
            CHECK(bwd.valid.at(y, x) == 0);
        }
}

TEST_CASE("block matching: recovers an integer shift of a textured image") {
    Rng rng(3);
    ImageD prev(32, 32, 3);
    for (double& v : prev.raw()) v = rng.uniform();
    // Smooth it slightly so patches are matchable but not aliased.
    ImageD cur(32, 32, 3, 0.0);
    const int shift = 3;  // content moves +3 px in x from prev to cur
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
            for (int c = 0; c < 3; ++c) cur.at(y, x, c) = prev.at(y, ((x - shift) % 32 + 32) % 32, c);
    auto provider = make_block_matching_provider();
    auto [fwd, bwd] = flow_forward_backward(*provider, 0, prev, cur, 1);
    int good = 0, total = 0;
    for (int y = 10; y < 22; ++y)
        for (int x = 10; x < 22; ++x) {
            if (!bwd.valid.at(y, x)) continue;
            ++total;
            if (bwd.vectors.at(y, x, 0) == -shift && bwd.vectors.at(y, x, 1) == 0) ++good;
        }
    CHECK(total > 50);
    CHECK(good > total * 0.9);
}

TEST_CASE("flow files round-trip including the validity plane") {
    Rng rng(8);
    FlowField f(11, 13);
    for (double& v : f.vectors.raw()) v = static_cast<float>(rng.normal() * 3);
    for (int y = 0; y < 11; ++y)
        for (int x = 0; x < 13; ++x) f.valid.at(y, x) = rng.uniform() < 0.7 ? 1 : 0;
    const std::string path = std::filesystem::temp_directory_path() / "dynsurf_flow_test.flo1";
    write_flow(f, path);
    const FlowField g = read_flow(path);
    REQUIRE(g.width() == 13);
    REQUIRE(g.height() == 11);
    for (std::size_t i = 0; i < f.vectors.size(); ++i) CHECK(g.vectors.raw()[i] == f.vectors.raw()[i]);
    for (std::size_t i = 0; i < f.valid.size(); ++i) CHECK(g.valid.raw()[i] == f.valid.raw()[i]);
    std::filesystem::remove(path);
}

TEST_CASE("resolution mismatch is rejected") {
    ImageD a(8, 8, 3, 0.0), b(8, 9, 3, 0.0);
    auto provider = make_block_matching_provider();
    CHECK_THROWS_AS(flow_forward_backward(*provider, 0, a, b, 1), ResolutionMismatch);
}
