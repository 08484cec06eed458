#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mvgs/metrics/metrics.hpp"

using namespace mvgs;
using namespace mvgs::diff;
using namespace mvgs::metrics;
using geom::Intrinsics;
using geom::Pose;

namespace {

GaussianData blob_scene(int n, uint64_t seed, double spread = 0.35) {
    Rng rng(seed);
    GaussianData g;
    g.mu = NDArray(Shape{n, 3});
    g.scale = NDArray(Shape{n, 3});
    g.rot = NDArray(Shape{n, 4});
    g.opacity = NDArray(Shape{n, 1});
    g.color = NDArray(Shape{n, 3});
    for (int i = 0; i < n; ++i) {
        for (int c = 0; c < 3; ++c) g.mu.at2(i, c) = rng.uniform(-spread, spread);
        for (int c = 0; c < 3; ++c) g.scale.at2(i, c) = rng.uniform(0.18, 0.3);
        g.rot.at2(i, 0) = 1.0;
        for (int c = 1; c < 4; ++c) g.rot.at2(i, c) = 0.2 * rng.normal();
        g.opacity.at2(i, 0) = rng.uniform(0.6, 0.9);
        for (int c = 0; c < 3; ++c) g.color.at2(i, c) = rng.uniform(0.15, 0.85);
    }
    return g;
}

const Intrinsics kCam{30, 30, 12, 12, 24, 24};

std::vector<Pose> small_rig(int n, uint64_t seed) {
    Rng rng(seed);
    std::vector<Pose> rig;
    for (int i = 0; i < n; ++i)
        rig.push_back(geom::lookat_pose(rng.uniform(-0.5, 0.5), rng.uniform(-0.25, 0.25), 2.5));
    return rig;
}

NDArray jitter_colors(const NDArray& img, double sigma, uint64_t seed) {
    Rng rng(seed);
    double offset[3] = {sigma * rng.normal(), sigma * rng.normal(), sigma * rng.normal()};
    NDArray out = img;
    for (int64_t p = 0; p < img.size() / 3; ++p)
        for (int c = 0; c < 3; ++c)
            out[p * 3 + c] = std::clamp(img[p * 3 + c] + offset[c], 0.0, 1.0);
    return out;
}

}  // namespace

TEST_CASE("chamfer distance") {
    NDArray p = NDArray::from({2, 3}, {0, 0, 0, 1, 1, 1});
    CHECK(chamfer(p, p) == 0.0);

    NDArray a = NDArray::from({1, 3}, {0, 0, 0});
    NDArray b = NDArray::from({1, 3}, {1, 0, 0});
    CHECK(chamfer(a, b) == doctest::Approx(2.0));  // squared distance, both directions

    Rng rng(1);
    NDArray x(Shape{7, 3}), y(Shape{5, 3});
    for (auto& v : x.data) v = rng.normal();
    for (auto& v : y.data) v = rng.normal();
    CHECK(chamfer(x, y) == chamfer(y, x));
    CHECK(chamfer(x, y) > 0.0);

    CHECK_THROWS_AS(chamfer(NDArray(Shape{0, 3}), y), std::invalid_argument);
}

TEST_CASE("farthest point downsampling") {
    GaussianData g = blob_scene(40, 7, 0.5);

    SUBCASE("budget equal to the set returns every center") {
        NDArray all = downsample(g, 40, 3);
        CHECK(all.rows() == 40);
        // same multiset of points: chamfer against the originals is zero
        CHECK(chamfer(all, g.mu) == 0.0);
    }

    SUBCASE("budget one returns the seeded start point") {
        NDArray one_a = downsample(g, 1, 3);
        NDArray one_b = downsample(g, 1, 3);
        CHECK(one_a.data == one_b.data);
        // the chosen row exists among the centers
        bool found = false;
        for (int i = 0; i < g.count(); ++i)
            found = found || (g.mu.at2(i, 0) == one_a[0] && g.mu.at2(i, 1) == one_a[1] &&
                              g.mu.at2(i, 2) == one_a[2]);
        CHECK(found);
    }

    SUBCASE("spreads better than random subsets") {
        auto min_pairwise = [](const NDArray& pts) {
            double best = std::numeric_limits<double>::infinity();
            for (int i = 0; i < pts.rows(); ++i)
                for (int j = i + 1; j < pts.rows(); ++j) {
                    double d2 = 0;
                    for (int c = 0; c < 3; ++c) d2 += std::pow(pts.at2(i, c) - pts.at2(j, c), 2);
                    best = std::min(best, d2);
                }
            return best;
        };
        const double fps_spread = min_pairwise(downsample(g, 8, 5));
        Rng rng(9);
        for (int trial = 0; trial < 100; ++trial) {
            NDArray sub(Shape{8, 3});
            for (int i = 0; i < 8; ++i) {
                const int pick = rng.uniform_int(g.count());
                for (int c = 0; c < 3; ++c) sub.at2(i, c) = g.mu.at2(pick, c);
            }
            CHECK(fps_spread >= min_pairwise(sub));
        }
    }

    SUBCASE("short sets come back whole with a warning") {
        NDArray all = downsample(g, 100, 3);
        CHECK(all.rows() == 40);
    }
}

TEST_CASE("masked depth error") {
    GaussianData g = blob_scene(6, 11);
    std::vector<Pose> rig = small_rig(3, 13);

    CHECK(masked_depth_error(g, g, rig, kCam) == 0.0);

    SUBCASE("axial translation shows up as depth error") {
        GaussianData shifted = g;
        for (int i = 0; i < g.count(); ++i) shifted.mu.at2(i, 2) += 0.05;
        // only the frontal view sees the shift purely along its axis
        std::vector<Pose> frontal = {geom::lookat_pose(0, 0, 2.5)};
        const double err = masked_depth_error(g, shifted, frontal, kCam);
        CHECK(err == doctest::Approx(0.05).epsilon(0.15));
    }

    SUBCASE("disjoint silhouettes reject with a diagnostic") {
        // two small opaque blobs far apart on screen: both render, masks never meet
        GaussianData left = blob_scene(4, 43, 0.05);
        GaussianData right = left;
        for (int i = 0; i < left.count(); ++i) {
            left.mu.at2(i, 0) -= 0.8;
            right.mu.at2(i, 0) += 0.8;
            for (int c = 0; c < 3; ++c) {
                left.scale.at2(i, c) = 0.1;
                right.scale.at2(i, c) = 0.1;
            }
            left.opacity.at2(i, 0) = 0.95;
            right.opacity.at2(i, 0) = 0.95;
        }
        std::vector<Pose> frontal = {geom::lookat_pose(0, 0, 2.5)};
        CHECK_THROWS_WITH_AS(masked_depth_error(left, right, frontal, kCam),
                             doctest::Contains("overlapping"), std::runtime_error);
    }
}

TEST_CASE("psnr and ssim basics") {
    NDArray a(Shape{12, 12, 3}, 0.0);
    NDArray b(Shape{12, 12, 3}, 1.0);
    CHECK(psnr_db(a, a) == 99.0);
    CHECK(psnr_db(a, b) == doctest::Approx(0.0));
    CHECK(ssim(a, a) == doctest::Approx(1.0));
    CHECK(ssim(a, b) < 0.1);
}

TEST_CASE("fit_gaussians") {
    GaussianData target = blob_scene(5, 17);
    std::vector<Pose> rig = small_rig(5, 19);
    RenderOptions opts;
    std::vector<NDArray> images;
    for (const Pose& pose : rig) images.push_back(render::render_raw(target, pose, kCam, opts).rgb);

    SUBCASE("zero iterations returns the deterministic initialization") {
        FitConfig cfg;
        cfg.budget = 5;
        cfg.iterations = 0;
        cfg.seed = 21;
        FitResult a = fit_gaussians(images, rig, kCam, opts, cfg);
        FitResult b = fit_gaussians(images, rig, kCam, opts, cfg);
        CHECK(a.splats.mu.data == b.splats.mu.data);
        CHECK(a.final_loss == b.final_loss);
        CHECK(a.final_loss > 1e-5);  // untrained
    }

    SUBCASE("self-reconstruction of a known 5-splat scene") {
        FitConfig cfg;
        cfg.budget = 5;
        cfg.iterations = 2000;
        cfg.seed = 23;
        FitResult fit = fit_gaussians(images, rig, kCam, opts, cfg);
        CHECK(fit.final_loss < 1e-3);
    }

    SUBCASE("single gaussian recovers a solid color") {
        NDArray solid(Shape{24, 24, 3});
        for (int64_t p = 0; p < 24 * 24; ++p) {
            solid[p * 3 + 0] = 0.7;
            solid[p * 3 + 1] = 0.3;
            solid[p * 3 + 2] = 0.5;
        }
        // close-in cameras so a unit-scale splat can blanket the frame
        std::vector<Pose> two = {geom::lookat_pose(0, 0, 0.6), geom::lookat_pose(0.05, 0, 0.6)};
        FitConfig cfg;
        cfg.budget = 1;
        cfg.iterations = 800;
        cfg.seed = 25;
        cfg.init_radius = 0.05;
        FitResult fit = fit_gaussians({solid, solid}, two, kCam, opts, cfg);
        CHECK(std::abs(fit.splats.color[0] - 0.7) < 0.05);
        CHECK(std::abs(fit.splats.color[1] - 0.3) < 0.05);
        CHECK(std::abs(fit.splats.color[2] - 0.5) < 0.05);
    }
}

TEST_CASE("met3r_lite") {
    GaussianData g = blob_scene(8, 27);
    RenderOptions opts;
    Pose p1 = geom::lookat_pose(0.15, 0.05, 2.5);
    Pose p2 = geom::lookat_pose(-0.2, -0.05, 2.5);
    render::RenderOutput r1 = render::render_raw(g, p1, kCam, opts);
    render::RenderOutput r2 = render::render_raw(g, p2, kCam, opts);

    SUBCASE("identical views score zero") {
        Met3rResult r = met3r_lite(r1.rgb, r1.rgb, r1.depth, r1.depth, p1, p1, kCam);
        REQUIRE(r.has_overlap);
        CHECK(r.score < 1e-6);
    }

    SUBCASE("self-renders from two poses are consistent; jitter breaks them") {
        Met3rResult clean = met3r_lite(r1.rgb, r2.rgb, r1.depth, r2.depth, p1, p2, kCam);
        REQUIRE(clean.has_overlap);
        CHECK(clean.score < 0.05);

        Met3rResult dirty = met3r_lite(jitter_colors(r1.rgb, 0.1, 31), jitter_colors(r2.rgb, 0.1, 32),
                                       r1.depth, r2.depth, p1, p2, kCam);
        REQUIRE(dirty.has_overlap);
        CHECK(dirty.score >= 3.0 * clean.score);
    }

    SUBCASE("opposite cameras across a thick opaque object have no overlap") {
        // two opaque walls: each camera sees only its own side, and warped
        // points land a wall-gap away from the other view's depth
        const int side = 5;
        const int n = 2 * side * side;
        GaussianData walls;
        walls.mu = NDArray(Shape{n, 3});
        walls.scale = NDArray(Shape{n, 3}, 0.12);
        walls.rot = NDArray(Shape{n, 4});
        walls.opacity = NDArray(Shape{n, 1}, 0.999);
        walls.color = NDArray(Shape{n, 3}, 0.4);
        int idx = 0;
        for (int wz = 0; wz < 2; ++wz)
            for (int y = 0; y < side; ++y)
                for (int x = 0; x < side; ++x, ++idx) {
                    walls.mu.at2(idx, 0) = -0.5 + 0.25 * x;
                    walls.mu.at2(idx, 1) = -0.5 + 0.25 * y;
                    walls.mu.at2(idx, 2) = wz == 0 ? -0.4 : 0.4;
                    walls.rot.at2(idx, 0) = 1.0;
                    walls.color.at2(idx, 1) = wz == 0 ? 0.2 : 0.7;
                }
        Pose front = geom::lookat_pose(0, 0, 2.5);
        Pose back = geom::lookat_pose(M_PI, 0, 2.5);
        render::RenderOutput rf = render::render_raw(walls, front, kCam, opts);
        render::RenderOutput rb = render::render_raw(walls, back, kCam, opts);
        Met3rResult r = met3r_lite(rf.rgb, rb.rgb, rf.depth, rb.depth, front, back, kCam);
        CHECK(!r.has_overlap);
    }

    SUBCASE("monotone under a jitter ladder") {
        double prev = -1;
        for (double sigma : {0.0, 0.05, 0.1, 0.2}) {
            double mean = 0;
            for (uint64_t seed = 0; seed < 10; ++seed) {
                Met3rResult r = met3r_lite(jitter_colors(r1.rgb, sigma, 100 + seed),
                                           jitter_colors(r2.rgb, sigma, 200 + seed), r1.depth,
                                           r2.depth, p1, p2, kCam);
                REQUIRE(r.has_overlap);
                mean += r.score;
            }
            mean /= 10;
            CHECK(mean >= prev);
            prev = mean;
        }
    }
}

TEST_CASE("dual-fit texture consistency responds to corruption") {
    GaussianData g = blob_scene(6, 33);
    RenderOptions opts;
    std::vector<Pose> rig = small_rig(6, 35);
    std::vector<Pose> eval_rig = small_rig(2, 37);
    std::vector<NDArray> images;
    for (const Pose& pose : rig) images.push_back(render::render_raw(g, pose, kCam, opts).rgb);

    FitConfig cfg;
    cfg.budget = 24;
    cfg.iterations = 250;
    cfg.seed = 39;

    TextureConsistency clean = dual_fit_consistency(images, rig, eval_rig, kCam, opts, cfg);

    std::vector<NDArray> corrupted;
    for (size_t i = 0; i < images.size(); ++i)
        corrupted.push_back(jitter_colors(images[i], 0.25, 41 + i));
    TextureConsistency dirty = dual_fit_consistency(corrupted, rig, eval_rig, kCam, opts, cfg);

    CHECK(clean.cpsnr_db > dirty.cpsnr_db);
}

TEST_CASE("consistency report json") {
    ConsistencyReport r;
    r.cd = 0.125;
    r.depth_err = 0.03;
    r.cpsnr_db = 31.5;
    r.cssim = 0.87;
    r.met3r = 0.042;
    const std::string text = report_to_json(r);
    ConsistencyReport back = report_from_json(text);
    CHECK(back.cd == r.cd);
    CHECK(back.depth_err == r.depth_err);
    CHECK(back.cpsnr_db == r.cpsnr_db);
    CHECK(back.cssim == r.cssim);
    CHECK(back.met3r == r.met3r);
    CHECK(report_to_json(back) == text);

    CHECK_THROWS_AS(report_from_json("{\"format\":\"other\"}"), std::runtime_error);
    std::string wrong_version = text;
    const auto pos = wrong_version.find("\"version\": 1");
    wrong_version.replace(pos, 12, "\"version\": 9");
    CHECK_THROWS_AS(report_from_json(wrong_version), std::runtime_error);
}
