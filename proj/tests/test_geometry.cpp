#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mvgs/common/rng.hpp"
#include "mvgs/geom/geometry.hpp"

using namespace mvgs;
using namespace mvgs::geom;

namespace {

Quaternion random_quat(Rng& rng) {
    return {rng.normal(), rng.normal(), rng.normal(), rng.normal()};
}

Pose random_pose(Rng& rng, double t_scale = 1.0) {
    Pose p;
    p.rotation = quat_to_rotation(random_quat(rng));
    p.translation = {t_scale * rng.normal(), t_scale * rng.normal(), t_scale * rng.normal()};
    return p;
}

double pose_diff(const Pose& a, const Pose& b) {
    double d = 0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) d = std::max(d, std::abs(a.rotation(i, j) - b.rotation(i, j)));
    for (int i = 0; i < 3; ++i) d = std::max(d, std::abs(a.translation[i] - b.translation[i]));
    return d;
}

Pose translate(double x, double y, double z) {
    Pose p;
    p.translation = {x, y, z};
    return p;
}

}  // namespace

TEST_CASE("quaternion to rotation") {
    Mat3 r = quat_to_rotation({1, 0, 0, 0});
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) CHECK(r(i, j) == (i == j ? 1.0 : 0.0));

    // pi about z
    Mat3 rz = quat_to_rotation({0, 0, 0, 1});
    CHECK(rz(0, 0) == doctest::Approx(-1.0));
    CHECK(rz(1, 1) == doctest::Approx(-1.0));
    CHECK(rz(2, 2) == doctest::Approx(1.0));
    CHECK(std::abs(rz(0, 1)) < 1e-15);

    CHECK_THROWS_AS(quat_to_rotation({0, 0, 0, 0}), std::invalid_argument);

    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        Quaternion q = random_quat(rng);
        Mat3 a = quat_to_rotation(q);
        Mat3 b = quat_to_rotation({-q.w, -q.x, -q.y, -q.z});
        for (int i = 0; i < 9; ++i) CHECK(a.m[i] == doctest::Approx(b.m[i]).epsilon(1e-12));
        // orthonormal with det +1
        Mat3 rtr = matmul(transpose(a), a);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                CHECK(std::abs(rtr(i, j) - (i == j ? 1.0 : 0.0)) < 1e-6);
        CHECK(std::abs(det(a) - 1.0) < 1e-6);
        // round-trip through quaternion extraction
        Quaternion qb = rotation_to_quat(a);
        Mat3 c = quat_to_rotation(qb);
        for (int i = 0; i < 9; ++i) CHECK(a.m[i] == doctest::Approx(c.m[i]).epsilon(1e-9));
    }
}

TEST_CASE("pose group laws") {
    CHECK(pose_diff(invert(Pose::identity()), Pose::identity()) == 0.0);

    Pose t1 = translate(1, 0, 0), t2 = translate(0, 1, 0);
    Pose c = compose(t1, t2);
    CHECK(pose_diff(c, translate(1, 1, 0)) == 0.0);

    Rng rng(9);
    for (int trial = 0; trial < 100; ++trial) {
        Pose a = random_pose(rng), b = random_pose(rng), d = random_pose(rng);
        CHECK(pose_diff(compose(a, invert(a)), Pose::identity()) < 1e-10);
        CHECK(pose_diff(compose(compose(a, b), d), compose(a, compose(b, d))) < 1e-10);
        CHECK(pose_diff(compose(a, Pose::identity()), a) == 0.0);
        CHECK(pose_valid(a));
    }
}

TEST_CASE("projection") {
    Intrinsics k{1, 1, 0, 0, 4, 4};
    auto u = project({0, 0, 1}, k);
    REQUIRE(u.has_value());
    CHECK((*u)[0] == 0.0);
    CHECK((*u)[1] == 0.0);

    Intrinsics k2{2, 2, 0, 0, 4, 4};
    auto u2 = project({0.5, 0, 1}, k2);
    REQUIRE(u2.has_value());
    CHECK((*u2)[0] == 1.0);

    CHECK(!project({0, 0, 1e-4}, k).has_value());
    CHECK(!project({0, 0, -1}, k).has_value());

    // analytic jacobian vs central differences
    Rng rng(13);
    Intrinsics kk{50, 60, 32, 30, 64, 64};
    for (int trial = 0; trial < 50; ++trial) {
        Vec3 x{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(1.5, 4.0)};
        auto jac = project_jacobian(x, kk);
        const double h = 1e-6;
        for (int c = 0; c < 3; ++c) {
            Vec3 xp = x, xm = x;
            xp[c] += h;
            xm[c] -= h;
            auto up = project(xp, kk), um = project(xm, kk);
            for (int r = 0; r < 2; ++r) {
                const double fd = ((*up)[r] - (*um)[r]) / (2 * h);
                CHECK(std::abs(jac[r][c] - fd) / std::max(1.0, std::abs(jac[r][c])) < 1e-6);
            }
        }
    }
}

TEST_CASE("view jacobians") {
    Intrinsics unit{1, 1, 0, 0, 2, 2};
    ViewJacobians j = view_jacobians({0, 0, 1}, unit);
    CHECK(j.yaw[0] == doctest::Approx(1.0));
    CHECK(j.yaw[1] == doctest::Approx(0.0));
    CHECK(j.pitch[0] == doctest::Approx(0.0));
    CHECK(j.pitch[1] == doctest::Approx(-1.0));

    // matches central differences of project(rotate(theta) * x)
    Rng rng(17);
    Intrinsics kk{80, 80, 32, 32, 64, 64};
    for (int trial = 0; trial < 50; ++trial) {
        Vec3 x{rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(1.5, 4.0)};
        ViewJacobians jj = view_jacobians(x, kk);
        const double h = 1e-6;
        auto probe = [&](const Mat3& rp, const Mat3& rm) {
            auto up = project(matvec(rp, x), kk);
            auto um = project(matvec(rm, x), kk);
            return std::array<double, 2>{((*up)[0] - (*um)[0]) / (2 * h),
                                         ((*up)[1] - (*um)[1]) / (2 * h)};
        };
        auto fd_yaw = probe(rot_y(h), rot_y(-h));
        auto fd_pitch = probe(rot_x(h), rot_x(-h));
        for (int r = 0; r < 2; ++r) {
            CHECK(std::abs(jj.yaw[r] - fd_yaw[r]) / std::max(1.0, std::abs(jj.yaw[r])) < 1e-5);
            CHECK(std::abs(jj.pitch[r] - fd_pitch[r]) / std::max(1.0, std::abs(jj.pitch[r])) < 1e-5);
        }
    }

    // near-axis dominance: yaw moves pixels horizontally, pitch vertically
    for (int trial = 0; trial < 200; ++trial) {
        const double z = rng.uniform(1.0, 4.0);
        Vec3 x{rng.uniform(-0.2, 0.2) * z, rng.uniform(-0.2, 0.2) * z, z};
        ViewJacobians jj = view_jacobians(x, kk);
        CHECK(std::abs(jj.yaw[0]) > std::abs(jj.yaw[1]));
        CHECK(std::abs(jj.pitch[1]) > std::abs(jj.pitch[0]));
    }
}

TEST_CASE("relative pose anchoring is exactly invariant under exact rotations") {
    Rng rng(21);
    for (int trial = 0; trial < 100; ++trial) {
        Pose p1 = random_pose(rng, 2.0), p2 = random_pose(rng, 2.0);
        Pose rel = relative_to(p1, p2);
        CHECK(pose_diff(relative_to(p1, p1), Pose::identity()) < 1e-14);

        Pose h;
        h.rotation = signed_permutation_rotation(rng.uniform_int(24));
        Pose rel2 = relative_to(compose(h, p1), compose(h, p2));
        CHECK(pose_diff(rel, rel2) == 0.0);  // bitwise

        // a general rigid transform cancels to fp precision
        Pose hg = random_pose(rng, 1.0);
        Pose rel3 = relative_to(compose(hg, p1), compose(hg, p2));
        CHECK(pose_diff(rel, rel3) < 1e-12);
    }

    Pose rel = relative_to(Pose::identity(), translate(1, 0, 0));
    CHECK(pose_diff(rel, translate(1, 0, 0)) == 0.0);
}

TEST_CASE("lookat rig") {
    Pose front = lookat_pose(0, 0, 2.5);
    CHECK(pose_valid(front));
    // camera sits on +Z looking back at the origin
    CHECK(front.translation.z == doctest::Approx(2.5));
    Vec3 fwd{front.rotation(0, 2), front.rotation(1, 2), front.rotation(2, 2)};
    CHECK(fwd.z == doctest::Approx(-1.0));

    // origin projects to the principal point from every rig pose
    Intrinsics k{70, 70, 32, 32, 64, 64};
    Rng rng(3);
    for (int i = 0; i < 20; ++i) {
        Pose p = lookat_pose(rng.uniform(-0.7, 0.7), rng.uniform(-0.35, 0.35), 2.5);
        CHECK(pose_valid(p));
        Pose inv = invert(p);
        Vec3 origin_cam = matvec(inv.rotation, Vec3{0, 0, 0}) + inv.translation;
        auto u = project(origin_cam, k);
        REQUIRE(u.has_value());
        CHECK((*u)[0] == doctest::Approx(32.0).epsilon(1e-9));
        CHECK((*u)[1] == doctest::Approx(32.0).epsilon(1e-9));
    }
}

TEST_CASE("intrinsics validation") {
    CHECK_THROWS_AS(validate(Intrinsics{0, 1, 0, 0, 4, 4}), std::invalid_argument);
    CHECK_THROWS_AS(validate(Intrinsics{1, 1, 4, 0, 4, 4}), std::invalid_argument);
    CHECK_NOTHROW(validate(Intrinsics{1, 1, 2, 2, 4, 4}));
}
