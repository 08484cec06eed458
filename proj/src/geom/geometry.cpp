#include "mvgs/geom/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace mvgs::geom {

double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
double norm(Vec3 a) { return std::sqrt(dot(a, a)); }

namespace {

// Order-canonical sum of three products: sorting makes the result invariant
// to permutations of the terms, which pose anchoring relies on.
inline double dot3_sorted(double a0, double b0, double a1, double b1, double a2, double b2) {
    double p[3] = {a0 * b0, a1 * b1, a2 * b2};
    if (p[0] > p[1]) std::swap(p[0], p[1]);
    if (p[1] > p[2]) std::swap(p[1], p[2]);
    if (p[0] > p[1]) std::swap(p[0], p[1]);
    return (p[0] + p[1]) + p[2];
}

Vec3 cross(Vec3 a, Vec3 b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

}  // namespace

Mat3 matmul(const Mat3& a, const Mat3& b) {
    Mat3 out;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            out(i, j) = dot3_sorted(a(i, 0), b(0, j), a(i, 1), b(1, j), a(i, 2), b(2, j));
    return out;
}

Mat3 transpose(const Mat3& a) {
    Mat3 out;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) out(i, j) = a(j, i);
    return out;
}

Vec3 matvec(const Mat3& a, Vec3 v) {
    Vec3 out;
    for (int i = 0; i < 3; ++i)
        out[i] = dot3_sorted(a(i, 0), v.x, a(i, 1), v.y, a(i, 2), v.z);
    return out;
}

double det(const Mat3& a) {
    return a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) -
           a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0)) +
           a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0));
}

Mat3 quat_to_rotation(const Quaternion& q) {
    const double n = std::sqrt(q.w * q.w + q.x * q.x + q.y * q.y + q.z * q.z);
    if (n <= 1e-12) throw std::invalid_argument("quat_to_rotation: near-zero norm quaternion");
    const double w = q.w / n, x = q.x / n, y = q.y / n, z = q.z / n;
    Mat3 r;
    r(0, 0) = 1 - 2 * (y * y + z * z);
    r(0, 1) = 2 * (x * y - w * z);
    r(0, 2) = 2 * (x * z + w * y);
    r(1, 0) = 2 * (x * y + w * z);
    r(1, 1) = 1 - 2 * (x * x + z * z);
    r(1, 2) = 2 * (y * z - w * x);
    r(2, 0) = 2 * (x * z - w * y);
    r(2, 1) = 2 * (y * z + w * x);
    r(2, 2) = 1 - 2 * (x * x + y * y);
    return r;
}

Quaternion rotation_to_quat(const Mat3& r) {
    Quaternion q;
    const double tr = r(0, 0) + r(1, 1) + r(2, 2);
    if (tr > 0) {
        const double s = std::sqrt(tr + 1.0) * 2;
        q.w = 0.25 * s;
        q.x = (r(2, 1) - r(1, 2)) / s;
        q.y = (r(0, 2) - r(2, 0)) / s;
        q.z = (r(1, 0) - r(0, 1)) / s;
    } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
        const double s = std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2)) * 2;
        q.w = (r(2, 1) - r(1, 2)) / s;
        q.x = 0.25 * s;
        q.y = (r(0, 1) + r(1, 0)) / s;
        q.z = (r(0, 2) + r(2, 0)) / s;
    } else if (r(1, 1) > r(2, 2)) {
        const double s = std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2)) * 2;
        q.w = (r(0, 2) - r(2, 0)) / s;
        q.x = (r(0, 1) + r(1, 0)) / s;
        q.y = 0.25 * s;
        q.z = (r(1, 2) + r(2, 1)) / s;
    } else {
        const double s = std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1)) * 2;
        q.w = (r(1, 0) - r(0, 1)) / s;
        q.x = (r(0, 2) + r(2, 0)) / s;
        q.y = (r(1, 2) + r(2, 1)) / s;
        q.z = 0.25 * s;
    }
    return q;
}

Quaternion quat_mul(const Quaternion& a, const Quaternion& b) {
    return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

Pose compose(const Pose& a, const Pose& b) {
    Pose out;
    out.rotation = matmul(a.rotation, b.rotation);
    const Vec3 rt = matvec(a.rotation, b.translation);
    out.translation = rt + a.translation;
    return out;
}

Pose invert(const Pose& a) {
    Pose out;
    out.rotation = transpose(a.rotation);
    const Vec3 rt = matvec(out.rotation, a.translation);
    out.translation = {-rt.x, -rt.y, -rt.z};
    return out;
}

bool pose_valid(const Pose& p, double tol) {
    const Mat3 rtr = matmul(transpose(p.rotation), p.rotation);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            if (std::abs(rtr(i, j) - (i == j ? 1.0 : 0.0)) > tol) return false;
    return std::abs(det(p.rotation) - 1.0) <= tol;
}

Pose relative_to(const Pose& anchor, const Pose& k) { return compose(invert(anchor), k); }

void validate(const Intrinsics& k) {
    if (k.fx <= 0 || k.fy <= 0) throw std::invalid_argument("Intrinsics: focal lengths must be positive");
    if (k.width <= 0 || k.height <= 0) throw std::invalid_argument("Intrinsics: image size must be positive");
    if (k.cx < 0 || k.cx >= k.width || k.cy < 0 || k.cy >= k.height)
        throw std::invalid_argument("Intrinsics: principal point outside image");
}

std::optional<std::array<double, 2>> project(Vec3 x, const Intrinsics& k, double z_near) {
    if (x.z <= z_near) return std::nullopt;
    return std::array<double, 2>{k.fx * x.x / x.z + k.cx, k.fy * x.y / x.z + k.cy};
}

std::array<std::array<double, 3>, 2> project_jacobian(Vec3 x, const Intrinsics& k) {
    const double iz = 1.0 / x.z;
    return {{{k.fx * iz, 0.0, -k.fx * x.x * iz * iz},
             {0.0, k.fy * iz, -k.fy * x.y * iz * iz}}};
}

ViewJacobians view_jacobians(Vec3 x, const Intrinsics& k, double z_near) {
    if (x.z <= z_near) throw std::invalid_argument("view_jacobians: point behind near plane");
    const double z2 = x.z * x.z;
    ViewJacobians j;
    // yaw about +Y rotates the point with velocity (Z, 0, -X) at angle zero
    j.yaw = {k.fx * (z2 + x.x * x.x) / z2, k.fy * x.x * x.y / z2};
    // pitch about +X rotates with velocity (0, -Z, Y)
    j.pitch = {-k.fx * x.x * x.y / z2, -k.fy * (z2 + x.y * x.y) / z2};
    return j;
}

Mat3 rot_x(double a) {
    Mat3 r;
    const double c = std::cos(a), s = std::sin(a);
    r(1, 1) = c; r(1, 2) = -s;
    r(2, 1) = s; r(2, 2) = c;
    return r;
}

Mat3 rot_y(double a) {
    Mat3 r;
    const double c = std::cos(a), s = std::sin(a);
    r(0, 0) = c; r(0, 2) = s;
    r(2, 0) = -s; r(2, 2) = c;
    return r;
}

Mat3 rot_z(double a) {
    Mat3 r;
    const double c = std::cos(a), s = std::sin(a);
    r(0, 0) = c; r(0, 1) = -s;
    r(1, 0) = s; r(1, 1) = c;
    return r;
}

Pose lookat_pose(double yaw, double pitch, double radius) {
    // World: +Y up, the subject faces +Z. yaw=pitch=0 puts the camera in front.
    const Vec3 eye{radius * std::sin(yaw) * std::cos(pitch), radius * std::sin(pitch),
                   radius * std::cos(yaw) * std::cos(pitch)};
    Vec3 fwd = {-eye.x, -eye.y, -eye.z};
    const double fn = norm(fwd);
    fwd = (1.0 / fn) * fwd;
    // camera +Y maps to increasing pixel row -> world-down, orthogonalized
    Vec3 down{0, -1, 0};
    Vec3 ycam = down - dot(down, fwd) * fwd;
    ycam = (1.0 / norm(ycam)) * ycam;
    const Vec3 xcam = cross(ycam, fwd);
    Pose p;
    for (int i = 0; i < 3; ++i) {
        p.rotation(i, 0) = xcam[i];
        p.rotation(i, 1) = ycam[i];
        p.rotation(i, 2) = fwd[i];
    }
    p.translation = eye;
    return p;
}

std::array<double, 16> pose_homogeneous(const Pose& p, double t_scale) {
    std::array<double, 16> h{};
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) h[static_cast<size_t>(4 * i + j)] = p.rotation(i, j);
        h[static_cast<size_t>(4 * i + 3)] = p.translation[i] / t_scale;
    }
    h[15] = 1.0;
    return h;
}

std::array<double, 16> pose_homogeneous_inverse(const Pose& p, double t_scale) {
    return pose_homogeneous(invert(p), t_scale);
}

Mat3 signed_permutation_rotation(int index) {
    static const std::vector<Mat3> table = [] {
        std::vector<Mat3> out;
        const int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
        for (const auto& perm : perms)
            for (int sbits = 0; sbits < 8; ++sbits) {
                Mat3 m;
                m.m.fill(0.0);
                for (int i = 0; i < 3; ++i) m(i, perm[i]) = (sbits >> i) & 1 ? -1.0 : 1.0;
                if (det(m) > 0.5) out.push_back(m);
            }
        return out;
    }();
    return table[static_cast<size_t>(index % 24 + (index % 24 < 0 ? 24 : 0))];
}

}  // namespace mvgs::geom
