#pragma once

#include <array>
#include <optional>
#include <stdexcept>

namespace mvgs::geom {

struct Vec3 {
    double x = 0, y = 0, z = 0;
    double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
    double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

inline Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
double dot(Vec3 a, Vec3 b);
double norm(Vec3 a);

// Row-major 3x3.
struct Mat3 {
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};
    double& operator()(int r, int c) { return m[static_cast<size_t>(3 * r + c)]; }
    double operator()(int r, int c) const { return m[static_cast<size_t>(3 * r + c)]; }
    static Mat3 identity() { return {}; }
};

// Products use an order-canonical 3-term summation (terms sorted before
// adding), so that composing with an exactly representable rotation and then
// anchoring cancels bit-for-bit. See critic pose anchoring.
Mat3 matmul(const Mat3& a, const Mat3& b);
Mat3 transpose(const Mat3& a);
Vec3 matvec(const Mat3& a, Vec3 v);
double det(const Mat3& a);

struct Quaternion {
    double w = 1, x = 0, y = 0, z = 0;
};

// Normalizes q and returns the proper rotation matrix. Rejects near-zero norm.
Mat3 quat_to_rotation(const Quaternion& q);
Quaternion rotation_to_quat(const Mat3& r);
Quaternion quat_mul(const Quaternion& a, const Quaternion& b);

// Rigid camera pose, camera-to-world: X_world = R * X_cam + t.
// Camera looks down +Z in its own frame; the frame is right-handed.
struct Pose {
    Mat3 rotation;
    Vec3 translation;
    static Pose identity() { return {}; }
};

Pose compose(const Pose& a, const Pose& b);  // a then-applied-after b: (a*b)(x) = a(b(x))
Pose invert(const Pose& a);
bool pose_valid(const Pose& p, double tol = 1e-6);

// Relative pose of view k expressed in the anchor view's frame: anchor^-1 * k.
// Invariant under a global world transform P -> H * P of both arguments.
Pose relative_to(const Pose& anchor, const Pose& k);

struct Intrinsics {
    double fx = 1, fy = 1, cx = 0, cy = 0;
    int width = 0, height = 0;
};

void validate(const Intrinsics& k);

inline constexpr double kZNear = 1e-3;

// Pinhole projection of a camera-frame point; nullopt when culled (Z <= z_near).
std::optional<std::array<double, 2>> project(Vec3 x_cam, const Intrinsics& k, double z_near = kZNear);

// d(pixel)/d(camera point), rows (u,v) x cols (X,Y,Z).
std::array<std::array<double, 3>, 2> project_jacobian(Vec3 x_cam, const Intrinsics& k);

// Pixel displacement per radian of pitch (about camera +X) and yaw (about
// camera +Y), evaluated at angle zero for a camera-frame point.
struct ViewJacobians {
    std::array<double, 2> pitch;  // d u / d theta_x
    std::array<double, 2> yaw;    // d u / d theta_y
};
ViewJacobians view_jacobians(Vec3 x_cam, const Intrinsics& k, double z_near = kZNear);

Mat3 rot_x(double angle);
Mat3 rot_y(double angle);
Mat3 rot_z(double angle);

// Camera-to-world pose on a sphere of `radius`, looking at the origin.
// yaw/pitch in radians; yaw 0, pitch 0 places the camera on -Z... see impl.
Pose lookat_pose(double yaw, double pitch, double radius);

// Homogeneous 4x4 of a pose (row-major), translation scaled by 1/t_scale.
std::array<double, 16> pose_homogeneous(const Pose& p, double t_scale = 1.0);
std::array<double, 16> pose_homogeneous_inverse(const Pose& p, double t_scale = 1.0);

// The 24 proper rotations with entries in {-1,0,1}; index in [0,24).
Mat3 signed_permutation_rotation(int index);

}  // namespace mvgs::geom
