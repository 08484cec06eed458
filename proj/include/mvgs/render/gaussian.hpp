#pragma once

#include <stdexcept>
#include <vector>

#include "mvgs/diff/ndarray.hpp"
#include "mvgs/geom/geometry.hpp"

namespace mvgs::render {

// Raw splat attribute arrays. Scales are plain positive lengths, opacity is
// post-activation in (0,1), color in [0,1], rotations are quaternions that
// every consumer normalizes.
struct GaussianData {
    diff::NDArray mu;       // [N,3]
    diff::NDArray scale;    // [N,3]
    diff::NDArray rot;      // [N,4] (w,x,y,z)
    diff::NDArray opacity;  // [N,1]
    diff::NDArray color;    // [N,3]

    int count() const { return mu.shape.empty() ? 0 : mu.shape[0]; }

    void validate() const {
        const int n = count();
        auto want = [&](const diff::NDArray& a, int cols, const char* name) {
            if (a.ndim() != 2 || a.shape[0] != n || a.shape[1] != cols)
                throw std::invalid_argument(std::string("GaussianData: bad ") + name + " shape " +
                                            diff::shape_str(a.shape));
        };
        want(mu, 3, "mu");
        want(scale, 3, "scale");
        want(rot, 4, "rot");
        want(opacity, 1, "opacity");
        want(color, 3, "color");
    }
};

// Applies a rigid world transform h to every splat.
inline GaussianData transform(const GaussianData& g, const geom::Pose& h) {
    GaussianData out = g;
    const geom::Quaternion qh = geom::rotation_to_quat(h.rotation);
    for (int i = 0; i < g.count(); ++i) {
        geom::Vec3 p{g.mu.at2(i, 0), g.mu.at2(i, 1), g.mu.at2(i, 2)};
        geom::Vec3 pp = geom::matvec(h.rotation, p) + h.translation;
        for (int c = 0; c < 3; ++c) out.mu.at2(i, c) = pp[c];
        geom::Quaternion q{g.rot.at2(i, 0), g.rot.at2(i, 1), g.rot.at2(i, 2), g.rot.at2(i, 3)};
        geom::Quaternion qq = geom::quat_mul(qh, q);
        out.rot.at2(i, 0) = qq.w;
        out.rot.at2(i, 1) = qq.x;
        out.rot.at2(i, 2) = qq.y;
        out.rot.at2(i, 3) = qq.z;
    }
    return out;
}

inline GaussianData concat(const std::vector<const GaussianData*>& parts) {
    using diff::kernels::concat_rows;
    std::vector<const diff::NDArray*> mu, sc, rot, op, co;
    for (const auto* p : parts) {
        mu.push_back(&p->mu);
        sc.push_back(&p->scale);
        rot.push_back(&p->rot);
        op.push_back(&p->opacity);
        co.push_back(&p->color);
    }
    GaussianData out;
    out.mu = concat_rows(mu);
    out.scale = concat_rows(sc);
    out.rot = concat_rows(rot);
    out.opacity = concat_rows(op);
    out.color = concat_rows(co);
    return out;
}

}  // namespace mvgs::render
