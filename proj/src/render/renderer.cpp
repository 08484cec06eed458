#include "mvgs/render/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mvgs::render {

using diff::NDArray;
using diff::Shape;
using geom::Intrinsics;
using geom::Mat3;
using geom::Pose;
using geom::Vec3;

namespace {

struct SplatFwd {
    bool culled = true;
    Vec3 x_cam;
    double qn[4];   // normalized quaternion
    double qnorm = 1;
    Mat3 r_g;
    double cov_cam[3][3];
    double j[2][3];
    double cov2d[3];   // (a,b,c)
    double inv2d[3];   // inverse, same layout
    double mean2d[2];
    double depth = 0;
    int x0 = 0, x1 = 0, y0 = 0, y1 = 0;
};

struct FragRec {
    int splat;
    double w;
    double g;  // exp term before opacity
    bool clamped;
};

struct RenderContext {
    int width = 0, height = 0;
    GaussianData inputs;
    Pose cam;
    Intrinsics k;
    RenderOptions opts;
    std::vector<SplatFwd> splats;
    std::vector<int> order;                    // visible splats sorted by (depth, index)
    std::vector<std::vector<FragRec>> pixels;  // ascending depth per pixel
    std::vector<double> final_t;
    RenderOutput out;
};

SplatFwd project_one(const GaussianData& g, int i, const Mat3& r_cw, const Vec3& t_cam,
                     const Intrinsics& k, const RenderOptions& opts) {
    SplatFwd s;
    const Vec3 mu{g.mu.at2(i, 0), g.mu.at2(i, 1), g.mu.at2(i, 2)};
    s.x_cam = geom::matvec(r_cw, mu - t_cam);
    s.depth = s.x_cam.z;
    if (s.depth <= opts.z_near) return s;

    const double qraw[4] = {g.rot.at2(i, 0), g.rot.at2(i, 1), g.rot.at2(i, 2), g.rot.at2(i, 3)};
    s.qnorm = std::sqrt(qraw[0] * qraw[0] + qraw[1] * qraw[1] + qraw[2] * qraw[2] + qraw[3] * qraw[3]);
    if (s.qnorm < 1e-12) return s;
    for (int c = 0; c < 4; ++c) s.qn[c] = qraw[c] / s.qnorm;
    s.r_g = geom::quat_to_rotation({s.qn[0], s.qn[1], s.qn[2], s.qn[3]});

    // cov3d = M M^T with M = R(q) diag(scale); cov_cam = R_cw cov3d R_cw^T
    double m[3][3];
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) m[r][c] = s.r_g(r, c) * g.scale.at2(i, c);
    double cov3d[3][3];
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            cov3d[r][c] = m[r][0] * m[c][0] + m[r][1] * m[c][1] + m[r][2] * m[c][2];
    double tmp[3][3];
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            tmp[r][c] = r_cw(r, 0) * cov3d[0][c] + r_cw(r, 1) * cov3d[1][c] + r_cw(r, 2) * cov3d[2][c];
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            s.cov_cam[r][c] = tmp[r][0] * r_cw(c, 0) + tmp[r][1] * r_cw(c, 1) + tmp[r][2] * r_cw(c, 2);

    const double iz = 1.0 / s.depth;
    s.j[0][0] = k.fx * iz; s.j[0][1] = 0;          s.j[0][2] = -k.fx * s.x_cam.x * iz * iz;
    s.j[1][0] = 0;          s.j[1][1] = k.fy * iz; s.j[1][2] = -k.fy * s.x_cam.y * iz * iz;

    double js[2][3];
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 3; ++c)
            js[r][c] = s.j[r][0] * s.cov_cam[0][c] + s.j[r][1] * s.cov_cam[1][c] + s.j[r][2] * s.cov_cam[2][c];
    s.cov2d[0] = js[0][0] * s.j[0][0] + js[0][1] * s.j[0][1] + js[0][2] * s.j[0][2] + opts.blur;
    s.cov2d[1] = js[0][0] * s.j[1][0] + js[0][1] * s.j[1][1] + js[0][2] * s.j[1][2];
    s.cov2d[2] = js[1][0] * s.j[1][0] + js[1][1] * s.j[1][1] + js[1][2] * s.j[1][2] + opts.blur;

    const double det = s.cov2d[0] * s.cov2d[2] - s.cov2d[1] * s.cov2d[1];
    if (det <= 1e-12) return s;
    s.inv2d[0] = s.cov2d[2] / det;
    s.inv2d[1] = -s.cov2d[1] / det;
    s.inv2d[2] = s.cov2d[0] / det;

    s.mean2d[0] = k.fx * s.x_cam.x * iz + k.cx;
    s.mean2d[1] = k.fy * s.x_cam.y * iz + k.cy;

    const double mid = 0.5 * (s.cov2d[0] + s.cov2d[2]);
    const double lam = mid + std::sqrt(std::max(0.0, mid * mid - det));
    const double radius = 3.0 * std::sqrt(lam);

    s.x0 = std::max(0, static_cast<int>(std::floor(s.mean2d[0] - radius)));
    s.x1 = std::min(k.width, static_cast<int>(std::ceil(s.mean2d[0] + radius)) + 1);
    s.y0 = std::max(0, static_cast<int>(std::floor(s.mean2d[1] - radius)));
    s.y1 = std::min(k.height, static_cast<int>(std::ceil(s.mean2d[1] + radius)) + 1);
    if (s.x0 >= s.x1 || s.y0 >= s.y1) return s;  // beyond 3 sigma outside the frame

    s.culled = false;
    return s;
}

RenderOutput render_forward(const GaussianData& g, const Pose& cam, const Intrinsics& k,
                            const RenderOptions& opts, RenderContext* ctx) {
    g.validate();
    geom::validate(k);
    const int w = k.width, h = k.height;
    const int n = g.count();

    const Mat3 r_cw = geom::transpose(cam.rotation);
    const Vec3 t_cam = cam.translation;

    std::vector<SplatFwd> splats(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) splats[static_cast<size_t>(i)] = project_one(g, i, r_cw, t_cam, k, opts);

    std::vector<int> order;
    order.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        if (!splats[static_cast<size_t>(i)].culled) order.push_back(i);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const double da = splats[static_cast<size_t>(a)].depth, db = splats[static_cast<size_t>(b)].depth;
        return da < db || (da == db && a < b);  // index breaks ties
    });

    const int64_t np = static_cast<int64_t>(w) * h;
    std::vector<double> t_buf(static_cast<size_t>(np), 1.0);
    std::vector<double> c_buf(static_cast<size_t>(np) * 3, 0.0);
    std::vector<double> d_buf(static_cast<size_t>(np), 0.0);
    std::vector<std::vector<FragRec>> pixels;
    if (ctx) pixels.resize(static_cast<size_t>(np));

    auto splash = [&](int si, int px_lo, int px_hi, int py_lo, int py_hi) {
        const SplatFwd& s = splats[static_cast<size_t>(si)];
        const double alpha = g.opacity.at2(si, 0);
        const double col[3] = {g.color.at2(si, 0), g.color.at2(si, 1), g.color.at2(si, 2)};
        for (int py = py_lo; py < py_hi; ++py) {
            for (int px = px_lo; px < px_hi; ++px) {
                const double dx = px + 0.5 - s.mean2d[0];
                const double dy = py + 0.5 - s.mean2d[1];
                const double power =
                    -0.5 * (s.inv2d[0] * dx * dx + 2.0 * s.inv2d[1] * dx * dy + s.inv2d[2] * dy * dy);
                const double gexp = std::exp(power);
                double wgt = alpha * gexp;
                const bool clamped = wgt > opts.weight_clamp;
                if (clamped) wgt = opts.weight_clamp;
                if (wgt < opts.min_weight) continue;
                const int64_t p = static_cast<int64_t>(py) * w + px;
                const double t = t_buf[static_cast<size_t>(p)];
                for (int c = 0; c < 3; ++c) c_buf[static_cast<size_t>(p) * 3 + c] += col[c] * wgt * t;
                d_buf[static_cast<size_t>(p)] += s.depth * wgt * t;
                t_buf[static_cast<size_t>(p)] = t * (1.0 - wgt);
                if (ctx) pixels[static_cast<size_t>(p)].push_back({si, wgt, gexp, clamped});
            }
        }
    };

    if (!opts.tiled) {
        for (int si : order) {
            const SplatFwd& s = splats[static_cast<size_t>(si)];
            splash(si, s.x0, s.x1, s.y0, s.y1);
        }
    } else {
        // Per-tile splat lists keep the global depth order per pixel, so the
        // arithmetic is identical to the naive path.
        const int ts = std::max(1, opts.tile_size);
        const int tx = (w + ts - 1) / ts, ty = (h + ts - 1) / ts;
        std::vector<std::vector<int>> bins(static_cast<size_t>(tx) * ty);
        for (int si : order) {
            const SplatFwd& s = splats[static_cast<size_t>(si)];
            for (int by = s.y0 / ts; by <= (s.y1 - 1) / ts; ++by)
                for (int bx = s.x0 / ts; bx <= (s.x1 - 1) / ts; ++bx)
                    bins[static_cast<size_t>(by) * tx + bx].push_back(si);
        }
        for (int by = 0; by < ty; ++by)
            for (int bx = 0; bx < tx; ++bx)
                for (int si : bins[static_cast<size_t>(by) * tx + bx]) {
                    const SplatFwd& s = splats[static_cast<size_t>(si)];
                    splash(si, std::max(s.x0, bx * ts), std::min(s.x1, (bx + 1) * ts),
                           std::max(s.y0, by * ts), std::min(s.y1, (by + 1) * ts));
                }
    }

    RenderOutput out;
    out.rgb = NDArray(Shape{h, w, 3});
    out.depth = NDArray(Shape{h, w});
    out.alpha = NDArray(Shape{h, w});
    for (int64_t p = 0; p < np; ++p) {
        const double t = t_buf[static_cast<size_t>(p)];
        const double a = 1.0 - t;
        for (int c = 0; c < 3; ++c)
            out.rgb[p * 3 + c] =
                c_buf[static_cast<size_t>(p) * 3 + c] + t * opts.background[static_cast<size_t>(c)];
        out.alpha[p] = a;
        out.depth[p] = a >= opts.alpha_eps ? d_buf[static_cast<size_t>(p)] / a : 0.0;
    }

    if (ctx) {
        ctx->width = w;
        ctx->height = h;
        ctx->inputs = g;
        ctx->cam = cam;
        ctx->k = k;
        ctx->opts = opts;
        ctx->splats = std::move(splats);
        ctx->order = std::move(order);
        ctx->pixels = std::move(pixels);
        ctx->final_t = std::move(t_buf);
        ctx->out = out;
    }
    return out;
}

struct GaussianGrads {
    NDArray mu, scale, rot, opacity, color;
};

// Derivative of the unit-quaternion rotation matrix wrt each component.
void rotation_quat_derivs(const double q[4], double d[4][3][3]) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    const double dw[3][3] = {{0, -z, y}, {z, 0, -x}, {-y, x, 0}};
    const double dx[3][3] = {{0, y, z}, {y, -2 * x, -w}, {z, w, -2 * x}};
    const double dy[3][3] = {{-2 * y, x, w}, {x, 0, z}, {-w, z, -2 * y}};
    const double dz[3][3] = {{-2 * z, -w, x}, {w, -2 * z, y}, {x, y, 0}};
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) {
            d[0][r][c] = 2 * dw[r][c];
            d[1][r][c] = 2 * dx[r][c];
            d[2][r][c] = 2 * dy[r][c];
            d[3][r][c] = 2 * dz[r][c];
        }
}

GaussianGrads render_backward(const RenderContext& ctx, const NDArray& d_rgb,
                              const NDArray& d_depth, const NDArray& d_alpha) {
    const GaussianData& g = ctx.inputs;
    const int n = g.count();
    const int w = ctx.width, h = ctx.height;
    GaussianGrads out;
    out.mu = NDArray(Shape{n, 3});
    out.scale = NDArray(Shape{n, 3});
    out.rot = NDArray(Shape{n, 4});
    out.opacity = NDArray(Shape{n, 1});
    out.color = NDArray(Shape{n, 3});

    std::vector<double> gmean(static_cast<size_t>(n) * 2, 0.0);
    std::vector<double> gcov(static_cast<size_t>(n) * 4, 0.0);  // full 2x2
    std::vector<double> gdepth_z(static_cast<size_t>(n), 0.0);

    std::vector<double> t_scratch;
    for (int py = 0; py < h; ++py) {
        for (int px = 0; px < w; ++px) {
            const int64_t p = static_cast<int64_t>(py) * w + px;
            const auto& frags = ctx.pixels[static_cast<size_t>(p)];
            if (frags.empty()) continue;

            t_scratch.resize(frags.size());
            double t = 1.0;
            for (size_t i = 0; i < frags.size(); ++i) {
                t_scratch[i] = t;
                t *= 1.0 - frags[i].w;
            }
            const double t_fin = ctx.final_t[static_cast<size_t>(p)];
            const double a = 1.0 - t_fin;
            const bool has_depth = a >= ctx.opts.alpha_eps;
            const double s_d = has_depth ? ctx.out.depth[p] * a : 0.0;

            const double drgb[3] = {d_rgb[p * 3 + 0], d_rgb[p * 3 + 1], d_rgb[p * 3 + 2]};
            const double dal = d_alpha[p];
            const double ddep = d_depth[p];

            double crest[3] = {0, 0, 0};
            double drest = 0;
            for (size_t fi = frags.size(); fi-- > 0;) {
                const FragRec& f = frags[fi];
                const SplatFwd& s = ctx.splats[static_cast<size_t>(f.splat)];
                const double ti = t_scratch[fi];
                const double wi = f.w;
                const double one_m = 1.0 - wi;
                const double col[3] = {g.color.at2(f.splat, 0), g.color.at2(f.splat, 1),
                                       g.color.at2(f.splat, 2)};

                for (int c = 0; c < 3; ++c) out.color.at2(f.splat, c) += drgb[c] * wi * ti;
                if (has_depth) gdepth_z[static_cast<size_t>(f.splat)] += ddep * wi * ti / a;

                double dw = 0;
                for (int c = 0; c < 3; ++c)
                    dw += drgb[c] *
                          (col[c] * ti -
                           (crest[c] + t_fin * ctx.opts.background[static_cast<size_t>(c)]) / one_m);
                dw += dal * t_fin / one_m;
                if (has_depth) {
                    const double dsd_dw = s.depth * ti - drest / one_m;
                    const double da_dw = t_fin / one_m;
                    dw += ddep * (dsd_dw * a - s_d * da_dw) / (a * a);
                }

                if (!f.clamped) {
                    const double alpha = g.opacity.at2(f.splat, 0);
                    out.opacity.at2(f.splat, 0) += dw * f.g;
                    const double dg = dw * alpha * f.g;  // d loss / d power
                    const double dx = px + 0.5 - s.mean2d[0];
                    const double dy = py + 0.5 - s.mean2d[1];
                    const double pdx = s.inv2d[0] * dx + s.inv2d[1] * dy;
                    const double pdy = s.inv2d[1] * dx + s.inv2d[2] * dy;
                    // d power / d mean = P delta; d power / d cov = 0.5 (P d)(P d)^T
                    gmean[static_cast<size_t>(f.splat) * 2 + 0] += dg * pdx;
                    gmean[static_cast<size_t>(f.splat) * 2 + 1] += dg * pdy;
                    gcov[static_cast<size_t>(f.splat) * 4 + 0] += dg * 0.5 * pdx * pdx;
                    gcov[static_cast<size_t>(f.splat) * 4 + 1] += dg * 0.5 * pdx * pdy;
                    gcov[static_cast<size_t>(f.splat) * 4 + 2] += dg * 0.5 * pdy * pdx;
                    gcov[static_cast<size_t>(f.splat) * 4 + 3] += dg * 0.5 * pdy * pdy;
                }

                for (int c = 0; c < 3; ++c) crest[c] += col[c] * wi * ti;
                drest += s.depth * wi * ti;
            }
        }
    }

    // Chain the per-splat 2-d gradients back to the 3-d attributes.
    const Mat3 r_cw = geom::transpose(ctx.cam.rotation);
    for (int si : ctx.order) {
        const SplatFwd& s = ctx.splats[static_cast<size_t>(si)];
        const double* gm = &gmean[static_cast<size_t>(si) * 2];
        const double* gc = &gcov[static_cast<size_t>(si) * 4];

        double gx[3] = {0, 0, 0};  // d loss / d x_cam

        for (int c = 0; c < 3; ++c) gx[c] += s.j[0][c] * gm[0] + s.j[1][c] * gm[1];

        // cov2d = J cov_cam J^T + blur I
        const double m2[2][2] = {{gc[0], gc[1]}, {gc[2], gc[3]}};
        double jtm[3][2];
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 2; ++c) jtm[r][c] = s.j[0][r] * m2[0][c] + s.j[1][r] * m2[1][c];
        double gcov_cam[3][3];
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) gcov_cam[r][c] = jtm[r][0] * s.j[0][c] + jtm[r][1] * s.j[1][c];

        // dependence of J on x_cam: gx_m += <2 M J cov_cam, dJ/dx_m>
        double mj[2][3];
        for (int r = 0; r < 2; ++r)
            for (int c = 0; c < 3; ++c) mj[r][c] = m2[r][0] * s.j[0][c] + m2[r][1] * s.j[1][c];
        double q23[2][3];
        for (int r = 0; r < 2; ++r)
            for (int c = 0; c < 3; ++c)
                q23[r][c] = 2.0 * (mj[r][0] * s.cov_cam[0][c] + mj[r][1] * s.cov_cam[1][c] +
                                   mj[r][2] * s.cov_cam[2][c]);
        const double iz = 1.0 / s.depth;
        const double iz2 = iz * iz, iz3 = iz2 * iz;
        const double fx = ctx.k.fx, fy = ctx.k.fy;
        gx[0] += q23[0][2] * (-fx * iz2);
        gx[1] += q23[1][2] * (-fy * iz2);
        gx[2] += q23[0][0] * (-fx * iz2) + q23[1][1] * (-fy * iz2) +
                 q23[0][2] * (2.0 * fx * s.x_cam.x * iz3) + q23[1][2] * (2.0 * fy * s.x_cam.y * iz3);

        gx[2] += gdepth_z[static_cast<size_t>(si)];

        // gcov3d = R_cw^T gcov_cam R_cw
        double rt[3][3];
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                rt[r][c] =
                    r_cw(0, r) * gcov_cam[0][c] + r_cw(1, r) * gcov_cam[1][c] + r_cw(2, r) * gcov_cam[2][c];
        double gcov3d[3][3];
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                gcov3d[r][c] = rt[r][0] * r_cw(0, c) + rt[r][1] * r_cw(1, c) + rt[r][2] * r_cw(2, c);

        // cov3d = M M^T, M = R(q) diag(s): gM = (gcov3d + gcov3d^T) M
        double gm3[3][3];
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) {
                double v = 0;
                for (int kk = 0; kk < 3; ++kk)
                    v += (gcov3d[r][kk] + gcov3d[kk][r]) * s.r_g(kk, c) * g.scale.at2(si, c);
                gm3[r][c] = v;
            }

        for (int c = 0; c < 3; ++c) {
            double gs = 0;
            for (int r = 0; r < 3; ++r) gs += gm3[r][c] * s.r_g(r, c);
            out.scale.at2(si, c) += gs;
        }

        double grot[3][3];
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) grot[r][c] = gm3[r][c] * g.scale.at2(si, c);

        double dq[4][3][3];
        rotation_quat_derivs(s.qn, dq);
        double gqn[4] = {0, 0, 0, 0};
        for (int q = 0; q < 4; ++q)
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c) gqn[q] += grot[r][c] * dq[q][r][c];
        double qdot = 0;
        for (int q = 0; q < 4; ++q) qdot += gqn[q] * s.qn[q];
        for (int q = 0; q < 4; ++q) out.rot.at2(si, q) += (gqn[q] - s.qn[q] * qdot) / s.qnorm;

        // x_cam = R_cw (mu - t): gmu = pose.R * gx
        for (int r = 0; r < 3; ++r)
            out.mu.at2(si, r) += ctx.cam.rotation(r, 0) * gx[0] + ctx.cam.rotation(r, 1) * gx[1] +
                                 ctx.cam.rotation(r, 2) * gx[2];
    }
    return out;
}

}  // namespace

ProjectedGaussian project_gaussian(Vec3 mu, Vec3 scale, geom::Quaternion rot, const Pose& cam,
                                   const Intrinsics& k, const RenderOptions& opts) {
    GaussianData g;
    g.mu = NDArray::from({1, 3}, {mu.x, mu.y, mu.z});
    g.scale = NDArray::from({1, 3}, {scale.x, scale.y, scale.z});
    g.rot = NDArray::from({1, 4}, {rot.w, rot.x, rot.y, rot.z});
    g.opacity = NDArray::from({1, 1}, {1.0});
    g.color = NDArray::from({1, 3}, {1.0, 1.0, 1.0});
    const SplatFwd s = project_one(g, 0, geom::transpose(cam.rotation), cam.translation, k, opts);
    ProjectedGaussian p;
    p.culled = s.culled;
    if (s.depth > opts.z_near) {
        p.mean2d = {s.mean2d[0], s.mean2d[1]};
        p.cov2d = {s.cov2d[0], s.cov2d[1], s.cov2d[2]};
        p.depth = s.depth;
        const double mid = 0.5 * (s.cov2d[0] + s.cov2d[2]);
        const double det = s.cov2d[0] * s.cov2d[2] - s.cov2d[1] * s.cov2d[1];
        p.radius = 3.0 * std::sqrt(std::max(0.0, mid + std::sqrt(std::max(0.0, mid * mid - det))));
    }
    return p;
}

PixelResult composite(const std::vector<Fragment>& fragments, std::array<double, 3> background,
                      double alpha_eps) {
    for (size_t i = 1; i < fragments.size(); ++i)
        if (fragments[i].depth < fragments[i - 1].depth)
            throw std::invalid_argument("composite: fragments not sorted ascending by depth");
    PixelResult r{};
    double t = 1.0;
    double s_d = 0.0;
    for (const Fragment& f : fragments) {
        for (int c = 0; c < 3; ++c)
            r.rgb[static_cast<size_t>(c)] += f.color[static_cast<size_t>(c)] * f.weight * t;
        s_d += f.depth * f.weight * t;
        t *= 1.0 - f.weight;
    }
    r.alpha = 1.0 - t;
    for (int c = 0; c < 3; ++c) r.rgb[static_cast<size_t>(c)] += t * background[static_cast<size_t>(c)];
    r.depth = r.alpha >= alpha_eps ? s_d / r.alpha : 0.0;
    return r;
}

RenderOutput render_raw(const GaussianData& g, const Pose& cam, const Intrinsics& k,
                        const RenderOptions& opts) {
    return render_forward(g, cam, k, opts, nullptr);
}

RenderValues render(diff::Tape& tape, const diff::Value& mu, const diff::Value& scale,
                    const diff::Value& rot, const diff::Value& opacity, const diff::Value& color,
                    const Pose& cam, const Intrinsics& k, const RenderOptions& opts) {
    auto ctx = std::make_shared<RenderContext>();
    auto op = std::make_shared<diff::CustomOp>();
    op->name = "render";
    op->forward = [ctx, cam, k, opts](const std::vector<NDArray>& ins) {
        GaussianData g{ins[0], ins[1], ins[2], ins[3], ins[4]};
        RenderOutput r = render_forward(g, cam, k, opts, ctx.get());
        NDArray packed(Shape{k.height, k.width, 5});
        const int64_t np = static_cast<int64_t>(k.width) * k.height;
        for (int64_t p = 0; p < np; ++p) {
            for (int c = 0; c < 3; ++c) packed[p * 5 + c] = r.rgb[p * 3 + c];
            packed[p * 5 + 3] = r.depth[p];
            packed[p * 5 + 4] = r.alpha[p];
        }
        return packed;
    };
    op->backward = [ctx](const NDArray& up) {
        const int64_t np = static_cast<int64_t>(ctx->width) * ctx->height;
        NDArray d_rgb(Shape{ctx->height, ctx->width, 3});
        NDArray d_depth(Shape{ctx->height, ctx->width});
        NDArray d_alpha(Shape{ctx->height, ctx->width});
        for (int64_t p = 0; p < np; ++p) {
            for (int c = 0; c < 3; ++c) d_rgb[p * 3 + c] = up[p * 5 + c];
            d_depth[p] = up[p * 5 + 3];
            d_alpha[p] = up[p * 5 + 4];
        }
        GaussianGrads gr = render_backward(*ctx, d_rgb, d_depth, d_alpha);
        return std::vector<NDArray>{gr.mu, gr.scale, gr.rot, gr.opacity, gr.color};
    };

    diff::Value packed = tape.record_custom(op, {mu, scale, rot, opacity, color});
    RenderValues rv;
    rv.rgb = diff::slice_last(packed, 0, 3);
    rv.depth = diff::reshape(diff::slice_last(packed, 3, 4), Shape{k.height, k.width});
    rv.alpha = diff::reshape(diff::slice_last(packed, 4, 5), Shape{k.height, k.width});
    return rv;
}

}  // namespace mvgs::render
