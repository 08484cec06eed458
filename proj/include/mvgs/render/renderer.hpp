#pragma once

#include <array>
#include <memory>

#include "mvgs/diff/tape.hpp"
#include "mvgs/geom/geometry.hpp"
#include "mvgs/render/gaussian.hpp"

namespace mvgs::render {

struct RenderOptions {
    std::array<double, 3> background{0.5, 0.5, 0.5};
    double blur = 0.3;           // px^2 added to both 2-d covariance diagonals
    double weight_clamp = 0.999;
    double min_weight = 0.0;     // fragments below are skipped (training speed)
    double alpha_eps = 1e-6;     // depth is 0 where alpha < this
    double mask_threshold = 0.5;
    double z_near = geom::kZNear;
    bool tiled = false;          // coarse tile binning; output-identical to naive
    int tile_size = 16;
};

struct RenderOutput {
    diff::NDArray rgb;    // [H,W,3] in [0,1]
    diff::NDArray depth;  // [H,W], alpha-weighted mean of fragment depths
    diff::NDArray alpha;  // [H,W] in [0,1]

    diff::NDArray mask(double threshold) const {
        diff::NDArray m(alpha.shape);
        for (int64_t i = 0; i < alpha.size(); ++i) m[i] = alpha[i] > threshold ? 1.0 : 0.0;
        return m;
    }
};

// 2-d covariance stored as (a, b, c) for [[a, b], [b, c]].
struct ProjectedGaussian {
    bool culled = true;
    std::array<double, 2> mean2d{};
    std::array<double, 3> cov2d{};
    double depth = 0;
    double radius = 0;  // 3-sigma bound in pixels
};

ProjectedGaussian project_gaussian(geom::Vec3 mu, geom::Vec3 scale, geom::Quaternion rot,
                                   const geom::Pose& cam, const geom::Intrinsics& k,
                                   const RenderOptions& opts = {});

// One pre-weighted splat sample covering a pixel.
struct Fragment {
    double weight;  // already clamped to [0, weight_clamp]
    double depth;
    std::array<double, 3> color;
};

struct PixelResult {
    std::array<double, 3> rgb;
    double alpha;
    double depth;
};

// Front-to-back alpha compositing. Fragments must be sorted ascending in
// depth; unsorted input is rejected.
PixelResult composite(const std::vector<Fragment>& fragments, std::array<double, 3> background,
                      double alpha_eps = 1e-6);

// Forward-only render of raw attribute arrays.
RenderOutput render_raw(const GaussianData& g, const geom::Pose& cam, const geom::Intrinsics& k,
                        const RenderOptions& opts = {});

// Differentiable render as one fused tape node with a hand-written backward.
// Returns rgb/depth/alpha Values sliced out of the node's packed output.
struct RenderValues {
    diff::Value rgb;    // [H,W,3]
    diff::Value depth;  // [H,W]
    diff::Value alpha;  // [H,W]
};

RenderValues render(diff::Tape& tape, const diff::Value& mu, const diff::Value& scale,
                    const diff::Value& rot, const diff::Value& opacity, const diff::Value& color,
                    const geom::Pose& cam, const geom::Intrinsics& k,
                    const RenderOptions& opts = {});

}  // namespace mvgs::render
