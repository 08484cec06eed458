#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mvgs/common/rng.hpp"
#include "mvgs/render/renderer.hpp"

namespace mvgs::metrics {

using diff::NDArray;
using geom::Intrinsics;
using geom::Pose;
using render::GaussianData;
using render::RenderOptions;

// Symmetric sum of mean squared nearest-neighbor distances. Points are [N,3].
double chamfer(const NDArray& p, const NDArray& q);

// Farthest-point sampling of splat centers, seeded deterministically. When the
// budget exceeds the set size, all centers come back (with a warning).
NDArray downsample(const GaussianData& g, int budget, uint64_t seed);

// Mean |depth1 - depth2| over pixels where both foreground masks pass, then
// averaged over views with nonempty overlap. Every view empty is an error.
double masked_depth_error(const GaussianData& g1, const GaussianData& g2,
                          const std::vector<Pose>& rig, const Intrinsics& k,
                          const RenderOptions& opts = {});

struct FitConfig {
    int budget = 256;
    int iterations = 600;
    double lr = 0.02;
    uint64_t seed = 0;
    double init_radius = 0.5;
};

struct FitResult {
    GaussianData splats;
    double final_loss = 0;
};

// Randomly initialized splats optimized against posed target images with the
// differentiable renderer. Non-finite loss aborts with the iteration index.
FitResult fit_gaussians(const std::vector<NDArray>& images, const std::vector<Pose>& poses,
                        const Intrinsics& k, const RenderOptions& opts, const FitConfig& cfg);

// PSNR on unit range, capped at 99 dB for identical images.
double psnr_db(const NDArray& a, const NDArray& b);
// Mean SSIM, 8x8 uniform windows, c1 = 0.01^2, c2 = 0.03^2 on [0,1] range.
double ssim(const NDArray& a, const NDArray& b);

struct TextureConsistency {
    double cpsnr_db = 0;
    double cssim = 0;
};

// Dual-fit protocol: fit two splat sets from the even/odd split of the posed
// targets, render both on a held-out rig, compare view by view.
TextureConsistency dual_fit_consistency(const std::vector<NDArray>& images,
                                        const std::vector<Pose>& poses,
                                        const std::vector<Pose>& eval_rig, const Intrinsics& k,
                                        const RenderOptions& opts, const FitConfig& fit_cfg);

TextureConsistency texture_consistency(const GaussianData& avatar, const std::vector<Pose>& fit_rig,
                                       const std::vector<Pose>& eval_rig, const Intrinsics& k,
                                       const RenderOptions& opts, const FitConfig& fit_cfg);

struct Met3rResult {
    bool has_overlap = false;
    double score = 0;          // 1 - 0.5 (S12 + S21), in [0, 2]
    double overlap_fraction = 0;
    NDArray map;               // frame-1 per-pixel inconsistency (1 - cos); -1 outside overlap
};

// Pairwise geometric consistency from renderer depth: features of one view
// unprojected via its depth map, reprojected into the other, compared by
// masked cosine similarity. Features are unit-normalized RGB plus Sobel
// gradients. Mutual visibility uses a relative depth tolerance.
Met3rResult met3r_lite(const NDArray& img1, const NDArray& img2, const NDArray& depth1,
                       const NDArray& depth2, const Pose& pose1, const Pose& pose2,
                       const Intrinsics& k, double depth_tolerance = 0.01);

// Mean met3r_lite score over self-render pairs of one splat set; pairs with no
// overlap are skipped (all-skipped comes back empty).
std::optional<double> met3r_self_consistency(const GaussianData& g, const std::vector<Pose>& rig,
                                             const Intrinsics& k, const RenderOptions& opts);

struct ConsistencyReport {
    double cd = 0;
    double depth_err = 0;
    double cpsnr_db = 0;
    double cssim = 0;
    double met3r = 0;
    // cLPIPS needs a pretrained perceptual network and is reported absent
};

std::string report_to_json(const ConsistencyReport& r);
ConsistencyReport report_from_json(const std::string& json_text);

struct ProtocolConfig {
    int fit_views = 8;       // self-render rig size (split in two for the dual fit)
    int eval_views = 4;      // held-out comparison rig
    int point_budget = 200;  // downsampled cloud size for chamfer
    FitConfig fit;
    uint64_t seed = 0;
    double yaw_range = 0.6;  // radians, rig sampling
    double pitch_range = 0.3;
    double radius = 2.7;
};

// The full desk-scale evaluation: dual fits for shape and texture metrics,
// self-render pairs for the geometric score.
ConsistencyReport evaluate_consistency(const GaussianData& avatar, const Intrinsics& k,
                                       const RenderOptions& opts, const ProtocolConfig& cfg);

}  // namespace mvgs::metrics
