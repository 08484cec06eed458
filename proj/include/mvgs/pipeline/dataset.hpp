#pragma once

#include <string>
#include <vector>

#include "mvgs/common/rng.hpp"
#include "mvgs/render/renderer.hpp"

namespace mvgs::pipeline {

using render::GaussianData;

struct RigSpec {
    int views = 3;
    double yaw_range = 45.0 * M_PI / 180.0;
    double pitch_range = 20.0 * M_PI / 180.0;
    double radius = 2.7;
    double fov_deg = 30.0;

    geom::Intrinsics intrinsics(int image_size) const {
        geom::Intrinsics k;
        k.width = k.height = image_size;
        k.cx = k.cy = image_size / 2.0;
        k.fx = k.fy = (image_size / 2.0) / std::tan(0.5 * fov_deg * M_PI / 180.0);
        return k;
    }

    geom::Pose sample(Rng& rng) const {
        return geom::lookat_pose(rng.uniform(-yaw_range, yaw_range),
                                 rng.uniform(-pitch_range, pitch_range), radius);
    }
};

struct ManifestEntry {
    std::string image;  // path relative to the manifest
    geom::Pose pose;
};

struct IdentityEntry {
    std::string gt_asset;  // splat PLY the views were rendered from
    std::vector<ManifestEntry> views;
};

struct DatasetManifest {
    int image_size = 0;
    geom::Intrinsics intrinsics;
    std::vector<IdentityEntry> identities;
    std::string root;  // directory of the manifest file, set on load

    size_t total_views() const {
        size_t n = 0;
        for (const auto& id : identities) n += id.views.size();
        return n;
    }
};

// Procedural stand-in heads: an ellipsoid shell of colored splats plus eye,
// nose and mouth clusters, jittered per identity. Attributes are quantized to
// f32 so the stored ground-truth asset re-renders the dataset bit-exactly.
GaussianData make_toy_head(Rng& rng);

DatasetManifest make_toy_dataset(const std::string& dir, int n_identities, const RigSpec& rig,
                                 int image_size, uint64_t seed,
                                 const render::RenderOptions& opts = {});

void save_manifest(const std::string& path, const DatasetManifest& m);
DatasetManifest load_manifest(const std::string& path);

// In-memory training view.
struct PosedImage {
    diff::NDArray image;
    geom::Pose pose;
};
std::vector<PosedImage> load_images(const DatasetManifest& m);

}  // namespace mvgs::pipeline
