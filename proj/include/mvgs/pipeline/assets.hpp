#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mvgs/common/params.hpp"
#include "mvgs/decoder/decoder.hpp"
#include "mvgs/losses/discriminator.hpp"
#include "mvgs/pipeline/dataset.hpp"
#include "mvgs/render/image_io.hpp"

namespace mvgs::pipeline {

// A persisted splat asset: binary little-endian PLY with the common splat
// attribute layout (x y z, zero normals, DC color coefficients, logit opacity,
// log scales, quaternion), plus a JSON sidecar carrying provenance and the
// hierarchy's anchor links.
struct AssetRecord {
    render::GaussianData splats;
    std::vector<int> level_sizes;
    std::vector<std::vector<int>> anchors;  // parent indices per level >= 1
    uint64_t latent_seed = 0;
    std::string model_hash;
    double consistency_score = 0;
    std::vector<geom::Pose> render_poses;
};

// Writes base_path + ".ply" and ".json"; import takes the ".ply" path.
void export_asset(const AssetRecord& a, const std::string& base_path);
AssetRecord import_asset(const std::string& ply_path);

AssetRecord asset_from_set(const decoder::GaussianSetValues& set, uint64_t latent_seed,
                           const std::string& model_hash);

// Writes/reads the bare splat PLY without a sidecar (dataset ground truth).
void write_splat_ply(const std::string& path, const render::GaussianData& g);
render::GaussianData read_splat_ply(const std::string& path);

// f32 quantization applied before export so round-trips are bitwise stable.
render::GaussianData quantize_f32(const render::GaussianData& g);

struct GenerateAssetsResult {
    std::vector<std::string> kept_paths;
    int sampled = 0;
    int rejected_consistency = 0;
    int rejected_realism = 0;
};

struct AssetFilterConfig {
    int probe_views = 4;                 // rig for the consistency probe
    double consistency_threshold = 0.1;  // keep when met3r <= this
    double realism_threshold = -10.0;    // keep when the frontal logit >= this
    RigSpec rig;
};

GenerateAssetsResult generate_assets(const decoder::Decoder& dec, const losses::Discriminator& disc,
                                     ParamStore& store, const std::string& model_hash,
                                     const std::string& out_dir, int count, uint64_t seed,
                                     int image_size, const AssetFilterConfig& filter,
                                     const render::RenderOptions& opts);

struct InvertResult {
    diff::NDArray z;      // [1, n_z]
    double loss = 0;
};

// Photometric latent inversion: gradient descent on the render MSE against a
// posed target, returning the best-loss latent seen. Non-finite loss aborts.
InvertResult invert(const decoder::Decoder& dec, ParamStore& store, const diff::NDArray& target,
                    const geom::Pose& pose, const geom::Intrinsics& k, int iterations, double lr,
                    uint64_t seed, const render::RenderOptions& opts = {},
                    const diff::NDArray* init_z = nullptr);

}  // namespace mvgs::pipeline
