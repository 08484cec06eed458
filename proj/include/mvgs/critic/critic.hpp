#pragma once

#include <vector>

#include "mvgs/common/params.hpp"
#include "mvgs/decoder/decoder.hpp"
#include "mvgs/geom/geometry.hpp"
#include "mvgs/render/renderer.hpp"

namespace mvgs::critic {

using diff::NDArray;
using diff::Tape;
using diff::Value;

// Relative poses anchored to the first view. The anchor's own relative pose
// is the exact identity; the rest are invariant under a global world
// transform of all inputs (bitwise for exactly representable rotations).
std::vector<geom::Pose> anchor_poses(const std::vector<geom::Pose>& poses);

struct CriticConfig {
    int image_size = 64;
    int patch = 8;
    int d = 64;  // token channels, multiple of 4 for the pose blocks
    int depth = 4;
    int ffn_hidden = 128;
    double rig_radius = 2.7;  // scales translations inside the pose blocks

    int patches_per_view() const { return (image_size / patch) * (image_size / patch); }
};

// Set scorer over (image, pose) pairs. Queries/keys/values are acted on by
// block-diagonal copies of each view's anchored homogeneous transform, so the
// score depends only on relative geometry; no intrinsics enter anywhere.
class Critic {
public:
    explicit Critic(CriticConfig cfg);
    const CriticConfig& config() const { return cfg_; }

    void init_params(ParamStore& store, Rng& rng) const;

    // Non-overlapping patches -> linear embed + grid position + view-role
    // embedding (anchor vs other; role-based so view order beyond the anchor
    // cannot affect the pooled score).
    Value patchify(Binder& p, const Value& image, bool is_anchor) const;

    // K >= 2 unless allow_single_view (diagnostics).
    Value score_set(Binder& p, const std::vector<Value>& images,
                    const std::vector<geom::Pose>& poses, bool allow_single_view = false) const;

private:
    CriticConfig cfg_;
};

// BCE-with-logits on one positive/negative pair of set scores.
Value critic_loss(const Value& pos_logit, const Value& neg_logit);

// -score with the critic's parameters frozen; callers bind the critic's
// ParamStore with trainable=false so no gradient reaches psi.
Value mvc_loss(const Value& score);

// Renders the paired training sets: positives share one latent across all K
// poses, negatives render a different latent per view under the same poses.
// Latents that collide with the positive latent are resampled.
struct TrainingSets {
    std::vector<Value> positive, negative;
    std::vector<geom::Pose> poses;
};

TrainingSets build_training_sets(const decoder::Decoder& dec, Binder& dec_params,
                                 std::vector<NDArray> latents, const std::vector<geom::Pose>& poses,
                                 const geom::Intrinsics& k, const render::RenderOptions& opts,
                                 Rng& resample_rng);

}  // namespace mvgs::critic
