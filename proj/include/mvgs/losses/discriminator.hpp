#pragma once

#include "mvgs/common/params.hpp"
#include "mvgs/geom/geometry.hpp"

namespace mvgs::losses {

using diff::NDArray;
using diff::Tape;
using diff::Value;

struct DiscriminatorConfig {
    int image_size = 64;
    int base_channels = 16;  // doubled by each stride-2 stage
    int stages = 4;          // 64 -> 4 at the defaults
    int fc_dim = 128;
    int pose_hidden = 64;
};

// Small strided conv encoder with the camera pose fused at the penultimate
// layer (flattened rotation + translation through a two-layer mapping).
class Discriminator {
public:
    explicit Discriminator(DiscriminatorConfig cfg);
    const DiscriminatorConfig& config() const { return cfg_; }

    void init_params(ParamStore& store, Rng& rng) const;

    // image: [H,W,3] Value at the training resolution; returns a scalar logit.
    Value logit(Binder& p, const Value& image, const geom::Pose& pose) const;

private:
    DiscriminatorConfig cfg_;
};

// Squared norm of d(logit)/d(image), differentiable in the discriminator's
// parameters via the recorded backward pass.
Value r1_penalty(Tape& tape, const Value& logit_real, const Value& image_leaf);

}  // namespace mvgs::losses
