#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvgs/common/params.hpp"
#include "mvgs/render/gaussian.hpp"
#include "mvgs/ssm/scan.hpp"

namespace mvgs::decoder {

using diff::NDArray;
using diff::Tape;
using diff::Value;

struct DecoderConfig {
    int n_z = 64;
    int n_w = 64;
    int d = 32;          // token channels
    int grid_h = 8;      // scaffold grid; n0 = grid_h * grid_w
    int grid_w = 8;
    int levels = 3;      // L
    int upsample = 4;    // r, children per parent
    int freq_bands = 4;  // positional encoding octaves
    double rho0 = 0.1;   // level-0 offset bound (world units), halved per level
    int head_hidden = 32;
    int map_hidden = 64;
    bool use_scan = true;     // false = attention-only mixer ablation
    double scale_bias = -2.5;  // initial log-scale of emitted splats

    int n0() const { return grid_h * grid_w; }
    int level_count(int level) const {
        int c = n0();
        for (int l = 0; l < level; ++l) c *= upsample;
        return c;
    }
    int64_t total_count() const {
        int64_t total = 0;
        for (int l = 0; l < levels; ++l) total += level_count(l);
        return total;
    }
    double rho(int level) const { return rho0 * std::pow(0.5, level); }
};

// One hierarchy level's splats on the tape, plus its anchor links.
struct LevelValues {
    Value mu, scale, rot, opacity, color;
    std::vector<int> parent;  // index into the previous level (level 0: scaffold row)
};

struct GaussianSetValues {
    std::vector<LevelValues> levels;
    Value mu, scale, rot, opacity, color;  // all levels concatenated, level-major
    std::vector<int> level_offsets;        // start row of each level in the concatenation

    render::GaussianData data() const {
        render::GaussianData g;
        g.mu = mu.val();
        g.scale = scale.val();
        g.rot = rot.val();
        g.opacity = opacity.val();
        g.color = color.val();
        return g;
    }
};

class Decoder {
public:
    explicit Decoder(DecoderConfig cfg);

    const DecoderConfig& config() const { return cfg_; }

    // Creates all parameter entries (prefix "dec.") with seeded init.
    void init_params(ParamStore& store, Rng& rng) const;

    // z: [1, n_z] -> w: [1, n_w], deterministic in z and the parameters.
    Value map_latent(Binder& p, const Value& z) const;

    // Learned scaffold positions lifted to the token grid [H,W,d].
    Value lift_scaffold(Binder& p) const;

    // Instance norm over the grid followed by latent-predicted scale/bias.
    Value adain(Binder& p, const std::string& prefix, const Value& grid, const Value& w) const;

    Value dual_mixer(Binder& p, int level, const Value& grid, const Value& w) const;

    // Emits r^level children per token anchored to the previous level.
    LevelValues regress_attributes(Binder& p, int level, const Value& grid,
                                   const Value& anchors_mu) const;

    // No camera enters anywhere downstream of z; the full set renders jointly.
    GaussianSetValues generate(Binder& p, const Value& z) const;

private:
    DecoderConfig cfg_;
    std::string lvl(int level, const std::string& suffix) const {
        return "dec.lvl" + std::to_string(level) + "." + suffix;
    }
    ssm::ScanMixerParams scan_params(Binder& p, int level) const;
};

}  // namespace mvgs::decoder
