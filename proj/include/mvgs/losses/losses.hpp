#pragma once

#include <vector>

#include "mvgs/critic/critic.hpp"
#include "mvgs/decoder/decoder.hpp"
#include "mvgs/losses/discriminator.hpp"
#include "mvgs/render/renderer.hpp"

namespace mvgs::losses {

struct LossWeights {
    double mvc = 0.1;   // lambda_mvc; 0 reproduces the no-critic ablation
    double knn = 1.0;   // lambda_knn
    double ctr = 1.0;   // lambda_ctr
    double r1 = 1.0;    // gamma for the R1 penalty
    int knn_k = 3;
    double tau = 0.05;  // spacing threshold, world units

    void validate() const {
        if (mvc < 0 || knn < 0 || ctr < 0 || r1 < 0)
            throw std::invalid_argument("LossWeights: weights must be nonnegative");
        if (knn_k < 1) throw std::invalid_argument("LossWeights: knn_k must be >= 1");
    }
};

// Mean over views of softplus(-logit).
Value adversarial_generator_loss(const std::vector<Value>& logits);

// Non-saturating discriminator loss with the R1 gradient penalty on the real
// image. The fake image enters detached from the generator.
struct DiscLossParts {
    Value total, real_term, fake_term, r1;
};
DiscLossParts discriminator_loss(Tape& tape, const Discriminator& disc, Binder& disc_params,
                                 const NDArray& real_image, const geom::Pose& real_pose,
                                 const NDArray& fake_image, const geom::Pose& fake_pose,
                                 double gamma);

// Hinge on each splat's mean distance to its k nearest same-level neighbors.
// Levels with too few splats are skipped with a warning; neighbor indices are
// recomputed from the current centers and treated as constants.
Value knn_spacing_loss(const decoder::GaussianSetValues& set, int k, double tau);

// Mean squared child-to-anchor distance over levels >= 1.
Value center_drift_loss(const decoder::GaussianSetValues& set);

// The four-term generator objective for one latent draw.
struct GeneratorLossParts {
    Value total, adv, mvc, knn, ctr;
};

GeneratorLossParts generator_loss(Tape& tape, const decoder::Decoder& dec, Binder& dec_params,
                                  const critic::Critic& crit, Binder& critic_frozen,
                                  const Discriminator& disc, Binder& disc_frozen,
                                  const NDArray& z, const std::vector<geom::Pose>& poses,
                                  const geom::Intrinsics& k, const render::RenderOptions& opts,
                                  const LossWeights& w);

}  // namespace mvgs::losses
