#include "mvgs/losses/losses.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace mvgs::losses {

using namespace mvgs::diff;

Value adversarial_generator_loss(const std::vector<Value>& logits) {
    if (logits.empty()) throw std::invalid_argument("adversarial_generator_loss: no logits");
    Value sum;
    for (const Value& l : logits) {
        Value term = softplus(neg(l));
        sum = sum.defined() ? add(sum, term) : term;
    }
    return mul_scalar(sum, 1.0 / static_cast<double>(logits.size()));
}

DiscLossParts discriminator_loss(Tape& tape, const Discriminator& disc, Binder& disc_params,
                                 const NDArray& real_image, const geom::Pose& real_pose,
                                 const NDArray& fake_image, const geom::Pose& fake_pose,
                                 double gamma) {
    Value real_leaf = tape.leaf(real_image, true);  // grad needed for the R1 term
    Value logit_real = disc.logit(disc_params, real_leaf, real_pose);
    Value logit_fake = disc.logit(disc_params, tape.constant(fake_image), fake_pose);

    DiscLossParts parts;
    parts.real_term = softplus(neg(logit_real));
    parts.fake_term = softplus(logit_fake);
    parts.r1 = r1_penalty(tape, logit_real, real_leaf);
    parts.total = add(add(parts.real_term, parts.fake_term), mul_scalar(parts.r1, 0.5 * gamma));
    return parts;
}

Value knn_spacing_loss(const decoder::GaussianSetValues& set, int k, double tau) {
    if (set.levels.empty()) throw std::invalid_argument("knn_spacing_loss: empty set");
    Tape& tape = *set.mu.tape();

    Value level_sum;
    int counted = 0;
    for (const auto& level : set.levels) {
        const NDArray& mu = level.mu.val();
        const int n = mu.rows();
        if (n <= k) {
            std::fprintf(stderr, "knn_spacing_loss: level with %d splats skipped (k=%d)\n", n, k);
            continue;
        }

        // exact neighbor search on the current centers; indices stay constant
        auto nbr = std::make_shared<std::vector<int>>();
        auto self = std::make_shared<std::vector<int>>();
        nbr->reserve(static_cast<size_t>(n) * k);
        self->reserve(static_cast<size_t>(n) * k);
        std::vector<std::pair<double, int>> dists(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            size_t m = 0;
            for (int j = 0; j < n; ++j) {
                if (j == i) continue;
                double d2 = 0;
                for (int c = 0; c < 3; ++c) d2 += std::pow(mu.at2(i, c) - mu.at2(j, c), 2);
                dists[m++] = {d2, j};
            }
            std::partial_sort(dists.begin(), dists.begin() + k, dists.begin() + static_cast<long>(m));
            for (int q = 0; q < k; ++q) {
                nbr->push_back(dists[static_cast<size_t>(q)].second);
                self->push_back(i);
            }
        }

        Value a = gather_rows(level.mu, std::shared_ptr<const std::vector<int>>(self));
        Value b = gather_rows(level.mu, std::shared_ptr<const std::vector<int>>(nbr));
        Value diff2 = sum_last(square(sub(a, b)));                       // [n*k, 1]
        Value dist = sqrt(add_scalar(diff2, 1e-18));
        Value mean_k = mul_scalar(sum_last(reshape(dist, {n, k})), 1.0 / k);  // [n,1]
        Value hinge = clamp(add_scalar(mean_k, -tau), 0.0, std::numeric_limits<double>::infinity());
        Value lvl = mean_all(square(hinge));
        level_sum = level_sum.defined() ? add(level_sum, lvl) : lvl;
        ++counted;
    }
    if (!counted) {
        std::fprintf(stderr, "knn_spacing_loss: no level had more than k splats, returning 0\n");
        return tape.scalar(0.0);
    }
    return mul_scalar(level_sum, 1.0 / counted);
}

Value center_drift_loss(const decoder::GaussianSetValues& set) {
    if (set.levels.empty()) throw std::invalid_argument("center_drift_loss: empty set");
    Tape& tape = *set.mu.tape();
    if (set.levels.size() == 1) return tape.scalar(0.0);

    Value level_sum;
    for (size_t l = 1; l < set.levels.size(); ++l) {
        const auto& level = set.levels[l];
        Value anchors = gather_rows(set.levels[l - 1].mu, level.parent);
        Value sq = sum_last(square(sub(level.mu, anchors)));  // [n,1]
        Value lvl = mean_all(sq);
        level_sum = level_sum.defined() ? add(level_sum, lvl) : lvl;
    }
    return mul_scalar(level_sum, 1.0 / static_cast<double>(set.levels.size() - 1));
}

GeneratorLossParts generator_loss(Tape& tape, const decoder::Decoder& dec, Binder& dec_params,
                                  const critic::Critic& crit, Binder& critic_frozen,
                                  const Discriminator& disc, Binder& disc_frozen,
                                  const NDArray& z, const std::vector<geom::Pose>& poses,
                                  const geom::Intrinsics& k, const render::RenderOptions& opts,
                                  const LossWeights& w) {
    w.validate();
    decoder::GaussianSetValues set = dec.generate(dec_params, tape.constant(z));

    std::vector<Value> views;
    std::vector<Value> logits;
    for (const auto& pose : poses) {
        render::RenderValues rv = render::render(tape, set.mu, set.scale, set.rot, set.opacity,
                                                 set.color, pose, k, opts);
        views.push_back(rv.rgb);
        logits.push_back(disc.logit(disc_frozen, rv.rgb, pose));
    }

    GeneratorLossParts parts;
    parts.adv = adversarial_generator_loss(logits);
    parts.mvc = critic::mvc_loss(crit.score_set(critic_frozen, views, poses));
    parts.knn = knn_spacing_loss(set, w.knn_k, w.tau);
    parts.ctr = center_drift_loss(set);
    parts.total = add(add(parts.adv, mul_scalar(parts.mvc, w.mvc)),
                      add(mul_scalar(parts.knn, w.knn), mul_scalar(parts.ctr, w.ctr)));
    return parts;
}

}  // namespace mvgs::losses
