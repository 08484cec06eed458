#pragma once

#include <cmath>
#include <vector>

#include "mvgs/common/params.hpp"

namespace mvgs {

// Adaptive-moment gradient descent. Defaults follow common GAN practice.
struct AdamConfig {
    double lr = 2e-3;
    double beta1 = 0.0;
    double beta2 = 0.99;
    double eps = 1e-8;
    double clip = 10.0;  // global gradient-norm clip; <= 0 disables
};

class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    int64_t steps() const { return step_; }
    void set_steps(int64_t s) { step_ = s; }
    const AdamConfig& config() const { return cfg_; }

    // Applies one update to every bound parameter that received a gradient.
    void update(ParamStore& store, const std::vector<std::pair<std::string, diff::Value>>& bound) {
        ++step_;
        double norm2 = 0.0;
        for (const auto& [name, v] : bound) {
            if (!v.node()->has_grad) continue;
            for (double g : v.node()->grad.data) norm2 += g * g;
        }
        const double norm = std::sqrt(norm2);
        const double scale = (cfg_.clip > 0 && norm > cfg_.clip) ? cfg_.clip / norm : 1.0;

        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (const auto& [name, v] : bound) {
            if (!v.node()->has_grad) continue;
            diff::NDArray& p = store.get(name);
            diff::NDArray& m1 = store.moment1(name);
            diff::NDArray& m2 = store.moment2(name);
            const diff::NDArray& g = v.node()->grad;
            for (int64_t i = 0; i < p.size(); ++i) {
                const double gi = g[i] * scale;
                m1[i] = cfg_.beta1 * m1[i] + (1.0 - cfg_.beta1) * gi;
                m2[i] = cfg_.beta2 * m2[i] + (1.0 - cfg_.beta2) * gi * gi;
                p[i] -= cfg_.lr * (m1[i] / bc1) / (std::sqrt(m2[i] / bc2) + cfg_.eps);
            }
        }
    }

private:
    AdamConfig cfg_;
    int64_t step_ = 0;
};

}  // namespace mvgs
