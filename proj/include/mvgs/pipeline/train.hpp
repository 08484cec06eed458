#pragma once

#include <string>

#include "mvgs/common/optimizer.hpp"
#include "mvgs/critic/critic.hpp"
#include "mvgs/losses/losses.hpp"
#include "mvgs/pipeline/dataset.hpp"

namespace mvgs::pipeline {

struct RunConfig {
    decoder::DecoderConfig dec;
    critic::CriticConfig critic;
    losses::DiscriminatorConfig disc;
    losses::LossWeights weights;
    RigSpec rig;
    int image_size = 64;
    AdamConfig opt;
    int steps = 5000;
    int batch = 8;         // latents per generator step
    int disc_batch = 8;    // real/fake pairs per discriminator step
    int critic_batch = 4;  // positive/negative set pairs per critic step
    int checkpoint_every = 1000;
    uint64_t seed = 0;
    bool f32_runtime = true;
    double render_min_weight = 1.0 / 255.0;  // fragment skip during training
    std::string dataset;   // manifest path
    std::string out_dir;
    std::string resume;    // optional checkpoint to continue from

    void normalize();  // propagates shared sizes and validates
};

std::string run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const std::string& text);

// Full training state: parameters, optimizer moments and steps, RNG, step.
struct Checkpoint {
    RunConfig config;
    ParamStore store;
    int64_t step = 0;
    int64_t adam_steps[3] = {0, 0, 0};  // disc, critic, decoder
    std::string rng_state;
};

void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

struct TrainSummary {
    std::string last_checkpoint;
    std::string csv_path;
    int64_t steps_run = 0;
};

// Alternating per-step schedule: discriminator, critic, generator (1:1:1).
// A non-finite loss aborts, keeping the last written checkpoint.
TrainSummary train(const RunConfig& cfg);

// Held-out separation: fraction of positive/negative set pairs ranked
// correctly by the critic (ties count half).
double critic_auc(const decoder::Decoder& dec, const critic::Critic& crit, ParamStore& store,
                  int n_sets, const RigSpec& rig, int image_size, uint64_t seed,
                  const render::RenderOptions& opts);

}  // namespace mvgs::pipeline
