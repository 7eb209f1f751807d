// Continuous-time NELBO training for the many-step denoiser.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>

#include "maskdiff/corpus.hpp"
#include "maskdiff/model.hpp"
#include "maskdiff/tensor.hpp"

namespace maskdiff {

struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TeacherConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weight_decay = 0.05;
    std::uint64_t warmup_steps = 250;
    std::string lr_decay = "cosine";
    int batch_size = 16;
    std::uint64_t total_steps = 5000;
    std::string schedule_kind = "linear";
    std::uint64_t eval_interval = 250;
    int eval_sequences = 64;  // validation subset size per eval
    int time_samples = 1;     // MC time draws per sequence in the loss
    // Training time draws live in [time_floor, 1]: the 1/(1-alpha) weight
    // makes per-sample variance blow up as t -> 0, and the excluded sliver
    // contributes almost nothing to the bound.
    double time_floor = 0.01;
    double grad_clip = 1.0;  // global-norm clip; <= 0 disables
    std::uint64_t seed = 1;

    void validate() const;
};

// Batch-mean of the per-sequence masked weighted cross-entropy: one t per
// sequence by low-discrepancy sampling (t_i = (i+u)/G, shared u), corruption
// through the forward kernel, and only masked positions contribute. The
// returned scalar is >= 0 in the minimization-ready sign convention.
// time_samples > 1 averages that many independent estimates.
Tensor nelbo_loss(const DenoiserModel& model, std::span<const TokenSequence> batch,
                  const NoiseSchedule& sched, RngStream& rng, int time_samples = 1,
                  double time_floor = 0.0);

// Deterministic per-token NELBO on a fixed 32-point midpoint time grid with
// corruption streams derived from `seed` alone.
double validation_nelbo(const DenoiserModel& model, std::span<const TokenSequence> data,
                        const NoiseSchedule& sched, int grid_points = 32,
                        std::uint64_t seed = 0xE7A1);

using MetricsSink =
    std::function<void(std::uint64_t step, const std::string& metric, double value)>;

// Runs the full pretraining loop and returns the trained model. Non-finite
// loss aborts with a TrainingError naming the step.
std::unique_ptr<DenoiserModel> train_teacher(const TeacherConfig& cfg, const Dataset& data,
                                             const ModelConfig& model_cfg,
                                             const MetricsSink& sink = nullptr);

}  // namespace maskdiff
