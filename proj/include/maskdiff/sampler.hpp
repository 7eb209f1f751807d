// Reverse-process samplers: plain ancestral sampling and the reward-guided
// variant (gradient tilting early, multi-candidate re-ranking late). With
// h = 0 and one candidate the guided sampler consumes randomness exactly like
// the plain one and produces bitwise-identical output.

#pragma once

#include <optional>
#include <span>
#include <vector>

#include "maskdiff/diffusion.hpp"
#include "maskdiff/model.hpp"

namespace maskdiff {

// Descending knots 1 = t_0 > t_1 > ... > t_n = 0, uniform in t.
std::vector<double> uniform_time_grid(int n_steps);

// Mean over masked positions of the clamped discriminator log-odds; empty
// when nothing is masked.
std::optional<double> estimate_reward(const DiscriminatorModel& disc, std::span<const int> z,
                                      double t);

TokenSequence ancestral_sample(const Denoiser& model, int n_steps, const NoiseSchedule& sched,
                               int length, RngStream& rng);

// Student distribution with the masked-position logits tilted by h times the
// gradient of the reward with respect to a relaxed one-hot input. h = 0 is
// exactly the plain denoise output.
PerPositionProbs tilted_denoise(const Denoiser& student, const DiscriminatorModel& disc,
                                std::span<const int> z, double t, double h);

// Index draw with probability softmax(rewards / temperature).
int softmax_select(std::span<const double> rewards, double temperature, RngStream& rng);

// Samples an index with probability softmax(rewards / temperature); rewards
// of fully-unmasked candidates fall back to 0.
int rerank_select(std::span<const TokenSequence> candidates, const DiscriminatorModel& disc,
                  double t, double temperature, RngStream& rng);

struct SamplerConfig {
    int nfe = 8;
    double split_fraction = 0.5;  // tilting phase is the first ceil(split*N) steps
    double h_max = 30.0;          // h ramps linearly 0 -> h_max over the tilting phase
    int rerank_candidates = 4;    // M
    double rerank_temperature = 1.0;

    void validate() const;
};

struct RgasStepTrace {
    int step = 0;
    double t_from = 0.0;
    double t_to = 0.0;
    double h = 0.0;
    bool rerank_phase = false;
    int masked_before = 0;
    int masked_after = 0;
    int selected_candidate = 0;
    TokenSequence state_after;
};

struct RgasResult {
    TokenSequence tokens;
    std::vector<RgasStepTrace> trace;
};

RgasResult rgas_sample(const Denoiser& student, const DiscriminatorModel& disc,
                       const SamplerConfig& cfg, const NoiseSchedule& sched, int length,
                       RngStream& rng);

}  // namespace maskdiff
