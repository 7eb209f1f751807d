// Adversarial distillation loop: alternating discriminator updates (balanced
// BCE on corrupted student/teacher samples) and student policy-gradient
// updates driven by the discriminator's log-odds reward, with grouped reward
// normalization, two-stage score decomposition, time re-weighting, and the
// KL/entropy regularizers.

#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>

#include "maskdiff/model.hpp"
#include "maskdiff/optim.hpp"
#include "maskdiff/sampler.hpp"
#include "maskdiff/teacher.hpp"

namespace maskdiff {

struct DistillConfig {
    int group_size = 8;  // G
    std::uint64_t iterations = 2000;
    double student_lr = 4e-5;
    double disc_lr = 2e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double student_weight_decay = 0.01;
    double disc_weight_decay = 0.01;
    std::string pi_family = "beta";  // "uniform" | "beta"
    double pi_a = 2.0;
    double pi_b = 5.0;
    std::string omega_mode = "alpha";  // "constant" | "alpha"
    bool coupled_time = true;
    bool decompose_score = true;
    double kl_weight = 0.05;
    double entropy_weight = 5e-4;
    double epsilon = 1e-8;  // grouped-normalization guard
    int rollout_nfe = 2;    // student rollout steps when decomposition is off
    int teacher_rollout_nfe = 16;
    int teacher_pool = 2048;  // cached teacher samples; 0 samples fresh every step
    std::string advantage_mode = "group_norm";  // "group_norm" | "loo_baseline" | "raw"
    std::string disc_init = "teacher";          // backbone init: "teacher" | "scratch"
    std::string schedule_kind = "linear";
    std::uint64_t log_interval = 25;
    std::uint64_t seed = 1;

    void validate() const;
};

double omega_weight(double t, const NoiseSchedule& sched, const std::string& mode);
// One draw from the configured pi(t) family, clamped into (0,1).
double sample_pi(const DistillConfig& cfg, RngStream& rng);
double pi_density(const DistillConfig& cfg, double t);

struct RewardGroupEntry {
    double t = 0.0;
    TokenSequence z;
    double reward = 0.0;
    int masked_count = 0;
    double advantage = 0.0;
};

// Grouped standardization: advantage = (R - mean) / (population std + eps).
void normalize_rewards(std::span<RewardGroupEntry> group, double eps);

// Reward callback; empty result marks an undefined reward (entry dropped).
using RewardFn = std::function<std::optional<double>(std::span<const int> z, double t)>;

// Mean masked log-odds of the discriminator (the Lemma-1 density-ratio read).
RewardFn discriminator_reward(const DiscriminatorModel& disc);

struct Commit {
    int stage = 0;
    int position = 0;
    int token = 0;
};

struct RolloutTrace {
    TokenSequence final_x;
    std::vector<TokenSequence> states;  // state entering each stage
    std::vector<double> times;          // time of each stage
    std::vector<Commit> commits;
};

// Ancestral rollout from all-MASK through the given descending knots,
// recording which token each position committed to at which stage. Consumes
// randomness exactly like ancestral stepping.
RolloutTrace student_rollout(const Denoiser& model, std::span<const double> knots,
                             const NoiseSchedule& sched, int length, RngStream& rng);

struct PgOptions {
    int group_size = 8;
    bool decompose = true;
    bool coupled_time = true;
    int rollout_nfe = 1;  // knot count when decompose is off
    std::string advantage_mode = "group_norm";
    double epsilon = 1e-8;
    double kl_weight = 0.0;
    double entropy_weight = 0.0;
    int length = 0;
    std::function<double(RngStream&)> sample_t;
    std::function<double(double)> pi_pdf;
    std::function<double(double)> omega;
};

struct PgStats {
    double surrogate = 0.0;
    double policy_term = 0.0;
    double kl_reg = 0.0;
    double entropy_bonus = 0.0;
    double mean_reward = 0.0;
    double reward_std = 0.0;
    int used = 0;
    int dropped = 0;
};

// Builds the surrogate objective for one group and backpropagates it into
// whatever parameters the student's log_probs graph touches. The caller owns
// zero_grad and the optimizer step. kl_teacher may be null when kl_weight
// and entropy_weight are both zero.
PgStats student_policy_gradient(const Denoiser& student, const Denoiser* kl_teacher,
                                const RewardFn& reward, const NoiseSchedule& sched,
                                const PgOptions& opt, RngStream& rng);

struct DistillAbort : TrainingError {
    explicit DistillAbort(const std::string& what, std::string snapshot_json)
        : TrainingError(what), snapshot(std::move(snapshot_json)) {}
    std::string snapshot;
};

class DistillTrainer {
public:
    DistillTrainer(const DistillConfig& cfg, std::unique_ptr<DenoiserModel> teacher,
                   Vocabulary vocab);

    double discriminator_step(RngStream& rng);
    PgStats student_step(RngStream& rng);
    // Alternates the two steps for cfg.iterations, reporting through sink.
    void run(const MetricsSink& sink = nullptr);

    DenoiserModel& student() { return *student_; }
    const DenoiserModel& teacher() const { return *teacher_; }
    DiscriminatorModel& discriminator() { return *disc_; }
    const Vocabulary& vocab() const { return vocab_; }
    const NoiseSchedule& schedule() const { return sched_; }
    const DistillConfig& config() const { return cfg_; }

private:
    TokenSequence draw_teacher_sample(RngStream& rng);

    DistillConfig cfg_;
    Vocabulary vocab_;
    NoiseSchedule sched_;
    std::unique_ptr<DenoiserModel> teacher_;
    std::unique_ptr<DenoiserModel> student_;
    std::unique_ptr<DiscriminatorModel> disc_;
    std::unique_ptr<AdamW> student_opt_;
    std::unique_ptr<AdamW> disc_opt_;
    std::vector<TokenSequence> teacher_pool_;
    RngStream root_;
};

}  // namespace maskdiff
