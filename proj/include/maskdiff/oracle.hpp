// Brute-force ground truth on enumerable instances: exact sampler marginals,
// exact corrupted marginals, the time-integrated KL and its finite-difference
// gradient, and the closed-form optimal discriminator. Everything here sums
// over the K^L state space, guarded by a hard cap.

#pragma once

#include <functional>
#include <memory>

#include "maskdiff/model.hpp"

namespace maskdiff {

// Per-state logit table behind the denoiser interface (time-independent):
// row s of the table holds L * (K-1) logits for state index s. Exact
// gradients over the table validate the policy-gradient estimator without
// any transformer in the loop.
class TabularDenoiser : public Denoiser {
public:
    TabularDenoiser(int vocab, int length, RngStream init_rng, double init_scale = 0.5);

    int vocab_size() const override { return vocab_; }
    int length() const { return length_; }
    Tensor log_probs(std::span<const int> tokens, double t) const override;

    Parameter* table() { return &table_; }
    std::vector<Parameter*> parameters() { return {&table_}; }
    std::size_t state_index(std::span<const int> tokens) const;
    std::size_t state_count() const { return states_; }
    std::unique_ptr<TabularDenoiser> clone() const;

private:
    int vocab_;
    int length_;
    std::size_t states_;
    Parameter table_;
};

// Dense distribution over all K^L token sequences.
struct StateDistribution {
    int vocab = 0;
    int length = 0;
    std::vector<double> p;

    StateDistribution() = default;
    StateDistribution(int k, int l);
    std::size_t index_of(std::span<const int> tokens) const;
    TokenSequence state_of(std::size_t idx) const;
    double total() const;
};

constexpr std::size_t kOracleStateCap = 10000;

// Exact output distribution of the n-step ancestral sampler, by dynamic
// programming over states (each step sums the per-position posterior across
// every masked-position outcome combination).
StateDistribution exact_generator_marginal(const Denoiser& model, int n_steps,
                                           const NoiseSchedule& sched, int length);

// sum_x p(x) Q(z_t | x): pushes a clean distribution through the forward
// corruption kernel.
StateDistribution exact_corrupted_marginal(const StateDistribution& gen, double t,
                                           const NoiseSchedule& sched);

using OmegaFn = std::function<double(double)>;

// Midpoint-rule quadrature of omega(t) * KL(q_student || q_teacher) over
// (0,1). Returns +inf if the teacher misses mass anywhere the student has it
// (cannot happen for softmax-backed models).
double exact_ikl(const Denoiser& student, const Denoiser& teacher, const NoiseSchedule& sched,
                 const OmegaFn& omega, int n_steps, int length, int grid_points = 64);

// D*(z) = q_student(z) / (q_student(z) + q_teacher(z)); NaN where both are 0.
std::vector<double> exact_optimal_discriminator(const StateDistribution& q_student,
                                                const StateDistribution& q_teacher);

// Central finite differences of exact_ikl over the tabular student's logits.
std::vector<double> exact_student_gradient(TabularDenoiser& student, const Denoiser& teacher,
                                           const NoiseSchedule& sched, const OmegaFn& omega,
                                           int n_steps, int grid_points = 64, double h = 1e-5);

}  // namespace maskdiff
