// The denoiser interface, the tiny transformer backing both teacher and
// student, and the per-token discriminator.
//
// Structural constraints on every denoiser output: rows are simplex points,
// MASK carries zero mass (the network emits K-1 logits, no MASK logit
// exists), and unmasked input positions come back as point masses.

#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "maskdiff/diffusion.hpp"
#include "maskdiff/rng.hpp"
#include "maskdiff/tensor.hpp"

namespace maskdiff {

class Denoiser {
public:
    virtual ~Denoiser() = default;
    virtual int vocab_size() const = 0;
    // Log-softmax rows over the K-1 real tokens, graph-building when grad is
    // enabled. No carry-over override: losses only read masked rows.
    virtual Tensor log_probs(std::span<const int> tokens, double t) const = 0;
    // Full constrained output (no grad): simplex rows over K with zero MASK
    // mass and carry-over point masses.
    PerPositionProbs denoise(std::span<const int> tokens, double t) const;
};

struct ModelConfig {
    int vocab_size = 0;  // K including MASK
    int max_len = 64;
    int dim = 64;
    int blocks = 4;
    int heads = 4;
    double init_std = 0.02;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
    std::string describe() const;
};

// Sin/cos bank over log-spaced frequencies, evaluated at t in [0,1].
std::vector<double> time_features(double t, int dim);

namespace detail {

// Parameter registry shared by both models; names unique per model.
class ParamStore {
public:
    Parameter* create(const std::string& name, int rows, int cols, RngStream& rng, double std);
    Parameter* create_zeros(const std::string& name, int rows, int cols);
    Parameter* find(const std::string& name) const;  // nullptr if absent
    std::vector<Parameter*> all() const;
    void copy_from(const ParamStore& other);  // by name, shapes must match

private:
    std::vector<std::unique_ptr<Parameter>> params_;
};

struct Block {
    Parameter *ln1_g, *ln1_b, *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
    Parameter *ln2_g, *ln2_b, *mlp_w1, *mlp_b1, *mlp_w2, *mlp_b2;
};

// Token/position/time embeddings plus pre-norm transformer blocks and a
// final layer norm. Bidirectional attention (no causal mask).
class Backbone {
public:
    Backbone(const ModelConfig& cfg, RngStream& rng, ParamStore& store);
    Tensor forward(std::span<const int> tokens, double t) const;
    // Same trunk but token embeddings formed as onehot(L x K) * tok_emb, so
    // gradients can flow into a relaxed input.
    Tensor forward_relaxed(const Tensor& onehot, double t) const;

private:
    Tensor trunk(Tensor x, double t) const;
    ModelConfig cfg_;
    Parameter *tok_emb_, *pos_emb_;
    Parameter *time_w1_, *time_b1_, *time_w2_, *time_b2_;
    std::vector<Block> blocks_;
    Parameter *lnf_g_, *lnf_b_;
};

}  // namespace detail

class DenoiserModel : public Denoiser {
public:
    DenoiserModel(const ModelConfig& cfg, RngStream init_rng);

    int vocab_size() const override { return cfg_.vocab_size; }
    const ModelConfig& config() const { return cfg_; }
    // L x (K-1) raw logits over real tokens.
    Tensor forward_logits(std::span<const int> tokens, double t) const;
    Tensor log_probs(std::span<const int> tokens, double t) const override;
    std::vector<Parameter*> parameters() { return store_.all(); }
    const detail::ParamStore& store() const { return store_; }

    // Deep copy; the copy's later updates leave this model untouched.
    std::unique_ptr<DenoiserModel> clone() const;

private:
    ModelConfig cfg_;
    detail::ParamStore store_;
    std::unique_ptr<detail::Backbone> backbone_;
    Parameter *out_w_, *out_b_;
};

std::unique_ptr<DenoiserModel> init_student_from_teacher(const DenoiserModel& teacher);

// Transformer backbone plus a two-affine-layer head with norm-constrained
// weights and SiLU, one probability per position.
class DiscriminatorModel {
public:
    static constexpr double kProbClamp = 1e-6;

    // Backbone weights copied from `backbone_source` when provided, else
    // freshly initialized. The head is always fresh.
    DiscriminatorModel(const ModelConfig& cfg, RngStream init_rng,
                       const DenoiserModel* backbone_source = nullptr);

    const ModelConfig& config() const { return cfg_; }
    // Raw head logits, one per position (L x 1); graph-building.
    Tensor forward_logits(std::span<const int> tokens, double t) const;
    // As above but from a relaxed one-hot input (L x K tensor).
    Tensor forward_logits_relaxed(const Tensor& onehot, double t) const;
    // Per-position probabilities in (0,1), clamped away from the endpoints.
    std::vector<double> discriminate(std::span<const int> tokens, double t) const;

    std::vector<Parameter*> parameters() { return store_.all(); }
    const detail::ParamStore& store() const { return store_; }

    // Refresh the power-iteration estimate of each head weight's leading
    // singular value; call after every optimizer step.
    void renormalize_head(int iters = 1);
    // Current operator norms of the two effective head maps (tests).
    std::pair<double, double> head_operator_norms(int iters = 2000) const;
    // Spectral state for checkpointing.
    std::vector<double>& sn_state() { return sn_state_; }
    const std::vector<double>& sn_state() const { return sn_state_; }

private:
    Tensor head(Tensor hidden) const;
    ModelConfig cfg_;
    detail::ParamStore store_;
    std::unique_ptr<detail::Backbone> backbone_;
    Parameter *h1_w_, *h1_b_, *h2_w_, *h2_b_;
    // layout: u1[dim], v1[dim], sigma1, u2[dim], v2[1], sigma2
    std::vector<double> sn_state_;
};

}  // namespace maskdiff
