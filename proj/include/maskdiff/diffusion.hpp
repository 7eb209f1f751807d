// Absorbing-state forward process: the corruption kernel, its posterior, the
// ancestral reverse step and the continuous-time loss weight.
//
// Conventions: tokens are ints in [0, K); MASK is always index K-1; time runs
// over [0,1] with alpha(0) ~ 1 (clean) and alpha(1) ~ 0 (fully masked).

#pragma once

#include <span>
#include <string>
#include <vector>

#include "maskdiff/rng.hpp"

namespace maskdiff {

using TokenSequence = std::vector<int>;

// Character vocabulary. Index layout: [0, n_chars) corpus characters in byte
// order, then UNK, SEP, and MASK = size-1. MASK never appears in corpora.
struct Vocabulary {
    std::string chars;  // one byte per kept character, index order

    int size() const { return static_cast<int>(chars.size()) + 3; }
    int unk_index() const { return static_cast<int>(chars.size()); }
    int sep_index() const { return static_cast<int>(chars.size()) + 1; }
    int mask_index() const { return size() - 1; }

    int token_for_byte(unsigned char b) const;
    std::string token_to_string(int tok) const;
    int string_to_token(const std::string& s) const;
    // Human-readable form for sample files: control bytes become spaces,
    // UNK '?', SEP the pilcrow sign.
    std::string render(int tok) const;
};

struct NoiseSchedule {
    enum class Kind { linear, loglinear };
    Kind kind = Kind::linear;
    double eps_clip = 1e-4;

    // Masking survival probability, clamped into [eps_clip, 1 - eps_clip].
    double alpha(double t) const;
    // Derivative of the unclamped curve (<= 0 everywhere).
    double alpha_prime(double t) const;

    static NoiseSchedule parse(const std::string& kind, double eps_clip = 1e-4);
    std::string kind_name() const;
};

// Dense per-position distributions over the vocabulary (rows sum to 1).
struct PerPositionProbs {
    int length = 0;
    int vocab = 0;
    std::vector<double> p;

    PerPositionProbs() = default;
    PerPositionProbs(int l, int k) : length(l), vocab(k), p(static_cast<std::size_t>(l) * k, 0.0) {}
    std::span<double> row(int l) { return {p.data() + static_cast<std::size_t>(l) * vocab, static_cast<std::size_t>(vocab)}; }
    std::span<const double> row(int l) const { return {p.data() + static_cast<std::size_t>(l) * vocab, static_cast<std::size_t>(vocab)}; }
};

// Each position independently keeps x[l] with probability alpha(t), else MASK.
// x must contain no MASK; t must lie in [0,1].
TokenSequence corrupt(std::span<const int> x, double t, const NoiseSchedule& sched,
                      int mask_index, RngStream& rng);

// Posterior over z_s for one position given z_t and the predicted clean
// distribution (zero MASK mass). s in [0,t); s <= 0 is the terminal step and
// is treated as alpha = 1 exactly, so no MASK mass survives.
std::vector<double> posterior_probs(int z_t_tok, std::span<const double> x_pred, double s,
                                    double t, const NoiseSchedule& sched, int mask_index);

// One reverse step over a whole sequence: carry-over for unmasked positions,
// independent posterior draws for masked ones (one draw per masked position,
// in position order).
TokenSequence ancestral_step(std::span<const int> z_t, const PerPositionProbs& denoised,
                             double s, double t, const NoiseSchedule& sched, int mask_index,
                             RngStream& rng);

// d(alpha)/dt * 1/(1 - alpha(t)); nonpositive under valid schedules. Callers
// negate it to form the minimization-ready weighted cross-entropy.
double nelbo_weight(double t, const NoiseSchedule& sched);

}  // namespace maskdiff
