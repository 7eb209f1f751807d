#include "maskdiff/sampler.hpp"

#include <cmath>
#include <stdexcept>

#include "maskdiff/tensor.hpp"

namespace maskdiff {

std::vector<double> uniform_time_grid(int n_steps) {
    if (n_steps < 1) throw std::invalid_argument("uniform_time_grid: need at least one step");
    std::vector<double> knots(n_steps + 1);
    for (int n = 0; n <= n_steps; ++n)
        knots[n] = 1.0 - static_cast<double>(n) / static_cast<double>(n_steps);
    knots.back() = 0.0;
    return knots;
}

std::optional<double> estimate_reward(const DiscriminatorModel& disc, std::span<const int> z,
                                      double t) {
    const int mask = disc.config().vocab_size - 1;
    int masked = 0;
    for (int tok : z)
        if (tok == mask) ++masked;
    if (masked == 0) return std::nullopt;
    const std::vector<double> d = disc.discriminate(z, t);
    double acc = 0.0;
    for (std::size_t l = 0; l < z.size(); ++l)
        if (z[l] == mask) acc += std::log(d[l] / (1.0 - d[l]));
    return acc / masked;
}

TokenSequence ancestral_sample(const Denoiser& model, int n_steps, const NoiseSchedule& sched,
                               int length, RngStream& rng) {
    const int mask = model.vocab_size() - 1;
    const std::vector<double> knots = uniform_time_grid(n_steps);
    TokenSequence z(length, mask);
    for (int n = 0; n + 1 <= n_steps; ++n) {
        const PerPositionProbs probs = model.denoise(z, knots[n]);
        z = ancestral_step(z, probs, knots[n + 1], knots[n], sched, mask, rng);
    }
    return z;
}

void SamplerConfig::validate() const {
    if (nfe < 1) throw std::invalid_argument("SamplerConfig: nfe must be >= 1");
    if (split_fraction < 0.0 || split_fraction > 1.0)
        throw std::invalid_argument("SamplerConfig: split_fraction outside [0,1]");
    if (h_max < 0.0) throw std::invalid_argument("SamplerConfig: h_max must be >= 0");
    if (rerank_candidates < 1)
        throw std::invalid_argument("SamplerConfig: rerank_candidates must be >= 1");
    if (rerank_temperature <= 0.0)
        throw std::invalid_argument("SamplerConfig: rerank_temperature must be positive");
}

PerPositionProbs tilted_denoise(const Denoiser& student, const DiscriminatorModel& disc,
                                std::span<const int> z, double t, double h) {
    if (h < 0.0) throw std::invalid_argument("tilted_denoise: h must be >= 0");
    if (h == 0.0) return student.denoise(z, t);

    const int kk = student.vocab_size();
    const int mask = kk - 1;
    const int len = static_cast<int>(z.size());

    std::vector<int> masked_rows;
    for (int l = 0; l < len; ++l)
        if (z[l] == mask) masked_rows.push_back(l);
    if (masked_rows.empty()) return student.denoise(z, t);

    // Reward gradient with respect to the relaxed one-hot input at the
    // discriminator's embedding interface. The raw head logit is the
    // discriminator's log-odds, so the reward is the mean masked logit.
    std::vector<double> onehot_data(static_cast<std::size_t>(len) * kk, 0.0);
    for (int l = 0; l < len; ++l) onehot_data[static_cast<std::size_t>(l) * kk + z[l]] = 1.0;
    Tensor onehot = Tensor::from_data(len, kk, std::move(onehot_data), true);
    Tensor logits = disc.forward_logits_relaxed(onehot, t);
    std::vector<int> cols(masked_rows.size(), 0);
    const std::vector<double> w(masked_rows.size(), 1.0 / static_cast<double>(masked_rows.size()));
    backward(weighted_sum(gather(logits, masked_rows, cols), w));
    auto grad = onehot.grad();

    NoGradGuard guard;
    Tensor lp = student.log_probs(z, t);
    PerPositionProbs out(len, kk);
    for (int l = 0; l < len; ++l) {
        auto row = out.row(l);
        if (z[l] != mask) {
            row[z[l]] = 1.0;
            continue;
        }
        // softmax over real tokens of (log-probs + h * reward gradient slice);
        // the MASK coordinate of the gradient is excluded
        double m = -1e300;
        for (int k = 0; k < kk - 1; ++k) {
            row[k] = lp.at(l, k) + h * grad[static_cast<std::size_t>(l) * kk + k];
            m = std::max(m, row[k]);
        }
        double zsum = 0.0;
        for (int k = 0; k < kk - 1; ++k) {
            row[k] = std::exp(row[k] - m);
            zsum += row[k];
        }
        for (int k = 0; k < kk - 1; ++k) row[k] /= zsum;
        row[mask] = 0.0;
    }
    return out;
}

int softmax_select(std::span<const double> rewards, double temperature, RngStream& rng) {
    double rmax = rewards[0];
    for (double r : rewards) rmax = std::max(rmax, r);
    std::vector<double> weights(rewards.size());
    for (std::size_t m = 0; m < rewards.size(); ++m)
        weights[m] = std::exp((rewards[m] - rmax) / temperature);
    return rng.categorical(weights);
}

int rerank_select(std::span<const TokenSequence> candidates, const DiscriminatorModel& disc,
                  double t, double temperature, RngStream& rng) {
    if (candidates.empty()) throw std::invalid_argument("rerank_select: no candidates");
    if (candidates.size() == 1) return 0;
    std::vector<double> rewards(candidates.size(), 0.0);
    for (std::size_t m = 0; m < candidates.size(); ++m)
        rewards[m] = estimate_reward(disc, candidates[m], t).value_or(0.0);
    return softmax_select(rewards, temperature, rng);
}

RgasResult rgas_sample(const Denoiser& student, const DiscriminatorModel& disc,
                       const SamplerConfig& cfg, const NoiseSchedule& sched, int length,
                       RngStream& rng) {
    cfg.validate();
    const int mask = student.vocab_size() - 1;
    const std::vector<double> knots = uniform_time_grid(cfg.nfe);
    const int n_tilt = static_cast<int>(std::ceil(cfg.split_fraction * cfg.nfe));

    const auto masked_count = [&](const TokenSequence& z) {
        int c = 0;
        for (int tok : z)
            if (tok == mask) ++c;
        return c;
    };

    RgasResult res;
    TokenSequence z(length, mask);
    for (int n = 0; n < cfg.nfe; ++n) {
        const double t_from = knots[n];
        const double t_to = knots[n + 1];
        RgasStepTrace step;
        step.step = n;
        step.t_from = t_from;
        step.t_to = t_to;
        step.masked_before = masked_count(z);

        if (n < n_tilt) {
            // gradient-tilting phase, single candidate
            step.h = (n_tilt > 1) ? cfg.h_max * static_cast<double>(n) / (n_tilt - 1) : 0.0;
            const PerPositionProbs probs = tilted_denoise(student, disc, z, t_from, step.h);
            z = ancestral_step(z, probs, t_to, t_from, sched, mask, rng);
        } else if (cfg.rerank_candidates == 1) {
            // h = 0, M = 1: plain ancestral stepping on the main stream
            step.rerank_phase = true;
            const PerPositionProbs probs = student.denoise(z, t_from);
            z = ancestral_step(z, probs, t_to, t_from, sched, mask, rng);
        } else {
            step.rerank_phase = true;
            const PerPositionProbs probs = student.denoise(z, t_from);
            std::vector<TokenSequence> candidates(cfg.rerank_candidates);
            for (int m = 0; m < cfg.rerank_candidates; ++m) {
                RngStream sub = rng.split("rgas_candidate",
                                          static_cast<std::uint64_t>(n) * 1000 + m);
                candidates[m] = ancestral_step(z, probs, t_to, t_from, sched, mask, sub);
            }
            step.selected_candidate =
                rerank_select(candidates, disc, t_to, cfg.rerank_temperature, rng);
            z = candidates[static_cast<std::size_t>(step.selected_candidate)];
        }
        step.masked_after = masked_count(z);
        step.state_after = z;
        res.trace.push_back(step);
    }
    res.tokens = std::move(z);
    return res;
}

}  // namespace maskdiff
