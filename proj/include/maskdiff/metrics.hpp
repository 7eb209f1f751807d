// Evaluation: generative perplexity under a frozen bound-based scorer, token
// entropy, the NFE x mode evaluation grid, and the JSON-lines metrics writer.

#pragma once

#include <chrono>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "maskdiff/model.hpp"
#include "maskdiff/sampler.hpp"

namespace maskdiff {

// Append-only JSON-lines metrics log. Wallclock is seconds since the writer
// opened, so it is monotone within a run.
class MetricsWriter {
public:
    MetricsWriter(const std::string& path, std::string run_id, std::string phase);
    void write(std::int64_t step, const std::string& metric, double value);
    void set_phase(std::string phase) { phase_ = std::move(phase); }

private:
    std::ofstream out_;
    std::string run_id_;
    std::string phase_;
    std::chrono::steady_clock::time_point start_;
};

// exp of the per-token bound of the frozen evaluator over all samples, on a
// fixed midpoint time grid with seeded corruption streams. Per-position
// log-probabilities are clamped at 1e-12 (clamped_count reports how often).
double generative_perplexity(std::span<const TokenSequence> samples,
                             const DenoiserModel& evaluator, const NoiseSchedule& sched,
                             int grid_points = 32, std::uint64_t seed = 0x5C0E,
                             std::size_t* clamped_count = nullptr);

// Shannon entropy (nats). per_sample: entropy of each sample's empirical
// token distribution, averaged. per_position: entropy of the across-sample
// distribution at each position, averaged.
enum class EntropyMode { per_sample, per_position };
double token_entropy(std::span<const TokenSequence> samples,
                     EntropyMode mode = EntropyMode::per_sample);

struct EvalConfig {
    std::vector<int> nfe_list = {4, 8, 16, 32};
    int num_samples = 16;
    int ppl_grid = 32;
    EntropyMode entropy_mode = EntropyMode::per_sample;
    SamplerConfig sampler;  // h schedule / M / split for the rgas cells
    std::uint64_t seed = 7;

    void validate() const;
};

struct EvalCell {
    int nfe = 0;
    std::string mode;  // "as" | "rgas"
    double ppl = 0.0;
    double entropy = 0.0;
};

// For each NFE and each mode in {as, rgas}: generate num_samples sequences,
// score PPL and entropy. Streams derive from (seed, nfe, mode, sample), so
// cells are independent of evaluation order.
std::vector<EvalCell> evaluate(const Denoiser& student, const DiscriminatorModel* disc,
                               const DenoiserModel& evaluator, const EvalConfig& cfg,
                               const NoiseSchedule& sched, int length,
                               MetricsWriter* writer = nullptr);

}  // namespace maskdiff
