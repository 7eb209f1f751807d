#include "maskdiff/metrics.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

#include <json.hpp>

namespace maskdiff {

MetricsWriter::MetricsWriter(const std::string& path, std::string run_id, std::string phase)
    : out_(path, std::ios::app),
      run_id_(std::move(run_id)),
      phase_(std::move(phase)),
      start_(std::chrono::steady_clock::now()) {
    if (!out_) throw std::runtime_error("MetricsWriter: cannot open " + path);
}

void MetricsWriter::write(std::int64_t step, const std::string& metric, double value) {
    const double wallclock =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    nlohmann::json rec = {{"run_id", run_id_}, {"phase", phase_},   {"step", step},
                          {"metric", metric}, {"value", value},    {"wallclock", wallclock}};
    out_ << rec.dump() << '\n';
    out_.flush();
}

double generative_perplexity(std::span<const TokenSequence> samples,
                             const DenoiserModel& evaluator, const NoiseSchedule& sched,
                             int grid_points, std::uint64_t seed, std::size_t* clamped_count) {
    if (samples.empty()) throw std::invalid_argument("generative_perplexity: no samples");
    NoGradGuard guard;
    const int mask = evaluator.vocab_size() - 1;
    constexpr double kLogFloor = -27.631021115928547;  // log(1e-12)
    RngStream base(seed, 0x99E7);
    std::size_t clamped = 0;
    double total = 0.0;
    std::size_t tokens = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const TokenSequence& x = samples[i];
        for (int tok : x)
            if (tok == mask)
                throw std::invalid_argument("generative_perplexity: sample contains MASK");
        for (int g = 0; g < grid_points; ++g) {
            const double t = (g + 0.5) / grid_points;
            RngStream rng = base.split(i * 1000003ULL + static_cast<std::uint64_t>(g));
            const TokenSequence z = corrupt(x, t, sched, mask, rng);
            bool any = false;
            for (int tok : z) any = any || tok == mask;
            if (!any) continue;
            const Tensor lp = evaluator.log_probs(z, t);
            const double w = -nelbo_weight(t, sched);
            for (std::size_t l = 0; l < z.size(); ++l) {
                if (z[l] != mask) continue;
                double lpx = lp.at(static_cast<int>(l), x[l]);
                if (lpx < kLogFloor) {
                    lpx = kLogFloor;
                    ++clamped;
                }
                total += w * (-lpx);
            }
        }
        tokens += x.size();
    }
    if (clamped_count) *clamped_count = clamped;
    return std::exp(total / (static_cast<double>(tokens) * grid_points));
}

double token_entropy(std::span<const TokenSequence> samples, EntropyMode mode) {
    if (samples.empty()) throw std::invalid_argument("token_entropy: no samples");
    const auto entropy_of_counts = [](const std::map<int, std::size_t>& counts,
                                      std::size_t total) {
        double h = 0.0;
        for (const auto& [tok, c] : counts) {
            const double p = static_cast<double>(c) / static_cast<double>(total);
            h -= p * std::log(p);
        }
        return h;
    };
    if (mode == EntropyMode::per_sample) {
        double acc = 0.0;
        for (const TokenSequence& x : samples) {
            std::map<int, std::size_t> counts;
            for (int tok : x) ++counts[tok];
            acc += entropy_of_counts(counts, x.size());
        }
        return acc / static_cast<double>(samples.size());
    }
    // per-position predictive entropy across samples
    const std::size_t length = samples[0].size();
    for (const TokenSequence& x : samples)
        if (x.size() != length)
            throw std::invalid_argument("token_entropy: ragged samples in per_position mode");
    double acc = 0.0;
    for (std::size_t l = 0; l < length; ++l) {
        std::map<int, std::size_t> counts;
        for (const TokenSequence& x : samples) ++counts[x[l]];
        acc += entropy_of_counts(counts, samples.size());
    }
    return acc / static_cast<double>(length);
}

void EvalConfig::validate() const {
    if (nfe_list.empty()) throw std::invalid_argument("EvalConfig: empty NFE list");
    for (int n : nfe_list)
        if (n < 1) throw std::invalid_argument("EvalConfig: NFE entries must be >= 1");
    if (num_samples < 1) throw std::invalid_argument("EvalConfig: num_samples must be >= 1");
    if (ppl_grid < 1) throw std::invalid_argument("EvalConfig: ppl_grid must be >= 1");
}

std::vector<EvalCell> evaluate(const Denoiser& student, const DiscriminatorModel* disc,
                               const DenoiserModel& evaluator, const EvalConfig& cfg,
                               const NoiseSchedule& sched, int length, MetricsWriter* writer) {
    cfg.validate();
    std::vector<EvalCell> cells;
    RngStream base(cfg.seed, 0xE7A1);
    for (const int nfe : cfg.nfe_list) {
        for (const std::string& mode : {std::string("as"), std::string("rgas")}) {
            if (mode == "rgas" && !disc) continue;
            EvalCell cell;
            cell.nfe = nfe;
            cell.mode = mode;
            std::vector<TokenSequence> samples;
            samples.reserve(cfg.num_samples);
            for (int s = 0; s < cfg.num_samples; ++s) {
                RngStream rng = base.split(mode, static_cast<std::uint64_t>(nfe) * 100000 + s);
                if (mode == "as") {
                    samples.push_back(ancestral_sample(student, nfe, sched, length, rng));
                } else {
                    SamplerConfig sc = cfg.sampler;
                    sc.nfe = nfe;
                    samples.push_back(rgas_sample(student, *disc, sc, sched, length, rng).tokens);
                }
            }
            cell.ppl = generative_perplexity(samples, evaluator, sched, cfg.ppl_grid,
                                             cfg.seed ^ 0xBADC0FFEULL);
            cell.entropy = token_entropy(samples, cfg.entropy_mode);
            if (writer) {
                writer->write(nfe, "ppl_" + mode, cell.ppl);
                writer->write(nfe, "entropy_" + mode, cell.entropy);
            }
            cells.push_back(std::move(cell));
        }
    }
    return cells;
}

}  // namespace maskdiff
