#include "maskdiff/teacher.hpp"

#include <cmath>

#include "maskdiff/optim.hpp"

namespace maskdiff {

void TeacherConfig::validate() const {
    if (lr <= 0.0 || batch_size < 1 || eval_interval < 1 || time_samples < 1 ||
        eval_sequences < 1)
        throw std::invalid_argument("TeacherConfig: all sizes must be positive");
    if (warmup_steps > total_steps)
        throw std::invalid_argument("TeacherConfig: warmup exceeds total steps");
}

namespace {

// Weighted masked cross-entropy for one sequence at one time draw.
Tensor sequence_nelbo(const DenoiserModel& model, const TokenSequence& x, double t,
                      const NoiseSchedule& sched, RngStream& rng) {
    const int mask = model.vocab_size() - 1;
    const TokenSequence z = corrupt(x, t, sched, mask, rng);
    std::vector<int> rows, cols;
    for (std::size_t l = 0; l < z.size(); ++l) {
        if (z[l] == mask) {
            rows.push_back(static_cast<int>(l));
            cols.push_back(x[l]);
        }
    }
    if (rows.empty()) return Tensor::scalar(0.0);  // nothing masked: no contribution
    Tensor lp = model.log_probs(z, t);
    const double w = -nelbo_weight(t, sched);  // >= 0
    const std::vector<double> weights(rows.size(), -w);
    return weighted_sum(gather(lp, rows, cols), weights);
}

}  // namespace

Tensor nelbo_loss(const DenoiserModel& model, std::span<const TokenSequence> batch,
                  const NoiseSchedule& sched, RngStream& rng, int time_samples,
                  double time_floor) {
    const std::size_t g = batch.size();
    if (g == 0) throw std::invalid_argument("nelbo_loss: empty batch");
    if (time_floor < 0.0 || time_floor >= 1.0)
        throw std::invalid_argument("nelbo_loss: time_floor outside [0,1)");
    std::vector<Tensor> terms;
    terms.reserve(g * static_cast<std::size_t>(time_samples));
    for (int rep = 0; rep < time_samples; ++rep) {
        const double u = rng.uniform();
        for (std::size_t i = 0; i < g; ++i) {
            const double frac = (static_cast<double>(i) + u) / static_cast<double>(g);
            const double t = time_floor + (1.0 - time_floor) * frac;
            terms.push_back(sequence_nelbo(model, batch[i], t, sched, rng));
        }
    }
    return scale(sum_list(terms), 1.0 / (static_cast<double>(g) * time_samples));
}

double validation_nelbo(const DenoiserModel& model, std::span<const TokenSequence> data,
                        const NoiseSchedule& sched, int grid_points, std::uint64_t seed) {
    if (data.empty()) throw std::invalid_argument("validation_nelbo: no data");
    NoGradGuard guard;
    RngStream base(seed, 0xDA7A);
    double total = 0.0;
    std::size_t tokens = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (int k = 0; k < grid_points; ++k) {
            const double t = (k + 0.5) / grid_points;
            RngStream rng = base.split(i * 1000003ULL + static_cast<std::uint64_t>(k));
            total += sequence_nelbo(model, data[i], t, sched, rng).value();
        }
        tokens += data[i].size();
    }
    return total / (static_cast<double>(tokens) * grid_points);
}

std::unique_ptr<DenoiserModel> train_teacher(const TeacherConfig& cfg, const Dataset& data,
                                             const ModelConfig& model_cfg,
                                             const MetricsSink& sink) {
    cfg.validate();
    if (data.train.empty()) throw std::invalid_argument("train_teacher: empty training split");

    RngStream root(cfg.seed, 0x7EAC);
    RngStream init_rng = root.split("init");
    auto model = std::make_unique<DenoiserModel>(model_cfg, init_rng);
    const NoiseSchedule sched = NoiseSchedule::parse(cfg.schedule_kind);

    AdamW opt(model->parameters(), {.lr = cfg.lr,
                                    .beta1 = cfg.beta1,
                                    .beta2 = cfg.beta2,
                                    .eps = 1e-8,
                                    .weight_decay = cfg.weight_decay});

    const auto eval_view = [&]() {
        const std::span<const TokenSequence> pool =
            data.valid.empty() ? std::span<const TokenSequence>(data.train)
                               : std::span<const TokenSequence>(data.valid);
        const std::size_t n = std::min<std::size_t>(pool.size(), cfg.eval_sequences);
        return pool.subspan(0, n);
    };

    if (sink) sink(0, "val_nelbo", validation_nelbo(*model, eval_view(), sched));

    std::vector<TokenSequence> batch(cfg.batch_size);
    for (std::uint64_t step = 0; step < cfg.total_steps; ++step) {
        RngStream batch_rng = root.split("batch", step);
        for (int i = 0; i < cfg.batch_size; ++i) {
            const std::size_t idx =
                static_cast<std::size_t>(batch_rng.uniform() * data.train.size());
            batch[i] = data.train[std::min(idx, data.train.size() - 1)];
        }
        RngStream noise_rng = root.split("noise", step);
        opt.zero_grad();
        Tensor loss = nelbo_loss(*model, batch, sched, noise_rng, cfg.time_samples,
                                 cfg.time_floor);
        const double loss_val = loss.value();
        if (!std::isfinite(loss_val))
            throw TrainingError("train_teacher: non-finite loss at step " + std::to_string(step));
        backward(loss);
        clip_grad_norm(model->parameters(), cfg.grad_clip);
        opt.set_lr(lr_schedule(step, cfg.lr, cfg.warmup_steps, cfg.total_steps, cfg.lr_decay));
        opt.step();

        if (sink && ((step + 1) % cfg.eval_interval == 0 || step + 1 == cfg.total_steps)) {
            sink(step + 1, "loss", loss_val);
            sink(step + 1, "val_nelbo", validation_nelbo(*model, eval_view(), sched));
        }
    }
    return model;
}

}  // namespace maskdiff
