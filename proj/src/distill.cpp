#include "maskdiff/distill.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "maskdiff/optim.hpp"

namespace maskdiff {

void DistillConfig::validate() const {
    if (group_size < 2) throw std::invalid_argument("DistillConfig: group_size must be >= 2");
    if (student_lr <= 0.0 || disc_lr <= 0.0)
        throw std::invalid_argument("DistillConfig: learning rates must be positive");
    if (kl_weight < 0.0 || entropy_weight < 0.0 || epsilon < 0.0)
        throw std::invalid_argument("DistillConfig: weights must be >= 0");
    if (pi_family != "uniform" && pi_family != "beta")
        throw std::invalid_argument("DistillConfig: pi_family must be uniform or beta");
    if (pi_family == "beta" && (pi_a <= 0.0 || pi_b <= 0.0))
        throw std::invalid_argument("DistillConfig: Beta parameters must be positive");
    if (omega_mode != "constant" && omega_mode != "alpha")
        throw std::invalid_argument("DistillConfig: omega_mode must be constant or alpha");
    if (advantage_mode != "group_norm" && advantage_mode != "loo_baseline" &&
        advantage_mode != "raw")
        throw std::invalid_argument("DistillConfig: unknown advantage_mode");
    if (disc_init != "teacher" && disc_init != "scratch")
        throw std::invalid_argument("DistillConfig: disc_init must be teacher or scratch");
    if (rollout_nfe < 1 || teacher_rollout_nfe < 1 || teacher_pool < 0)
        throw std::invalid_argument("DistillConfig: rollout sizes must be positive");
}

double omega_weight(double t, const NoiseSchedule& sched, const std::string& mode) {
    if (mode == "constant") return 1.0;
    if (mode == "alpha") return -sched.alpha_prime(t) / (1.0 - sched.alpha(t) + 1e-8);
    throw std::invalid_argument("omega_weight: unknown mode '" + mode + "'");
}

double sample_pi(const DistillConfig& cfg, RngStream& rng) {
    // clamp away from the endpoints where 1/(1-alpha) degenerates
    const double t =
        cfg.pi_family == "uniform" ? rng.uniform() : rng.beta(cfg.pi_a, cfg.pi_b);
    return std::min(1.0 - 1e-3, std::max(1e-3, t));
}

double pi_density(const DistillConfig& cfg, double t) {
    if (cfg.pi_family == "uniform") return 1.0;
    return std::exp(beta_log_pdf(t, cfg.pi_a, cfg.pi_b));
}

void normalize_rewards(std::span<RewardGroupEntry> group, double eps) {
    if (group.size() < 2)
        throw std::invalid_argument("normalize_rewards: group must hold at least 2 entries");
    double mu = 0.0;
    for (const auto& e : group) mu += e.reward;
    mu /= static_cast<double>(group.size());
    double var = 0.0;
    for (const auto& e : group) var += (e.reward - mu) * (e.reward - mu);
    var /= static_cast<double>(group.size());
    const double denom = std::sqrt(var) + eps;
    for (auto& e : group) e.advantage = (e.reward - mu) / denom;
}

RewardFn discriminator_reward(const DiscriminatorModel& disc) {
    return [&disc](std::span<const int> z, double t) { return estimate_reward(disc, z, t); };
}

RolloutTrace student_rollout(const Denoiser& model, std::span<const double> knots,
                             const NoiseSchedule& sched, int length, RngStream& rng) {
    if (knots.size() < 2 || knots.front() != 1.0)
        throw std::invalid_argument("student_rollout: knots must start at t = 1");
    const int mask = model.vocab_size() - 1;
    RolloutTrace tr;
    TokenSequence z(length, mask);
    for (std::size_t n = 0; n + 1 < knots.size(); ++n) {
        tr.states.push_back(z);
        tr.times.push_back(knots[n]);
        const PerPositionProbs probs = model.denoise(z, knots[n]);
        TokenSequence next = ancestral_step(z, probs, knots[n + 1], knots[n], sched, mask, rng);
        for (int l = 0; l < length; ++l)
            if (z[l] == mask && next[l] != mask)
                tr.commits.push_back({static_cast<int>(n), l, next[l]});
        z = std::move(next);
    }
    for (int tok : z)
        if (tok == mask) throw std::logic_error("student_rollout: output still masked");
    tr.final_x = std::move(z);
    return tr;
}

namespace {

struct GroupEntry {
    double t = 0.0;
    RolloutTrace trace;
    TokenSequence z;
    int masked_count = 0;
    double reward = 0.0;
    double advantage = 0.0;
};

// Mean per-masked-row forward KL(teacher || student) at one state, as a graph
// over the student's log-probs. The teacher entropy constant is folded in so
// the reported value is a true KL.
Tensor state_kl(const Tensor& student_lp, const Denoiser& teacher,
                std::span<const int> state, double t, int mask) {
    const int len = static_cast<int>(state.size());
    const int cols = student_lp.cols();  // K - 1
    std::vector<double> q(static_cast<std::size_t>(len) * cols, 0.0);
    std::vector<double> row_w(len, 0.0);
    int masked = 0;
    for (int l = 0; l < len; ++l)
        if (state[l] == mask) ++masked;
    if (masked == 0) return Tensor::scalar(0.0);
    double teacher_entropy = 0.0;
    PerPositionProbs tp;
    {
        NoGradGuard guard;
        tp = teacher.denoise(state, t);
    }
    for (int l = 0; l < len; ++l) {
        if (state[l] != mask) continue;
        row_w[l] = 1.0 / masked;
        for (int k = 0; k < cols; ++k) {
            const double pk = tp.row(l)[k];
            q[static_cast<std::size_t>(l) * cols + k] = pk;
            if (pk > 0.0) teacher_entropy -= pk * std::log(pk) / masked;
        }
    }
    return add_const(soft_cross_entropy_rows(student_lp, q, row_w), -teacher_entropy);
}

Tensor state_entropy(const Tensor& student_lp, std::span<const int> state, int mask) {
    const int len = static_cast<int>(state.size());
    std::vector<double> row_w(len, 0.0);
    int masked = 0;
    for (int l = 0; l < len; ++l)
        if (state[l] == mask) ++masked;
    if (masked == 0) return Tensor::scalar(0.0);
    for (int l = 0; l < len; ++l)
        if (state[l] == mask) row_w[l] = 1.0 / masked;
    return entropy_rows(student_lp, row_w);
}

Tensor mean_of(std::vector<Tensor>& terms) {
    if (terms.empty()) return Tensor::scalar(0.0);
    return scale(sum_list(terms), 1.0 / static_cast<double>(terms.size()));
}

}  // namespace

PgStats student_policy_gradient(const Denoiser& student, const Denoiser* kl_teacher,
                                const RewardFn& reward, const NoiseSchedule& sched,
                                const PgOptions& opt, RngStream& rng) {
    if (opt.length < 1) throw std::invalid_argument("student_policy_gradient: bad length");
    if ((opt.kl_weight > 0.0 || opt.entropy_weight > 0.0) && !kl_teacher)
        throw std::invalid_argument("student_policy_gradient: regularizers need a teacher");
    const int mask = student.vocab_size() - 1;
    PgStats stats;

    // roll out the group (no graphs yet; rewards never carry gradients)
    std::vector<GroupEntry> used;
    for (int i = 0; i < opt.group_size; ++i) {
        GroupEntry e;
        e.t = opt.sample_t(rng);
        std::vector<double> knots;
        if (opt.decompose) {
            const double split = opt.coupled_time ? e.t : opt.sample_t(rng);
            knots = {1.0, split, 0.0};
        } else {
            knots = uniform_time_grid(opt.rollout_nfe);
        }
        e.trace = student_rollout(student, knots, sched, opt.length, rng);
        e.z = corrupt(e.trace.final_x, e.t, sched, mask, rng);
        for (int tok : e.z)
            if (tok == mask) ++e.masked_count;
        const auto r = reward(e.z, e.t);
        if (!r.has_value()) {
            ++stats.dropped;  // reward undefined without masked positions
            continue;
        }
        e.reward = *r;
        used.push_back(std::move(e));
    }
    stats.used = static_cast<int>(used.size());
    if (used.empty()) return stats;

    // advantages
    double mu = 0.0;
    for (const auto& e : used) mu += e.reward;
    mu /= static_cast<double>(used.size());
    double var = 0.0;
    for (const auto& e : used) var += (e.reward - mu) * (e.reward - mu);
    var /= static_cast<double>(used.size());
    stats.mean_reward = mu;
    stats.reward_std = std::sqrt(var);
    if (opt.advantage_mode == "group_norm") {
        std::vector<RewardGroupEntry> view(used.size());
        for (std::size_t i = 0; i < used.size(); ++i) view[i].reward = used[i].reward;
        if (used.size() >= 2) {
            normalize_rewards(view, opt.epsilon);
            for (std::size_t i = 0; i < used.size(); ++i) used[i].advantage = view[i].advantage;
        }
    } else if (opt.advantage_mode == "loo_baseline") {
        const double total = mu * static_cast<double>(used.size());
        for (auto& e : used)
            e.advantage = used.size() >= 2
                              ? e.reward - (total - e.reward) / static_cast<double>(used.size() - 1)
                              : 0.0;
    } else {
        for (auto& e : used) e.advantage = e.reward;
    }

    // shared first stage: every rollout starts from all-MASK at t = 1
    const TokenSequence all_mask(opt.length, mask);
    Tensor lp0 = student.log_probs(all_mask, 1.0);

    std::vector<Tensor> policy_terms;
    std::vector<Tensor> kl_terms;
    std::vector<Tensor> entropy_terms;
    const bool want_reg = opt.kl_weight > 0.0 || opt.entropy_weight > 0.0;
    if (want_reg) {
        kl_terms.push_back(state_kl(lp0, *kl_teacher, all_mask, 1.0, mask));
        entropy_terms.push_back(state_entropy(lp0, all_mask, mask));
    }

    for (const auto& e : used) {
        const double coef = opt.omega(e.t) / opt.pi_pdf(e.t) * e.advantage;
        std::vector<Tensor> score_parts;

        // stage-0 commits read from the shared all-MASK forward
        {
            std::vector<int> rows, cols;
            for (const Commit& c : e.trace.commits)
                if (c.stage == 0) {
                    rows.push_back(c.position);
                    cols.push_back(c.token);
                }
            if (!rows.empty()) {
                const std::vector<double> w(rows.size(), 1.0);
                score_parts.push_back(weighted_sum(gather(lp0, rows, cols), w));
            }
        }

        if (opt.decompose) {
            // split state: realized-trajectory term is the prefix only; the
            // second term re-denoises the freshly corrupted z at its own time
            const TokenSequence& split_state = e.trace.states[1];
            const double split_t = e.trace.times[1];
            Tensor lp_split = student.log_probs(split_state, split_t);
            if (want_reg) {
                kl_terms.push_back(state_kl(lp_split, *kl_teacher, split_state, split_t, mask));
                entropy_terms.push_back(state_entropy(lp_split, split_state, mask));
            }
            Tensor lp_z = student.log_probs(e.z, e.t);
            std::vector<int> rows, cols;
            for (int l = 0; l < opt.length; ++l)
                if (e.z[l] == mask) {
                    rows.push_back(l);
                    cols.push_back(e.trace.final_x[l]);
                }
            const std::vector<double> w(rows.size(), 1.0);
            score_parts.push_back(weighted_sum(gather(lp_z, rows, cols), w));
        } else {
            // full realized-trajectory log-likelihood across later stages
            for (std::size_t stage = 1; stage < e.trace.states.size(); ++stage) {
                std::vector<int> rows, cols;
                for (const Commit& c : e.trace.commits)
                    if (c.stage == static_cast<int>(stage)) {
                        rows.push_back(c.position);
                        cols.push_back(c.token);
                    }
                const bool need_reg_here = want_reg;
                if (rows.empty() && !need_reg_here) continue;
                Tensor lp = student.log_probs(e.trace.states[stage], e.trace.times[stage]);
                if (!rows.empty()) {
                    const std::vector<double> w(rows.size(), 1.0);
                    score_parts.push_back(weighted_sum(gather(lp, rows, cols), w));
                }
                if (want_reg) {
                    kl_terms.push_back(state_kl(lp, *kl_teacher, e.trace.states[stage],
                                                e.trace.times[stage], mask));
                    entropy_terms.push_back(
                        state_entropy(lp, e.trace.states[stage], mask));
                }
            }
        }
        if (!score_parts.empty() && coef != 0.0)
            policy_terms.push_back(scale(sum_list(score_parts), coef));
    }

    Tensor loss = policy_terms.empty()
                      ? Tensor::scalar(0.0)
                      : scale(sum_list(policy_terms), 1.0 / static_cast<double>(used.size()));
    Tensor kl = mean_of(kl_terms);
    Tensor entropy = mean_of(entropy_terms);
    stats.policy_term = loss.value();
    stats.kl_reg = kl.value();
    stats.entropy_bonus = entropy.value();
    if (opt.kl_weight > 0.0) loss = add(loss, scale(kl, opt.kl_weight));
    if (opt.entropy_weight > 0.0) loss = add(loss, scale(entropy, -opt.entropy_weight));
    stats.surrogate = loss.value();
    if (loss.requires_grad()) backward(loss);
    return stats;
}

DistillTrainer::DistillTrainer(const DistillConfig& cfg, std::unique_ptr<DenoiserModel> teacher,
                               Vocabulary vocab)
    : cfg_(cfg),
      vocab_(std::move(vocab)),
      sched_(NoiseSchedule::parse(cfg.schedule_kind)),
      teacher_(std::move(teacher)),
      root_(cfg.seed, 0xD157) {
    cfg_.validate();
    student_ = init_student_from_teacher(*teacher_);
    RngStream disc_rng = root_.split("disc_init");
    disc_ = std::make_unique<DiscriminatorModel>(
        teacher_->config(), disc_rng, cfg_.disc_init == "teacher" ? teacher_.get() : nullptr);
    student_opt_ = std::make_unique<AdamW>(
        student_->parameters(), AdamWConfig{.lr = cfg_.student_lr,
                                            .beta1 = cfg_.adam_beta1,
                                            .beta2 = cfg_.adam_beta2,
                                            .eps = 1e-8,
                                            .weight_decay = cfg_.student_weight_decay});
    disc_opt_ = std::make_unique<AdamW>(
        disc_->parameters(), AdamWConfig{.lr = cfg_.disc_lr,
                                         .beta1 = cfg_.adam_beta1,
                                         .beta2 = cfg_.adam_beta2,
                                         .eps = 1e-8,
                                         .weight_decay = cfg_.disc_weight_decay});
    const int length = teacher_->config().max_len;
    teacher_pool_.reserve(cfg_.teacher_pool);
    for (int j = 0; j < cfg_.teacher_pool; ++j) {
        RngStream rng = root_.split("teacher_pool", static_cast<std::uint64_t>(j));
        teacher_pool_.push_back(
            ancestral_sample(*teacher_, cfg_.teacher_rollout_nfe, sched_, length, rng));
    }
}

TokenSequence DistillTrainer::draw_teacher_sample(RngStream& rng) {
    if (!teacher_pool_.empty()) {
        const std::size_t idx =
            std::min(static_cast<std::size_t>(rng.uniform() * teacher_pool_.size()),
                     teacher_pool_.size() - 1);
        return teacher_pool_[idx];
    }
    return ancestral_sample(*teacher_, cfg_.teacher_rollout_nfe, sched_,
                            teacher_->config().max_len, rng);
}

double DistillTrainer::discriminator_step(RngStream& rng) {
    const int length = teacher_->config().max_len;
    const int mask = vocab_.mask_index();
    std::vector<Tensor> terms;
    terms.reserve(2 * static_cast<std::size_t>(cfg_.group_size));
    nlohmann::json snapshot = nlohmann::json::array();
    for (int i = 0; i < cfg_.group_size; ++i) {
        const double t = sample_pi(cfg_, rng);
        std::vector<double> knots;
        if (cfg_.decompose_score) {
            const double split = cfg_.coupled_time ? t : sample_pi(cfg_, rng);
            knots = {1.0, split, 0.0};
        } else {
            knots = uniform_time_grid(cfg_.rollout_nfe);
        }
        TokenSequence x = student_rollout(*student_, knots, sched_, length, rng).final_x;
        TokenSequence x_teacher = draw_teacher_sample(rng);
        TokenSequence z = corrupt(x, t, sched_, mask, rng);
        TokenSequence z_teacher = corrupt(x_teacher, t, sched_, mask, rng);
        // balanced BCE over all positions: student corruptions labeled 1,
        // teacher corruptions labeled 0
        Tensor p_student = clamp(sigmoid(disc_->forward_logits(z, t)),
                                 DiscriminatorModel::kProbClamp,
                                 1.0 - DiscriminatorModel::kProbClamp);
        Tensor p_teacher = clamp(sigmoid(disc_->forward_logits(z_teacher, t)),
                                 DiscriminatorModel::kProbClamp,
                                 1.0 - DiscriminatorModel::kProbClamp);
        terms.push_back(binary_cross_entropy(p_student, std::vector<double>(length, 1.0)));
        terms.push_back(binary_cross_entropy(p_teacher, std::vector<double>(length, 0.0)));
        snapshot.push_back({{"t", t}, {"z", z}, {"z_teacher", z_teacher}});
    }
    Tensor loss = scale(sum_list(terms), 1.0 / static_cast<double>(cfg_.group_size));
    const double loss_val = loss.value();
    if (!std::isfinite(loss_val))
        throw DistillAbort("discriminator_step: non-finite loss", snapshot.dump());
    disc_opt_->zero_grad();
    backward(loss);
    disc_opt_->step();
    disc_->renormalize_head();
    return loss_val;
}

PgStats DistillTrainer::student_step(RngStream& rng) {
    PgOptions opt;
    opt.group_size = cfg_.group_size;
    opt.decompose = cfg_.decompose_score;
    opt.coupled_time = cfg_.coupled_time;
    opt.rollout_nfe = cfg_.rollout_nfe;
    opt.advantage_mode = cfg_.advantage_mode;
    opt.epsilon = cfg_.epsilon;
    opt.kl_weight = cfg_.kl_weight;
    opt.entropy_weight = cfg_.entropy_weight;
    opt.length = teacher_->config().max_len;
    opt.sample_t = [this](RngStream& r) { return sample_pi(cfg_, r); };
    opt.pi_pdf = [this](double t) { return pi_density(cfg_, t); };
    opt.omega = [this](double t) { return omega_weight(t, sched_, cfg_.omega_mode); };

    student_opt_->zero_grad();
    PgStats stats = student_policy_gradient(*student_, teacher_.get(),
                                            discriminator_reward(*disc_), sched_, opt, rng);
    if (!std::isfinite(stats.surrogate)) {
        nlohmann::json snapshot = {{"surrogate", "non-finite"},
                                   {"mean_reward", stats.mean_reward},
                                   {"reward_std", stats.reward_std}};
        throw DistillAbort("student_step: non-finite objective", snapshot.dump());
    }
    student_opt_->step();
    return stats;
}

void DistillTrainer::run(const MetricsSink& sink) {
    for (std::uint64_t iter = 0; iter < cfg_.iterations; ++iter) {
        RngStream disc_rng = root_.split("disc_step", iter);
        const double disc_loss = discriminator_step(disc_rng);
        RngStream student_rng = root_.split("student_step", iter);
        const PgStats pg = student_step(student_rng);
        if (sink && ((iter + 1) % cfg_.log_interval == 0 || iter + 1 == cfg_.iterations)) {
            sink(iter + 1, "disc_loss", disc_loss);
            sink(iter + 1, "mean_reward", pg.mean_reward);
            sink(iter + 1, "reward_std", pg.reward_std);
            sink(iter + 1, "student_obj", pg.surrogate);
            sink(iter + 1, "kl_reg", pg.kl_reg);
            sink(iter + 1, "entropy_bonus", pg.entropy_bonus);
        }
    }
}

}  // namespace maskdiff
