#include "maskdiff/oracle.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "maskdiff/sampler.hpp"

namespace maskdiff {

namespace {

std::size_t pow_size(int base, int exp) {
    std::size_t out = 1;
    for (int i = 0; i < exp; ++i) {
        out *= static_cast<std::size_t>(base);
        if (out > kOracleStateCap)
            throw std::invalid_argument("oracle: state space exceeds the enumeration cap");
    }
    return out;
}

}  // namespace

TabularDenoiser::TabularDenoiser(int vocab, int length, RngStream init_rng, double init_scale)
    : vocab_(vocab), length_(length), states_(pow_size(vocab, length)) {
    if (vocab < 2 || length < 1) throw std::invalid_argument("TabularDenoiser: bad sizes");
    std::vector<double> data(states_ * static_cast<std::size_t>(length) * (vocab - 1));
    for (auto& x : data) x = init_rng.normal() * init_scale;
    table_.name = "table";
    table_.tensor = Tensor::from_data(static_cast<int>(states_),
                                      length_ * (vocab_ - 1), std::move(data), true);
}

std::size_t TabularDenoiser::state_index(std::span<const int> tokens) const {
    if (static_cast<int>(tokens.size()) != length_)
        throw std::invalid_argument("TabularDenoiser: wrong sequence length");
    std::size_t idx = 0;
    for (int l = length_ - 1; l >= 0; --l) {
        if (tokens[l] < 0 || tokens[l] >= vocab_)
            throw std::out_of_range("TabularDenoiser: token out of range");
        idx = idx * static_cast<std::size_t>(vocab_) + static_cast<std::size_t>(tokens[l]);
    }
    return idx;
}

Tensor TabularDenoiser::log_probs(std::span<const int> tokens, double) const {
    const int row = static_cast<int>(state_index(tokens));
    Tensor flat = embedding_rows(table_.tensor, std::span<const int>(&row, 1));
    return log_softmax_rows(reshape(flat, length_, vocab_ - 1));
}

std::unique_ptr<TabularDenoiser> TabularDenoiser::clone() const {
    RngStream dummy(0, 0);
    auto copy = std::make_unique<TabularDenoiser>(vocab_, length_, dummy, 0.0);
    std::copy(table_.tensor.data().begin(), table_.tensor.data().end(),
              copy->table_.tensor.data().begin());
    return copy;
}

StateDistribution::StateDistribution(int k, int l) : vocab(k), length(l) {
    p.assign(pow_size(k, l), 0.0);
}

std::size_t StateDistribution::index_of(std::span<const int> tokens) const {
    std::size_t idx = 0;
    for (int l = length - 1; l >= 0; --l)
        idx = idx * static_cast<std::size_t>(vocab) + static_cast<std::size_t>(tokens[l]);
    return idx;
}

TokenSequence StateDistribution::state_of(std::size_t idx) const {
    TokenSequence tokens(length);
    for (int l = 0; l < length; ++l) {
        tokens[l] = static_cast<int>(idx % static_cast<std::size_t>(vocab));
        idx /= static_cast<std::size_t>(vocab);
    }
    return tokens;
}

double StateDistribution::total() const {
    double acc = 0.0;
    for (double x : p) acc += x;
    return acc;
}

StateDistribution exact_generator_marginal(const Denoiser& model, int n_steps,
                                           const NoiseSchedule& sched, int length) {
    const int kk = model.vocab_size();
    const int mask = kk - 1;
    StateDistribution dist(kk, length);
    TokenSequence all_mask(length, mask);
    dist.p[dist.index_of(all_mask)] = 1.0;

    const std::vector<double> knots = uniform_time_grid(n_steps);
    for (int n = 0; n + 1 <= n_steps; ++n) {
        const double t = knots[n];
        const double s = knots[n + 1];
        StateDistribution next(kk, length);
        for (std::size_t si = 0; si < dist.p.size(); ++si) {
            const double mass = dist.p[si];
            if (mass == 0.0) continue;
            const TokenSequence state = dist.state_of(si);
            const PerPositionProbs pred = model.denoise(state, t);
            // per-position posterior rows; positions are independent given the
            // state, so walk every combination of masked-position outcomes
            std::vector<std::vector<double>> rows(length);
            for (int l = 0; l < length; ++l)
                rows[l] = posterior_probs(state[l], pred.row(l), s, t, sched, mask);
            TokenSequence out(state.begin(), state.end());
            std::function<void(int, double)> walk = [&](int l, double w) {
                if (w == 0.0) return;
                if (l == length) {
                    next.p[next.index_of(out)] += mass * w;
                    return;
                }
                if (state[l] != mask) {
                    out[l] = state[l];
                    walk(l + 1, w);
                    return;
                }
                for (int k = 0; k < kk; ++k) {
                    if (rows[l][k] == 0.0) continue;
                    out[l] = k;
                    walk(l + 1, w * rows[l][k]);
                }
                out[l] = mask;
            };
            walk(0, 1.0);
        }
        dist = std::move(next);
    }
    return dist;
}

StateDistribution exact_corrupted_marginal(const StateDistribution& gen, double t,
                                           const NoiseSchedule& sched) {
    const int kk = gen.vocab;
    const int mask = kk - 1;
    const int length = gen.length;
    const double a = sched.alpha(t);
    StateDistribution out(kk, length);
    for (std::size_t xi = 0; xi < gen.p.size(); ++xi) {
        const double mass = gen.p[xi];
        if (mass == 0.0) continue;
        const TokenSequence x = gen.state_of(xi);
        // every masking pattern of this clean sequence
        const std::size_t patterns = static_cast<std::size_t>(1) << length;
        TokenSequence z(x.begin(), x.end());
        for (std::size_t pat = 0; pat < patterns; ++pat) {
            double w = 1.0;
            for (int l = 0; l < length; ++l) {
                if (pat & (static_cast<std::size_t>(1) << l)) {
                    z[l] = mask;
                    w *= 1.0 - a;
                } else {
                    z[l] = x[l];
                    w *= a;
                }
            }
            out.p[out.index_of(z)] += mass * w;
        }
    }
    return out;
}

double exact_ikl(const Denoiser& student, const Denoiser& teacher, const NoiseSchedule& sched,
                 const OmegaFn& omega, int n_steps, int length, int grid_points) {
    const StateDistribution gen_student = exact_generator_marginal(student, n_steps, sched, length);
    const StateDistribution gen_teacher = exact_generator_marginal(teacher, n_steps, sched, length);
    double acc = 0.0;
    const double dt = 1.0 / grid_points;
    for (int g = 0; g < grid_points; ++g) {
        const double t = (g + 0.5) * dt;
        const StateDistribution qs = exact_corrupted_marginal(gen_student, t, sched);
        const StateDistribution qt = exact_corrupted_marginal(gen_teacher, t, sched);
        double kl = 0.0;
        for (std::size_t i = 0; i < qs.p.size(); ++i) {
            if (qs.p[i] == 0.0) continue;
            if (qt.p[i] == 0.0) return std::numeric_limits<double>::infinity();
            kl += qs.p[i] * std::log(qs.p[i] / qt.p[i]);
        }
        acc += omega(t) * kl * dt;
    }
    return acc;
}

std::vector<double> exact_optimal_discriminator(const StateDistribution& q_student,
                                                const StateDistribution& q_teacher) {
    if (q_student.p.size() != q_teacher.p.size())
        throw std::invalid_argument("exact_optimal_discriminator: state space mismatch");
    std::vector<double> d(q_student.p.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double denom = q_student.p[i] + q_teacher.p[i];
        d[i] = denom > 0.0 ? q_student.p[i] / denom : std::numeric_limits<double>::quiet_NaN();
    }
    return d;
}

std::vector<double> exact_student_gradient(TabularDenoiser& student, const Denoiser& teacher,
                                           const NoiseSchedule& sched, const OmegaFn& omega,
                                           int n_steps, int grid_points, double h) {
    auto data = student.table()->tensor.data();
    std::vector<double> grad(data.size());
    for (std::size_t j = 0; j < data.size(); ++j) {
        const double keep = data[j];
        data[j] = keep + h;
        const double up = exact_ikl(student, teacher, sched, omega, n_steps, student.length(),
                                    grid_points);
        data[j] = keep - h;
        const double down = exact_ikl(student, teacher, sched, omega, n_steps, student.length(),
                                      grid_points);
        data[j] = keep;
        grad[j] = (up - down) / (2.0 * h);
    }
    return grad;
}

}  // namespace maskdiff
