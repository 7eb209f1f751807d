// AdamW with decoupled weight decay, plus the warmup/decay curves the
// training loops use.

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "maskdiff/tensor.hpp"

namespace maskdiff {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

class AdamW {
public:
    AdamW(std::vector<Parameter*> params, AdamWConfig cfg)
        : params_(std::move(params)), cfg_(cfg) {
        state_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            state_[i].m.assign(params_[i]->tensor.size(), 0.0);
            state_[i].v.assign(params_[i]->tensor.size(), 0.0);
        }
    }

    void set_lr(double lr) { cfg_.lr = lr; }
    double lr() const { return cfg_.lr; }

    void zero_grad() {
        for (Parameter* p : params_) p->tensor.zero_grad();
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Parameter* p = params_[i];
            if (!p->trainable) continue;
            auto w = p->tensor.data();
            auto& st = state_[i];
            const bool has_grad = p->tensor.grad_allocated();
            for (std::size_t j = 0; j < w.size(); ++j) {
                const double g = has_grad ? p->tensor.grad()[j] : 0.0;
                st.m[j] = cfg_.beta1 * st.m[j] + (1.0 - cfg_.beta1) * g;
                st.v[j] = cfg_.beta2 * st.v[j] + (1.0 - cfg_.beta2) * g * g;
                const double mhat = st.m[j] / bc1;
                const double vhat = st.v[j] / bc2;
                w[j] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w[j]);
            }
            ++p->update_count;
        }
    }

    std::uint64_t steps_taken() const { return t_; }

private:
    struct State {
        std::vector<double> m;
        std::vector<double> v;
    };
    std::vector<Parameter*> params_;
    AdamWConfig cfg_;
    std::vector<State> state_;
    std::uint64_t t_ = 0;
};

// Scales gradients so their global L2 norm is at most max_norm; returns the
// pre-clip norm. max_norm <= 0 disables clipping.
inline double clip_grad_norm(const std::vector<Parameter*>& params, double max_norm) {
    double total = 0.0;
    for (Parameter* p : params) {
        if (!p->tensor.grad_allocated()) continue;
        for (double g : p->tensor.grad()) total += g * g;
    }
    const double norm = std::sqrt(total);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / (norm + 1e-12);
        for (Parameter* p : params) {
            if (!p->tensor.grad_allocated()) continue;
            for (double& g : p->tensor.grad()) g *= s;
        }
    }
    return norm;
}

// Linear warmup followed by cosine or linear decay to zero over total steps.
inline double lr_schedule(std::uint64_t step, double base_lr, std::uint64_t warmup,
                          std::uint64_t total, const std::string& kind) {
    if (warmup > 0 && step < warmup)
        return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
    if (total <= warmup) return base_lr;
    const double frac =
        static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
    if (kind == "cosine") return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * frac));
    if (kind == "linear") return base_lr * (1.0 - frac);
    if (kind == "constant") return base_lr;
    throw std::invalid_argument("lr_schedule: unknown kind '" + kind + "'");
}

}  // namespace maskdiff
