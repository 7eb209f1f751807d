#include "maskdiff/diffusion.hpp"

#include <cmath>
#include <stdexcept>

namespace maskdiff {

int Vocabulary::token_for_byte(unsigned char b) const {
    const auto pos = chars.find(static_cast<char>(b));
    if (pos == std::string::npos) return unk_index();
    return static_cast<int>(pos);
}

std::string Vocabulary::token_to_string(int tok) const {
    if (tok >= 0 && tok < static_cast<int>(chars.size())) return std::string(1, chars[tok]);
    if (tok == unk_index()) return "<unk>";
    if (tok == sep_index()) return "<sep>";
    if (tok == mask_index()) return "<mask>";
    throw std::out_of_range("token_to_string: bad token " + std::to_string(tok));
}

int Vocabulary::string_to_token(const std::string& s) const {
    if (s == "<unk>") return unk_index();
    if (s == "<sep>") return sep_index();
    if (s == "<mask>") return mask_index();
    if (s.size() == 1) {
        const auto pos = chars.find(s[0]);
        if (pos != std::string::npos) return static_cast<int>(pos);
    }
    throw std::out_of_range("string_to_token: unknown token string");
}

std::string Vocabulary::render(int tok) const {
    if (tok >= 0 && tok < static_cast<int>(chars.size())) {
        const unsigned char c = static_cast<unsigned char>(chars[tok]);
        if (c < 0x20 || c == 0x7F) return " ";
        return std::string(1, static_cast<char>(c));
    }
    if (tok == unk_index()) return "?";
    if (tok == sep_index()) return "¶";
    if (tok == mask_index()) return "█";  // full block: masked positions in traces
    return "?";
}

double NoiseSchedule::alpha(double t) const {
    double a;
    switch (kind) {
        case Kind::linear:
            a = 1.0 - t;
            break;
        case Kind::loglinear: {
            // log alpha linear in t between the clamp endpoints
            const double lo = std::log(eps_clip);
            const double hi = std::log(1.0 - eps_clip);
            a = std::exp(hi + t * (lo - hi));
            break;
        }
        default:
            a = 1.0 - t;
    }
    if (a < eps_clip) a = eps_clip;
    if (a > 1.0 - eps_clip) a = 1.0 - eps_clip;
    return a;
}

double NoiseSchedule::alpha_prime(double t) const {
    switch (kind) {
        case Kind::linear:
            return -1.0;
        case Kind::loglinear: {
            const double lo = std::log(eps_clip);
            const double hi = std::log(1.0 - eps_clip);
            return (lo - hi) * std::exp(hi + t * (lo - hi));
        }
        default:
            return -1.0;
    }
}

NoiseSchedule NoiseSchedule::parse(const std::string& kind, double eps_clip) {
    NoiseSchedule s;
    s.eps_clip = eps_clip;
    if (kind == "linear")
        s.kind = Kind::linear;
    else if (kind == "loglinear")
        s.kind = Kind::loglinear;
    else
        throw std::invalid_argument("NoiseSchedule: unknown kind '" + kind + "'");
    return s;
}

std::string NoiseSchedule::kind_name() const {
    return kind == Kind::linear ? "linear" : "loglinear";
}

TokenSequence corrupt(std::span<const int> x, double t, const NoiseSchedule& sched,
                      int mask_index, RngStream& rng) {
    if (t < 0.0 || t > 1.0) throw std::domain_error("corrupt: t outside [0,1]");
    const double a = sched.alpha(t);
    TokenSequence z(x.begin(), x.end());
    for (std::size_t l = 0; l < z.size(); ++l) {
        if (z[l] == mask_index) throw std::domain_error("corrupt: input already contains MASK");
        if (!rng.bernoulli(a)) z[l] = mask_index;
    }
    return z;
}

std::vector<double> posterior_probs(int z_t_tok, std::span<const double> x_pred, double s,
                                    double t, const NoiseSchedule& sched, int mask_index) {
    const int vocab = static_cast<int>(x_pred.size());
    if (s >= t) throw std::domain_error("posterior_probs: requires s < t");
    if (s < 0.0 || t > 1.0) throw std::domain_error("posterior_probs: times outside [0,1]");
    std::vector<double> out(vocab, 0.0);
    if (z_t_tok != mask_index) {
        out[z_t_tok] = 1.0;  // carry-over case
        return out;
    }
    const double alpha_t = sched.alpha(t);
    if (alpha_t >= 1.0) throw std::domain_error("posterior_probs: alpha(t) = 1 at masked position");
    const double alpha_s = (s <= 0.0) ? 1.0 : sched.alpha(s);
    const double denom = 1.0 - alpha_t;
    const double w_mask = (1.0 - alpha_s) / denom;
    const double w_pred = (alpha_s - alpha_t) / denom;
    for (int k = 0; k < vocab; ++k) out[k] = w_pred * x_pred[k];
    out[mask_index] = w_mask;
    return out;
}

TokenSequence ancestral_step(std::span<const int> z_t, const PerPositionProbs& denoised,
                             double s, double t, const NoiseSchedule& sched, int mask_index,
                             RngStream& rng) {
    if (static_cast<int>(z_t.size()) != denoised.length)
        throw std::invalid_argument("ancestral_step: length mismatch");
    TokenSequence out(z_t.begin(), z_t.end());
    for (int l = 0; l < denoised.length; ++l) {
        if (out[l] != mask_index) continue;
        const auto probs = posterior_probs(mask_index, denoised.row(l), s, t, sched, mask_index);
        out[l] = rng.categorical(probs);
    }
    return out;
}

double nelbo_weight(double t, const NoiseSchedule& sched) {
    const double a = sched.alpha(t);
    if (a >= 1.0) throw std::domain_error("nelbo_weight: alpha(t) = 1");
    return sched.alpha_prime(t) / (1.0 - a);
}

}  // namespace maskdiff
