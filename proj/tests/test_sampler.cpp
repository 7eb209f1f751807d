#include <doctest.h>

#include <cmath>

#include "maskdiff/sampler.hpp"

using namespace maskdiff;

namespace {

ModelConfig tiny_model(int vocab, int len = 8) {
    ModelConfig cfg;
    cfg.vocab_size = vocab;
    cfg.max_len = len;
    cfg.dim = 16;
    cfg.blocks = 1;
    cfg.heads = 2;
    return cfg;
}

void zero_head(DiscriminatorModel& disc) {
    for (Parameter* p : disc.parameters())
        if (p->name == "head.w2" || p->name == "head.b2")
            for (auto& x : p->tensor.data()) x = 0.0;
}

}  // namespace

TEST_CASE("tilted denoise reductions") {
    const ModelConfig mc = tiny_model(6);
    const int mask = 5;
    DenoiserModel model(mc, RngStream(90, 0));
    DiscriminatorModel disc(mc, RngStream(91, 0));
    TokenSequence z = {0, mask, 2, mask, 1, mask, 3, 0};

    // h = 0 is exactly the plain output
    const auto plain = model.denoise(z, 0.6);
    CHECK(tilted_denoise(model, disc, z, 0.6, 0.0).p == plain.p);

    // a reward that is constant in its input has a zero tilt term
    DiscriminatorModel flat(mc, RngStream(92, 0));
    zero_head(flat);
    const auto tilted = tilted_denoise(model, flat, z, 0.6, 5.0);
    REQUIRE(tilted.p.size() == plain.p.size());
    for (std::size_t i = 0; i < plain.p.size(); ++i)
        CHECK(tilted.p[i] == doctest::Approx(plain.p[i]).epsilon(1e-12));

    // outputs stay valid distributions with zero MASK mass and carry-over
    const auto guided = tilted_denoise(model, disc, z, 0.6, 3.0);
    for (int l = 0; l < 8; ++l) {
        double acc = 0.0;
        for (double p : guided.row(l)) {
            CHECK(p >= 0.0);
            acc += p;
        }
        CHECK(std::fabs(acc - 1.0) < 1e-9);
        CHECK(guided.row(l)[mask] == 0.0);
        if (z[l] != mask) CHECK(guided.row(l)[z[l]] == 1.0);
    }
}

// The tilt direction is the gradient of the reward with respect to the
// relaxed one-hot input; check it against finite differences of the reward.
TEST_CASE("tilt gradient matches finite differences of the reward") {
    ModelConfig mc = tiny_model(5);
    mc.init_std = 0.01;  // keep the forward-difference truncation term small
    const int mask = 4;
    DiscriminatorModel disc(mc, RngStream(93, 0));
    TokenSequence z = {0, mask, 2, mask, 1, 3, 0, 2};
    const double t = 0.5;
    const int len = 8, kk = 5;

    std::vector<int> masked_rows;
    for (int l = 0; l < len; ++l)
        if (z[l] == mask) masked_rows.push_back(l);

    const auto reward_at = [&](const std::vector<double>& onehot) {
        NoGradGuard guard;
        Tensor oh = Tensor::from_data(len, kk, onehot);
        Tensor logits = disc.forward_logits_relaxed(oh, t);
        double acc = 0.0;
        for (int l : masked_rows) acc += logits.at(l, 0);
        return acc / static_cast<double>(masked_rows.size());
    };

    std::vector<double> base(static_cast<std::size_t>(len) * kk, 0.0);
    for (int l = 0; l < len; ++l) base[static_cast<std::size_t>(l) * kk + z[l]] = 1.0;

    // analytic gradient, as tilted_denoise computes it
    Tensor oh = Tensor::from_data(len, kk, base, true);
    Tensor logits = disc.forward_logits_relaxed(oh, t);
    std::vector<int> cols(masked_rows.size(), 0);
    const std::vector<double> w(masked_rows.size(), 1.0 / masked_rows.size());
    backward(weighted_sum(gather(logits, masked_rows, cols), w));
    auto grad = oh.grad();

    double gmax = 0.0;
    for (double g : grad) gmax = std::max(gmax, std::fabs(g));

    const double delta = 1e-4;
    for (int l = 0; l < len; ++l) {
        for (int k = 0; k < kk; ++k) {
            auto up = base, down = base;
            up[static_cast<std::size_t>(l) * kk + k] += delta;
            down[static_cast<std::size_t>(l) * kk + k] -= delta;
            const double fd = (reward_at(up) - reward_at(down)) / (2.0 * delta);
            const double an = grad[static_cast<std::size_t>(l) * kk + k];
            const double denom = std::max({std::fabs(fd), std::fabs(an), 0.05 * gmax});
            CHECK(std::fabs(fd - an) / denom < 1e-3);
        }
    }
}

TEST_CASE("softmax selection arithmetic") {
    RngStream rng(94, 0);
    // rewards (ln 3, 0): selection probabilities (0.75, 0.25)
    const std::vector<double> rewards = {std::log(3.0), 0.0};
    int first = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i)
        if (softmax_select(rewards, 1.0, rng) == 0) ++first;
    const double p = static_cast<double>(first) / n;
    CHECK(std::fabs(p - 0.75) < 3.0 * std::sqrt(0.75 * 0.25 / n));

    // equal rewards: uniform over M within 3 sigma
    const std::vector<double> equal = {1.3, 1.3, 1.3, 1.3};
    std::vector<int> counts(4, 0);
    const int n2 = 10000;
    for (int i = 0; i < n2; ++i) ++counts[softmax_select(equal, 1.0, rng)];
    for (int m = 0; m < 4; ++m) {
        const double freq = static_cast<double>(counts[m]) / n2;
        CHECK(std::fabs(freq - 0.25) < 3.0 * std::sqrt(0.25 * 0.75 / n2));
    }
}

TEST_CASE("rerank select integration") {
    const ModelConfig mc = tiny_model(6);
    DiscriminatorModel disc(mc, RngStream(95, 0));
    RngStream rng(96, 0);

    // single candidate comes straight back
    std::vector<TokenSequence> one = {{0, 1, 2, 3, 0, 1, 2, 3}};
    CHECK(rerank_select(one, disc, 0.5, 1.0, rng) == 0);

    // fully unmasked candidates at t > 0: all rewards fall back to 0, uniform
    std::vector<TokenSequence> clean(3, TokenSequence{0, 1, 2, 3, 0, 1, 2, 3});
    std::vector<int> counts(3, 0);
    const int n = 9000;
    for (int i = 0; i < n; ++i) ++counts[rerank_select(clean, disc, 0.5, 1.0, rng)];
    for (int m = 0; m < 3; ++m) {
        const double freq = static_cast<double>(counts[m]) / n;
        CHECK(std::fabs(freq - 1.0 / 3.0) < 3.0 * std::sqrt((1.0 / 3.0) * (2.0 / 3.0) / n));
    }
}

TEST_CASE("rgas reduces to ancestral sampling and respects carry-over") {
    const ModelConfig mc = tiny_model(7, 12);
    DenoiserModel model(mc, RngStream(97, 0));
    DiscriminatorModel disc(mc, RngStream(98, 0));
    const int mask = mc.vocab_size - 1;
    const NoiseSchedule sched = NoiseSchedule::parse("linear");

    SamplerConfig plain_cfg;
    plain_cfg.nfe = 6;
    plain_cfg.h_max = 0.0;
    plain_cfg.rerank_candidates = 1;

    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        RngStream a(seed, 123);
        RngStream b(seed, 123);
        const TokenSequence as = ancestral_sample(model, 6, sched, 12, a);
        const RgasResult rg = rgas_sample(model, disc, plain_cfg, sched, 12, b);
        CHECK(as == rg.tokens);  // bitwise reduction under a shared stream
    }

    // full guidance: carry-over and mask monotonicity along the trajectory
    SamplerConfig guided;
    guided.nfe = 6;
    guided.h_max = 4.0;
    guided.rerank_candidates = 3;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        RngStream rng(seed, 321);
        const RgasResult rg = rgas_sample(model, disc, guided, sched, 12, rng);
        for (int tok : rg.tokens) CHECK(tok != mask);
        TokenSequence prev(12, mask);
        int prev_masked = 12;
        for (const RgasStepTrace& step : rg.trace) {
            CHECK(step.masked_after <= step.masked_before);
            CHECK(step.masked_before == prev_masked);
            for (int l = 0; l < 12; ++l)
                if (prev[l] != mask) CHECK(step.state_after[l] == prev[l]);
            prev = step.state_after;
            prev_masked = step.masked_after;
        }
        CHECK(prev == rg.tokens);
    }

    // N = 1: a single-shot fully unmasked sample
    SamplerConfig single;
    single.nfe = 1;
    RngStream rng(5, 555);
    const RgasResult rg = rgas_sample(model, disc, single, sched, 12, rng);
    for (int tok : rg.tokens) CHECK(tok != mask);
}
