// Counter-based random streams (Philox4x64-10).
//
// A stream is (key, counter); independent streams come from independent keys,
// so any stochastic routine can take its own stream and stay reproducible no
// matter what runs around it. The raw 64-bit outputs for key (k, 0) match
// numpy.random.Philox(key=k).random_raw(), which the unit tests pin.

#pragma once

#include <cstdint>
#include <span>
#include <string_view>

namespace maskdiff {

std::uint64_t mix64(std::uint64_t x);  // splitmix64 finalizer

class RngStream {
public:
    RngStream() : RngStream(0, 0) {}
    RngStream(std::uint64_t seed, std::uint64_t stream);

    // Child stream with a key derived from (this stream's key, child id).
    // Does not disturb this stream's state.
    RngStream split(std::uint64_t child) const;
    RngStream split(std::string_view tag, std::uint64_t child = 0) const;

    std::uint64_t next_u64();
    double uniform();                        // [0, 1)
    double uniform(double lo, double hi);
    double normal();                         // standard normal (Box-Muller)
    double gamma(double shape);              // shape > 0, unit scale
    double beta(double a, double b);
    bool bernoulli(double p);
    // Index draw from unnormalized nonnegative weights (single uniform + CDF walk).
    int categorical(std::span<const double> weights);

private:
    std::uint64_t key_[2];
    std::uint64_t counter_;
    std::uint64_t buf_[4];
    int buf_pos_;
    bool has_spare_normal_ = false;
    double spare_normal_ = 0.0;

    void refill();
};

// log Beta(a, b) density at x in (0, 1).
double beta_log_pdf(double x, double a, double b);

}  // namespace maskdiff
