// Scalar vs AVX2 lane equivalence on random buffers. Elementwise kernels
// perform one rounding per element in both lanes and must agree bitwise;
// reductions and matmuls reassociate, so those get a tight relative bound.

#include <doctest.h>

#include <cmath>
#include <vector>

#include "maskdiff/kernels.hpp"
#include "maskdiff/rng.hpp"

using namespace maskdiff;

namespace {

std::vector<double> random_vec(RngStream& rng, std::size_t n, double lo = -2.0, double hi = 2.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

bool close_rel(double a, double b, double rel) {
    const double scale = std::max({1.0, std::fabs(a), std::fabs(b)});
    return std::fabs(a - b) <= rel * scale;
}

}  // namespace

TEST_CASE("elementwise kernels agree bitwise across lanes") {
    if (!kernels::avx2_available()) return;
    const kernels::Kernels& s = kernels::scalar_kernels();
    const kernels::Kernels& v = *kernels::avx2_kernels();
    RngStream rng(2024, 1);
    for (std::size_t n : {1u, 3u, 4u, 7u, 8u, 64u, 257u}) {
        auto x = random_vec(rng, n);
        auto y = random_vec(rng, n);
        std::vector<double> zs(n), zv(n);

        s.add(zs.data(), x.data(), y.data(), n);
        v.add(zv.data(), x.data(), y.data(), n);
        CHECK(zs == zv);

        s.sub(zs.data(), x.data(), y.data(), n);
        v.sub(zv.data(), x.data(), y.data(), n);
        CHECK(zs == zv);

        s.mul(zs.data(), x.data(), y.data(), n);
        v.mul(zv.data(), x.data(), y.data(), n);
        CHECK(zs == zv);

        s.scale(zs.data(), x.data(), n, 1.7);
        v.scale(zv.data(), x.data(), n, 1.7);
        CHECK(zs == zv);

        s.fill(zs.data(), n, 0.25);
        v.fill(zv.data(), n, 0.25);
        CHECK(zs == zv);

        CHECK(s.max(x.data(), n) == v.max(x.data(), n));
    }
}

TEST_CASE("reduction kernels agree within 1e-13 relative") {
    if (!kernels::avx2_available()) return;
    const kernels::Kernels& s = kernels::scalar_kernels();
    const kernels::Kernels& v = *kernels::avx2_kernels();
    RngStream rng(2024, 2);
    for (std::size_t n : {1u, 5u, 16u, 63u, 64u, 501u, 4096u}) {
        auto x = random_vec(rng, n);
        auto y = random_vec(rng, n);
        CHECK(close_rel(s.dot(x.data(), y.data(), n), v.dot(x.data(), y.data(), n), 1e-13));
        CHECK(close_rel(s.sum(x.data(), n), v.sum(x.data(), n), 1e-13));

        auto ys = y, yv = y;
        s.axpy(ys.data(), x.data(), n, -0.3);
        v.axpy(yv.data(), x.data(), n, -0.3);
        for (std::size_t i = 0; i < n; ++i) CHECK(close_rel(ys[i], yv[i], 1e-13));
    }
}

TEST_CASE("matmul variants agree across lanes") {
    if (!kernels::avx2_available()) return;
    const kernels::Kernels& s = kernels::scalar_kernels();
    const kernels::Kernels& v = *kernels::avx2_kernels();
    RngStream rng(2024, 3);
    struct Shape {
        std::size_t m, k, n;
    };
    for (Shape sh : {Shape{1, 1, 1}, Shape{3, 5, 7}, Shape{4, 8, 8}, Shape{64, 64, 64},
                     Shape{13, 31, 17}, Shape{5, 64, 33}}) {
        auto a = random_vec(rng, sh.m * sh.k);
        auto b = random_vec(rng, sh.k * sh.n);
        auto bt = random_vec(rng, sh.n * sh.k);
        auto at = random_vec(rng, sh.k * sh.m);
        std::vector<double> cs(sh.m * sh.n), cv(sh.m * sh.n);

        s.matmul(a.data(), b.data(), cs.data(), sh.m, sh.k, sh.n, false);
        v.matmul(a.data(), b.data(), cv.data(), sh.m, sh.k, sh.n, false);
        for (std::size_t i = 0; i < cs.size(); ++i) CHECK(close_rel(cs[i], cv[i], 1e-13));

        s.matmul_nt(a.data(), bt.data(), cs.data(), sh.m, sh.k, sh.n, false);
        v.matmul_nt(a.data(), bt.data(), cv.data(), sh.m, sh.k, sh.n, false);
        for (std::size_t i = 0; i < cs.size(); ++i) CHECK(close_rel(cs[i], cv[i], 1e-13));

        s.matmul_tn(at.data(), b.data(), cs.data(), sh.m, sh.k, sh.n, false);
        v.matmul_tn(at.data(), b.data(), cv.data(), sh.m, sh.k, sh.n, false);
        for (std::size_t i = 0; i < cs.size(); ++i) CHECK(close_rel(cs[i], cv[i], 1e-13));

        // accumulate path
        auto seed = random_vec(rng, sh.m * sh.n);
        cs = seed;
        cv = seed;
        s.matmul(a.data(), b.data(), cs.data(), sh.m, sh.k, sh.n, true);
        v.matmul(a.data(), b.data(), cv.data(), sh.m, sh.k, sh.n, true);
        for (std::size_t i = 0; i < cs.size(); ++i) CHECK(close_rel(cs[i], cv[i], 1e-13));
    }
}

TEST_CASE("kernel mode override round-trips") {
    kernels::set_kernel_mode(kernels::KernelMode::scalar);
    CHECK(&kernels::active() == &kernels::scalar_kernels());
    kernels::set_kernel_mode(kernels::KernelMode::automatic);
    if (kernels::avx2_available()) CHECK(&kernels::active() == kernels::avx2_kernels());
}

TEST_CASE("transcendental kernels match libm within a few ulp") {
    if (!kernels::avx2_available()) return;
    const kernels::Kernels& s = kernels::scalar_kernels();
    const kernels::Kernels& v = *kernels::avx2_kernels();
    RngStream rng(2024, 9);
    // moderate range, softmax-style negative range, extremes, and exact zero
    std::vector<double> xs;
    for (int i = 0; i < 4000; ++i) xs.push_back(rng.uniform(-30.0, 30.0));
    for (int i = 0; i < 2000; ++i) xs.push_back(rng.uniform(-745.0, 0.0));
    for (double edge : {0.0, -0.0, 1.0, -1.0, 700.0, -700.0, 709.0, -745.0, 1e-300})
        xs.push_back(edge);

    std::vector<double> es(xs.size()), ev(xs.size());
    s.vexp(es.data(), xs.data(), xs.size());
    v.vexp(ev.data(), xs.data(), xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (xs[i] < -708.0) {
            // subnormal zone: the vector lane flushes to zero
            CHECK(ev[i] == 0.0);
            CHECK(es[i] < 3e-308);
            continue;
        }
        const double denom = std::max(es[i], 1e-300);
        CHECK_MESSAGE(std::fabs(ev[i] - es[i]) / denom < 1e-14, "exp at x = ", xs[i]);
    }

    s.vsigmoid(es.data(), xs.data(), xs.size());
    v.vsigmoid(ev.data(), xs.data(), xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i)
        CHECK(std::fabs(ev[i] - es[i]) <= 1e-14);

    s.vsilu(es.data(), xs.data(), xs.size());
    v.vsilu(ev.data(), xs.data(), xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double denom = std::max({std::fabs(es[i]), std::fabs(ev[i]), 1.0});
        CHECK(std::fabs(ev[i] - es[i]) / denom < 1e-14);
    }

    // shift is a single rounding per element: bitwise across lanes
    std::vector<double> zs(xs.size()), zv(xs.size());
    s.shift(zs.data(), xs.data(), xs.size(), 0.7331);
    v.shift(zv.data(), xs.data(), xs.size(), 0.7331);
    CHECK(zs == zv);
}
