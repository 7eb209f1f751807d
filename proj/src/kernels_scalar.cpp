// Scalar reference lane. Compiled without arch flags; keep loops simple so
// they stay the readable ground truth for the AVX2 lane.

#include "maskdiff/kernels.hpp"

#include <cmath>
#include <cstring>

namespace maskdiff {
namespace kernels {
namespace scalar {

void fill(double* x, std::size_t n, double v) {
    for (std::size_t i = 0; i < n; ++i) x[i] = v;
}

void add(double* z, const double* x, const double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) z[i] = x[i] + y[i];
}

void sub(double* z, const double* x, const double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) z[i] = x[i] - y[i];
}

void mul(double* z, const double* x, const double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) z[i] = x[i] * y[i];
}

void scale(double* z, const double* x, std::size_t n, double c) {
    for (std::size_t i = 0; i < n; ++i) z[i] = x[i] * c;
}

void axpy(double* y, const double* x, std::size_t n, double a) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

double dot(const double* x, const double* y, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

double sum(const double* x, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

double max(const double* x, std::size_t n) {
    double m = x[0];
    for (std::size_t i = 1; i < n; ++i)
        if (x[i] > m) m = x[i];
    return m;
}

void vexp(double* z, const double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) z[i] = std::exp(x[i]);
}

void vsigmoid(double* z, const double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        const double v = x[i];
        z[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
}

void vsilu(double* z, const double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        const double v = x[i];
        const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        z[i] = v * s;
    }
}

void shift(double* z, const double* x, std::size_t n, double c) {
    for (std::size_t i = 0; i < n; ++i) z[i] = x[i] + c;
}

void matmul(const double* a, const double* b, double* c,
            std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    if (!accumulate) std::memset(c, 0, sizeof(double) * m * n);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            const double* brow = b + p * n;
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void matmul_nt(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            const double* arow = a + i * k;
            const double* brow = b + j * k;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            if (accumulate)
                c[i * n + j] += acc;
            else
                c[i * n + j] = acc;
        }
    }
}

void matmul_tn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    if (!accumulate) std::memset(c, 0, sizeof(double) * m * n);
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = a + p * m;
        const double* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = arow[i];
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace scalar

const Kernels& scalar_kernels() {
    static const Kernels table = {
        scalar::fill, scalar::add,  scalar::sub, scalar::mul,
        scalar::scale, scalar::axpy, scalar::dot, scalar::sum,
        scalar::max,   scalar::vexp, scalar::vsigmoid, scalar::vsilu,
        scalar::shift, scalar::matmul, scalar::matmul_nt, scalar::matmul_tn,
    };
    return table;
}

}  // namespace kernels
}  // namespace maskdiff
