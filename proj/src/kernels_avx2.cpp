// AVX2+FMA lane. Only built on x86-64; the whole file is a no-op elsewhere.

#include "maskdiff/kernels.hpp"

#include <stdexcept>

#if defined(__x86_64__) || defined(_M_X64)
#define MASKDIFF_HAS_AVX2_LANE 1
#include <immintrin.h>

#include <cstring>
#endif

namespace maskdiff {
namespace kernels {

#ifdef MASKDIFF_HAS_AVX2_LANE
namespace avx2 {

void fill(double* x, std::size_t n, double v) {
    const __m256d vv = _mm256_set1_pd(v);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) _mm256_storeu_pd(x + i, vv);
    for (; i < n; ++i) x[i] = v;
}

void add(double* z, const double* x, const double* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(z + i, _mm256_add_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) z[i] = x[i] + y[i];
}

void sub(double* z, const double* x, const double* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(z + i, _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) z[i] = x[i] - y[i];
}

void mul(double* z, const double* x, const double* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(z + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) z[i] = x[i] * y[i];
}

void scale(double* z, const double* x, std::size_t n, double c) {
    const __m256d vc = _mm256_set1_pd(c);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(z + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), vc));
    for (; i < n; ++i) z[i] = x[i] * c;
}

void axpy(double* y, const double* x, std::size_t n, double a) {
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) y[i] += a * x[i];
}

static inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sw = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sw));
}

double dot(const double* x, const double* y, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4)
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    double acc = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

double sum(const double* x, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(x + i));
        acc1 = _mm256_add_pd(acc1, _mm256_loadu_pd(x + i + 4));
    }
    for (; i + 4 <= n; i += 4) acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(x + i));
    double acc = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) acc += x[i];
    return acc;
}

double max(const double* x, std::size_t n) {
    std::size_t i = 0;
    double m;
    if (n >= 4) {
        __m256d vm = _mm256_loadu_pd(x);
        for (i = 4; i + 4 <= n; i += 4) vm = _mm256_max_pd(vm, _mm256_loadu_pd(x + i));
        __m128d lo = _mm256_castpd256_pd128(vm);
        __m128d hi = _mm256_extractf128_pd(vm, 1);
        lo = _mm_max_pd(lo, hi);
        __m128d sw = _mm_unpackhi_pd(lo, lo);
        m = _mm_cvtsd_f64(_mm_max_sd(lo, sw));
    } else {
        m = x[0];
        i = 1;
    }
    for (; i < n; ++i)
        if (x[i] > m) m = x[i];
    return m;
}

// exp via range reduction x = n*ln2 + r and a rational approximation on r
// (cephes-style coefficients), then a 2^n exponent splice. Accurate to a few
// ulp inside [-708, 709.4]; below that range results flush to zero, above it
// to +inf (the giving-up band is ~0.4 wide next to the true overflow point).
static inline __m256d exp_pd(__m256d x) {
    const __m256d log2e = _mm256_set1_pd(1.4426950408889634073599);
    const __m256d c1 = _mm256_set1_pd(6.93145751953125e-1);
    const __m256d c2 = _mm256_set1_pd(1.42860682030941723212e-6);
    const __m256d upper = _mm256_set1_pd(709.4);
    const __m256d lower = _mm256_set1_pd(-708.0);
    const __m256d xc = _mm256_max_pd(_mm256_min_pd(x, upper), lower);

    __m256d n = _mm256_round_pd(_mm256_mul_pd(xc, log2e),
                                _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
    __m256d r = _mm256_fnmadd_pd(n, c1, xc);
    r = _mm256_fnmadd_pd(n, c2, r);
    const __m256d r2 = _mm256_mul_pd(r, r);

    // P(r^2) * r and Q(r^2)
    __m256d p = _mm256_set1_pd(1.26177193074810590878e-4);
    p = _mm256_fmadd_pd(p, r2, _mm256_set1_pd(3.02994407707441961300e-2));
    p = _mm256_fmadd_pd(p, r2, _mm256_set1_pd(9.99999999999999999910e-1));
    p = _mm256_mul_pd(p, r);
    __m256d q = _mm256_set1_pd(3.00198505138664455042e-6);
    q = _mm256_fmadd_pd(q, r2, _mm256_set1_pd(2.52448340349684104192e-3));
    q = _mm256_fmadd_pd(q, r2, _mm256_set1_pd(2.27265548208155028766e-1));
    q = _mm256_fmadd_pd(q, r2, _mm256_set1_pd(2.0));
    const __m256d e =
        _mm256_add_pd(_mm256_set1_pd(1.0),
                      _mm256_mul_pd(_mm256_set1_pd(2.0),
                                    _mm256_div_pd(p, _mm256_sub_pd(q, p))));

    // scale by 2^n: add n to the exponent bits
    const __m128i ni = _mm256_cvtpd_epi32(n);
    const __m256i nl = _mm256_cvtepi32_epi64(ni);
    const __m256i bits = _mm256_add_epi64(_mm256_castpd_si256(e), _mm256_slli_epi64(nl, 52));
    __m256d out = _mm256_castsi256_pd(bits);
    // beyond the reduction range: flush to 0 on the left (the true value is
    // subnormal there) and to +inf on the right, matching libm behavior
    const __m256d flush_lo = _mm256_cmp_pd(x, lower, _CMP_LT_OQ);
    const __m256d flush_hi = _mm256_cmp_pd(x, upper, _CMP_GT_OQ);
    out = _mm256_andnot_pd(flush_lo, out);
    out = _mm256_blendv_pd(out, _mm256_set1_pd(1.0 / 0.0), flush_hi);
    return out;
}

void vexp(double* z, const double* x, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) _mm256_storeu_pd(z + i, exp_pd(_mm256_loadu_pd(x + i)));
    for (; i < n; ++i) {
        double buf[4] = {x[i], 0.0, 0.0, 0.0};
        double out[4];
        _mm256_storeu_pd(out, exp_pd(_mm256_loadu_pd(buf)));
        z[i] = out[0];
    }
}

static inline __m256d sigmoid_pd(__m256d x) {
    // sigmoid(x) = 1 / (1 + exp(-x)); exp_pd saturates rather than
    // overflowing, so the quotient stays finite for all inputs
    const __m256d one = _mm256_set1_pd(1.0);
    const __m256d e = exp_pd(_mm256_sub_pd(_mm256_setzero_pd(), x));
    return _mm256_div_pd(one, _mm256_add_pd(one, e));
}

void vsigmoid(double* z, const double* x, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) _mm256_storeu_pd(z + i, sigmoid_pd(_mm256_loadu_pd(x + i)));
    for (; i < n; ++i) {
        double buf[4] = {x[i], 0.0, 0.0, 0.0};
        double out[4];
        _mm256_storeu_pd(out, sigmoid_pd(_mm256_loadu_pd(buf)));
        z[i] = out[0];
    }
}

void vsilu(double* z, const double* x, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d v = _mm256_loadu_pd(x + i);
        _mm256_storeu_pd(z + i, _mm256_mul_pd(v, sigmoid_pd(v)));
    }
    for (; i < n; ++i) {
        double buf[4] = {x[i], 0.0, 0.0, 0.0};
        double out[4];
        const __m256d v = _mm256_loadu_pd(buf);
        _mm256_storeu_pd(out, _mm256_mul_pd(v, sigmoid_pd(v)));
        z[i] = out[0];
    }
}

void shift(double* z, const double* x, std::size_t n, double c) {
    const __m256d vc = _mm256_set1_pd(c);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(z + i, _mm256_add_pd(_mm256_loadu_pd(x + i), vc));
    for (; i < n; ++i) z[i] = x[i] + c;
}

// 4x8 register tile over C; panels of B stream through L1.
void matmul(const double* a, const double* b, double* c,
            std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    if (!accumulate) std::memset(c, 0, sizeof(double) * m * n);
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        std::size_t j = 0;
        for (; j + 8 <= n; j += 8) {
            __m256d c00 = _mm256_loadu_pd(c + (i + 0) * n + j);
            __m256d c01 = _mm256_loadu_pd(c + (i + 0) * n + j + 4);
            __m256d c10 = _mm256_loadu_pd(c + (i + 1) * n + j);
            __m256d c11 = _mm256_loadu_pd(c + (i + 1) * n + j + 4);
            __m256d c20 = _mm256_loadu_pd(c + (i + 2) * n + j);
            __m256d c21 = _mm256_loadu_pd(c + (i + 2) * n + j + 4);
            __m256d c30 = _mm256_loadu_pd(c + (i + 3) * n + j);
            __m256d c31 = _mm256_loadu_pd(c + (i + 3) * n + j + 4);
            for (std::size_t p = 0; p < k; ++p) {
                const double* brow = b + p * n + j;
                const __m256d b0 = _mm256_loadu_pd(brow);
                const __m256d b1 = _mm256_loadu_pd(brow + 4);
                const __m256d a0 = _mm256_set1_pd(a[(i + 0) * k + p]);
                const __m256d a1 = _mm256_set1_pd(a[(i + 1) * k + p]);
                const __m256d a2 = _mm256_set1_pd(a[(i + 2) * k + p]);
                const __m256d a3 = _mm256_set1_pd(a[(i + 3) * k + p]);
                c00 = _mm256_fmadd_pd(a0, b0, c00);
                c01 = _mm256_fmadd_pd(a0, b1, c01);
                c10 = _mm256_fmadd_pd(a1, b0, c10);
                c11 = _mm256_fmadd_pd(a1, b1, c11);
                c20 = _mm256_fmadd_pd(a2, b0, c20);
                c21 = _mm256_fmadd_pd(a2, b1, c21);
                c30 = _mm256_fmadd_pd(a3, b0, c30);
                c31 = _mm256_fmadd_pd(a3, b1, c31);
            }
            _mm256_storeu_pd(c + (i + 0) * n + j, c00);
            _mm256_storeu_pd(c + (i + 0) * n + j + 4, c01);
            _mm256_storeu_pd(c + (i + 1) * n + j, c10);
            _mm256_storeu_pd(c + (i + 1) * n + j + 4, c11);
            _mm256_storeu_pd(c + (i + 2) * n + j, c20);
            _mm256_storeu_pd(c + (i + 2) * n + j + 4, c21);
            _mm256_storeu_pd(c + (i + 3) * n + j, c30);
            _mm256_storeu_pd(c + (i + 3) * n + j + 4, c31);
        }
        for (; j < n; ++j) {
            for (std::size_t ii = i; ii < i + 4; ++ii) {
                double acc = c[ii * n + j];
                for (std::size_t p = 0; p < k; ++p) acc += a[ii * k + p] * b[p * n + j];
                c[ii * n + j] = acc;
            }
        }
    }
    for (; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            avx2::axpy(c + i * n, b + p * n, n, av);
        }
    }
}

void matmul_nt(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double d = avx2::dot(arow, b + j * k, k);
            if (accumulate)
                c[i * n + j] += d;
            else
                c[i * n + j] = d;
        }
    }
}

void matmul_tn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    if (!accumulate) std::memset(c, 0, sizeof(double) * m * n);
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = a + p * m;
        const double* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) avx2::axpy(c + i * n, brow, n, arow[i]);
    }
}

}  // namespace avx2

const Kernels* avx2_kernels() {
    static const Kernels table = {
        avx2::fill, avx2::add,  avx2::sub, avx2::mul,
        avx2::scale, avx2::axpy, avx2::dot, avx2::sum,
        avx2::max,   avx2::vexp, avx2::vsigmoid, avx2::vsilu,
        avx2::shift, avx2::matmul, avx2::matmul_nt, avx2::matmul_tn,
    };
    return &table;
}

bool avx2_available() {
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}

#else

const Kernels* avx2_kernels() { return nullptr; }
bool avx2_available() { return false; }

#endif  // MASKDIFF_HAS_AVX2_LANE

namespace {

const Kernels* g_active = nullptr;
KernelMode g_mode = KernelMode::automatic;

const Kernels* pick(KernelMode mode) {
    if (mode == KernelMode::scalar) return &scalar_kernels();
    if (mode == KernelMode::avx2) return avx2_available() ? avx2_kernels() : nullptr;
    return avx2_available() ? avx2_kernels() : &scalar_kernels();
}

}  // namespace

const Kernels& active() {
    if (!g_active) g_active = pick(g_mode);
    return *g_active;
}

void set_kernel_mode(KernelMode mode) {
    const Kernels* t = pick(mode);
    if (!t) throw std::runtime_error("avx2 kernels requested but this CPU has no AVX2+FMA");
    g_mode = mode;
    g_active = t;
}

KernelMode current_mode() { return g_mode; }

}  // namespace kernels
}  // namespace maskdiff
