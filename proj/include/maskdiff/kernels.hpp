// Low-level float64 array kernels used by the tensor layer.
//
// Every kernel has a plain scalar reference implementation and, on x86-64,
// an AVX2+FMA variant. The active set is chosen once at startup from CPUID
// and can be overridden (see set_kernel_mode) so tests can compare the two
// lanes on identical inputs.
//
// Rounding notes for the equivalence tests:
//   - add/sub/mul/scale perform one rounding per element in both lanes and
//     match bitwise.
//   - dot/sum/matmul/axpy change accumulation order (and contract into FMA)
//     in the AVX2 lane, so they match only up to relative 1e-13.
//   - vexp/vsigmoid/vsilu use a polynomial exp in the AVX2 lane, accurate to
//     a few ulp of the libm reference (tested at relative 1e-14); results
//     that would be subnormal (x < -708) flush to zero.

#pragma once

#include <cstddef>

namespace maskdiff {
namespace kernels {

struct Kernels {
    void (*fill)(double* x, std::size_t n, double v);
    void (*add)(double* z, const double* x, const double* y, std::size_t n);
    void (*sub)(double* z, const double* x, const double* y, std::size_t n);
    void (*mul)(double* z, const double* x, const double* y, std::size_t n);
    void (*scale)(double* z, const double* x, std::size_t n, double c);
    void (*axpy)(double* y, const double* x, std::size_t n, double a);  // y += a*x
    double (*dot)(const double* x, const double* y, std::size_t n);
    double (*sum)(const double* x, std::size_t n);
    double (*max)(const double* x, std::size_t n);  // n >= 1
    void (*vexp)(double* z, const double* x, std::size_t n);
    void (*vsigmoid)(double* z, const double* x, std::size_t n);
    void (*vsilu)(double* z, const double* x, std::size_t n);
    void (*shift)(double* z, const double* x, std::size_t n, double c);  // z = x + c
    // C = A*B   (A: MxK, B: KxN, C: MxN, row-major). accumulate: C += A*B.
    void (*matmul)(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n, bool accumulate);
    // C = A*B^T (A: MxK, B: NxK, C: MxN).
    void (*matmul_nt)(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n, bool accumulate);
    // C = A^T*B (A: KxM, B: KxN, C: MxN).
    void (*matmul_tn)(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n, bool accumulate);
};

enum class KernelMode { automatic, scalar, avx2 };

// Active kernel table. Defaults to the best lane the CPU supports.
const Kernels& active();

// Force a lane (tests); automatic re-detects. Throws if avx2 is requested on
// a machine without it.
void set_kernel_mode(KernelMode mode);
KernelMode current_mode();
bool avx2_available();

// Direct access to each lane for equivalence tests.
const Kernels& scalar_kernels();
const Kernels* avx2_kernels();  // nullptr when unsupported or not compiled in

}  // namespace kernels
}  // namespace maskdiff
