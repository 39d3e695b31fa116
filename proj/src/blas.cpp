#include "cabr/nn.hpp"

#include <cstdlib>
#include <cstring>

#ifdef CABR_HAVE_CBLAS
#include <cblas.h>
extern "C" void openblas_set_num_threads(int);
extern "C" char* openblas_get_corename();
#endif

#ifdef __linux__
#include <unistd.h>
#endif

namespace cabr::blas {

#ifdef CABR_HAVE_CBLAS

void sgemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
           const float* b, int ldb, float beta, float* c, int ldc) {
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void set_threads(int n) {
    openblas_set_num_threads(n > 0 ? n : 1);
}

namespace {

bool known_slow_core(const char* name) {
    static const char* slow[] = {"Prescott", "Katmai", "Northwood", "Banias",
                                 "Core2",    "Atom",   "Nehalem",   "generic"};
    for (const char* s : slow) {
        if (std::strcmp(name, s) == 0) {
            return true;
        }
    }
    return false;
}

}  // namespace

void ensure_fast_kernels(char** argv) {
#ifdef __linux__
    if (std::getenv("CABR_BLAS_BOOT") || std::getenv("OPENBLAS_CORETYPE")) {
        return;
    }
    const char* want = nullptr;
    if (__builtin_cpu_supports("avx512f") && __builtin_cpu_supports("avx512dq")) {
        want = "SKYLAKEX";
    } else if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) {
        want = "HASWELL";
    }
    if (!want || !known_slow_core(openblas_get_corename())) {
        return;
    }
    setenv("OPENBLAS_CORETYPE", want, 1);
    setenv("CABR_BLAS_BOOT", "1", 1);
    execv("/proc/self/exe", argv);
#else
    (void)argv;
#endif
}

#else  // !CABR_HAVE_CBLAS

// Reference fallback; correct but not tuned.
void sgemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
           const float* b, int ldb, float beta, float* c, int ldc) {
    auto at = [&](int i, int j) { return trans_a ? a[static_cast<std::size_t>(j) * lda + i]
                                                 : a[static_cast<std::size_t>(i) * lda + j]; };
    auto bt = [&](int i, int j) { return trans_b ? b[static_cast<std::size_t>(j) * ldb + i]
                                                 : b[static_cast<std::size_t>(i) * ldb + j]; };
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            float acc = 0.f;
            for (int p = 0; p < k; ++p) {
                acc += at(i, p) * bt(p, j);
            }
            float* out = &c[static_cast<std::size_t>(i) * ldc + j];
            *out = beta == 0.f ? alpha * acc : alpha * acc + beta * *out;
        }
    }
}

void set_threads(int) {}
void ensure_fast_kernels(char**) {}

#endif

}  // namespace cabr::blas
