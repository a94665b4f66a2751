#include "dssl/kernels.hpp"

#include <atomic>
#include <cstdint>

namespace dssl::kernels {

namespace {
std::atomic<Precision> g_precision{Precision::F64};

// Row blocks below this many output elements are not worth a parallel region.
constexpr std::size_t kParallelThreshold = 16 * 1024;
} // namespace

Precision precision() { return g_precision.load(std::memory_order_relaxed); }
void set_precision(Precision p) { g_precision.store(p, std::memory_order_relaxed); }

void matmul(const double* a, const double* b, double* out,
            std::size_t m, std::size_t k, std::size_t n) {
    const bool f32 = precision() == Precision::F32;
    const bool par = m * n >= kParallelThreshold;
    const std::int64_t mi = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static) if (par)
    for (std::int64_t i = 0; i < mi; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        double* orow = out + static_cast<std::size_t>(i) * n;
        if (f32) {
            for (std::size_t j = 0; j < n; ++j) {
                float acc = 0.0f;
                for (std::size_t p = 0; p < k; ++p)
                    acc += static_cast<float>(arow[p]) * static_cast<float>(b[p * n + j]);
                orow[j] = static_cast<double>(acc);
            }
        } else {
            for (std::size_t j = 0; j < n; ++j) orow[j] = 0.0;
            // ikj order: stream through b row by row.
            for (std::size_t p = 0; p < k; ++p) {
                const double av = arow[p];
                const double* brow = b + p * n;
                for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
        }
    }
}

void matmul_tn(const double* a, const double* b, double* out,
               std::size_t m, std::size_t k, std::size_t n) {
    const bool f32 = precision() == Precision::F32;
    const bool par = m * n >= kParallelThreshold;
    const std::int64_t mi = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static) if (par)
    for (std::int64_t i = 0; i < mi; ++i) {
        double* orow = out + static_cast<std::size_t>(i) * n;
        if (f32) {
            for (std::size_t j = 0; j < n; ++j) {
                float acc = 0.0f;
                for (std::size_t p = 0; p < k; ++p)
                    acc += static_cast<float>(a[p * m + static_cast<std::size_t>(i)]) *
                           static_cast<float>(b[p * n + j]);
                orow[j] = static_cast<double>(acc);
            }
        } else {
            for (std::size_t j = 0; j < n; ++j) orow[j] = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                const double av = a[p * m + static_cast<std::size_t>(i)];
                const double* brow = b + p * n;
                for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
        }
    }
}

void matmul_nt(const double* a, const double* b, double* out,
               std::size_t m, std::size_t k, std::size_t n) {
    const bool f32 = precision() == Precision::F32;
    const bool par = m * n >= kParallelThreshold;
    const std::int64_t mi = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static) if (par)
    for (std::int64_t i = 0; i < mi; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        double* orow = out + static_cast<std::size_t>(i) * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            if (f32) {
                float acc = 0.0f;
                for (std::size_t p = 0; p < k; ++p)
                    acc += static_cast<float>(arow[p]) * static_cast<float>(brow[p]);
                orow[j] = static_cast<double>(acc);
            } else {
                double acc = 0.0;
                for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
                orow[j] = acc;
            }
        }
    }
}

void csr_dense(const CsrView& s, const double* d, double* out, std::size_t n) {
    const bool par = s.rows * n >= kParallelThreshold;
    const std::int64_t ri = static_cast<std::int64_t>(s.rows);
#pragma omp parallel for schedule(static) if (par)
    for (std::int64_t i = 0; i < ri; ++i) {
        double* orow = out + static_cast<std::size_t>(i) * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] = 0.0;
        const std::size_t begin = s.row_offsets[static_cast<std::size_t>(i)];
        const std::size_t end = s.row_offsets[static_cast<std::size_t>(i) + 1];
        for (std::size_t e = begin; e < end; ++e) {
            const double w = s.values[e];
            const double* drow = d + s.col_indices[e] * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += w * drow[j];
        }
    }
}

} // namespace dssl::kernels
