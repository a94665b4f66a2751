#include "dssl/kernels.hpp"

namespace dssl::kernels::serial {

void matmul(const double* a, const double* b, double* out,
            std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* orow = out + i * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] = 0.0;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

void matmul_tn(const double* a, const double* b, double* out,
               std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* orow = out + i * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] = 0.0;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[p * m + i];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

void matmul_nt(const double* a, const double* b, double* out,
               std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* orow = out + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            orow[j] = acc;
        }
    }
}

void csr_dense(const CsrView& s, const double* d, double* out, std::size_t n) {
    for (std::size_t i = 0; i < s.rows; ++i) {
        double* orow = out + i * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] = 0.0;
        for (std::size_t e = s.row_offsets[i]; e < s.row_offsets[i + 1]; ++e) {
            const double w = s.values[e];
            const double* drow = d + s.col_indices[e] * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += w * drow[j];
        }
    }
}

} // namespace dssl::kernels::serial
