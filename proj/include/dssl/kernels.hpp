#pragma once

#include <cstddef>
#include <vector>

namespace dssl::kernels {

/// Runtime compute precision for the heavy kernels. Values are always stored
/// as float64; F32 makes the matmul-family kernels accumulate in float32.
enum class Precision { F64, F32 };

Precision precision();
void set_precision(Precision p);

// CSR triple used by the sparse kernels. Kept as raw spans so the kernels
// stay decoupled from the Tensor types.
struct CsrView {
    std::size_t rows = 0;
    std::size_t cols = 0;
    const std::size_t* row_offsets = nullptr;
    const std::size_t* col_indices = nullptr;
    const double* values = nullptr;
};

// All kernels are parallelized over output rows: each output element is
// reduced by exactly one thread in a fixed order, so results are bitwise
// identical for any thread count.

/// out[m x n] = a[m x k] * b[k x n]
void matmul(const double* a, const double* b, double* out,
            std::size_t m, std::size_t k, std::size_t n);

/// out[m x n] = a[k x m]^T * b[k x n]
void matmul_tn(const double* a, const double* b, double* out,
               std::size_t m, std::size_t k, std::size_t n);

/// out[m x n] = a[m x k] * b[n x k]^T
void matmul_nt(const double* a, const double* b, double* out,
               std::size_t m, std::size_t k, std::size_t n);

/// out[s.rows x n] = S * d[s.cols x n]
void csr_dense(const CsrView& s, const double* d, double* out, std::size_t n);

namespace serial {
// Reference implementations: plain single-threaded loops, same reduction
// order as the parallel kernels. Tests compare against these bitwise and the
// benchmark tool times both.
void matmul(const double* a, const double* b, double* out,
            std::size_t m, std::size_t k, std::size_t n);
void matmul_tn(const double* a, const double* b, double* out,
               std::size_t m, std::size_t k, std::size_t n);
void matmul_nt(const double* a, const double* b, double* out,
               std::size_t m, std::size_t k, std::size_t n);
void csr_dense(const CsrView& s, const double* d, double* out, std::size_t n);
} // namespace serial

} // namespace dssl::kernels
