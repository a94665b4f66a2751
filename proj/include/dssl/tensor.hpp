#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace dssl {

/// When true (the default), tensor construction rejects NaN/Inf and log()
/// rejects non-positive inputs. Turn off for speed on trusted inner loops.
bool checked_mode();
void set_checked_mode(bool on);

using Shape = std::vector<std::size_t>;

class Tape;

/// Dense row-major float64 array. Immutable value type: copies share the
/// underlying buffer. May carry a reference to the tape node that produced
/// it, which is how gradients find their way back.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);
    static Tensor identity(std::size_t n);
    /// Single row [1 x n].
    static Tensor row(std::vector<double> values);

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_ ? data_->size() : 0; }
    bool defined() const { return data_ != nullptr; }

    /// Rank-2 accessors; rank-1 tensors count as a single row.
    std::size_t rows() const;
    std::size_t cols() const;
    double at(std::size_t r, std::size_t c) const;
    double operator[](std::size_t i) const { return (*data_)[i]; }

    const std::vector<double>& data() const { return *data_; }
    /// Value of a 1-element tensor.
    double item() const;

    bool requires_grad() const { return requires_grad_; }
    bool tracked() const { return tape_ != nullptr; }
    Tape* tape() const { return tape_; }
    int node() const { return node_; }

    /// Copy of the value with no tape attachment and no grad requirement.
    Tensor detached() const;

private:
    Shape shape_;
    std::shared_ptr<const std::vector<double>> data_;
    bool requires_grad_ = false;
    Tape* tape_ = nullptr;
    int node_ = -1;

    friend class Tape;
    friend struct TapeAccess;
};

/// Compressed-row sparse matrix (CSR). Used for the normalized adjacency and
/// the constant neighbor-averaging operators; never differentiated through.
struct SparseMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::size_t> row_offsets; // length rows + 1, monotone
    std::vector<std::size_t> col_indices;
    std::vector<double> values;

    void validate() const; // throws on broken invariants
    std::size_t nnz() const { return col_indices.size(); }
    SparseMatrix transposed() const;
    Tensor to_dense() const;
};

/// Gradient map returned by Tape::backward, keyed by tape node.
class Gradients {
public:
    /// Gradient of the root w.r.t. `leaf`. Leaves that did not influence the
    /// root get a zero tensor of matching shape.
    Tensor at(const Tensor& leaf) const;

private:
    friend class Tape;
    const Tape* tape_ = nullptr;
    std::vector<std::vector<double>> by_node_;
};

/// Append-only record of primitive ops. Confined to one thread. Leaves are
/// registered with var()/leaf(); backward() runs reverse accumulation.
class Tape {
public:
    Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Register a trainable leaf (value copied from `t`).
    Tensor leaf(const Tensor& t);
    Tensor var(Shape shape, std::vector<double> data);

    /// Reverse-mode sweep from a scalar root produced on this tape.
    Gradients backward(const Tensor& root) const;

    std::size_t num_nodes() const;

    ~Tape();

private:
    friend class Gradients;
    friend struct TapeAccess;
    struct Impl;
    std::unique_ptr<Impl> impl_;
    Impl& impl();
};

// ---- Primitive operations -------------------------------------------------
// Forward value is always computed; if any input is a tracked tensor the op
// is recorded on that input's tape. Mixing tensors from two tapes is an
// error, as is an untracked tensor with requires_grad set.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor sparse_dense_matmul(const SparseMatrix& s, const Tensor& d);
Tensor sparse_dense_matmul(std::shared_ptr<const SparseMatrix> s, const Tensor& d);
/// add/sub accept equal shapes, or matrix + single-row second operand
/// (the row is broadcast over the rows of the first operand).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
/// Elementwise product, equal shapes only.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scalar_mul(double c, const Tensor& a);
Tensor relu(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor l2_normalize_rows(const Tensor& a);
/// [m x n] -> [m x 1] of squared Euclidean row norms.
Tensor squared_row_norms(const Tensor& a);
/// Concatenate corresponding rows: [m x n1], [m x n2] -> [m x (n1+n2)].
Tensor concat_rows(const Tensor& a, const Tensor& b);
/// Select rows (repeats allowed); gradient scatter-adds.
Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& indices);
Tensor transpose(const Tensor& a);

/// Forward pass-through of the value, no gradient (constant thereafter).
Tensor detach(const Tensor& a);
/// Forward value taken from `forward_value` (treated as constant), gradient
/// routed entirely to `grad_surrogate`. Shapes must match. This is the
/// building block for straight-through estimators.
Tensor replace_forward(const Tensor& forward_value, const Tensor& grad_surrogate);

/// Max over coordinates of |analytic - central difference| /
/// (|analytic| + |central| + 1e-12). `f` must accept both tracked and plain
/// tensors and return a scalar tensor.
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                         const Tensor& x, double eps);

} // namespace dssl
