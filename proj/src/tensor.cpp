#include "dssl/tensor.hpp"

#include "dssl/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace dssl {

namespace {
std::atomic<bool> g_checked{true};

std::size_t shape_size(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? " x " : "") << s[i];
    os << "]";
    return os.str();
}

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void check_finite(const std::vector<double>& v, const char* what) {
    for (double x : v) {
        if (!std::isfinite(x)) fail(std::string(what) + ": non-finite value rejected in checked mode");
    }
}
} // namespace

bool checked_mode() { return g_checked.load(std::memory_order_relaxed); }
void set_checked_mode(bool on) { g_checked.store(on, std::memory_order_relaxed); }

// ---- Tensor ----------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : shape_(std::move(shape)), requires_grad_(requires_grad) {
    if (shape_.empty() || shape_.size() > 2) fail("tensor rank must be 1 or 2, got " + shape_str(shape_));
    for (std::size_t d : shape_)
        if (d == 0) fail("tensor dimensions must be positive, got " + shape_str(shape_));
    if (shape_size(shape_) != data.size())
        fail("shape " + shape_str(shape_) + " does not match data length " + std::to_string(data.size()));
    if (checked_mode()) check_finite(data, "tensor construction");
    data_ = std::make_shared<const std::vector<double>>(std::move(data));
}

Tensor Tensor::zeros(Shape shape) {
    std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(Shape shape, double value) {
    std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::identity(std::size_t n) {
    std::vector<double> d(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 1.0;
    return Tensor({n, n}, std::move(d));
}

Tensor Tensor::row(std::vector<double> values) {
    std::size_t n = values.size();
    return Tensor({1, n}, std::move(values));
}

std::size_t Tensor::rows() const { return shape_.size() == 2 ? shape_[0] : 1; }
std::size_t Tensor::cols() const { return shape_.size() == 2 ? shape_[1] : shape_[0]; }

double Tensor::at(std::size_t r, std::size_t c) const {
    if (r >= rows() || c >= cols()) fail("tensor index out of range");
    return (*data_)[r * cols() + c];
}

double Tensor::item() const {
    if (size() != 1) fail("item() requires a 1-element tensor, shape is " + shape_str(shape_));
    return (*data_)[0];
}

Tensor Tensor::detached() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = data_;
    return t;
}

// ---- SparseMatrix -----------------------------------------------------------

void SparseMatrix::validate() const {
    if (row_offsets.size() != rows + 1) fail("sparse: row_offsets must have rows+1 entries");
    if (row_offsets.front() != 0 || row_offsets.back() != col_indices.size())
        fail("sparse: row_offsets endpoints inconsistent with nnz");
    for (std::size_t i = 0; i < rows; ++i)
        if (row_offsets[i] > row_offsets[i + 1]) fail("sparse: row_offsets must be monotone");
    for (std::size_t c : col_indices)
        if (c >= cols) fail("sparse: column index out of range");
    if (values.size() != col_indices.size()) fail("sparse: values/col_indices length mismatch");
}

SparseMatrix SparseMatrix::transposed() const {
    SparseMatrix t;
    t.rows = cols;
    t.cols = rows;
    t.row_offsets.assign(cols + 1, 0);
    for (std::size_t c : col_indices) ++t.row_offsets[c + 1];
    for (std::size_t i = 0; i < cols; ++i) t.row_offsets[i + 1] += t.row_offsets[i];
    t.col_indices.resize(nnz());
    t.values.resize(nnz());
    std::vector<std::size_t> cursor(t.row_offsets.begin(), t.row_offsets.end() - 1);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t e = row_offsets[r]; e < row_offsets[r + 1]; ++e) {
            const std::size_t pos = cursor[col_indices[e]]++;
            t.col_indices[pos] = r;
            t.values[pos] = values[e];
        }
    }
    return t;
}

Tensor SparseMatrix::to_dense() const {
    std::vector<double> d(rows * cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t e = row_offsets[r]; e < row_offsets[r + 1]; ++e)
            d[r * cols + col_indices[e]] += values[e];
    return Tensor({rows, cols}, std::move(d));
}

// ---- Tape internals ---------------------------------------------------------

namespace {
enum class Op {
    Leaf,
    Matmul,
    SparseDense,
    Add,
    Sub,
    Mul,
    ScalarMul,
    Relu,
    SoftmaxRows,
    LogSoftmaxRows,
    Log,
    Exp,
    Sum,
    Mean,
    L2NormalizeRows,
    SquaredRowNorms,
    ConcatRows,
    GatherRows,
    Transpose,
    ReplaceForward,
};

struct Node {
    Op op;
    int p0 = -1;
    int p1 = -1;
    Tensor value;  // cached forward value
    Tensor c0, c1; // constant operands for untracked slots
    std::shared_ptr<const SparseMatrix> sparse;
    std::vector<std::size_t> indices;
    double scalar = 0.0;
};
} // namespace

struct Tape::Impl {
    std::vector<Node> nodes;

    const Tensor& input(const Node& n, int slot) const {
        const int p = slot == 0 ? n.p0 : n.p1;
        if (p >= 0) return nodes[static_cast<std::size_t>(p)].value;
        return slot == 0 ? n.c0 : n.c1;
    }
};

Tape::Tape() = default;
Tape::~Tape() = default;

Tape::Impl& Tape::impl() {
    if (!impl_) impl_ = std::make_unique<Impl>();
    return *impl_;
}

std::size_t Tape::num_nodes() const { return impl_ ? impl_->nodes.size() : 0; }

Tensor Tape::leaf(const Tensor& t) {
    if (!t.defined()) fail("leaf: undefined tensor");
    Tensor out = t.detached();
    out.requires_grad_ = true;
    out.tape_ = this;
    out.node_ = static_cast<int>(impl().nodes.size());
    Node n;
    n.op = Op::Leaf;
    n.value = out.detached();
    impl().nodes.push_back(std::move(n));
    return out;
}

Tensor Tape::var(Shape shape, std::vector<double> data) {
    return leaf(Tensor(std::move(shape), std::move(data)));
}

// ---- op plumbing ------------------------------------------------------------

namespace {

struct OpInputs {
    Tape* tape = nullptr;
};

void note_input(OpInputs& in, const Tensor& t) {
    if (!t.defined()) fail("op input tensor is undefined");
    if (t.tracked()) {
        if (in.tape && in.tape != t.tape()) fail("op inputs belong to different tapes");
        in.tape = t.tape();
    } else if (t.requires_grad()) {
        fail("tensor requires grad but is not registered on a tape; use Tape::leaf");
    }
}

struct TapeRecorder; // fwd
} // namespace

struct TapeAccess {
    static std::vector<Node>& nodes(Tape& t) { return t.impl().nodes; }
    static Tensor record(Tape* tape, Node node, Tensor value) {
        if (!tape) return value;
        value.tape_ = tape;
        value.node_ = static_cast<int>(tape->impl().nodes.size());
        value.requires_grad_ = true;
        node.value = value.detached();
        tape->impl().nodes.push_back(std::move(node));
        return value;
    }
    static const Tape::Impl& impl(const Tape& t) { return *t.impl_; }
};

namespace {

int parent_of(const Tensor& t) { return t.tracked() ? t.node() : -1; }

Tensor record_unary(Op op, const Tensor& a, Tensor value,
                    std::vector<std::size_t> indices = {}, double scalar = 0.0) {
    OpInputs in;
    note_input(in, a);
    if (!in.tape) return value;
    Node n;
    n.op = op;
    n.p0 = parent_of(a);
    if (n.p0 < 0) n.c0 = a.detached();
    n.indices = std::move(indices);
    n.scalar = scalar;
    return TapeAccess::record(in.tape, std::move(n), std::move(value));
}

Tensor record_binary(Op op, const Tensor& a, const Tensor& b, Tensor value) {
    OpInputs in;
    note_input(in, a);
    note_input(in, b);
    if (!in.tape) return value;
    Node n;
    n.op = op;
    n.p0 = parent_of(a);
    n.p1 = parent_of(b);
    if (n.p0 < 0) n.c0 = a.detached();
    if (n.p1 < 0) n.c1 = b.detached();
    return TapeAccess::record(in.tape, std::move(n), std::move(value));
}

bool same_shape(const Tensor& a, const Tensor& b) {
    return a.rows() == b.rows() && a.cols() == b.cols();
}

// b broadcast over rows of a: a [m x n], b [1 x n]
bool row_broadcast(const Tensor& a, const Tensor& b) {
    return b.rows() == 1 && a.rows() > 1 && a.cols() == b.cols();
}

std::vector<double> add_like(const Tensor& a, const Tensor& b, double sign) {
    std::vector<double> out(a.size());
    if (same_shape(a, b)) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + sign * b[i];
    } else if (row_broadcast(a, b)) {
        const std::size_t n = a.cols();
        for (std::size_t r = 0; r < a.rows(); ++r)
            for (std::size_t c = 0; c < n; ++c) out[r * n + c] = a[r * n + c] + sign * b[c];
    } else {
        fail("add/sub: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    return out;
}

std::vector<double> softmax_values(const Tensor& a, bool take_log) {
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m * n);
    for (std::size_t r = 0; r < m; ++r) {
        const double* x = a.data().data() + r * n;
        double mx = x[0];
        for (std::size_t c = 1; c < n; ++c) mx = std::max(mx, x[c]);
        double z = 0.0;
        for (std::size_t c = 0; c < n; ++c) z += std::exp(x[c] - mx);
        if (take_log) {
            const double lz = std::log(z);
            for (std::size_t c = 0; c < n; ++c) out[r * n + c] = x[c] - mx - lz;
        } else {
            for (std::size_t c = 0; c < n; ++c) out[r * n + c] = std::exp(x[c] - mx) / z;
        }
    }
    return out;
}

} // namespace

// ---- forward ops ------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows())
        fail("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(m * n);
    kernels::matmul(a.data().data(), b.data().data(), out.data(), m, k, n);
    return record_binary(Op::Matmul, a, b, Tensor({m, n}, std::move(out)));
}

Tensor sparse_dense_matmul(std::shared_ptr<const SparseMatrix> s, const Tensor& d) {
    if (s->cols != d.rows())
        fail("sparse_dense_matmul: inner dimensions disagree, sparse cols " + std::to_string(s->cols) +
             " vs dense rows " + std::to_string(d.rows()));
    const std::size_t n = d.cols();
    std::vector<double> out(s->rows * n);
    kernels::CsrView view{s->rows, s->cols, s->row_offsets.data(), s->col_indices.data(),
                          s->values.data()};
    kernels::csr_dense(view, d.data().data(), out.data(), n);
    Tensor value({s->rows, n}, std::move(out));

    OpInputs in;
    note_input(in, d);
    if (!in.tape) return value;
    Node node;
    node.op = Op::SparseDense;
    node.p0 = parent_of(d);
    if (node.p0 < 0) node.c0 = d.detached();
    node.sparse = std::move(s);
    return TapeAccess::record(in.tape, std::move(node), std::move(value));
}

Tensor sparse_dense_matmul(const SparseMatrix& s, const Tensor& d) {
    return sparse_dense_matmul(std::make_shared<const SparseMatrix>(s), d);
}

Tensor add(const Tensor& a, const Tensor& b) {
    auto out = add_like(a, b, 1.0);
    return record_binary(Op::Add, a, b, Tensor(a.shape(), std::move(out)));
}

Tensor sub(const Tensor& a, const Tensor& b) {
    auto out = add_like(a, b, -1.0);
    return record_binary(Op::Sub, a, b, Tensor(a.shape(), std::move(out)));
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (!same_shape(a, b))
        fail("mul: shapes must match, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return record_binary(Op::Mul, a, b, Tensor(a.shape(), std::move(out)));
}

Tensor scalar_mul(double c, const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * a[i];
    return record_unary(Op::ScalarMul, a, Tensor(a.shape(), std::move(out)), {}, c);
}

Tensor relu(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
    return record_unary(Op::Relu, a, Tensor(a.shape(), std::move(out)));
}

Tensor softmax_rows(const Tensor& a) {
    return record_unary(Op::SoftmaxRows, a, Tensor(a.shape(), softmax_values(a, false)));
}

Tensor log_softmax_rows(const Tensor& a) {
    return record_unary(Op::LogSoftmaxRows, a, Tensor(a.shape(), softmax_values(a, true)));
}

Tensor log(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (checked_mode() && a[i] <= 0.0)
            throw std::domain_error("log: non-positive input " + std::to_string(a[i]) +
                                    " at flat index " + std::to_string(i));
        out[i] = std::log(a[i]);
    }
    return record_unary(Op::Log, a, Tensor(a.shape(), std::move(out)));
}

Tensor exp(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a[i]);
    return record_unary(Op::Exp, a, Tensor(a.shape(), std::move(out)));
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i];
    return record_unary(Op::Sum, a, Tensor::scalar(s));
}

Tensor mean(const Tensor& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i];
    return record_unary(Op::Mean, a, Tensor::scalar(s / static_cast<double>(a.size())));
}

Tensor l2_normalize_rows(const Tensor& a) {
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m * n);
    for (std::size_t r = 0; r < m; ++r) {
        double sq = 0.0;
        for (std::size_t c = 0; c < n; ++c) sq += a[r * n + c] * a[r * n + c];
        const double norm = std::max(std::sqrt(sq), 1e-12);
        for (std::size_t c = 0; c < n; ++c) out[r * n + c] = a[r * n + c] / norm;
    }
    return record_unary(Op::L2NormalizeRows, a, Tensor(a.shape(), std::move(out)));
}

Tensor squared_row_norms(const Tensor& a) {
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m);
    for (std::size_t r = 0; r < m; ++r) {
        double sq = 0.0;
        for (std::size_t c = 0; c < n; ++c) sq += a[r * n + c] * a[r * n + c];
        out[r] = sq;
    }
    return record_unary(Op::SquaredRowNorms, a, Tensor({m, 1}, std::move(out)));
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows())
        fail("concat_rows: row counts disagree, " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    const std::size_t m = a.rows(), n1 = a.cols(), n2 = b.cols();
    std::vector<double> out(m * (n1 + n2));
    for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < n1; ++c) out[r * (n1 + n2) + c] = a[r * n1 + c];
        for (std::size_t c = 0; c < n2; ++c) out[r * (n1 + n2) + n1 + c] = b[r * n2 + c];
    }
    return record_binary(Op::ConcatRows, a, b, Tensor({m, n1 + n2}, std::move(out)));
}

Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& indices) {
    const std::size_t n = a.cols();
    std::vector<double> out(indices.size() * n);
    for (std::size_t r = 0; r < indices.size(); ++r) {
        if (indices[r] >= a.rows())
            fail("gather_rows: index " + std::to_string(indices[r]) + " out of range for " +
                 std::to_string(a.rows()) + " rows");
        std::copy_n(a.data().data() + indices[r] * n, n, out.data() + r * n);
    }
    return record_unary(Op::GatherRows, a, Tensor({indices.size(), n}, std::move(out)), indices);
}

Tensor transpose(const Tensor& a) {
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m * n);
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) out[c * m + r] = a[r * n + c];
    return record_unary(Op::Transpose, a, Tensor({n, m}, std::move(out)));
}

Tensor detach(const Tensor& a) { return a.detached(); }

Tensor replace_forward(const Tensor& forward_value, const Tensor& grad_surrogate) {
    if (!same_shape(forward_value, grad_surrogate))
        fail("replace_forward: shapes must match, got " + shape_str(forward_value.shape()) + " and " +
             shape_str(grad_surrogate.shape()));
    Tensor value = forward_value.detached();
    OpInputs in;
    note_input(in, grad_surrogate);
    if (!in.tape) return value;
    Node n;
    n.op = Op::ReplaceForward;
    n.p0 = parent_of(grad_surrogate);
    if (n.p0 < 0) n.c0 = grad_surrogate.detached();
    return TapeAccess::record(in.tape, std::move(n), std::move(value));
}

// ---- backward ---------------------------------------------------------------

namespace {

void axpy(std::vector<double>& acc, const std::vector<double>& x, double a = 1.0) {
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += a * x[i];
}

} // namespace

Gradients Tape::backward(const Tensor& root) const {
    if (!impl_) fail("backward: empty tape");
    if (!root.tracked() || root.tape() != this) fail("backward: root was not produced on this tape");
    if (root.size() != 1) fail("backward: root must be a scalar");

    const auto& nodes = impl_->nodes;
    const std::size_t count = nodes.size();
    std::vector<std::vector<double>> adj(count);
    std::vector<char> touched(count, 0);

    const auto root_id = static_cast<std::size_t>(root.node());
    adj[root_id].assign(1, 1.0);
    touched[root_id] = 1;

    auto ensure = [&](int node_id, std::size_t n) -> std::vector<double>& {
        auto& v = adj[static_cast<std::size_t>(node_id)];
        if (v.empty()) v.assign(n, 0.0);
        touched[static_cast<std::size_t>(node_id)] = 1;
        return v;
    };

    for (std::size_t idx = root_id + 1; idx-- > 0;) {
        if (!touched[idx]) continue;
        const Node& node = nodes[idx];
        const std::vector<double>& g = adj[idx];
        if (node.op == Op::Leaf) continue;

        const Tensor& in0 = impl_->input(node, 0);
        const std::size_t in0_rows = in0.defined() ? in0.rows() : 0;
        const std::size_t in0_cols = in0.defined() ? in0.cols() : 0;
        const Tensor& out = node.value;

        switch (node.op) {
        case Op::Matmul: {
            const Tensor& a = in0;
            const Tensor& b = impl_->input(node, 1);
            const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
            if (node.p0 >= 0) {
                std::vector<double> ga(m * k);
                kernels::matmul_nt(g.data(), b.data().data(), ga.data(), m, n, k);
                axpy(ensure(node.p0, m * k), ga);
            }
            if (node.p1 >= 0) {
                std::vector<double> gb(k * n);
                kernels::matmul_tn(a.data().data(), g.data(), gb.data(), k, m, n);
                axpy(ensure(node.p1, k * n), gb);
            }
            break;
        }
        case Op::SparseDense: {
            if (node.p0 >= 0) {
                const SparseMatrix st = node.sparse->transposed();
                const std::size_t n = out.cols();
                std::vector<double> gd(st.rows * n);
                kernels::CsrView view{st.rows, st.cols, st.row_offsets.data(), st.col_indices.data(),
                                      st.values.data()};
                kernels::csr_dense(view, g.data(), gd.data(), n);
                axpy(ensure(node.p0, gd.size()), gd);
            }
            break;
        }
        case Op::Add:
        case Op::Sub: {
            const double sign = node.op == Op::Add ? 1.0 : -1.0;
            const Tensor& b = impl_->input(node, 1);
            if (node.p0 >= 0) axpy(ensure(node.p0, g.size()), g);
            if (node.p1 >= 0) {
                if (same_shape(in0, b)) {
                    axpy(ensure(node.p1, g.size()), g, sign);
                } else { // b is the broadcast row vector
                    auto& gb = ensure(node.p1, b.size());
                    const std::size_t n = b.cols();
                    for (std::size_t r = 0; r < out.rows(); ++r)
                        for (std::size_t c = 0; c < n; ++c) gb[c] += sign * g[r * n + c];
                }
            }
            break;
        }
        case Op::Mul: {
            const Tensor& a = in0;
            const Tensor& b = impl_->input(node, 1);
            if (node.p0 >= 0) {
                auto& ga = ensure(node.p0, g.size());
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
            }
            if (node.p1 >= 0) {
                auto& gb = ensure(node.p1, g.size());
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
            }
            break;
        }
        case Op::ScalarMul:
            if (node.p0 >= 0) axpy(ensure(node.p0, g.size()), g, node.scalar);
            break;
        case Op::Relu:
            if (node.p0 >= 0) {
                auto& ga = ensure(node.p0, g.size());
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += in0[i] > 0.0 ? g[i] : 0.0;
            }
            break;
        case Op::SoftmaxRows:
            if (node.p0 >= 0) {
                auto& ga = ensure(node.p0, g.size());
                const std::size_t n = out.cols();
                for (std::size_t r = 0; r < out.rows(); ++r) {
                    double dot = 0.0;
                    for (std::size_t c = 0; c < n; ++c) dot += g[r * n + c] * out[r * n + c];
                    for (std::size_t c = 0; c < n; ++c)
                        ga[r * n + c] += out[r * n + c] * (g[r * n + c] - dot);
                }
            }
            break;
        case Op::LogSoftmaxRows:
            if (node.p0 >= 0) {
                auto& ga = ensure(node.p0, g.size());
                const std::size_t n = out.cols();
                for (std::size_t r = 0; r < out.rows(); ++r) {
                    double gsum = 0.0;
                    for (std::size_t c = 0; c < n; ++c) gsum += g[r * n + c];
                    for (std::size_t c = 0; c < n; ++c)
                        ga[r * n + c] += g[r * n + c] - std::exp(out[r * n + c]) * gsum;
                }
            }
            break;
        case Op::Log:
            if (node.p0 >= 0) {
                auto& ga = ensure(node.p0, g.size());
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / in0[i];
            }
            break;
        case Op::Exp:
            if (node.p0 >= 0) {
                auto& ga = ensure(node.p0, g.size());
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * out[i];
            }
            break;
        case Op::Sum:
            if (node.p0 >= 0) {
                auto& ga = ensure(node.p0, in0.size());
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
            }
            break;
        case Op::Mean:
            if (node.p0 >= 0) {
                auto& ga = ensure(node.p0, in0.size());
                const double w = g[0] / static_cast<double>(in0.size());
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += w;
            }
            break;
        case Op::L2NormalizeRows:
            if (node.p0 >= 0) {
                auto& ga = ensure(node.p0, g.size());
                const std::size_t n = in0_cols;
                for (std::size_t r = 0; r < in0_rows; ++r) {
                    double sq = 0.0;
                    for (std::size_t c = 0; c < n; ++c) sq += in0[r * n + c] * in0[r * n + c];
                    const double norm = std::sqrt(sq);
                    if (norm > 1e-12) {
                        double dot = 0.0;
                        for (std::size_t c = 0; c < n; ++c) dot += g[r * n + c] * out[r * n + c];
                        for (std::size_t c = 0; c < n; ++c)
                            ga[r * n + c] += (g[r * n + c] - out[r * n + c] * dot) / norm;
                    } else { // clamped: output is x / 1e-12, a plain scaling
                        for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += g[r * n + c] / 1e-12;
                    }
                }
            }
            break;
        case Op::SquaredRowNorms:
            if (node.p0 >= 0) {
                auto& ga = ensure(node.p0, in0.size());
                const std::size_t n = in0_cols;
                for (std::size_t r = 0; r < in0_rows; ++r)
                    for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += 2.0 * in0[r * n + c] * g[r];
            }
            break;
        case Op::ConcatRows: {
            const Tensor& b = impl_->input(node, 1);
            const std::size_t n1 = in0_cols, n2 = b.cols(), n = n1 + n2;
            if (node.p0 >= 0) {
                auto& ga = ensure(node.p0, in0.size());
                for (std::size_t r = 0; r < in0_rows; ++r)
                    for (std::size_t c = 0; c < n1; ++c) ga[r * n1 + c] += g[r * n + c];
            }
            if (node.p1 >= 0) {
                auto& gb = ensure(node.p1, b.size());
                for (std::size_t r = 0; r < b.rows(); ++r)
                    for (std::size_t c = 0; c < n2; ++c) gb[r * n2 + c] += g[r * n + n1 + c];
            }
            break;
        }
        case Op::GatherRows:
            if (node.p0 >= 0) {
                auto& ga = ensure(node.p0, in0.size());
                const std::size_t n = in0_cols;
                for (std::size_t r = 0; r < node.indices.size(); ++r)
                    for (std::size_t c = 0; c < n; ++c) ga[node.indices[r] * n + c] += g[r * n + c];
            }
            break;
        case Op::Transpose:
            if (node.p0 >= 0) {
                auto& ga = ensure(node.p0, in0.size());
                const std::size_t m = in0_rows, n = in0_cols;
                for (std::size_t r = 0; r < m; ++r)
                    for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += g[c * m + r];
            }
            break;
        case Op::ReplaceForward:
            if (node.p0 >= 0) axpy(ensure(node.p0, g.size()), g);
            break;
        case Op::Leaf:
            break;
        }
    }

    Gradients result;
    result.tape_ = this;
    result.by_node_.resize(count);
    for (std::size_t i = 0; i < count; ++i)
        if (touched[i] && !adj[i].empty()) result.by_node_[i] = std::move(adj[i]);
    return result;
}

Tensor Gradients::at(const Tensor& leaf) const {
    if (!leaf.tracked() || leaf.tape() != tape_)
        fail("Gradients::at: tensor was not produced on the corresponding tape");
    const auto id = static_cast<std::size_t>(leaf.node());
    if (id < by_node_.size() && !by_node_[id].empty())
        return Tensor(leaf.shape(), by_node_[id]);
    return Tensor::zeros(leaf.shape());
}

// ---- finite differences -----------------------------------------------------

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                         const Tensor& x, double eps) {
    if (eps <= 0.0) fail("finite_diff_check: eps must be positive");
    Tape tape;
    Tensor leaf = tape.leaf(x);
    Tensor root = f(leaf);
    if (root.size() != 1) fail("finite_diff_check: f must return a scalar");
    Tensor analytic = tape.backward(root).at(leaf);

    std::vector<double> base(x.data());
    double worst = 0.0;
    for (std::size_t i = 0; i < base.size(); ++i) {
        std::vector<double> plus = base, minus = base;
        plus[i] += eps;
        minus[i] -= eps;
        const double fp = f(Tensor(x.shape(), std::move(plus))).item();
        const double fm = f(Tensor(x.shape(), std::move(minus))).item();
        const double central = (fp - fm) / (2.0 * eps);
        const double err =
            std::abs(analytic[i] - central) / (std::abs(analytic[i]) + std::abs(central) + 1e-12);
        worst = std::max(worst, err);
    }
    return worst;
}

} // namespace dssl
