#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "dssl/eval.hpp"
#include "dssl/rng.hpp"

#include <algorithm>
#include <cmath>
#include <set>

using namespace dssl;

namespace {

// Newton/IRLS reference probe: trains the same L2-regularized multinomial
// logistic objective to high precision with explicit Hessian solves. Small
// instances only.
struct NewtonProbe {
    std::size_t dim, classes;
    std::vector<double> theta; // (dim+1) x classes, bias last row

    double logit(const Tensor& x, std::size_t id, std::size_t j) const {
        double acc = theta[dim * classes + j];
        for (std::size_t f = 0; f < dim; ++f) acc += x.at(id, f) * theta[f * classes + j];
        return acc;
    }
};

NewtonProbe newton_probe(const Tensor& x, const std::vector<int>& labels,
                         const std::vector<std::size_t>& ids, std::size_t classes, double lambda) {
    NewtonProbe m{x.cols(), classes, {}};
    const std::size_t p = (m.dim + 1) * classes;
    m.theta.assign(p, 0.0);
    const auto n = static_cast<double>(ids.size());

    for (int iter = 0; iter < 100; ++iter) {
        std::vector<double> grad(p, 0.0);
        std::vector<double> hess(p * p, 0.0);
        for (std::size_t id : ids) {
            std::vector<double> prob(classes);
            double mx = -1e300;
            for (std::size_t j = 0; j < classes; ++j) mx = std::max(mx, m.logit(x, id, j));
            double z = 0.0;
            for (std::size_t j = 0; j < classes; ++j) {
                prob[j] = std::exp(m.logit(x, id, j) - mx);
                z += prob[j];
            }
            for (auto& q : prob) q /= z;
            auto feat = [&](std::size_t f) { return f == m.dim ? 1.0 : x.at(id, f); };
            const auto y = static_cast<std::size_t>(labels[id]);
            for (std::size_t j = 0; j < classes; ++j) {
                const double gj = (prob[j] - (j == y ? 1.0 : 0.0)) / n;
                for (std::size_t f = 0; f <= m.dim; ++f) grad[f * classes + j] += feat(f) * gj;
                for (std::size_t k = 0; k < classes; ++k) {
                    const double w = prob[j] * ((j == k ? 1.0 : 0.0) - prob[k]) / n;
                    for (std::size_t f = 0; f <= m.dim; ++f)
                        for (std::size_t h = 0; h <= m.dim; ++h)
                            hess[(f * classes + j) * p + (h * classes + k)] +=
                                feat(f) * w * feat(h);
                }
            }
        }
        double gmax = 0.0;
        for (std::size_t i = 0; i < m.dim * classes; ++i) {
            grad[i] += lambda * m.theta[i];
            hess[i * p + i] += lambda;
        }
        for (std::size_t i = 0; i < p; ++i) {
            hess[i * p + i] += 1e-10; // softmax gauge freedom
            gmax = std::max(gmax, std::abs(grad[i]));
        }
        if (gmax < 1e-10) break;

        // solve H step = grad by Gaussian elimination with partial pivoting
        std::vector<double> a(hess);
        std::vector<double> b(grad);
        for (std::size_t col = 0; col < p; ++col) {
            std::size_t piv = col;
            for (std::size_t r = col + 1; r < p; ++r)
                if (std::abs(a[r * p + col]) > std::abs(a[piv * p + col])) piv = r;
            for (std::size_t cc = 0; cc < p; ++cc) std::swap(a[col * p + cc], a[piv * p + cc]);
            std::swap(b[col], b[piv]);
            const double diag = a[col * p + col];
            for (std::size_t r = col + 1; r < p; ++r) {
                const double factor = a[r * p + col] / diag;
                for (std::size_t cc = col; cc < p; ++cc) a[r * p + cc] -= factor * a[col * p + cc];
                b[r] -= factor * b[col];
            }
        }
        std::vector<double> step(p, 0.0);
        for (std::size_t r = p; r-- > 0;) {
            double acc = b[r];
            for (std::size_t cc = r + 1; cc < p; ++cc) acc -= a[r * p + cc] * step[cc];
            step[r] = acc / a[r * p + r];
        }
        for (std::size_t i = 0; i < p; ++i) m.theta[i] -= step[i];
    }
    return m;
}

Tensor blobs(std::size_t per_class, std::size_t classes, double separation, std::size_t dim,
             std::vector<int>& labels, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> data(per_class * classes * dim);
    labels.assign(per_class * classes, 0);
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t i = 0; i < per_class; ++i) {
            const std::size_t row = c * per_class + i;
            labels[row] = static_cast<int>(c);
            for (std::size_t j = 0; j < dim; ++j)
                data[row * dim + j] = (j == c % dim ? separation : 0.0) + rng.normal();
        }
    }
    return Tensor({per_class * classes, dim}, std::move(data));
}

} // namespace

TEST_CASE("split sizes, disjointness, determinism") {
    std::vector<int> labels(10, 0);
    for (std::size_t i = 5; i < 10; ++i) labels[i] = 1;
    SplitSpec spec;
    spec.seed = 3;
    Splits s = split_nodes(labels, spec);
    CHECK(s.train.size() == 6);
    CHECK(s.val.size() == 2);
    CHECK(s.test.size() == 2);

    std::set<std::size_t> all;
    for (auto v : s.train) all.insert(v);
    for (auto v : s.val) all.insert(v);
    for (auto v : s.test) all.insert(v);
    CHECK(all.size() == 10);

    Splits again = split_nodes(labels, spec);
    CHECK(again.train == s.train);
    CHECK(again.test == s.test);
}

TEST_CASE("stratified split keeps per-class train fraction within one node") {
    Rng rng(17);
    std::vector<int> labels(90);
    for (auto& l : labels) l = static_cast<int>(rng.uniform_index(3));
    SplitSpec spec;
    Splits s = split_nodes(labels, spec);
    CHECK(s.stratified);
    for (int c = 0; c < 3; ++c) {
        std::size_t total = 0, in_train = 0;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == c) ++total;
        for (std::size_t i : s.train)
            if (labels[i] == c) ++in_train;
        CHECK(std::abs(static_cast<double>(in_train) - 0.6 * static_cast<double>(total)) <= 1.0);
    }
}

TEST_CASE("tiny class forces the global-split fallback") {
    std::vector<int> labels{0, 0, 0, 0, 0, 0, 0, 0, 1, 1}; // class 1 has 2 members
    Splits s = split_nodes(labels, SplitSpec{});
    CHECK(!s.stratified);
    CHECK(s.train.size() + s.val.size() + s.test.size() == 10);
}

TEST_CASE("unlabeled nodes are excluded from splits") {
    std::vector<int> labels{0, -1, 1, 0, -1, 1, 0, 1, 0, 1, 0, 1};
    Splits s = split_nodes(labels, SplitSpec{});
    CHECK(s.train.size() + s.val.size() + s.test.size() == 10);
    for (auto v : s.train) CHECK(labels[v] >= 0);
}

TEST_CASE("probe reaches 100% on separable data and errors on a one-class train split") {
    std::vector<int> labels;
    Tensor x = blobs(20, 3, 12.0, 4, labels, 5);
    Splits s = split_nodes(labels, SplitSpec{});
    ProbeResult r = linear_probe(x, labels, s);
    CHECK(r.accuracy == 1.0);

    Splits degenerate = s;
    degenerate.train.clear();
    for (std::size_t i = 0; i < 10; ++i) degenerate.train.push_back(i); // all class 0
    CHECK_THROWS(linear_probe(x, labels, degenerate));
}

TEST_CASE("identical representations predict one class everywhere") {
    std::vector<int> labels(30);
    for (std::size_t i = 0; i < 30; ++i) labels[i] = i < 18 ? 0 : 1; // 0 is the majority
    Tensor x = Tensor::full({30, 3}, 0.5);
    Splits s = split_nodes(labels, SplitSpec{});
    ProbeResult r = linear_probe(x, labels, s);
    std::size_t zeros_in_test = 0;
    for (std::size_t id : s.test)
        if (labels[id] == 0) ++zeros_in_test;
    CHECK(r.accuracy ==
          doctest::Approx(static_cast<double>(zeros_in_test) / static_cast<double>(s.test.size())));
}

TEST_CASE("probe matches the Newton reference within one test misclassification") {
    for (std::uint64_t seed : {1ULL, 2ULL}) {
        std::vector<int> labels;
        Tensor x = blobs(20, 3, 1.5, 4, labels, seed); // overlapping blobs, non-trivial fit
        SplitSpec spec;
        spec.seed = seed;
        Splits s = split_nodes(labels, spec);
        ProbeResult ours = linear_probe(x, labels, s);

        NewtonProbe ref = newton_probe(x, labels, s.train, 3, ours.chosen_lambda);
        std::size_t disagreements = 0;
        for (std::size_t t = 0; t < s.test.size(); ++t) {
            const std::size_t id = s.test[t];
            int best = 0;
            double best_val = -1e300;
            for (std::size_t j = 0; j < 3; ++j) {
                const double v = ref.logit(x, id, j);
                if (v > best_val) {
                    best_val = v;
                    best = static_cast<int>(j);
                }
            }
            if (best != ours.test_predictions[t]) ++disagreements;
        }
        CHECK(disagreements <= 1);
    }
}

TEST_CASE("kmeans: blob recovery, degenerate k, inertia trace") {
    std::vector<int> labels;
    Tensor x = blobs(50, 2, 30.0, 3, labels, 9); // 10-sigma-plus separation
    auto detail = kmeans_detailed(x, 2, 4);
    // exact recovery up to cluster renaming
    CHECK(nmi(detail.assignment, labels) == doctest::Approx(1.0));
    for (std::size_t i = 1; i < detail.inertia_trace.size(); ++i)
        CHECK(detail.inertia_trace[i] <= detail.inertia_trace[i - 1] + 1e-9);

    SUBCASE("k = 1 puts everything in one cluster") {
        auto one = kmeans(x, 1, 4);
        CHECK(std::set<std::size_t>(one.begin(), one.end()).size() == 1);
    }
    SUBCASE("k = N gives singleton clusters and zero inertia") {
        std::vector<int> l2;
        Tensor small = blobs(4, 2, 10.0, 3, l2, 3);
        auto detail2 = kmeans_detailed(small, 8, 4);
        CHECK(detail2.inertia == doctest::Approx(0.0));
        CHECK(std::set<std::size_t>(detail2.assignment.begin(), detail2.assignment.end()).size() ==
              8);
    }
    SUBCASE("deterministic under seed") {
        CHECK(kmeans(x, 2, 77) == kmeans(x, 2, 77));
    }
}

TEST_CASE("nmi: identity, relabeling invariance, independence, symmetry") {
    std::vector<int> truth{0, 0, 1, 1, 2, 2};
    std::vector<std::size_t> same{0, 0, 1, 1, 2, 2};
    CHECK(nmi(same, truth) == doctest::Approx(1.0));

    std::vector<std::size_t> renamed{2, 2, 0, 0, 1, 1};
    CHECK(nmi(renamed, truth) == doctest::Approx(1.0));

    // independent uniform partitions of 10^4 points
    Rng rng(13);
    std::vector<std::size_t> a(10000);
    std::vector<int> b(10000);
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = rng.uniform_index(5);
        b[i] = static_cast<int>(rng.uniform_index(5));
    }
    CHECK(nmi(a, b) < 0.01);

    // symmetry under argument exchange
    std::vector<std::size_t> pred{0, 1, 1, 2, 2, 2};
    std::vector<int> pred_int(pred.begin(), pred.end());
    std::vector<std::size_t> truth_sz(truth.begin(), truth.end());
    CHECK(nmi(pred, truth) == doctest::Approx(nmi(truth_sz, pred_int)).epsilon(1e-12));

    // constant prediction vs varied truth
    std::vector<std::size_t> constant(6, 0);
    CHECK(nmi(constant, truth) == 0.0);
    std::vector<int> constant_truth(6, 0);
    std::vector<std::size_t> constant_pred(6, 3);
    CHECK(nmi(constant_pred, constant_truth) == 1.0); // both constant: identical partitions
}

TEST_CASE("full evaluation report is well-formed and reproducible") {
    std::vector<int> labels;
    Tensor x = blobs(20, 3, 8.0, 4, labels, 21);
    SplitSpec spec;
    spec.seed = 5;
    EvalReport a = evaluate_representations(x, labels, spec);
    EvalReport b = evaluate_representations(x, labels, spec);
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.nmi == b.nmi);
    CHECK(a.representation_checksum == b.representation_checksum);
    CHECK(a.accuracy >= 0.0);
    CHECK(a.accuracy <= 1.0);
    CHECK(a.nmi >= 0.0);
    CHECK(a.nmi <= 1.0);
    CHECK(a.train_size + a.val_size + a.test_size == 60);
}
