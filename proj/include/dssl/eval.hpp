#pragma once

#include "dssl/rng.hpp"
#include "dssl/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace dssl {

struct SplitSpec {
    double train_frac = 0.6;
    double val_frac = 0.2;
    double test_frac = 0.2;
    std::uint64_t seed = 1;
    bool stratified = true;
    void validate() const;
};

struct Splits {
    std::vector<std::size_t> train, val, test;
    bool stratified = true; // false when the per-class fallback was taken
};

/// Disjoint, exhaustive split of the labeled nodes (label >= 0). Stratified
/// per class unless some class has fewer than 3 members, in which case the
/// whole split falls back to a global shuffle (flagged on the result).
Splits split_nodes(const std::vector<int>& labels, const SplitSpec& spec);

struct ProbeOptions {
    std::vector<double> lambda_grid{1e-4, 1e-3, 1e-2, 1e-1};
    double grad_tol = 1e-6;
    std::size_t max_iters = 5000;
};

struct ProbeResult {
    double accuracy = 0.0;     // on the test split
    double val_accuracy = 0.0; // of the chosen regularization
    double chosen_lambda = 0.0;
    std::vector<int> test_predictions;
};

/// L2-regularized multinomial logistic regression on frozen representations:
/// full-batch gradient descent with backtracking line search, trained to
/// gradient max-norm <= grad_tol, regularization chosen on the validation
/// split. Deterministic (zero initialization, convex objective).
ProbeResult linear_probe(const Tensor& representations, const std::vector<int>& labels,
                         const Splits& splits, const ProbeOptions& options = {});

/// Lloyd's algorithm with k-means++ seeding, best inertia of 10 restarts,
/// empty clusters reseeded at the farthest point. Deterministic in seed.
std::vector<std::size_t> kmeans(const Tensor& representations, std::size_t k, std::uint64_t seed);

struct KmeansResult {
    std::vector<std::size_t> assignment;
    double inertia = 0.0;
    std::vector<double> inertia_trace; // per Lloyd iteration of the winning restart
};
KmeansResult kmeans_detailed(const Tensor& representations, std::size_t k, std::uint64_t seed);

enum class NmiNorm { Arithmetic, Geometric };

/// Normalized mutual information between a clustering and integer labels
/// (unlabeled entries excluded). 1 for identical partitions up to renaming,
/// 0 when one side is constant and the partitions differ.
double nmi(const std::vector<std::size_t>& pred, const std::vector<int>& truth,
           NmiNorm norm = NmiNorm::Arithmetic);

struct EvalReport {
    double accuracy = 0.0;
    double nmi = 0.0;
    std::size_t train_size = 0, val_size = 0, test_size = 0;
    double probe_lambda = 0.0;
    std::uint64_t seed = 0;
    std::string representation_checksum;
};

/// Full evaluation protocol: split, linear probe, k-means (k = #classes) on
/// all labeled nodes, NMI against the labels.
EvalReport evaluate_representations(const Tensor& representations, const std::vector<int>& labels,
                                    const SplitSpec& split_spec);

} // namespace dssl
