#pragma once

#include "dssl/model.hpp"

#include <memory>
#include <utility>

namespace dssl {

/// How the local-term expectation over the latent factor is estimated.
enum class LocalMode {
    StraightThrough, // one hard Gumbel sample, gradients through the relaxation
    GumbelSoft,      // one soft Gumbel sample
    Exact            // exact sum over K
};

struct DsslHyper {
    std::size_t k = 8;
    double beta = 1.0;      // semantic-shift strength
    double sigma1_sq = 1.0; // prototype Gaussian variance (global temperature)
    double sigma2_sq = 1.0; // absorbed weight of the global term
    double gamma = 0.5;     // Gumbel temperature
    LocalMode local_mode = LocalMode::StraightThrough;

    // Ablation switches (A1/A2/A3/A5); A4 is beta = 0.
    bool use_local = true;
    bool use_global = true;
    bool use_entropy = true;
    bool uniform_posterior = false;

    void validate() const;
};

struct LossBreakdown {
    double total = 0.0;
    double local = 0.0;
    double global_term = 0.0;
    double entropy = 0.0;
    double mean_q_node_max = 0.0; // confidence diagnostic
    std::size_t batch_edges = 0;
    Tensor q_node_values; // B x K, detached; feeds the epoch-end prototype update
};

/// One training batch: B central nodes, m sampled neighbors each, laid out
/// as B*m pairs with pair row i*m+j holding central i and its j-th neighbor.
struct LossBatch {
    Tensor v_central;   // B x D' (online encoder, tracked during training)
    Tensor v_repeated;  // (B*m) x D'
    Tensor z_neighbors; // (B*m) x D' (target encoder, constant)
    std::shared_ptr<const SparseMatrix> neighbor_avg; // B x (B*m) group-mean operator
    Tensor gumbel_noise; // (B*m) x K
};

/// Constant CSR operator averaging each group of m consecutive rows.
std::shared_ptr<const SparseMatrix> make_group_average(std::size_t groups, std::size_t group_size);

Tensor gumbel_noise_tensor(std::size_t rows, std::size_t k, Rng& rng);

/// Row-wise softmax of head logits (Eq. of the variational posterior).
Tensor posterior_q(const Tensor& logits);

/// Prototype posterior for unit-norm rows: softmax over k of v . mu_k / s1.
Tensor posterior_p_k_given_v(const Tensor& v_rows, const Prototypes& protos, double sigma1_sq);

/// Relaxed categorical sample. Soft mode returns softmax((logits+noise)/gamma);
/// straight-through returns the hard argmax one-hot in the forward pass while
/// gradients follow the soft relaxation.
Tensor gumbel_sample(const Tensor& logits, double gamma, const Tensor& noise, bool straight_through);

/// Mean over pairs of || v + beta g(c) - z ||^2.
Tensor local_loss(const Tensor& v_pairs, const Tensor& z_pairs, const Tensor& c,
                  const MlpParams& projector, double beta);

/// Exact-expectation local term: mean over pairs of
/// sum_k q[k] || v + beta g(e_k) - z ||^2.
Tensor local_loss_exact(const Tensor& v_pairs, const Tensor& z_pairs, const Tensor& q_pairs,
                        const MlpParams& projector, double beta);

/// -sigma2^2 * mean over nodes of sum_k q_node[k] log softmax(v . mu / s1)[k].
/// The expectation over k is always exact.
Tensor global_loss(const Tensor& q_node, const Tensor& v_central, const Prototypes& protos,
                   double sigma1_sq, double sigma2_sq);

/// Mean Shannon entropy of probability rows (natural log, 0 log 0 = 0).
double entropy_term(const Tensor& q_rows);
/// Same quantity, differentiable and computed stably from logits.
Tensor entropy_from_logits(const Tensor& logits);

/// Full training loss: local + global - entropy, with per-term breakdown.
std::pair<Tensor, LossBreakdown> total_loss(const LossBatch& batch, const MlpParams& projector,
                                            const MlpParams& head, const Prototypes& protos,
                                            const DsslHyper& hyper,
                                            CombineMode mode = CombineMode::Concat);

/// Unsimplified negative ELBO with full Gaussian log-densities and exact
/// K-sums. `log_q_pairs` are the log posterior rows per pair (from the head,
/// or supplied externally, e.g. the exact Bayes posterior in tests).
Tensor exact_negative_elbo(const Tensor& v_pairs, const Tensor& z_pairs, const Tensor& log_q_pairs,
                           const MlpParams& projector, const Prototypes& protos,
                           const DsslHyper& hyper);

} // namespace dssl
