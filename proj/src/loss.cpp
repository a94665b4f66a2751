#include "dssl/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dssl {

void DsslHyper::validate() const {
    if (k == 0) throw std::runtime_error("hyper: k must be >= 1");
    if (beta < 0.0) throw std::runtime_error("hyper: beta must be >= 0");
    if (sigma1_sq <= 0.0) throw std::runtime_error("hyper: sigma1_sq must be > 0");
    if (sigma2_sq <= 0.0) throw std::runtime_error("hyper: sigma2_sq must be > 0");
    if (gamma <= 0.0) throw std::runtime_error("hyper: gamma must be > 0");
}

std::shared_ptr<const SparseMatrix> make_group_average(std::size_t groups, std::size_t group_size) {
    auto m = std::make_shared<SparseMatrix>();
    m->rows = groups;
    m->cols = groups * group_size;
    m->row_offsets.resize(groups + 1);
    m->col_indices.resize(groups * group_size);
    m->values.assign(groups * group_size, 1.0 / static_cast<double>(group_size));
    for (std::size_t i = 0; i <= groups; ++i) m->row_offsets[i] = i * group_size;
    for (std::size_t i = 0; i < groups * group_size; ++i) m->col_indices[i] = i;
    return m;
}

Tensor gumbel_noise_tensor(std::size_t rows, std::size_t k, Rng& rng) {
    std::vector<double> noise(rows * k);
    for (auto& x : noise) x = rng.gumbel();
    return Tensor({rows, k}, std::move(noise));
}

Tensor posterior_q(const Tensor& logits) { return softmax_rows(logits); }

Tensor posterior_p_k_given_v(const Tensor& v_rows, const Prototypes& protos, double sigma1_sq) {
    return softmax_rows(scalar_mul(1.0 / sigma1_sq, matmul(v_rows, transpose(protos.mu))));
}

namespace {

Tensor one_hot_argmax_rows(const Tensor& soft) {
    const std::size_t m = soft.rows(), n = soft.cols();
    std::vector<double> hard(m * n, 0.0);
    for (std::size_t r = 0; r < m; ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < n; ++c)
            if (soft.at(r, c) > soft.at(r, best)) best = c;
        hard[r * n + best] = 1.0;
    }
    return Tensor({m, n}, std::move(hard));
}

/// [P x K] matrix of || d_p + beta * g_k ||^2 given d = v - z rows and the
/// projector outputs at all K one-hots.
Tensor pairwise_shift_distances(const Tensor& d, const Tensor& g_all, double beta) {
    const std::size_t k = g_all.rows();
    Tensor cross = scalar_mul(2.0 * beta, matmul(d, transpose(g_all)));    // [P x K]
    Tensor d_sq = matmul(squared_row_norms(d), Tensor::full({1, k}, 1.0)); // column broadcast
    Tensor g_sq = scalar_mul(beta * beta, transpose(squared_row_norms(g_all))); // [1 x K]
    return add(add(cross, d_sq), g_sq);
}

} // namespace

Tensor gumbel_sample(const Tensor& logits, double gamma, const Tensor& noise,
                     bool straight_through) {
    if (gamma <= 0.0) throw std::runtime_error("gumbel_sample: gamma must be > 0");
    Tensor soft = softmax_rows(scalar_mul(1.0 / gamma, add(logits, noise)));
    if (!straight_through) return soft;
    return replace_forward(one_hot_argmax_rows(soft.detached()), soft);
}

Tensor local_loss(const Tensor& v_pairs, const Tensor& z_pairs, const Tensor& c,
                  const MlpParams& projector, double beta) {
    Tensor shifted = add(v_pairs, scalar_mul(beta, project_latent(projector, c)));
    return mean(squared_row_norms(sub(shifted, z_pairs)));
}

Tensor local_loss_exact(const Tensor& v_pairs, const Tensor& z_pairs, const Tensor& q_pairs,
                        const MlpParams& projector, double beta) {
    Tensor d = sub(v_pairs, z_pairs);
    Tensor g_all = project_latent(projector, Tensor::identity(q_pairs.cols()));
    Tensor dist2 = pairwise_shift_distances(d, g_all, beta);
    return scalar_mul(1.0 / static_cast<double>(v_pairs.rows()), sum(mul(q_pairs, dist2)));
}

Tensor global_loss(const Tensor& q_node, const Tensor& v_central, const Prototypes& protos,
                   double sigma1_sq, double sigma2_sq) {
    Tensor scores = scalar_mul(1.0 / sigma1_sq, matmul(v_central, transpose(protos.mu)));
    Tensor log_post = log_softmax_rows(scores);
    const double scale = -sigma2_sq / static_cast<double>(q_node.rows());
    return scalar_mul(scale, sum(mul(q_node, log_post)));
}

double entropy_term(const Tensor& q_rows) {
    const std::size_t m = q_rows.rows(), n = q_rows.cols();
    double acc = 0.0;
    for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < n; ++c) {
            const double q = q_rows.at(r, c);
            if (q > 0.0) acc -= q * std::log(q);
        }
    }
    return acc / static_cast<double>(m);
}

Tensor entropy_from_logits(const Tensor& logits) {
    Tensor q = softmax_rows(logits);
    Tensor log_q = log_softmax_rows(logits);
    return scalar_mul(-1.0 / static_cast<double>(logits.rows()), sum(mul(q, log_q)));
}

std::pair<Tensor, LossBreakdown> total_loss(const LossBatch& batch, const MlpParams& projector,
                                            const MlpParams& head, const Prototypes& protos,
                                            const DsslHyper& hyper, CombineMode mode) {
    hyper.validate();
    const std::size_t pairs = batch.v_repeated.rows();
    const std::size_t k = hyper.k;

    Tensor logits = hyper.uniform_posterior
                        ? Tensor::zeros({pairs, k})
                        : inference_logits(head, batch.v_repeated, batch.z_neighbors, mode);
    Tensor q_edge = softmax_rows(logits);

    Tensor local = Tensor::scalar(0.0);
    if (hyper.use_local) {
        if (hyper.local_mode == LocalMode::Exact) {
            local = local_loss_exact(batch.v_repeated, batch.z_neighbors, q_edge, projector,
                                     hyper.beta);
        } else {
            Tensor c = gumbel_sample(logits, hyper.gamma, batch.gumbel_noise,
                                     hyper.local_mode == LocalMode::StraightThrough);
            local = local_loss(batch.v_repeated, batch.z_neighbors, c, projector, hyper.beta);
        }
    }

    Tensor q_node = sparse_dense_matmul(batch.neighbor_avg, q_edge);
    Tensor global = hyper.use_global
                        ? global_loss(q_node, batch.v_central, protos, hyper.sigma1_sq, hyper.sigma2_sq)
                        : Tensor::scalar(0.0);

    Tensor entropy = hyper.use_entropy ? entropy_from_logits(logits) : Tensor::scalar(0.0);

    Tensor total = add(add(local, global), scalar_mul(-1.0, entropy));

    LossBreakdown breakdown;
    breakdown.total = total.item();
    breakdown.local = local.item();
    breakdown.global_term = global.item();
    breakdown.entropy = entropy.item();
    breakdown.batch_edges = pairs;
    breakdown.q_node_values = q_node.detached();
    double conf = 0.0;
    for (std::size_t r = 0; r < breakdown.q_node_values.rows(); ++r) {
        double best = 0.0;
        for (std::size_t c = 0; c < k; ++c) best = std::max(best, breakdown.q_node_values.at(r, c));
        conf += best;
    }
    breakdown.mean_q_node_max = conf / static_cast<double>(breakdown.q_node_values.rows());
    return {total, breakdown};
}

Tensor exact_negative_elbo(const Tensor& v_pairs, const Tensor& z_pairs, const Tensor& log_q_pairs,
                           const MlpParams& projector, const Prototypes& protos,
                           const DsslHyper& hyper) {
    hyper.validate();
    const std::size_t p = v_pairs.rows();
    const std::size_t k = hyper.k;
    const auto dim = static_cast<double>(v_pairs.cols());

    Tensor q = dssl::exp(log_q_pairs);

    // log N(z; v + beta g(k), I s2): quadratic term plus the Gaussian constant
    Tensor d = sub(v_pairs, z_pairs);
    Tensor g_all = project_latent(projector, Tensor::identity(k));
    Tensor dist2 = pairwise_shift_distances(d, g_all, hyper.beta);
    const double log_norm2 = -0.5 * dim * std::log(2.0 * 3.14159265358979323846 * hyper.sigma2_sq);
    Tensor log_lik = add(scalar_mul(-0.5 / hyper.sigma2_sq, dist2),
                         Tensor::full({p, k}, log_norm2));

    // log p(k | v) by Bayes with uniform prior: the Gaussian constants cancel
    // inside the softmax, leaving log_softmax of -||v - mu_k||^2 / (2 s1).
    Tensor v_sq = matmul(squared_row_norms(v_pairs), Tensor::full({1, k}, 1.0));
    Tensor mu_sq = transpose(squared_row_norms(protos.mu));
    Tensor v_mu = matmul(v_pairs, transpose(protos.mu));
    Tensor neg_dist = sub(scalar_mul(2.0, v_mu), add(v_sq, mu_sq)); // -||v - mu||^2
    Tensor log_prior_post = log_softmax_rows(scalar_mul(0.5 / hyper.sigma1_sq, neg_dist));

    Tensor integrand = sub(add(log_lik, log_prior_post), log_q_pairs);
    return scalar_mul(-1.0 / static_cast<double>(p), sum(mul(q, integrand)));
}

} // namespace dssl
