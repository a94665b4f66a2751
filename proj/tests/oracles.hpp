#pragma once

// Independent reference implementations used as test oracles. Everything here
// is written with plain double loops on purpose: no tape, no shared kernels
// with the code under test.

#include "dssl/loss.hpp"
#include "dssl/model.hpp"

#include <cmath>
#include <vector>

namespace oracle {

inline std::vector<double> mlp_eval(const dssl::MlpParams& p, const std::vector<double>& in) {
    const std::size_t in_dim = p.w1.rows(), hidden = p.w1.cols(), out_dim = p.w2.cols();
    std::vector<double> h(hidden, 0.0), out(out_dim, 0.0);
    for (std::size_t j = 0; j < hidden; ++j) {
        double acc = p.b1.at(0, j);
        for (std::size_t i = 0; i < in_dim; ++i) acc += in[i] * p.w1.at(i, j);
        if (p.activation == dssl::MlpActivation::Relu && acc < 0.0) acc = 0.0;
        h[j] = acc;
    }
    for (std::size_t j = 0; j < out_dim; ++j) {
        double acc = p.b2.at(0, j);
        for (std::size_t i = 0; i < hidden; ++i) acc += h[i] * p.w2.at(i, j);
        out[j] = acc;
    }
    return out;
}

/// Projector outputs at all K one-hots, row per factor.
inline std::vector<std::vector<double>> projector_table(const dssl::MlpParams& proj, std::size_t k) {
    std::vector<std::vector<double>> g(k);
    for (std::size_t i = 0; i < k; ++i) {
        std::vector<double> onehot(k, 0.0);
        onehot[i] = 1.0;
        g[i] = mlp_eval(proj, onehot);
    }
    return g;
}

inline double log_gaussian(const std::vector<double>& x, const std::vector<double>& mean,
                           double variance) {
    const auto d = static_cast<double>(x.size());
    double quad = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double diff = x[i] - mean[i];
        quad += diff * diff;
    }
    return -0.5 * quad / variance - 0.5 * d * std::log(2.0 * 3.14159265358979323846 * variance);
}

inline double log_sum_exp(const std::vector<double>& v) {
    double mx = v[0];
    for (double x : v) mx = std::max(mx, x);
    double acc = 0.0;
    for (double x : v) acc += std::exp(x - mx);
    return mx + std::log(acc);
}

inline std::vector<double> row_of(const dssl::Tensor& t, std::size_t r) {
    std::vector<double> out(t.cols());
    for (std::size_t c = 0; c < t.cols(); ++c) out[c] = t.at(r, c);
    return out;
}

/// log p(k | v) by the full Gaussian Bayes rule with a uniform prior.
inline std::vector<double> bayes_log_prior_posterior(const std::vector<double>& v,
                                                     const dssl::Prototypes& protos,
                                                     double sigma1_sq) {
    const std::size_t k = protos.mu.rows();
    std::vector<double> lp(k);
    for (std::size_t i = 0; i < k; ++i) lp[i] = log_gaussian(v, row_of(protos.mu, i), sigma1_sq);
    const double lse = log_sum_exp(lp);
    for (auto& x : lp) x -= lse;
    return lp;
}

/// Per-factor joint term log p(z | v, k) + log p(k | v) for one pair.
inline std::vector<double> joint_log_terms(const std::vector<double>& v,
                                           const std::vector<double>& z,
                                           const std::vector<std::vector<double>>& g_table,
                                           const dssl::Prototypes& protos,
                                           const dssl::DsslHyper& hyper) {
    const std::size_t k = g_table.size();
    const std::vector<double> log_prior = bayes_log_prior_posterior(v, protos, hyper.sigma1_sq);
    std::vector<double> out(k);
    for (std::size_t i = 0; i < k; ++i) {
        std::vector<double> mean(v.size());
        for (std::size_t j = 0; j < v.size(); ++j) mean[j] = v[j] + hyper.beta * g_table[i][j];
        out[i] = log_gaussian(z, mean, hyper.sigma2_sq) + log_prior[i];
    }
    return out;
}

/// Brute-force marginal log p(z | v): log-sum-exp over factors of the joint.
inline double log_marginal(const std::vector<double>& v, const std::vector<double>& z,
                           const std::vector<std::vector<double>>& g_table,
                           const dssl::Prototypes& protos, const dssl::DsslHyper& hyper) {
    return log_sum_exp(joint_log_terms(v, z, g_table, protos, hyper));
}

/// Exact Bayes posterior log q*(k) = joint - marginal for one pair.
inline std::vector<double> exact_log_posterior(const std::vector<double>& v,
                                               const std::vector<double>& z,
                                               const std::vector<std::vector<double>>& g_table,
                                               const dssl::Prototypes& protos,
                                               const dssl::DsslHyper& hyper) {
    std::vector<double> joint = joint_log_terms(v, z, g_table, protos, hyper);
    const double lse = log_sum_exp(joint);
    for (auto& x : joint) x -= lse;
    return joint;
}

} // namespace oracle
