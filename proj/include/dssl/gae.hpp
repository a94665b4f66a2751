#pragma once

#include "dssl/graph.hpp"
#include "dssl/model.hpp"
#include "dssl/trainer.hpp"

#include <utility>
#include <vector>

namespace dssl {

/// Graph-autoencoder baseline: the same GCN encoder trained by inner-product
/// adjacency reconstruction with sampled negatives. No EMA, no prototypes.
struct GaeConfig {
    ModelDims dims;
    double learning_rate = 5e-3;
    double weight_decay = 5e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t epochs = 100; // full-batch steps
    std::size_t negative_samples_per_edge = 1;
    std::uint64_t seed = 1;
    void validate() const;
};

using EdgeBatch = std::vector<std::pair<std::size_t, std::size_t>>;

/// Mean binary cross-entropy of sigmoid(v_i . v_j) over positive pairs
/// (label 1) and negative pairs (label 0).
Tensor gae_loss(const Tensor& representations, const EdgeBatch& positives,
                const EdgeBatch& negatives);

/// Uniform non-edges, never an actual edge or a self-pair.
EdgeBatch sample_negative_edges(const Graph& g, std::size_t count, Rng& rng);

struct GaeResult {
    EncoderParams encoder;
    std::vector<EpochRecord> log;
};

GaeResult train_gae(const Graph& g, const GaeConfig& config);

} // namespace dssl
